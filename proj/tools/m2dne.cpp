// Command-line front end: train, eval, forecast, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "m2dne/eval.hpp"
#include "m2dne/trainer.hpp"

namespace {

using namespace m2dne;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by several subcommands.
struct Inputs {
  std::string config;
  std::string edges;
  bool weighted = false;
  double time_granularity = 0.0;
  std::string checkpoint;
  std::string out;
  double holdout = 0.0;
  Epoch split_epoch = 0;
};

struct TrainOutputs {
  std::string trace;
  std::string embeddings;
};

struct EvalArgs {
  std::string k_list = "100,1000";
  double sample_fraction = 1.0;
  std::string labels;
  std::string ratios = "0.4,0.6,0.8";
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  Epoch t_next = 0;
  std::string mode = "observed";
  double train_fraction = 0.75;
  double tolerance = 1e-4;
  std::size_t batch = 16;
};

void add_input_options(CLI::App* cmd, Inputs& in, bool needs_checkpoint) {
  cmd->add_option("--config", in.config, "key=value file; command-line flags take precedence");
  cmd->add_option("--edges", in.edges, "temporal edge list: source target time [weight]");
  cmd->add_flag("--weighted", in.weighted, "read a fourth weight column");
  cmd->add_option("--time-granularity", in.time_granularity, "bucket width for raw timestamps (0 keeps all)");
  if (needs_checkpoint) cmd->add_option("--checkpoint", in.checkpoint, "model checkpoint");
}

void add_split_options(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--holdout", in.holdout, "hold out roughly this fraction of the latest events");
  cmd->add_option("--split-epoch", in.split_epoch, "first held-out epoch (overrides --holdout)");
}

void add_train_options(CLI::App* cmd, TrainConfig& c, std::string& solver) {
  cmd->add_option("--dim", c.dim, "embedding dimension");
  cmd->add_option("--history", c.history, "neighbors kept per node history");
  cmd->add_option("--negatives", c.negatives, "negative samples per side");
  cmd->add_option("--epsilon", c.epsilon, "weight of the network-scale loss");
  cmd->add_option("--epochs", c.epochs, "passes over the events");
  cmd->add_option("--batch-size", c.batch_size, "events per step");
  cmd->add_option("--learning-rate", c.learning_rate, "gradient step size");
  cmd->add_option("--seed", c.seed, "root random seed");
  cmd->add_flag("--deterministic,!--no-deterministic", c.deterministic, "sequential single-stream training");
  cmd->add_option("--clamp-bound", c.clamp_bound, "bound on the raw intensity");
  cmd->add_option("--macro-solver", solver, "lm or gd")->check(CLI::IsMember({"lm", "gd"}));
  cmd->add_option("--macro-lm-iterations", c.macro_lm_iterations, "LM iterations per step");
  cmd->add_option("--macro-edge-limit", c.macro_edge_limit, "edges sampled for the linking rate (0 = all)");
  cmd->add_option("--threads", c.threads, "worker threads when not deterministic");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& tok : split_commas(s)) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || v == 0) throw UsageError("bad K list: " + s);
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("empty K list");
  return out;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : split_commas(s)) {
    const auto v = detail::parse_number(tok);
    if (!v) throw UsageError("bad ratio list: " + s);
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError("empty ratio list");
  return out;
}

NodeForecastMode parse_mode(const std::string& s) {
  if (s == "observed") return NodeForecastMode::observed;
  if (s == "linear") return NodeForecastMode::linear;
  throw UsageError("unknown node forecast mode: " + s);
}

// Fills options the user did not pass on the command line from a key=value
// file. Keys are long flag names without the leading dashes.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::strip_comment(line);
    if (body.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key == "config") throw UsageError(path + ": config files cannot nest");
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // flag given explicitly wins
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void resolve_solver(TrainConfig& c, const std::string& solver) {
  c.macro_solver = solver == "gd" ? MacroSolver::gradient_descent : MacroSolver::levenberg_marquardt;
}

// M2DNE_THREADS is an upper bound on worker threads.
void cap_threads(TrainConfig& c) {
  if (const char* env = std::getenv("M2DNE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw UsageError("M2DNE_THREADS must be a positive integer");
    c.threads = std::min<std::size_t>(c.threads, static_cast<std::size_t>(cap));
  }
}

void validate_config(const TrainConfig& c) {
  try {
    c.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

TemporalNetwork load_edges(const Inputs& in) {
  if (in.edges.empty()) throw UsageError("--edges is required");
  return parse_edge_list(in.edges, ParseOptions{in.weighted, in.time_granularity});
}

ModelState load_state(const Inputs& in, const TemporalNetwork& net) {
  if (in.checkpoint.empty()) throw UsageError("--checkpoint is required");
  auto state = load_checkpoint(in.checkpoint);
  if (state.node_count() != net.node_count()) {
    throw Error("checkpoint has " + std::to_string(state.node_count()) + " nodes but the edge list has " +
                std::to_string(net.node_count()));
  }
  return state;
}

std::optional<Epoch> split_of(const Inputs& in, const TemporalNetwork& net) {
  if (in.split_epoch > 0) return in.split_epoch;
  if (in.holdout > 0) return holdout_split_epoch(net, in.holdout);
  return std::nullopt;
}

// Writes to --out, or stdout when empty.
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write(out);
  if (!out) throw Error("failed writing " + path);
}

void write_trace(const FitResult& fit, std::ostream& out) {
  out << "epoch,micro_loss,macro_loss,total_loss,zeta,gamma,theta\n";
  char buf[256];
  for (const auto& r : fit.trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.micro, r.macro,
                  r.total, r.params.zeta(), r.params.gamma, r.params.theta);
    out << buf;
  }
}

void write_embeddings(const ModelState& state, const NodeRegistry& registry, std::ostream& out) {
  out << state.node_count() << ' ' << state.dim() << '\n';
  char buf[32];
  for (NodeId v = 0; v < state.node_count(); ++v) {
    out << registry.raw(v);
    for (double x : state.embeddings.row(v)) {
      std::snprintf(buf, sizeof(buf), " %.17g", x);
      out << buf;
    }
    out << '\n';
  }
}

int cmd_train(const Inputs& in, TrainConfig config, const std::string& solver, const TrainOutputs& outs) {
  resolve_solver(config, solver);
  cap_threads(config);
  validate_config(config);
  if (in.checkpoint.empty()) throw UsageError("--checkpoint (output path) is required");
  const auto full = load_edges(in);
  const auto split = split_of(in, full);
  const TemporalNetwork net = split ? split_by_time(full, *split).first : full;
  std::cerr << "loaded " << full.event_count() << " events, " << full.node_count() << " nodes, "
            << full.epochs().distinct_raw_timestamps() << " distinct timestamps in " << full.epochs().epoch_count()
            << " epochs";
  if (split) std::cerr << "; training on " << net.event_count() << " events before epoch " << *split;
  std::cerr << '\n';

  const auto result = fit(net, config);
  save_checkpoint(result.state, in.checkpoint);
  if (!outs.trace.empty()) emit(outs.trace, [&](std::ostream& o) { write_trace(result, o); });
  if (!outs.embeddings.empty()) {
    emit(outs.embeddings, [&](std::ostream& o) { write_embeddings(result.state, full.registry(), o); });
  }
  if (result.clamp_events > 0) std::cerr << "note: intensity clamped " << result.clamp_events << " times\n";
  return 0;
}

int cmd_eval(const std::string& task, const Inputs& in, const EvalArgs& a) {
  // flag validation before any file is read
  std::vector<std::size_t> k_list;
  if (task == "reconstruct" || task == "recommend") k_list = parse_k_list(a.k_list);
  const auto ratios = task == "classify" ? parse_ratios(a.ratios) : std::vector<double>{};
  const auto mode = parse_mode(a.mode);
  if (in.edges.empty()) throw UsageError("--edges is required");
  if (in.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (task == "classify" && a.labels.empty()) throw UsageError("eval classify needs --labels");
  if ((task == "recommend" || task == "linkpred" || task == "scale") && in.split_epoch <= 0 && in.holdout <= 0) {
    throw UsageError("eval " + task + " needs --holdout or --split-epoch");
  }

  const auto net = load_edges(in);
  const auto state = load_state(in, net);
  MetricReport report;
  if (task == "reconstruct") {
    auto rng = make_stream(a.seed, "eval-splits", 3000);
    report = reconstruction_metrics(state.embeddings, net, a.sample_fraction, k_list, rng);
  } else if (task == "classify") {
    const auto labels = parse_labels(a.labels, net.registry());
    report = node_classification(state.embeddings, labels, ratios, a.seed);
  } else {
    const Epoch split = *split_of(in, net);
    const auto [train, test] = split_by_time(net, split);
    if (task == "recommend") {
      report = temporal_recommendation(state.embeddings, test, k_list);
    } else if (task == "linkpred") {
      report = temporal_link_prediction(state.embeddings, net, test, a.seed, a.folds);
    } else {
      report = scale_prediction(state, train, net, a.t_next > 0 ? a.t_next : net.last_epoch(), mode);
    }
    report.echo("split_epoch", std::to_string(split));
  }
  emit(in.out, [&](std::ostream& o) { report.write(o); });
  return 0;
}

int cmd_forecast(const Inputs& in, const EvalArgs& a) {
  const auto mode = parse_mode(a.mode);
  if (!(a.train_fraction > 0 && a.train_fraction <= 1)) throw UsageError("--train-fraction must lie in (0, 1]");
  if (in.edges.empty()) throw UsageError("--edges is required");
  if (in.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto net = load_edges(in);
  const auto state = load_state(in, net);
  const auto table = trend_forecast_report(state, net, a.train_fraction, mode);
  emit(in.out, [&](std::ostream& o) { table.write_csv(o); });
  std::fprintf(in.out.empty() ? stderr : stdout, "rmse=%.6f train_epochs=%zu\n", table.rmse, table.train_epochs);
  return 0;
}

int cmd_gradcheck(const Inputs& in, TrainConfig config, const std::string& solver, const EvalArgs& a) {
  resolve_solver(config, solver);
  validate_config(config);
  if (a.batch < 1) throw UsageError("--batch must be >= 1");
  const auto net = load_edges(in);
  const auto data = TrainingData::prepare(net, config);
  auto init_rng = make_stream(config.seed, "init");
  const auto state = init_state(net.node_count(), config, init_rng);
  auto batch_rng = make_stream(config.seed, "batch");
  const auto batch = sample_batch(data, a.batch, batch_rng);
  auto neg_rng = make_stream(config.seed, "negatives");
  const auto draws = draw_negatives(batch, data.sampler, config.negatives, neg_rng);
  const auto report = gradient_check(state, data, batch, draws, config, a.tolerance);
  emit(in.out, [&](std::ostream& o) {
    char buf[256];
    o << "group\tmax_relative_error\tmax_abs_error\n";
    for (const auto& g : report.groups) {
      std::snprintf(buf, sizeof(buf), "%s\t%.3e\t%.3e\n", g.group.c_str(), g.max_relative_error, g.max_abs_error);
      o << buf;
    }
    o << (report.passed() ? "PASS" : "FAIL") << " tolerance=" << a.tolerance << '\n';
  });
  return report.passed() ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal network embedding with micro- and macro-dynamics"};
  app.require_subcommand(1);

  Inputs train_in, eval_in, forecast_in, grad_in;
  TrainConfig train_cfg, grad_cfg;
  grad_cfg.dim = 8;
  grad_cfg.history = 3;
  grad_cfg.negatives = 2;
  std::string train_solver = "lm", grad_solver = "lm";
  TrainOutputs train_out;
  EvalArgs eval_args, forecast_args, grad_args;

  auto* train = app.add_subcommand("train", "fit a model and write a checkpoint");
  add_input_options(train, train_in, true);
  add_split_options(train, train_in);
  add_train_options(train, train_cfg, train_solver);
  train->add_option("--trace", train_out.trace, "per-epoch loss trace CSV");
  train->add_option("--embeddings", train_out.embeddings, "text export: header 'N d', then 'id v1 .. vd'");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->require_subcommand(1);
  std::map<std::string, CLI::App*> tasks;
  for (const char* name : {"reconstruct", "classify", "recommend", "linkpred", "scale"}) {
    auto* t = eval->add_subcommand(name);
    add_input_options(t, eval_in, true);
    t->add_option("--out", eval_in.out, "report path (default stdout)");
    t->add_option("--seed", eval_args.seed, "seed for sampling and splits");
    tasks[name] = t;
  }
  tasks["reconstruct"]->add_option("--k", eval_args.k_list, "comma-separated K values");
  tasks["reconstruct"]->add_option("--sample-fraction", eval_args.sample_fraction, "fraction of node pairs ranked");
  tasks["classify"]->add_option("--labels", eval_args.labels, "node label file: node label");
  tasks["classify"]->add_option("--ratios", eval_args.ratios, "comma-separated training ratios");
  add_split_options(tasks["recommend"], eval_in);
  tasks["recommend"]->add_option("--k", eval_args.k_list, "comma-separated K values");
  add_split_options(tasks["linkpred"], eval_in);
  tasks["linkpred"]->add_option("--folds", eval_args.folds, "cross-validation folds");
  add_split_options(tasks["scale"], eval_in);
  tasks["scale"]->add_option("--t-next", eval_args.t_next, "target epoch (default: last)");
  tasks["scale"]->add_option("--mode", eval_args.mode, "future node counts: observed or linear");

  auto* forecast = app.add_subcommand("forecast", "fit the growth curve on a prefix and forecast the rest");
  add_input_options(forecast, forecast_in, true);
  forecast->add_option("--out", forecast_in.out, "CSV path (default stdout)");
  forecast->add_option("--train-fraction", forecast_args.train_fraction, "leading fraction of epochs to fit");
  forecast->add_option("--mode", forecast_args.mode, "future node counts: observed or linear");

  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_input_options(grad, grad_in, false);
  add_train_options(grad, grad_cfg, grad_solver);
  grad->add_option("--out", grad_in.out, "report path (default stdout)");
  grad->add_option("--batch", grad_args.batch, "events in the checked batch");
  grad->add_option("--tolerance", grad_args.tolerance, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (train->parsed()) {
      if (!train_in.config.empty()) apply_config_file(train, train_in.config);
      return cmd_train(train_in, train_cfg, train_solver, train_out);
    }
    if (eval->parsed()) {
      for (const auto& [name, t] : tasks) {
        if (!t->parsed()) continue;
        if (!eval_in.config.empty()) apply_config_file(t, eval_in.config);
        return cmd_eval(name, eval_in, eval_args);
      }
    }
    if (forecast->parsed()) {
      if (!forecast_in.config.empty()) apply_config_file(forecast, forecast_in.config);
      return cmd_forecast(forecast_in, forecast_args);
    }
    if (grad->parsed()) {
      if (!grad_in.config.empty()) apply_config_file(grad, grad_in.config);
      return cmd_gradcheck(grad_in, grad_cfg, grad_solver, grad_args);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

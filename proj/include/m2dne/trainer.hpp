#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "m2dne/common.hpp"
#include "m2dne/macro_model.hpp"
#include "m2dne/micro_process.hpp"
#include "m2dne/random.hpp"
#include "m2dne/temporal_graph.hpp"

namespace m2dne {

enum class MacroSolver {
  levenberg_marquardt,  // refit (zeta, gamma, theta) at every step
  gradient_descent,     // plain step with the shared learning rate
};

struct TrainConfig {
  std::size_t dim = 128;
  std::size_t history = 5;
  std::size_t negatives = 5;
  double epsilon = 0.3;
  std::size_t epochs = 30;
  std::size_t batch_size = 512;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  bool deterministic = true;
  double clamp_bound = 50.0;
  MacroSolver macro_solver = MacroSolver::levenberg_marquardt;
  std::size_t macro_lm_iterations = 20;
  // Temporal edges used for the linking-rate numerator; 0 means all.
  std::size_t macro_edge_limit = 1'000'000;
  std::size_t threads = 1;

  void validate() const {
    if (dim < 1) throw Error("dim must be >= 1");
    if (history < 1) throw Error("history must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("epsilon must lie in [0, 1]");
    if (batch_size < 1) throw Error("batch size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be >= 0");
    if (!(clamp_bound > 0.0)) throw Error("clamp bound must be positive");
    if (threads < 1) throw Error("threads must be >= 1");
  }
};

struct ModelState {
  EmbeddingTable embeddings;
  AttentionParams attention;
  MacroParams macro;

  std::size_t node_count() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
  bool operator==(const ModelState&) const = default;

  bool finite() const { return first_non_finite_group() == nullptr; }

  /// Name of the first parameter group holding a NaN or infinity, or null.
  const char* first_non_finite_group() const {
    if (!all_finite(embeddings.data())) return "embeddings";
    if (!all_finite(attention.att_vector)) return "att_vector";
    if (!all_finite(attention.local_weight.data())) return "local_weight";
    if (!all_finite(attention.s_weight)) return "s_weight";
    if (!std::isfinite(attention.s_bias)) return "s_bias";
    if (!all_finite(attention.decay_raw)) return "decay_raw";
    if (!std::isfinite(macro.zeta_raw)) return "zeta_raw";
    if (!std::isfinite(macro.gamma)) return "gamma";
    if (!std::isfinite(macro.theta)) return "theta";
    return nullptr;
  }
};

inline ModelState init_state(std::size_t node_count, const TrainConfig& config, Rng& rng) {
  if (node_count < 2) throw Error("init_state: need at least two nodes");
  config.validate();
  const std::size_t d = config.dim;
  ModelState s{Matrix(node_count, d), AttentionParams(node_count, d), MacroParams{}};
  const double emb = 0.5 / static_cast<double>(d);
  for (auto& x : s.embeddings.data()) x = uniform(rng, -emb, emb);
  auto glorot = [&](std::vector<double>& v, double fan_in, double fan_out) {
    const double b = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& x : v) x = uniform(rng, -b, b);
  };
  const auto dd = static_cast<double>(d);
  glorot(s.attention.att_vector, 2 * dd, 1);
  glorot(s.attention.local_weight.data(), dd, dd);
  glorot(s.attention.s_weight, dd, 1);
  return s;
}

/// Gradient shaped like ModelState.
struct Gradient {
  MicroGradient micro;
  MacroParams macro{0.0, 0.0, 0.0};

  Gradient() = default;
  Gradient(std::size_t node_count, std::size_t dim) : micro(node_count, dim) {}
};

/// Everything derived once from the training network.
struct TrainingData {
  std::vector<EventSnapshot> stream;
  std::vector<double> degrees;
  NegativeSampler sampler;
  EdgeMultiset edges;
  MacroSeries series;
  std::vector<double> cumulative_weight;
  std::size_t node_count = 0;

  static TrainingData prepare(const TemporalNetwork& net, const TrainConfig& config) {
    auto degrees = event_degrees(net);
    NegativeSampler sampler(degrees);
    auto edge_rng = make_stream(config.seed, "macro-edges");
    TrainingData data{build_history_stream(net, config.history),
                      std::move(degrees),
                      std::move(sampler),
                      EdgeMultiset::sampled(net, config.macro_edge_limit, edge_rng),
                      compute_macro_series(net),
                      {},
                      net.node_count()};
    double total = 0.0;
    for (const auto& s : data.stream) {
      total += s.event.weight;
      data.cumulative_weight.push_back(total);
    }
    if (!(total > 0)) throw Error("all event weights are zero");
    return data;
  }
};

/// Draws events with replacement, proportionally to their weights.
inline std::vector<EventSnapshot> sample_batch(const TrainingData& data, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw Error("batch size must be >= 1");
  std::vector<EventSnapshot> batch;
  batch.reserve(batch_size);
  const auto& cw = data.cumulative_weight;
  for (std::size_t b = 0; b < batch_size; ++b) {
    auto it = std::upper_bound(cw.begin(), cw.end(), uniform01(rng) * cw.back());
    if (it == cw.end()) --it;
    batch.push_back(data.stream[static_cast<std::size_t>(it - cw.begin())]);
  }
  return batch;
}

struct LossParts {
  double micro = 0.0;
  double macro = 0.0;
  double total = 0.0;
};

/// L = L_micro(batch, draws) + epsilon * L_macro, optionally with gradient.
inline LossParts joint_loss(const ModelState& state, std::span<const EventSnapshot> batch,
                            std::span<const NegativeDraws> draws, const TrainingData& data,
                            const TrainConfig& config, Gradient* grad = nullptr) {
  LossParts parts;
  IntensityModel model(state.embeddings, state.attention, config.clamp_bound);
  parts.micro = micro_loss_sampled(batch, draws, model, grad ? &grad->micro : nullptr);
  if (grad) grad->micro.finalize(state.embeddings, state.attention);
  parts.macro = macro_loss_backward(data.series, state.embeddings, data.edges, state.macro, config.epsilon,
                                    grad ? &grad->micro.embeddings : nullptr, grad ? &grad->macro : nullptr);
  parts.total = parts.micro + config.epsilon * parts.macro;
  return parts;
}

struct StepResult {
  LossParts loss;
  std::size_t clamp_events = 0;
};

namespace detail {

inline void check_group(std::span<const double> g, const char* name) {
  if (!all_finite(g)) throw Error(std::string("non-finite gradient in parameter group '") + name + "'");
}

inline void check_gradient(const Gradient& g) {
  check_group(g.micro.embeddings.data(), "embeddings");
  check_group(g.micro.attention.att_vector, "att_vector");
  check_group(g.micro.attention.local_weight.data(), "local_weight");
  check_group(g.micro.attention.s_weight, "s_weight");
  check_group(std::span<const double>(&g.micro.attention.s_bias, 1), "s_bias");
  check_group(g.micro.attention.decay_raw, "decay_raw");
  check_group(std::span<const double>(&g.macro.zeta_raw, 1), "zeta_raw");
  check_group(std::span<const double>(&g.macro.gamma, 1), "gamma");
  check_group(std::span<const double>(&g.macro.theta, 1), "theta");
}

inline void descend(std::vector<double>& x, const std::vector<double>& g, double lr) {
  for (std::size_t k = 0; k < x.size(); ++k) x[k] -= lr * g[k];
}

// Micro loss and gradient over a batch split across worker threads; each
// worker owns its gradient buffer and negative stream.
inline double parallel_micro(const ModelState& state, std::span<const EventSnapshot> batch,
                             const TrainingData& data, const TrainConfig& config, std::uint64_t step_index,
                             Gradient& grad, std::size_t& clamps) {
  IntensityModel model(state.embeddings, state.attention, config.clamp_bound);
  model.prepare_all();
  const std::size_t workers = std::min(config.threads, batch.size());
  std::vector<Gradient> partial(workers, Gradient(state.node_count(), state.dim()));
  std::vector<double> losses(workers, 0.0);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = batch.size() * w / workers;
      const std::size_t hi = batch.size() * (w + 1) / workers;
      auto sub = batch.subspan(lo, hi - lo);
      auto rng = make_stream(config.seed, "negatives", step_index * workers + w);
      const auto draws = draw_negatives(sub, data.sampler, config.negatives, rng);
      losses[w] = micro_loss_sampled(sub, draws, model, &partial[w].micro);
    });
  }
  for (auto& t : pool) t.join();
  double loss = 0.0;
  for (std::size_t w = 0; w < workers; ++w) {
    partial[w].micro.finalize(state.embeddings, state.attention);
    grad.micro.add(partial[w].micro);
    loss += losses[w];
  }
  clamps = model.clamp_events();
  return loss;
}

}  // namespace detail

/// One plain gradient-descent update. The macro block either takes the same
/// plain step or is refit by Levenberg-Marquardt before the gradient is taken.
inline StepResult step(ModelState& state, const TrainingData& data, std::span<const EventSnapshot> batch,
                       const TrainConfig& config, Rng& negative_rng, std::uint64_t step_index = 0) {
  const bool refit = config.epsilon > 0 && config.macro_solver == MacroSolver::levenberg_marquardt;
  if (refit) {
    // exact minimization over the macro block first, so the embedding
    // gradient below sees the fitted parameters
    state.macro = fit_macro(data.series, linking_numerator(state.embeddings, data.edges), state.macro,
                            {config.macro_lm_iterations, 1e-3, 1e-14});
  }
  Gradient grad(state.node_count(), state.dim());
  StepResult result;
  if (!config.deterministic && config.threads > 1) {
    result.loss.micro = detail::parallel_micro(state, batch, data, config, step_index, grad, result.clamp_events);
    result.loss.macro = macro_loss_backward(data.series, state.embeddings, data.edges, state.macro,
                                            config.epsilon, &grad.micro.embeddings, &grad.macro);
    result.loss.total = result.loss.micro + config.epsilon * result.loss.macro;
  } else {
    const auto draws = draw_negatives(batch, data.sampler, config.negatives, negative_rng);
    IntensityModel model(state.embeddings, state.attention, config.clamp_bound);
    result.loss.micro = micro_loss_sampled(batch, draws, model, &grad.micro);
    result.clamp_events = model.clamp_events();
    grad.micro.finalize(state.embeddings, state.attention);
    result.loss.macro = macro_loss_backward(data.series, state.embeddings, data.edges, state.macro,
                                            config.epsilon, &grad.micro.embeddings, &grad.macro);
    result.loss.total = result.loss.micro + config.epsilon * result.loss.macro;
  }
  detail::check_gradient(grad);

  const double lr = config.learning_rate;
  detail::descend(state.embeddings.data(), grad.micro.embeddings.data(), lr);
  detail::descend(state.attention.att_vector, grad.micro.attention.att_vector, lr);
  detail::descend(state.attention.local_weight.data(), grad.micro.attention.local_weight.data(), lr);
  detail::descend(state.attention.s_weight, grad.micro.attention.s_weight, lr);
  state.attention.s_bias -= lr * grad.micro.attention.s_bias;
  detail::descend(state.attention.decay_raw, grad.micro.attention.decay_raw, lr);
  if (config.epsilon > 0 && !refit) {
    state.macro.zeta_raw -= lr * grad.macro.zeta_raw;
    state.macro.gamma -= lr * grad.macro.gamma;
    state.macro.theta -= lr * grad.macro.theta;
  }
  if (const char* bad = state.first_non_finite_group()) {
    throw Error(std::string("parameter group '") + bad + "' became non-finite after a step");
  }
  return result;
}

struct TraceRow {
  std::size_t epoch = 0;
  double micro = 0.0;
  double macro = 0.0;
  double total = 0.0;
  MacroParams params;
};

struct FitResult {
  ModelState state;
  std::vector<TraceRow> trace;
  std::size_t clamp_events = 0;
};

/// Trains on every event of `net`. A training epoch is ceil(|E| / batch)
/// steps; its trace row sums the batch micro losses and evaluates the macro
/// loss at the end of the epoch.
inline FitResult fit(const TemporalNetwork& net, const TrainConfig& config,
                     std::optional<ModelState> initial = std::nullopt) {
  config.validate();
  if (net.empty() || net.last_epoch() == net.first_epoch()) {
    throw Error("training needs events spanning at least two epochs");
  }
  const TrainingData data = TrainingData::prepare(net, config);
  FitResult out;
  if (initial) {
    if (initial->node_count() != net.node_count() || initial->dim() != config.dim) {
      throw Error("initial state does not match the network and config");
    }
    out.state = std::move(*initial);
  } else {
    auto init_rng = make_stream(config.seed, "init");
    out.state = init_state(net.node_count(), config, init_rng);
  }
  if (config.epsilon > 0 && config.macro_solver == MacroSolver::levenberg_marquardt) {
    out.state.macro = fit_macro(data.series, linking_numerator(out.state.embeddings, data.edges), out.state.macro);
  }
  auto batch_rng = make_stream(config.seed, "batch");
  auto negative_rng = make_stream(config.seed, "negatives");
  const std::size_t steps = (net.event_count() + config.batch_size - 1) / config.batch_size;
  const std::size_t batch = std::min(config.batch_size, net.event_count());
  std::uint64_t step_index = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto events = sample_batch(data, batch, batch_rng);
      const auto r = step(out.state, data, events, config, negative_rng, step_index++);
      row.micro += r.loss.micro;
      out.clamp_events += r.clamp_events;
    }
    row.macro = macro_loss(data.series, out.state.embeddings, data.edges, out.state.macro);
    row.total = row.micro + config.epsilon * row.macro;
    row.params = out.state.macro;
    out.trace.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GroupCheck {
  std::string group;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  double max_analytic = 0.0;
};

struct GradientCheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 0.0;
  bool passed() const {
    for (const auto& g : groups) {
      if (!(g.max_relative_error <= tolerance)) return false;
    }
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& g : groups) w = std::max(w, g.max_relative_error);
    return w;
  }
};

/// Compares analytic gradients of the joint loss on one fixed batch (with
/// fixed negative draws) against central differences. Relative error per
/// entry is |a - n| / max(|a|, |n|, floor).
inline GradientCheckReport gradient_check(const ModelState& state, const TrainingData& data,
                                          std::span<const EventSnapshot> batch,
                                          std::span<const NegativeDraws> draws, const TrainConfig& config,
                                          double tolerance, double step_size = 1e-5, double floor = 1e-4,
                                          const std::function<void(Gradient&)>& perturb = {}) {
  Gradient grad(state.node_count(), state.dim());
  joint_loss(state, batch, draws, data, config, &grad);
  if (perturb) perturb(grad);

  ModelState probe = state;
  auto loss_at = [&]() { return joint_loss(probe, batch, draws, data, config).total; };
  GradientCheckReport report;
  report.tolerance = tolerance;
  auto check = [&](const std::string& name, std::span<double> params, std::span<const double> analytic) {
    GroupCheck gc{name};
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double orig = params[k];
      params[k] = orig + step_size;
      const double up = loss_at();
      params[k] = orig - step_size;
      const double down = loss_at();
      params[k] = orig;
      const double numeric = (up - down) / (2 * step_size);
      const double err = std::abs(analytic[k] - numeric);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
      gc.max_abs_error = std::max(gc.max_abs_error, err);
      gc.max_relative_error = std::max(gc.max_relative_error, err == 0.0 ? 0.0 : err / denom);
      gc.max_analytic = std::max(gc.max_analytic, std::abs(analytic[k]));
    }
    report.groups.push_back(gc);
  };
  check("embeddings", probe.embeddings.data(), grad.micro.embeddings.data());
  check("att_vector", probe.attention.att_vector, grad.micro.attention.att_vector);
  check("local_weight", probe.attention.local_weight.data(), grad.micro.attention.local_weight.data());
  check("s_weight", probe.attention.s_weight, grad.micro.attention.s_weight);
  check("s_bias", std::span<double>(&probe.attention.s_bias, 1),
        std::span<const double>(&grad.micro.attention.s_bias, 1));
  check("decay_raw", probe.attention.decay_raw, grad.micro.attention.decay_raw);
  check("zeta_raw", std::span<double>(&probe.macro.zeta_raw, 1), std::span<const double>(&grad.macro.zeta_raw, 1));
  check("gamma", std::span<double>(&probe.macro.gamma, 1), std::span<const double>(&grad.macro.gamma, 1));
  check("theta", std::span<double>(&probe.macro.theta, 1), std::span<const double>(&grad.macro.theta, 1));
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian layout:
//   "M2DNE\0"            6 bytes
//   version              u32 (= 1)
//   node_count           u64
//   dim                  u64
//   embeddings           f64[node_count * dim], row-major
//   att_vector           f64[2 * dim]
//   local_weight         f64[dim * dim], row-major
//   s_weight             f64[dim]
//   s_bias               f64
//   decay_raw            f64[node_count]
//   zeta_raw, gamma, theta  f64 each

inline constexpr char kCheckpointMagic[6] = {'M', '2', 'D', 'N', 'E', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::size_t checkpoint_size(std::size_t nodes, std::size_t dim) {
  return 6 + 4 + 8 + 8 + 8 * (nodes * dim + 2 * dim + dim * dim + dim + 1 + nodes + 3);
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw Error("checkpoint is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline void save_checkpoint(const ModelState& s, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, s.node_count());
  detail::put_le<std::uint64_t>(out, s.dim());
  auto block = [&](std::span<const double> v) {
    for (double x : v) detail::put_le(out, x);
  };
  block(s.embeddings.data());
  block(s.attention.att_vector);
  block(s.attention.local_weight.data());
  block(s.attention.s_weight);
  detail::put_le(out, s.attention.s_bias);
  block(s.attention.decay_raw);
  detail::put_le(out, s.macro.zeta_raw);
  detail::put_le(out, s.macro.gamma);
  detail::put_le(out, s.macro.theta);
  if (!out) throw Error("failed writing checkpoint");
}

inline ModelState load_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic))) throw Error("checkpoint is truncated");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw Error("not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto nodes = detail::get_le<std::uint64_t>(in);
  const auto dim = detail::get_le<std::uint64_t>(in);
  if (nodes > (1ULL << 32) || dim > (1ULL << 20)) throw Error("implausible checkpoint dimensions");
  ModelState s{Matrix(nodes, dim), AttentionParams(nodes, dim), MacroParams{}};
  auto block = [&](std::span<double> v) {
    for (double& x : v) x = detail::get_le<double>(in);
  };
  block(s.embeddings.data());
  block(s.attention.att_vector);
  block(s.attention.local_weight.data());
  block(s.attention.s_weight);
  s.attention.s_bias = detail::get_le<double>(in);
  block(s.attention.decay_raw);
  s.macro.zeta_raw = detail::get_le<double>(in);
  s.macro.gamma = detail::get_le<double>(in);
  s.macro.theta = detail::get_le<double>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes after checkpoint");
  return s;
}

inline void save_checkpoint(const ModelState& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  save_checkpoint(s, out);
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace m2dne

#pragma once

// Evaluation protocols over learned embeddings: reconstruction, node
// classification, temporal recommendation, temporal link prediction, scale
// prediction and trend forecasting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "m2dne/common.hpp"
#include "m2dne/logistic.hpp"
#include "m2dne/macro_model.hpp"
#include "m2dne/random.hpp"
#include "m2dne/temporal_graph.hpp"
#include "m2dne/trainer.hpp"

namespace m2dne {

struct MetricReport {
  std::string task;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, std::string>> config;

  void add(std::string name, double value) { metrics.emplace_back(std::move(name), value); }
  void echo(std::string key, std::string value) { config.emplace_back(std::move(key), std::move(value)); }

  double get(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw Error("metric '" + name + "' not in report");
  }

  /// `# config: k=v ...` header, then `task<TAB>metric<TAB>value` lines.
  void write(std::ostream& out) const {
    out << "# config:";
    for (const auto& [k, v] : config) out << ' ' << k << '=' << v;
    out << '\n';
    for (const auto& [k, v] : metrics) out << task << '\t' << k << '\t' << format_value(v) << '\n';
  }

  static std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
  }
};

inline std::string join_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

inline double proximity(std::span<const double> a, std::span<const double> b) { return -squared_distance(a, b); }

using NodePair = std::pair<NodeId, NodeId>;

inline NodePair ordered_pair(NodeId a, NodeId b) { return {std::min(a, b), std::max(a, b)}; }

inline std::set<NodePair> static_edges(const TemporalNetwork& net) {
  std::set<NodePair> out;
  for (const auto& ev : net.events()) out.insert(ordered_pair(ev.source, ev.target));
  return out;
}

struct ScoredPair {
  NodePair pair;
  double score;
  bool positive;
};

/// Descending score, ties by ascending (min id, max id).
inline void rank_pairs(std::vector<ScoredPair>& pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.pair < b.pair;
  });
}

/// Mann-Whitney AUC with mid-ranks for tied scores.
inline double auc_rank_sum(std::span<const double> scores, std::span<const char> positive) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t k = 0; k < idx.size();) {
    std::size_t end = k;
    while (end < idx.size() && scores[idx[end]] == scores[idx[k]]) ++end;
    const double mid = 0.5 * static_cast<double>(k + 1 + end);
    for (std::size_t m = k; m < end; ++m) {
      if (positive[idx[m]]) {
        rank_sum += mid;
        pos += 1;
      } else {
        neg += 1;
      }
    }
    k = end;
  }
  if (pos == 0 || neg == 0) throw Error("AUC needs both positive and negative pairs");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

/// Ranks candidate node pairs (all pairs, or a uniform sample of about
/// sample_fraction of them) by proximity against the static edge set.
inline MetricReport reconstruction_metrics(const Matrix& U, const TemporalNetwork& net, double sample_fraction,
                                           const std::vector<std::size_t>& k_list, Rng& rng) {
  const std::size_t n = net.node_count();
  const auto edges = static_edges(net);
  std::vector<NodePair> candidates;
  const std::size_t total = n * (n - 1) / 2;
  if (sample_fraction >= 1.0) {
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = i + 1; j < n; ++j) candidates.push_back({i, j});
    }
  } else {
    if (!(sample_fraction > 0)) throw Error("sample fraction must be positive");
    const auto want = static_cast<std::size_t>(std::llround(sample_fraction * static_cast<double>(total)));
    std::set<NodePair> picked;
    while (picked.size() < want) {
      const auto i = static_cast<NodeId>(uniform_index(rng, n));
      const auto j = static_cast<NodeId>(uniform_index(rng, n));
      if (i != j) picked.insert(ordered_pair(i, j));
    }
    candidates.assign(picked.begin(), picked.end());
  }
  std::vector<ScoredPair> scored;
  scored.reserve(candidates.size());
  for (const auto& p : candidates) {
    scored.push_back({p, proximity(U.row(p.first), U.row(p.second)), edges.count(p) > 0});
  }
  rank_pairs(scored);

  MetricReport report{"reconstruct", {}, {}};
  report.echo("sample_fraction", MetricReport::format_value(sample_fraction));
  report.echo("k", join_list(k_list));
  report.echo("candidates", std::to_string(scored.size()));
  for (std::size_t k : k_list) {
    if (k == 0 || k > scored.size()) throw Error("precision@K: K exceeds the number of candidate pairs");
    double hits = 0;
    for (std::size_t r = 0; r < k; ++r) hits += scored[r].positive ? 1 : 0;
    report.add("precision@" + std::to_string(k), hits / static_cast<double>(k));
  }
  std::vector<double> scores;
  std::vector<char> pos;
  for (const auto& s : scored) {
    scores.push_back(s.score);
    pos.push_back(s.positive);
  }
  report.add("auc", auc_rank_sum(scores, pos));
  return report;
}

// ---------------------------------------------------------------------------
// Node classification

inline MetricReport node_classification(const Matrix& U, const LabelTable& labels,
                                        const std::vector<double>& train_ratios, std::uint64_t seed,
                                        const LogisticOptions& options = {}) {
  if (labels.class_count() < 2) throw Error("node classification needs at least two classes");
  std::vector<std::vector<NodeId>> by_class(labels.class_count());
  for (const auto& [node, cls] : labels.labels()) {
    if (node >= U.rows()) throw Error("labeled node outside the embedding table");
    by_class[cls].push_back(node);
  }
  std::size_t nonempty = 0;
  for (const auto& members : by_class) nonempty += members.empty() ? 0 : 1;
  if (nonempty < 2) throw Error("node classification needs at least two populated classes");

  MetricReport report{"classify", {}, {}};
  report.echo("seed", std::to_string(seed));
  std::string ratios;
  for (double r : train_ratios) ratios += (ratios.empty() ? "" : ",") + MetricReport::format_value(r);
  report.echo("ratios", ratios);

  for (std::size_t ri = 0; ri < train_ratios.size(); ++ri) {
    const double ratio = train_ratios[ri];
    if (!(ratio > 0 && ratio < 1)) throw Error("train ratio must lie in (0, 1)");
    auto rng = make_stream(seed, "eval-splits", ri);
    std::vector<NodeId> train_nodes, test_nodes;
    std::vector<std::size_t> train_y, test_y;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto members = by_class[c];
      for (std::size_t k = members.size(); k > 1; --k) std::swap(members[k - 1], members[uniform_index(rng, k)]);
      if (members.empty()) continue;
      auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size())));
      take = std::clamp<std::size_t>(take, 1, members.size());
      for (std::size_t k = 0; k < members.size(); ++k) {
        (k < take ? train_nodes : test_nodes).push_back(members[k]);
        (k < take ? train_y : test_y).push_back(c);
      }
    }
    if (test_nodes.empty()) throw Error("train ratio leaves no test nodes");
    auto gather = [&](const std::vector<NodeId>& nodes) {
      Matrix X(nodes.size(), U.cols());
      for (std::size_t r = 0; r < nodes.size(); ++r) std::copy_n(U.row(nodes[r]).begin(), U.cols(), X.row(r).begin());
      return X;
    };
    SoftmaxRegression lr(options);
    lr.fit(gather(train_nodes), train_y, labels.class_count());
    const auto pred = lr.predict(gather(test_nodes));
    const auto f1 = f1_scores(test_y, pred, labels.class_count());
    const std::string tag = MetricReport::format_value(ratio).substr(0, 4);
    report.add("macro_f1@" + tag, f1.macro);
    report.add("micro_f1@" + tag, f1.micro);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Temporal node recommendation

/// For every node with test-window events, ranks all other nodes by
/// proximity and scores the top K against its test-window neighbors.
inline MetricReport temporal_recommendation(const Matrix& U, const TemporalNetwork& test,
                                            const std::vector<std::size_t>& k_list) {
  const std::size_t n = U.rows();
  std::vector<std::set<NodeId>> truth(n);
  for (const auto& ev : test.events()) {
    truth[ev.source].insert(ev.target);
    truth[ev.target].insert(ev.source);
  }
  std::vector<double> recall(k_list.size(), 0.0), precision(k_list.size(), 0.0);
  std::size_t queries = 0;
  std::vector<std::pair<double, NodeId>> ranked;
  for (NodeId q = 0; q < n; ++q) {
    if (truth[q].empty()) continue;
    ++queries;
    ranked.clear();
    for (NodeId c = 0; c < n; ++c) {
      if (c != q) ranked.push_back({proximity(U.row(q), U.row(c)), c});
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
      const std::size_t k = k_list[ki];
      if (k == 0) throw Error("K must be >= 1");
      double hits = 0;
      for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += truth[q].count(ranked[r].second);
      recall[ki] += hits / static_cast<double>(truth[q].size());
      precision[ki] += hits / static_cast<double>(k);
    }
  }
  MetricReport report{"recommend", {}, {}};
  report.echo("k", join_list(k_list));
  report.echo("candidates", "all_non_self");
  report.echo("queries", std::to_string(queries));
  for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
    const double denom = queries ? static_cast<double>(queries) : 1.0;
    report.add("recall@" + std::to_string(k_list[ki]), recall[ki] / denom);
    report.add("precision@" + std::to_string(k_list[ki]), precision[ki] / denom);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Temporal link prediction

struct BinaryScores {
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// k-fold cross-validated accuracy and F1 (pooled out-of-fold predictions).
inline BinaryScores cross_validated_binary(const Matrix& X, std::span<const std::size_t> y, std::size_t folds,
                                           std::uint64_t seed, const LogisticOptions& options = {}) {
  if (X.rows() < folds || folds < 2) throw Error("too few samples for cross-validation");
  std::vector<std::size_t> order(X.rows());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(seed, "eval-splits", 1000);
  for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[uniform_index(rng, k)]);
  std::vector<std::size_t> pred(X.rows(), 0);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t k = 0; k < order.size(); ++k) (k % folds == f ? te : tr).push_back(order[k]);
    Matrix Xtr(tr.size(), X.cols());
    std::vector<std::size_t> ytr;
    for (std::size_t r = 0; r < tr.size(); ++r) {
      std::copy_n(X.row(tr[r]).begin(), X.cols(), Xtr.row(r).begin());
      ytr.push_back(y[tr[r]]);
    }
    SoftmaxRegression lr(options);
    lr.fit(Xtr, ytr, 2);
    for (std::size_t idx : te) pred[idx] = lr.predict(X.row(idx));
  }
  BinaryScores s;
  double correct = 0;
  for (std::size_t k = 0; k < y.size(); ++k) correct += pred[k] == y[k] ? 1 : 0;
  s.accuracy = correct / static_cast<double>(y.size());
  s.f1 = binary_f1(y, pred);
  return s;
}

struct LinkPredictionSet {
  std::vector<NodePair> positives;
  std::vector<NodePair> negatives;
};

/// Distinct test-window pairs plus as many random pairs that are linked
/// nowhere in `full`.
inline LinkPredictionSet link_prediction_pairs(const TemporalNetwork& full, const TemporalNetwork& test,
                                               std::uint64_t seed) {
  const auto test_edges = static_edges(test);
  if (test_edges.size() < 2) throw Error("link prediction needs at least two test edges");
  const auto linked = static_edges(full);
  LinkPredictionSet set{{test_edges.begin(), test_edges.end()}, {}};
  const std::size_t n = full.node_count();
  const std::size_t free_pairs = n * (n - 1) / 2 - linked.size();
  if (free_pairs < set.positives.size()) throw Error("not enough unlinked pairs for negative sampling");
  auto rng = make_stream(seed, "eval-splits", 2000);
  std::set<NodePair> chosen;
  while (chosen.size() < set.positives.size()) {
    const auto i = static_cast<NodeId>(uniform_index(rng, n));
    const auto j = static_cast<NodeId>(uniform_index(rng, n));
    if (i == j) continue;
    const auto p = ordered_pair(i, j);
    if (linked.count(p) || chosen.count(p)) continue;
    chosen.insert(p);
    set.negatives.push_back(p);
  }
  return set;
}

inline MetricReport temporal_link_prediction(const Matrix& U, const TemporalNetwork& full,
                                             const TemporalNetwork& test, std::uint64_t seed,
                                             std::size_t folds = 5) {
  const auto pairs = link_prediction_pairs(full, test, seed);
  const std::size_t d = U.cols();
  Matrix X(pairs.positives.size() + pairs.negatives.size(), d);
  std::vector<std::size_t> y;
  std::size_t r = 0;
  for (const auto* group : {&pairs.positives, &pairs.negatives}) {
    for (const auto& [i, j] : *group) {
      for (std::size_t c = 0; c < d; ++c) X(r, c) = std::abs(U(i, c) - U(j, c));
      y.push_back(group == &pairs.positives ? 1 : 0);
      ++r;
    }
  }
  const auto scores = cross_validated_binary(X, y, folds, seed);
  MetricReport report{"linkpred", {}, {}};
  report.echo("seed", std::to_string(seed));
  report.echo("folds", std::to_string(folds));
  report.echo("positives", std::to_string(pairs.positives.size()));
  report.add("accuracy", scores.accuracy);
  report.add("f1", scores.f1);
  return report;
}

// ---------------------------------------------------------------------------
// Scale prediction and trend forecast

inline double round_half_up(double x) { return std::floor(x + 0.5); }

/// Node counts for the epochs after the training series: taken from the
/// full series (observed) or extrapolated (linear).
inline std::vector<double> future_node_counts(const MacroSeries& train, const MacroSeries* full,
                                              std::size_t horizon, NodeForecastMode mode) {
  if (mode == NodeForecastMode::linear) return linear_node_forecast(train, horizon);
  if (!full) throw Error("observed node counts requested but no full series given");
  std::vector<double> out;
  for (std::size_t h = 1; h <= horizon; ++h) {
    const auto idx = full->index_of(train.epochs.back() + static_cast<Epoch>(h));
    if (!idx) break;
    out.push_back(full->n[*idx]);
  }
  if (horizon > 0 && out.size() + 1 < horizon) throw Error("observed node counts do not cover the horizon");
  return out;
}

/// Cumulative edges at t_next from the macro equation, against the count in
/// `full`. Also reports the pair-threshold baseline sigmoid(u_i . u_j) > 0.5.
inline MetricReport scale_prediction(const ModelState& state, const TemporalNetwork& train,
                                     const TemporalNetwork& full, Epoch t_next,
                                     NodeForecastMode mode = NodeForecastMode::observed) {
  if (t_next <= train.last_epoch()) throw Error("scale prediction target lies inside the training window");
  if (t_next > full.last_epoch()) throw Error("scale prediction target lies beyond the observed data");
  const auto train_series = compute_macro_series(train);
  const auto full_series = compute_macro_series(full);
  const auto horizon = static_cast<std::size_t>(t_next - train_series.epochs.back());
  const auto n_future = future_node_counts(train_series, &full_series, horizon, mode);
  const auto edges = EdgeMultiset::from_network(train);
  const auto forecast = forecast_scale(state.embeddings, edges, state.macro, train_series, n_future, horizon);
  const double predicted = round_half_up(forecast.back().predicted_cumulative);
  const double actual = full_series.e[*full_series.index_of(t_next)];

  double baseline = 0;
  for (NodeId i = 0; i < state.node_count(); ++i) {
    for (NodeId j = i + 1; j < state.node_count(); ++j) {
      if (sigmoid(dot(state.embeddings.row(i), state.embeddings.row(j))) > 0.5) baseline += 1;
    }
  }
  std::set<NodePair> static_by_t;
  for (const auto& ev : full.events()) {
    if (ev.time <= t_next) static_by_t.insert(ordered_pair(ev.source, ev.target));
  }
  MetricReport report{"scale", {}, {}};
  report.echo("t_next", std::to_string(t_next));
  report.echo("train_last_epoch", std::to_string(train.last_epoch()));
  report.echo("node_mode", mode == NodeForecastMode::observed ? "observed" : "linear");
  report.add("predicted_edges", predicted);
  report.add("actual_edges", actual);
  report.add("abs_error", std::abs(predicted - actual));
  report.add("baseline_predicted_edges", baseline);
  report.add("baseline_actual_static_edges", static_cast<double>(static_by_t.size()));
  report.add("baseline_abs_error", std::abs(baseline - static_cast<double>(static_by_t.size())));
  return report;
}

struct TrendRow {
  Epoch epoch = 0;
  double predicted = 0.0;
  double observed = 0.0;
};

struct TrendForecast {
  std::size_t train_epochs = 0;
  MacroParams params;
  std::vector<TrendRow> rows;
  double rmse = 0.0;

  void write_csv(std::ostream& out) const {
    out << "epoch,predicted_cumulative_edges,observed_cumulative_edges\n";
    for (const auto& r : rows) {
      out << r.epoch << ',' << MetricReport::format_value(r.predicted) << ','
          << MetricReport::format_value(r.observed) << '\n';
    }
  }
};

/// Fits (zeta, gamma, theta) on the first floor(fraction * T) epochs with the
/// state's embeddings frozen, then forecasts the remaining epochs.
inline TrendForecast trend_forecast_report(const ModelState& state, const TemporalNetwork& full,
                                           double train_fraction,
                                           NodeForecastMode mode = NodeForecastMode::observed) {
  const auto series = compute_macro_series(full);
  const auto train_epochs = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(series.size())));
  if (train_epochs < 2) throw Error("train fraction leaves fewer than two training epochs");
  if (train_epochs > series.size()) throw Error("train fraction exceeds 1");
  const auto train_series = series.prefix(train_epochs);
  std::vector<TemporalEvent> train_events;
  for (const auto& ev : full.events()) {
    if (ev.time <= train_series.epochs.back()) train_events.push_back(ev);
  }
  const auto edges = EdgeMultiset::from_events(train_events);
  const double numerator = linking_numerator(state.embeddings, edges);

  TrendForecast out;
  out.train_epochs = train_epochs;
  out.params = fit_macro(train_series, numerator, state.macro);
  const std::size_t horizon = series.size() - train_epochs;
  const auto n_future = future_node_counts(train_series, &series, horizon, mode);
  const auto forecast = forecast_scale(numerator, out.params, train_series, n_future, horizon);
  double sq = 0;
  for (std::size_t h = 0; h < forecast.size(); ++h) {
    const double observed = series.e[train_epochs + h];
    out.rows.push_back({forecast[h].epoch, forecast[h].predicted_cumulative, observed});
    sq += (forecast[h].predicted_cumulative - observed) * (forecast[h].predicted_cumulative - observed);
  }
  out.rmse = forecast.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(forecast.size()));
  return out;
}

}  // namespace m2dne

#pragma once

// Temporal attention point process over edge-formation events.
//
// For an event (i, j, t) with histories H_i, H_j the raw intensity is
//
//   l(i,j,t) = g(u_i,u_j)
//            + b_ij       * sum_{p in H_i} a_pi * g(u_p,u_j) * k_i(t - t_p)
//            + (1 - b_ij) * sum_{q in H_j} a_qj * g(u_q,u_i) * k_j(t - t_q)
//
// with g = -|u - v|^2, k_i(dt) = exp(-delta_i dt), local weights a from a
// softmax over sigmoid(k * attn . [W u_center ; W u_p]) and the global
// weight b_ij from a two-way softmax of s(k_bar * sigmoid(sum a W u_p)).

#include <atomic>
#include <cmath>
#include <span>
#include <vector>

#include "m2dne/common.hpp"
#include "m2dne/random.hpp"
#include "m2dne/temporal_graph.hpp"

namespace m2dne {

using EmbeddingTable = Matrix;

struct AttentionParams {
  std::vector<double> att_vector;  // 2d: first half scores W u_center, second W u_neighbor
  Matrix local_weight;             // d x d
  std::vector<double> s_weight;    // d
  double s_bias = 0.0;
  std::vector<double> decay_raw;   // one per node; delta = softplus(raw)

  AttentionParams() = default;
  AttentionParams(std::size_t node_count, std::size_t dim)
      : att_vector(2 * dim, 0.0),
        local_weight(dim, dim, 0.0),
        s_weight(dim, 0.0),
        decay_raw(node_count, 0.0) {}

  std::size_t dim() const { return s_weight.size(); }
  double decay(NodeId node) const { return softplus(decay_raw[node]); }

  bool operator==(const AttentionParams&) const = default;
};

inline double similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("similarity: dimension mismatch");
  return -squared_distance(a, b);
}

inline double time_decay(double delta, double dt) {
  if (dt < 0) throw Error("time_decay: history entry is later than the event");
  if (!(delta > 0)) throw Error("time_decay: decay rate must be positive");
  return std::exp(-delta * dt);
}

/// Gradient accumulator shaped like (U, attention params). Gradients with
/// respect to the projections W u_n are buffered and folded into U and W by
/// finalize().
struct MicroGradient {
  Matrix embeddings;
  AttentionParams attention;
  Matrix projection;
  std::vector<char> projection_touched;

  MicroGradient() = default;
  MicroGradient(std::size_t node_count, std::size_t dim)
      : embeddings(node_count, dim),
        attention(node_count, dim),
        projection(node_count, dim),
        projection_touched(node_count, 0) {}

  std::span<double> projection_row(NodeId n) {
    projection_touched[n] = 1;
    return projection.row(n);
  }

  void finalize(const Matrix& U, const AttentionParams& params) {
    const std::size_t d = U.cols();
    for (std::size_t n = 0; n < projection_touched.size(); ++n) {
      if (!projection_touched[n]) continue;
      auto dz = projection.row(n);
      auto un = U.row(n);
      for (std::size_t r = 0; r < d; ++r) {
        auto wr = attention.local_weight.row(r);
        for (std::size_t c = 0; c < d; ++c) wr[c] += dz[r] * un[c];
      }
      matvec_transposed_add(params.local_weight, dz, embeddings.row(n));
      std::fill(dz.begin(), dz.end(), 0.0);
      projection_touched[n] = 0;
    }
  }

  void add(const MicroGradient& other) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    };
    acc(embeddings.data(), other.embeddings.data());
    acc(attention.att_vector, other.attention.att_vector);
    acc(attention.local_weight.data(), other.attention.local_weight.data());
    acc(attention.s_weight, other.attention.s_weight);
    attention.s_bias += other.attention.s_bias;
    acc(attention.decay_raw, other.attention.decay_raw);
  }
};

/// Evaluates raw intensities and their gradients for fixed (U, params).
/// W u_n projections are cached per node; call prepare() before sharing an
/// instance across threads.
class IntensityModel {
 public:
  IntensityModel(const Matrix& U, const AttentionParams& params, double clamp_bound = 50.0)
      : U_(U),
        P_(params),
        clamp_(clamp_bound),
        proj_(U.rows(), U.cols()),
        have_(U.rows(), 0) {
    if (params.dim() != U.cols() || params.att_vector.size() != 2 * U.cols() ||
        params.local_weight.rows() != U.cols() || params.local_weight.cols() != U.cols() ||
        params.decay_raw.size() != U.rows()) {
      throw Error("attention parameter shapes do not match the embedding table");
    }
  }

  const Matrix& embeddings() const { return U_; }
  const AttentionParams& params() const { return P_; }
  std::size_t dim() const { return U_.cols(); }
  double clamp_bound() const { return clamp_; }
  std::size_t clamp_events() const { return clamps_.load(); }

  void prepare(std::span<const NodeId> nodes) const {
    for (NodeId n : nodes) projection(n);
  }
  void prepare_all() const {
    for (std::size_t n = 0; n < U_.rows(); ++n) projection(static_cast<NodeId>(n));
  }

  std::span<const double> projection(NodeId n) const {
    if (!have_[n]) {
      matvec(P_.local_weight, U_.row(n), proj_.row(n));
      have_[n] = 1;
    }
    return proj_.row(n);
  }

  // ---- per-side terms ----------------------------------------------------

  /// Everything one side (center node plus its history) contributes.
  struct Side {
    bool present = false;
    double delta = 0.0;
    std::vector<double> lag;        // t - t_p
    std::vector<double> kappa;      // k(t - t_p)
    std::vector<double> score;      // attn . [W u_c ; W u_p]
    std::vector<double> raw_att;    // sigmoid(kappa * score)
    std::vector<double> alpha;      // softmax(raw_att)
    std::vector<double> sim;        // g(u_p, u_other)
    std::vector<double> aggregate;  // sigmoid(sum alpha W u_p)
    double mean_lag = 0.0;
    double kappa_bar = 0.0;
    double s_dot = 0.0;
    double beta_tilde = 0.0;
    double influence = 0.0;         // sum alpha * sim * kappa
  };

  Side side(NodeId center, NodeId other, Epoch t, const HistorySnapshot& history) const {
    Side s;
    if (history.empty()) return s;
    s.present = true;
    const std::size_t d = dim();
    const std::size_t m = history.size();
    s.delta = P_.decay(center);
    const auto zc = projection(center);
    const std::span<const double> a1(P_.att_vector.data(), d);
    const std::span<const double> a2(P_.att_vector.data() + d, d);
    const double center_score = dot(a1, zc);
    s.lag.resize(m);
    s.kappa.resize(m);
    s.score.resize(m);
    s.raw_att.resize(m);
    s.alpha.resize(m);
    s.sim.resize(m);
    double lag_sum = 0.0;
    double max_raw = -1.0;
    for (std::size_t k = 0; k < m; ++k) {
      const auto& entry = history[k];
      const double lag = static_cast<double>(t - entry.time);
      if (lag < 0) throw Error("history entry is later than the event");
      lag_sum += lag;
      s.lag[k] = lag;
      s.kappa[k] = std::exp(-s.delta * lag);
      s.score[k] = center_score + dot(a2, projection(entry.neighbor));
      s.raw_att[k] = sigmoid(s.kappa[k] * s.score[k]);
      max_raw = std::max(max_raw, s.raw_att[k]);
      s.sim[k] = -squared_distance(U_.row(entry.neighbor), U_.row(other));
    }
    double z = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      s.alpha[k] = std::exp(s.raw_att[k] - max_raw);
      z += s.alpha[k];
    }
    for (auto& a : s.alpha) a /= z;

    std::vector<double> v(d, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const auto zp = projection(history[k].neighbor);
      for (std::size_t c = 0; c < d; ++c) v[c] += s.alpha[k] * zp[c];
      s.influence += s.alpha[k] * s.sim[k] * s.kappa[k];
    }
    s.aggregate.resize(d);
    for (std::size_t c = 0; c < d; ++c) s.aggregate[c] = sigmoid(v[c]);
    s.mean_lag = lag_sum / static_cast<double>(m);
    s.kappa_bar = std::exp(-s.delta * s.mean_lag);
    s.s_dot = dot(P_.s_weight, s.aggregate);
    s.beta_tilde = s.kappa_bar * s.s_dot + P_.s_bias;
    return s;
  }

  /// Global weight on the x side. Empty sides follow the fixed rule: all
  /// weight on the non-empty side, 1 when both are empty (unused then).
  static double beta(const Side& x, const Side& y) {
    if (x.present && y.present) return sigmoid(x.beta_tilde - y.beta_tilde);
    if (y.present) return 0.0;
    return 1.0;
  }

  // ---- intensities -------------------------------------------------------

  double raw(NodeId x, NodeId y, Epoch t, const HistorySnapshot& hx, const HistorySnapshot& hy) const {
    check_ids(x, y);
    const Side sx = side(x, y, t, hx);
    const Side sy = side(y, x, t, hy);
    const double b = beta(sx, sy);
    return -squared_distance(U_.row(x), U_.row(y)) + b * sx.influence + (1.0 - b) * sy.influence;
  }

  /// Clamped raw intensity; reports whether the clamp was active.
  double clamped_raw(NodeId x, NodeId y, Epoch t, const HistorySnapshot& hx, const HistorySnapshot& hy,
                     bool* clamped = nullptr) const {
    const double v = raw(x, y, t, hx, hy);
    const double c = std::clamp(v, -clamp_, clamp_);
    const bool hit = c != v;
    if (hit) clamps_.fetch_add(1, std::memory_order_relaxed);
    if (clamped) *clamped = hit;
    return c;
  }

  double intensity(NodeId x, NodeId y, Epoch t, const HistorySnapshot& hx, const HistorySnapshot& hy) const {
    return std::exp(clamped_raw(x, y, t, hx, hy));
  }

  /// Adds grad_out * d raw(x, y, t) / d params into g.
  void raw_backward(NodeId x, NodeId y, Epoch t, const HistorySnapshot& hx, const HistorySnapshot& hy,
                    double grad_out, MicroGradient& g) const {
    if (grad_out == 0.0) return;
    check_ids(x, y);
    const Side sx = side(x, y, t, hx);
    const Side sy = side(y, x, t, hy);
    const double b = beta(sx, sy);

    auto ux = U_.row(x);
    auto uy = U_.row(y);
    auto gx = g.embeddings.row(x);
    auto gy = g.embeddings.row(y);
    for (std::size_t c = 0; c < dim(); ++c) {
      const double diff = ux[c] - uy[c];
      gx[c] += grad_out * -2.0 * diff;
      gy[c] += grad_out * 2.0 * diff;
    }

    double d_beta_tilde_x = 0.0, d_beta_tilde_y = 0.0;
    if (sx.present && sy.present) {
      const double d_beta = grad_out * (sx.influence - sy.influence);
      d_beta_tilde_x = d_beta * b * (1.0 - b);
      d_beta_tilde_y = -d_beta_tilde_x;
    }
    side_backward(x, y, hx, sx, grad_out * b, d_beta_tilde_x, g);
    side_backward(y, x, hy, sy, grad_out * (1.0 - b), d_beta_tilde_y, g);
  }

 private:
  void check_ids(NodeId x, NodeId y) const {
    if (x >= U_.rows() || y >= U_.rows()) throw Error("intensity: unknown node id");
  }

  void side_backward(NodeId center, NodeId other, const HistorySnapshot& history, const Side& s,
                     double d_influence, double d_beta_tilde, MicroGradient& g) const {
    if (!s.present) return;
    const std::size_t d = dim();
    const std::size_t m = history.size();
    std::vector<double> d_alpha(m, 0.0), d_kappa(m, 0.0);
    double d_delta = 0.0;

    // influence = sum alpha_k * sim_k * kappa_k
    auto uo = U_.row(other);
    auto go = g.embeddings.row(other);
    for (std::size_t k = 0; k < m; ++k) {
      d_alpha[k] += d_influence * s.sim[k] * s.kappa[k];
      d_kappa[k] += d_influence * s.alpha[k] * s.sim[k];
      const double d_sim = d_influence * s.alpha[k] * s.kappa[k];
      if (d_sim != 0.0) {
        const NodeId p = history[k].neighbor;
        auto up = U_.row(p);
        auto gp = g.embeddings.row(p);
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = up[c] - uo[c];
          gp[c] += d_sim * -2.0 * diff;
          go[c] += d_sim * 2.0 * diff;
        }
      }
    }

    // beta_tilde = kappa_bar * (s_weight . aggregate) + s_bias
    if (d_beta_tilde != 0.0) {
      g.attention.s_bias += d_beta_tilde;
      std::vector<double> dv(d);
      for (std::size_t c = 0; c < d; ++c) {
        g.attention.s_weight[c] += d_beta_tilde * s.kappa_bar * s.aggregate[c];
        const double d_agg = d_beta_tilde * s.kappa_bar * P_.s_weight[c];
        dv[c] = d_agg * s.aggregate[c] * (1.0 - s.aggregate[c]);
      }
      const double d_kappa_bar = d_beta_tilde * s.s_dot;
      d_delta += d_kappa_bar * -s.mean_lag * s.kappa_bar;
      // v = sum alpha_k W u_p
      for (std::size_t k = 0; k < m; ++k) {
        const NodeId p = history[k].neighbor;
        const auto zp = projection(p);
        d_alpha[k] += dot(dv, zp);
        auto gz = g.projection_row(p);
        for (std::size_t c = 0; c < d; ++c) gz[c] += s.alpha[k] * dv[c];
      }
    }

    // alpha = softmax(raw_att); raw_att = sigmoid(kappa * score)
    double weighted = 0.0;
    for (std::size_t k = 0; k < m; ++k) weighted += s.alpha[k] * d_alpha[k];
    const std::span<const double> a1(P_.att_vector.data(), d);
    const std::span<const double> a2(P_.att_vector.data() + d, d);
    const auto zc = projection(center);
    double d_center_score = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double d_raw = s.alpha[k] * (d_alpha[k] - weighted);
      const double d_pre = d_raw * s.raw_att[k] * (1.0 - s.raw_att[k]);
      d_kappa[k] += d_pre * s.score[k];
      const double d_score = d_pre * s.kappa[k];
      if (d_score != 0.0) {
        d_center_score += d_score;
        const NodeId p = history[k].neighbor;
        const auto zp = projection(p);
        auto gz = g.projection_row(p);
        for (std::size_t c = 0; c < d; ++c) {
          g.attention.att_vector[d + c] += d_score * zp[c];
          gz[c] += d_score * a2[c];
        }
      }
    }
    if (d_center_score != 0.0) {
      auto gz = g.projection_row(center);
      for (std::size_t c = 0; c < d; ++c) {
        g.attention.att_vector[c] += d_center_score * zc[c];
        gz[c] += d_center_score * a1[c];
      }
    }

    // kappa_k = exp(-delta * lag_k)
    for (std::size_t k = 0; k < m; ++k) d_delta += d_kappa[k] * -s.lag[k] * s.kappa[k];
    g.attention.decay_raw[center] += d_delta * sigmoid(P_.decay_raw[center]);
  }

  const Matrix& U_;
  const AttentionParams& P_;
  double clamp_;
  mutable Matrix proj_;
  mutable std::vector<char> have_;
  mutable std::atomic<std::size_t> clamps_{0};
};

// ---------------------------------------------------------------------------
// Attention building blocks as free functions

inline std::vector<double> local_attention(NodeId center, const HistorySnapshot& history, const Matrix& U,
                                           const AttentionParams& params, Epoch t) {
  if (history.empty()) throw Error("local_attention: empty history");
  IntensityModel model(U, params);
  return model.side(center, center, t, history).alpha;
}

inline std::vector<double> aggregate_neighborhood(const HistorySnapshot& history,
                                                  std::span<const double> weights, const Matrix& U,
                                                  const AttentionParams& params) {
  if (weights.size() != history.size()) throw Error("aggregate_neighborhood: weight count mismatch");
  const std::size_t d = U.cols();
  std::vector<double> v(d, 0.0), z(d);
  for (std::size_t k = 0; k < history.size(); ++k) {
    matvec(params.local_weight, U.row(history[k].neighbor), z);
    for (std::size_t c = 0; c < d; ++c) v[c] += weights[k] * z[c];
  }
  for (auto& x : v) x = sigmoid(x);
  return v;
}

inline double global_attention(NodeId i, NodeId j, const HistorySnapshot& hist_i, const HistorySnapshot& hist_j,
                               const Matrix& U, const AttentionParams& params, Epoch t) {
  if (hist_i.empty() || hist_j.empty()) throw Error("global_attention: empty history");
  IntensityModel model(U, params);
  return IntensityModel::beta(model.side(i, j, t, hist_i), model.side(j, i, t, hist_j));
}

inline double intensity_raw(NodeId i, NodeId j, Epoch t, const HistorySnapshot& hist_i,
                            const HistorySnapshot& hist_j, const Matrix& U, const AttentionParams& params) {
  return IntensityModel(U, params).raw(i, j, t, hist_i, hist_j);
}

inline double intensity(NodeId i, NodeId j, Epoch t, const HistorySnapshot& hist_i, const HistorySnapshot& hist_j,
                        const Matrix& U, const AttentionParams& params, double clamp_bound = 50.0) {
  return IntensityModel(U, params, clamp_bound).intensity(i, j, t, hist_i, hist_j);
}

// ---------------------------------------------------------------------------
// Full-softmax event probability (small-scale oracle)

/// log p(i, j | H_i, H_j). Candidates are every (q, j), q in H_j, and every
/// (i, p), p in H_i, counted with multiplicity.
inline double event_log_probability(const IntensityModel& model, const EventSnapshot& s) {
  const auto& ev = s.event;
  if (s.source_history.empty() && s.target_history.empty()) {
    throw Error("event probability undefined: both histories are empty");
  }
  std::vector<double> cand;
  for (const auto& q : s.target_history) {
    cand.push_back(model.clamped_raw(q.neighbor, ev.target, ev.time, s.source_history, s.target_history));
  }
  for (const auto& p : s.source_history) {
    cand.push_back(model.clamped_raw(ev.source, p.neighbor, ev.time, s.source_history, s.target_history));
  }
  const double mx = *std::max_element(cand.begin(), cand.end());
  double z = 0.0;
  for (double c : cand) z += std::exp(c - mx);
  const double pos = model.clamped_raw(ev.source, ev.target, ev.time, s.source_history, s.target_history);
  return pos - (mx + std::log(z));
}

inline double event_probability_full(NodeId i, NodeId j, Epoch t, const HistorySnapshot& hist_i,
                                     const HistorySnapshot& hist_j, const Matrix& U,
                                     const AttentionParams& params) {
  IntensityModel model(U, params);
  return std::exp(event_log_probability(model, {{i, j, t, 1.0}, hist_i, hist_j}));
}

/// Sum of -log p over events; events with two empty histories are skipped
/// and counted in *skipped. Adds the gradient into *grad when given.
inline double micro_loss_full(std::span<const EventSnapshot> window, const IntensityModel& model,
                              std::size_t* skipped = nullptr, MicroGradient* grad = nullptr,
                              double scale = 1.0) {
  double loss = 0.0;
  std::size_t skip = 0;
  for (const auto& s : window) {
    if (s.source_history.empty() && s.target_history.empty()) {
      ++skip;
      continue;
    }
    loss -= event_log_probability(model, s);
    if (!grad) continue;
    const auto& ev = s.event;
    const auto& hi = s.source_history;
    const auto& hj = s.target_history;
    struct Cand {
      NodeId x, y;
      double value;
      bool clamped;
    };
    std::vector<Cand> cand;
    for (const auto& q : hj) cand.push_back({q.neighbor, ev.target, 0.0, false});
    for (const auto& p : hi) cand.push_back({ev.source, p.neighbor, 0.0, false});
    double mx = -std::numeric_limits<double>::infinity();
    for (auto& c : cand) {
      c.value = model.clamped_raw(c.x, c.y, ev.time, hi, hj, &c.clamped);
      mx = std::max(mx, c.value);
    }
    double z = 0.0;
    for (const auto& c : cand) z += std::exp(c.value - mx);
    for (const auto& c : cand) {
      if (!c.clamped) model.raw_backward(c.x, c.y, ev.time, hi, hj, scale * std::exp(c.value - mx) / z, *grad);
    }
    bool clamped = false;
    model.clamped_raw(ev.source, ev.target, ev.time, hi, hj, &clamped);
    if (!clamped) model.raw_backward(ev.source, ev.target, ev.time, hi, hj, -scale, *grad);
  }
  if (skipped) *skipped = skip;
  return loss;
}

inline double micro_loss_full(std::span<const EventSnapshot> window, const Matrix& U,
                              const AttentionParams& params, std::size_t* skipped = nullptr) {
  IntensityModel model(U, params);
  return micro_loss_full(window, model, skipped);
}

// ---------------------------------------------------------------------------
// Negative sampling

/// Draws node ids with probability proportional to degree^exponent.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::span<const double> degrees, double exponent = 0.75) {
    if (degrees.size() < 2) throw Error("negative sampling needs at least two nodes");
    cumulative_.reserve(degrees.size());
    double total = 0.0;
    for (double deg : degrees) {
      if (deg < 0) throw Error("negative degree");
      const double w = deg > 0 ? std::pow(deg, exponent) : 0.0;
      weights_.push_back(w);
      total += w;
      cumulative_.push_back(total);
    }
    if (!(total > 0)) throw Error("negative sampling needs at least one node with positive degree");
  }

  std::size_t node_count() const { return weights_.size(); }
  double probability(NodeId n) const { return weights_[n] / cumulative_.back(); }

  /// One draw, rejecting the listed ids.
  NodeId draw(Rng& rng, std::span<const NodeId> exclude = {}) const {
    double excluded_mass = 0.0;
    for (std::size_t k = 0; k < exclude.size(); ++k) {
      bool dup = false;
      for (std::size_t l = 0; l < k; ++l) dup = dup || exclude[l] == exclude[k];
      if (!dup && exclude[k] < weights_.size()) excluded_mass += weights_[exclude[k]];
    }
    if (excluded_mass >= cumulative_.back() * (1.0 - 1e-12)) {
      throw Error("negative sampling: every candidate node is excluded");
    }
    for (;;) {
      const double u = uniform01(rng) * cumulative_.back();
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      if (it == cumulative_.end()) --it;
      const auto n = static_cast<NodeId>(it - cumulative_.begin());
      if (weights_[n] == 0.0) continue;
      if (std::find(exclude.begin(), exclude.end(), n) == exclude.end()) return n;
    }
  }

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

inline std::vector<NodeId> sample_negatives(std::span<const double> degrees, std::size_t K, Rng& rng,
                                            std::span<const NodeId> exclude = {}) {
  if (K == 0) throw Error("sample_negatives: K must be >= 1");
  NegativeSampler sampler(degrees);
  std::vector<NodeId> out(K);
  for (auto& n : out) n = sampler.draw(rng, exclude);
  return out;
}

/// Temporal degree of each node (one per event endpoint).
inline std::vector<double> event_degrees(const TemporalNetwork& net) {
  std::vector<double> deg(net.node_count(), 0.0);
  for (const auto& ev : net.events()) {
    deg[ev.source] += 1;
    deg[ev.target] += 1;
  }
  return deg;
}

/// K corrupted sources (i', j) and K corrupted targets (i, j') for one event.
struct NegativeDraws {
  std::vector<NodeId> sources;
  std::vector<NodeId> targets;
};

inline std::vector<NegativeDraws> draw_negatives(std::span<const EventSnapshot> batch,
                                                 const NegativeSampler& sampler, std::size_t K, Rng& rng) {
  std::vector<NegativeDraws> out(batch.size());
  if (K == 0) return out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const NodeId ends[2] = {batch[b].event.source, batch[b].event.target};
    out[b].sources.resize(K);
    out[b].targets.resize(K);
    for (std::size_t k = 0; k < K; ++k) out[b].sources[k] = sampler.draw(rng, ends);
    for (std::size_t k = 0; k < K; ++k) out[b].targets[k] = sampler.draw(rng, ends);
  }
  return out;
}

/// Negative-sampled micro loss:
///   sum_events -log s(l_ij) - sum_k log s(-l_i'j) - sum_k log s(-l_ij')
/// Corrupted pairs reuse the event's histories. Adds scale * gradient into
/// *grad when given.
inline double micro_loss_sampled(std::span<const EventSnapshot> batch, std::span<const NegativeDraws> draws,
                                 const IntensityModel& model, MicroGradient* grad = nullptr,
                                 double scale = 1.0) {
  if (draws.size() != batch.size()) throw Error("micro_loss_sampled: draws/batch size mismatch");
  double loss = 0.0;
  auto term = [&](NodeId x, NodeId y, const EventSnapshot& s, bool positive) {
    bool clamped = false;
    const double l = model.clamped_raw(x, y, s.event.time, s.source_history, s.target_history, &clamped);
    loss -= positive ? log_sigmoid(l) : log_sigmoid(-l);
    if (grad && !clamped) {
      const double d = positive ? sigmoid(l) - 1.0 : sigmoid(l);
      model.raw_backward(x, y, s.event.time, s.source_history, s.target_history, scale * d, *grad);
    }
  };
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    term(s.event.source, s.event.target, s, true);
    for (NodeId neg : draws[b].sources) term(neg, s.event.target, s, false);
    for (NodeId neg : draws[b].targets) term(s.event.source, neg, s, false);
  }
  return loss;
}

inline double micro_loss_sampled(std::span<const EventSnapshot> batch, std::size_t K, Rng& rng,
                                 const NegativeSampler& sampler, const IntensityModel& model) {
  const auto draws = draw_negatives(batch, sampler, K, rng);
  return micro_loss_sampled(batch, draws, model);
}

}  // namespace m2dne

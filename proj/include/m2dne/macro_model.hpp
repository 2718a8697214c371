#pragma once

// Network-scale dynamics: the number of new temporal edges after epoch t is
//
//   de'(t) = n(t) * r(t) * zeta * (n(t) - 1)^gamma
//   r(t)   = mean_{(i,j) in E} sigmoid(-|u_i - u_j|^2) / t^theta
//
// and the macro loss is sum_t (de(t) - de'(t))^2 over the training epochs.

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "m2dne/common.hpp"
#include "m2dne/random.hpp"
#include "m2dne/temporal_graph.hpp"

namespace m2dne {

struct MacroParams {
  double zeta_raw = 0.0;  // zeta = softplus(zeta_raw)
  double gamma = 1.0;
  double theta = 1.0;

  double zeta() const { return softplus(zeta_raw); }
  bool operator==(const MacroParams&) const = default;
};

/// Static pairs of the training window with their temporal multiplicities.
struct EdgeMultiset {
  std::vector<std::pair<NodeId, NodeId>> pairs;
  std::vector<double> counts;
  double total = 0.0;

  bool empty() const { return pairs.empty(); }

  static EdgeMultiset from_events(std::span<const TemporalEvent> events) {
    std::map<std::pair<NodeId, NodeId>, double> agg;
    for (const auto& ev : events) {
      agg[{std::min(ev.source, ev.target), std::max(ev.source, ev.target)}] += 1.0;
    }
    EdgeMultiset m;
    for (const auto& [pair, count] : agg) {
      m.pairs.push_back(pair);
      m.counts.push_back(count);
      m.total += count;
    }
    return m;
  }

  static EdgeMultiset from_network(const TemporalNetwork& net) { return from_events(net.events()); }

  /// Uniform sample of `limit` temporal edges (without replacement), or every
  /// edge when the network is small enough.
  static EdgeMultiset sampled(const TemporalNetwork& net, std::size_t limit, Rng& rng) {
    if (limit == 0 || net.event_count() <= limit) return from_network(net);
    std::vector<std::size_t> idx(net.event_count());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    for (std::size_t k = 0; k < limit; ++k) {
      std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
    }
    std::vector<TemporalEvent> picked;
    for (std::size_t k = 0; k < limit; ++k) picked.push_back(net.events()[idx[k]]);
    return from_events(picked);
  }
};

/// Mean of sigmoid(-|u_i - u_j|^2) over temporal edges: the numerator of r(t).
inline double linking_numerator(const Matrix& U, const EdgeMultiset& edges) {
  if (edges.empty()) throw Error("linking rate needs a non-empty edge set");
  double s = 0.0;
  for (std::size_t k = 0; k < edges.pairs.size(); ++k) {
    const auto [i, j] = edges.pairs[k];
    s += edges.counts[k] * sigmoid(-squared_distance(U.row(i), U.row(j)));
  }
  return s / edges.total;
}

inline double linking_rate(double numerator, Epoch t, double theta) {
  if (t < 1) throw Error("linking rate: epoch must be >= 1");
  return numerator / std::pow(static_cast<double>(t), theta);
}

inline double linking_rate(const Matrix& U, const EdgeMultiset& edges, Epoch t, double theta) {
  return linking_rate(linking_numerator(U, edges), t, theta);
}

inline double predicted_new_edges(double n, double r, double zeta, double gamma) {
  if (n < 1) throw Error("predicted_new_edges: node count must be >= 1");
  return n * r * zeta * std::pow(n - 1.0, gamma);
}

/// Residuals, predictions and derivatives of the macro fit at fixed U.
struct MacroFit {
  double loss = 0.0;
  std::vector<double> predicted;  // de'(t) per training epoch
  std::vector<double> residual;   // de(t) - de'(t)
  // Jacobian of the predictions w.r.t. (zeta_raw, gamma, theta).
  std::vector<std::array<double, 3>> jacobian;
  // d loss / d (zeta_raw, gamma, theta)
  std::array<double, 3> grad{0, 0, 0};
  // d loss / d numerator
  double grad_numerator = 0.0;
};

inline MacroFit evaluate_macro(const MacroSeries& series, double numerator, const MacroParams& p) {
  MacroFit f;
  const double zeta = p.zeta();
  const double dzeta = sigmoid(p.zeta_raw);
  const std::size_t T = series.delta_e.size();
  f.predicted.resize(T);
  f.residual.resize(T);
  f.jacobian.resize(T);
  for (std::size_t k = 0; k < T; ++k) {
    const double n = series.n[k];
    const double t = static_cast<double>(series.epochs[k]);
    const double pred = predicted_new_edges(n, linking_rate(numerator, series.epochs[k], p.theta), zeta, p.gamma);
    f.predicted[k] = pred;
    f.residual[k] = series.delta_e[k] - pred;
    f.loss += f.residual[k] * f.residual[k];
    const double log_n1 = n > 1.0 ? std::log(n - 1.0) : 0.0;
    f.jacobian[k] = {pred * dzeta / zeta, pred * log_n1, -pred * std::log(t)};
    for (int c = 0; c < 3; ++c) f.grad[c] += -2.0 * f.residual[k] * f.jacobian[k][c];
    if (numerator > 0) f.grad_numerator += -2.0 * f.residual[k] * pred / numerator;
  }
  return f;
}

inline double macro_loss(const MacroSeries& series, const Matrix& U, const EdgeMultiset& edges,
                         const MacroParams& params) {
  if (series.empty()) throw Error("macro loss of an empty series");
  return evaluate_macro(series, linking_numerator(U, edges), params).loss;
}

/// Adds scale * d numerator / dU into dU, where the numerator is the mean
/// edge sigmoid.
inline void linking_numerator_backward(const Matrix& U, const EdgeMultiset& edges, double scale, Matrix& dU) {
  if (scale == 0.0) return;
  const std::size_t d = U.cols();
  for (std::size_t k = 0; k < edges.pairs.size(); ++k) {
    const auto [i, j] = edges.pairs[k];
    auto ui = U.row(i);
    auto uj = U.row(j);
    const double s = sigmoid(-squared_distance(ui, uj));
    // d/du_i sigmoid(-|u_i-u_j|^2) = -s(1-s) * 2 (u_i - u_j)
    const double coef = scale * edges.counts[k] / edges.total * -s * (1.0 - s) * 2.0;
    auto gi = dU.row(i);
    auto gj = dU.row(j);
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = ui[c] - uj[c];
      gi[c] += coef * diff;
      gj[c] -= coef * diff;
    }
  }
}

/// Macro loss plus scale * gradients: into *dparams for (zeta_raw, gamma,
/// theta) and into *dU through the linking-rate numerator.
inline double macro_loss_backward(const MacroSeries& series, const Matrix& U, const EdgeMultiset& edges,
                                  const MacroParams& params, double scale, Matrix* dU, MacroParams* dparams) {
  const double numerator = linking_numerator(U, edges);
  const MacroFit f = evaluate_macro(series, numerator, params);
  if (dparams) {
    dparams->zeta_raw += scale * f.grad[0];
    dparams->gamma += scale * f.grad[1];
    dparams->theta += scale * f.grad[2];
  }
  if (dU) linking_numerator_backward(U, edges, scale * f.grad_numerator, *dU);
  return f.loss;
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt fit of (zeta, gamma, theta) at a fixed numerator

struct MacroFitOptions {
  std::size_t max_iterations = 200;
  double initial_damping = 1e-3;
  double tolerance = 1e-14;  // relative loss change
};

namespace detail {

inline bool solve3(std::array<std::array<double, 3>, 3> a, std::array<double, 3> b, std::array<double, 3>& x) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 3; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 3; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return true;
}

}  // namespace detail

/// Minimizes the macro loss over (zeta_raw, gamma, theta) with embeddings
/// frozen. Returns the fitted parameters; never increases the loss.
inline MacroParams fit_macro(const MacroSeries& series, double numerator, MacroParams start,
                             const MacroFitOptions& options = {}) {
  if (series.delta_e.empty()) return start;
  MacroParams p = start;
  MacroFit f = evaluate_macro(series, numerator, p);
  double mu = options.initial_damping;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{0, 0, 0};
    for (std::size_t k = 0; k < f.residual.size(); ++k) {
      for (int a = 0; a < 3; ++a) {
        jtr[a] += f.jacobian[k][a] * f.residual[k];
        for (int b = 0; b < 3; ++b) jtj[a][b] += f.jacobian[k][a] * f.jacobian[k][b];
      }
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
      auto lhs = jtj;
      for (int a = 0; a < 3; ++a) lhs[a][a] += mu * std::max(jtj[a][a], 1e-12);
      std::array<double, 3> step{};
      if (!detail::solve3(lhs, jtr, step)) {
        mu *= 4;
        continue;
      }
      MacroParams trial{p.zeta_raw + step[0], p.gamma + step[1], p.theta + step[2]};
      MacroFit ft = evaluate_macro(series, numerator, trial);
      if (std::isfinite(ft.loss) && ft.loss <= f.loss) {
        const double change = f.loss - ft.loss;
        p = trial;
        f = std::move(ft);
        mu = std::max(mu / 3.0, 1e-12);
        improved = true;
        if (change <= options.tolerance * std::max(f.loss, 1e-300)) return p;
      } else {
        mu *= 4;
      }
    }
    if (!improved) break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forecasting

enum class NodeForecastMode { observed, linear };

/// Least-squares line through n(t) over the last quarter of the training
/// epochs (at least two points), evaluated at the next `horizon` epochs and
/// floored at the final observed count.
inline std::vector<double> linear_node_forecast(const MacroSeries& train, std::size_t horizon) {
  if (train.size() < 4) throw Error("linear node forecast needs at least 4 training epochs");
  const std::size_t window = std::max<std::size_t>(2, train.size() / 4);
  const std::size_t start = train.size() - window;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = start; k < train.size(); ++k) {
    const double x = static_cast<double>(train.epochs[k]);
    sx += x;
    sy += train.n[k];
    sxx += x * x;
    sxy += x * train.n[k];
  }
  const double m = static_cast<double>(window);
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  const double icept = (sy - slope * sx) / m;
  std::vector<double> out;
  double floor = train.n.back();
  for (std::size_t h = 1; h <= horizon; ++h) {
    const double t = static_cast<double>(train.epochs.back() + static_cast<Epoch>(h));
    floor = std::max(floor, icept + slope * t);
    out.push_back(floor);
  }
  return out;
}

struct ForecastPoint {
  Epoch epoch = 0;
  double predicted_cumulative = 0.0;
};

/// Cumulative edge forecast for the `horizon` epochs after the training
/// series. n_future[k] is the node count at epoch (last training epoch + 1 + k);
/// the first horizon-1 entries are required.
inline std::vector<ForecastPoint> forecast_scale(double numerator, const MacroParams& params,
                                                 const MacroSeries& train, std::span<const double> n_future,
                                                 std::size_t horizon) {
  if (train.empty()) throw Error("forecast needs a non-empty training series");
  if (horizon > 0 && n_future.size() + 1 < horizon) {
    throw Error("forecast: node counts for the horizon are missing");
  }
  std::vector<ForecastPoint> out;
  double cumulative = train.e.back();
  double n = train.n.back();
  Epoch t = train.epochs.back();
  for (std::size_t h = 0; h < horizon; ++h) {
    cumulative += predicted_new_edges(std::max(n, 1.0), linking_rate(numerator, t, params.theta),
                                      params.zeta(), params.gamma);
    ++t;
    out.push_back({t, cumulative});
    if (h < n_future.size()) n = n_future[h];
  }
  return out;
}

inline std::vector<ForecastPoint> forecast_scale(const Matrix& U, const EdgeMultiset& train_edges,
                                                 const MacroParams& params, const MacroSeries& train,
                                                 std::span<const double> n_future, std::size_t horizon) {
  return forecast_scale(linking_numerator(U, train_edges), params, train, n_future, horizon);
}

}  // namespace m2dne

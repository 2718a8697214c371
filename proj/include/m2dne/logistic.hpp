#pragma once

// Multinomial logistic regression trained by full-batch gradient descent.
// Features are standardized with training statistics; the step size is the
// inverse of a curvature bound, so runs are deterministic and need no tuning.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "m2dne/common.hpp"

namespace m2dne {

struct LogisticOptions {
  double l2 = 1e-4;
  double tolerance = 1e-6;  // on the max-abs gradient entry
  std::size_t max_iterations = 500;
};

class SoftmaxRegression {
 public:
  explicit SoftmaxRegression(LogisticOptions options = {}) : options_(options) {}

  void fit(const Matrix& X, std::span<const std::size_t> y, std::size_t classes) {
    if (X.rows() != y.size() || X.rows() == 0) throw Error("logistic regression: bad training data");
    if (classes < 2) throw Error("logistic regression needs at least two classes");
    classes_ = classes;
    const std::size_t n = X.rows();
    const std::size_t d = X.cols();
    mean_.assign(d, 0.0);
    scale_.assign(d, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) mean_[c] += X(r, c);
    }
    for (auto& m : mean_) m /= static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
      double v = 0.0;
      for (std::size_t r = 0; r < n; ++r) v += (X(r, c) - mean_[c]) * (X(r, c) - mean_[c]);
      v /= static_cast<double>(n);
      scale_[c] = v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0;
    }
    const Matrix Z = standardize(X);

    // weights: classes x (d + 1), last column is the bias
    weights_ = Matrix(classes, d + 1);
    const double step = 1.0 / (0.5 * top_eigenvalue(Z) + options_.l2);
    Matrix grad(classes, d + 1);
    std::vector<double> prob(classes);
    iterations_ = 0;
    for (; iterations_ < options_.max_iterations; ++iterations_) {
      grad.fill(0.0);
      for (std::size_t r = 0; r < n; ++r) {
        probabilities(Z.row(r), prob);
        prob[y[r]] -= 1.0;
        for (std::size_t k = 0; k < classes; ++k) {
          auto gk = grad.row(k);
          const double pk = prob[k] / static_cast<double>(n);
          for (std::size_t c = 0; c < d; ++c) gk[c] += pk * Z(r, c);
          gk[d] += pk;
        }
      }
      double gmax = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t c = 0; c <= d; ++c) {
          if (c < d) grad(k, c) += options_.l2 * weights_(k, c);
          gmax = std::max(gmax, std::abs(grad(k, c)));
        }
      }
      if (gmax < options_.tolerance) break;
      for (std::size_t k = 0; k < weights_.size(); ++k) weights_.data()[k] -= step * grad.data()[k];
    }
  }

  std::size_t predict(std::span<const double> x) const {
    std::vector<double> z(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) z[c] = (x[c] - mean_[c]) * scale_[c];
    std::vector<double> prob(classes_);
    probabilities(z, prob);
    return static_cast<std::size_t>(std::max_element(prob.begin(), prob.end()) - prob.begin());
  }

  std::vector<std::size_t> predict(const Matrix& X) const {
    std::vector<std::size_t> out(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) out[r] = predict(X.row(r));
    return out;
  }

  std::size_t iterations() const { return iterations_; }

 private:
  Matrix standardize(const Matrix& X) const {
    Matrix Z(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      for (std::size_t c = 0; c < X.cols(); ++c) Z(r, c) = (X(r, c) - mean_[c]) * scale_[c];
    }
    return Z;
  }

  // Largest eigenvalue of [Z 1]^T [Z 1] / n by power iteration.
  static double top_eigenvalue(const Matrix& Z) {
    const std::size_t n = Z.rows();
    const std::size_t d = Z.cols() + 1;
    std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d))), w(d);
    double lambda = 1.0;
    for (int it = 0; it < 100; ++it) {
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        double s = v[d - 1];
        for (std::size_t c = 0; c + 1 < d; ++c) s += Z(r, c) * v[c];
        for (std::size_t c = 0; c + 1 < d; ++c) w[c] += s * Z(r, c);
        w[d - 1] += s;
      }
      double norm = 0.0;
      for (auto& x : w) {
        x /= static_cast<double>(n);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      lambda = norm;
      for (std::size_t c = 0; c < d; ++c) v[c] = w[c] / norm;
    }
    // power iteration approaches from below; pad slightly
    return std::max(lambda * 1.01, 1e-12);
  }

  void probabilities(std::span<const double> z, std::vector<double>& prob) const {
    const std::size_t d = z.size();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes_; ++k) {
      prob[k] = dot(weights_.row(k).first(d), z) + weights_(k, d);
      mx = std::max(mx, prob[k]);
    }
    double s = 0.0;
    for (auto& p : prob) {
      p = std::exp(p - mx);
      s += p;
    }
    for (auto& p : prob) p /= s;
  }

  LogisticOptions options_;
  std::size_t classes_ = 0;
  std::vector<double> mean_, scale_;
  Matrix weights_;
  std::size_t iterations_ = 0;
};

struct F1Scores {
  double macro = 0.0;
  double micro = 0.0;
};

/// Macro-F1 averages over classes present in truth or prediction; with one
/// label per sample Micro-F1 equals accuracy.
inline F1Scores f1_scores(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                          std::size_t classes) {
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::vector<char> present(classes, 0);
  double correct = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    present[truth[k]] = present[pred[k]] = 1;
    if (truth[k] == pred[k]) {
      tp[truth[k]] += 1;
      correct += 1;
    } else {
      fp[pred[k]] += 1;
      fn[truth[k]] += 1;
    }
  }
  F1Scores out;
  double count = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!present[c]) continue;
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    out.macro += denom > 0 ? 2 * tp[c] / denom : 0.0;
    count += 1;
  }
  out.macro = count > 0 ? out.macro / count : 0.0;
  out.micro = truth.empty() ? 0.0 : correct / static_cast<double>(truth.size());
  return out;
}

/// F1 of class 1 in a binary problem.
inline double binary_f1(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (pred[k] == 1 && truth[k] == 1) tp += 1;
    if (pred[k] == 1 && truth[k] == 0) fp += 1;
    if (pred[k] == 0 && truth[k] == 1) fn += 1;
  }
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

}  // namespace m2dne

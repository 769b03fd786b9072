#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

// Numeric primitives for the mini transformer. Everything is templated on the
// scalar type; float is the fast path, double is used for gradient checking.

namespace msqa::minigen {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Fixed sinusoidal positional signal: row t holds
// [sin(t*f_0), cos(t*f_0), sin(t*f_1), cos(t*f_1), ...] with
// f_i = 10000^(-2i/d_model). Row t depends only on t and d_model.
template <typename S>
Mat<S> positional_signal(int length, int d_model) {
  if (length < 0 || d_model < 1)
    throw std::invalid_argument("positional_signal: bad dimensions");
  Mat<S> pe(length, d_model);
  for (int t = 0; t < length; ++t) {
    for (int i = 0; 2 * i < d_model; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d_model);
      pe(t, 2 * i) = static_cast<S>(std::sin(t * freq));
      if (2 * i + 1 < d_model)
        pe(t, 2 * i + 1) = static_cast<S>(std::cos(t * freq));
    }
  }
  return pe;
}

// Row-wise softmax over the first `valid(row)` columns; the rest are set to
// exactly zero. Max-subtracted for stability.
template <typename S, typename ValidFn>
void softmax_rows_masked(Mat<S>& scores, ValidFn valid) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::Index v = valid(r);
    auto row = scores.row(r).head(v);
    const S m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
    if (v < scores.cols()) scores.row(r).tail(scores.cols() - v).setZero();
  }
}

template <typename S>
void softmax_rows(Mat<S>& scores) {
  softmax_rows_masked(scores, [&](Eigen::Index) { return scores.cols(); });
}

// Exact (erf-based) GELU and its derivative; smooth everywhere, which keeps
// finite-difference gradient checks clean.
template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + S(std::erf(static_cast<double>(x) / std::sqrt(2.0))));
}

template <typename S>
S gelu_derivative(S x) {
  const double xd = static_cast<double>(x);
  const double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
  return static_cast<S>(cdf + xd * pdf);
}

// Stable log-softmax of one logits row evaluated at a single index.
template <typename Derived>
typename Derived::Scalar log_softmax_at(const Eigen::MatrixBase<Derived>& logits,
                                        int index) {
  using S = typename Derived::Scalar;
  const S m = logits.maxCoeff();
  const S lse = std::log((logits.array() - m).exp().sum()) + m;
  return logits(index) - lse;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

template <typename S>
void fill_normal(Mat<S>& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = static_cast<S>(dist(rng));
}

}  // namespace msqa::minigen

#pragma once

#include <algorithm>
#include <functional>

#include <Eigen/Dense>

namespace testutil {

// Canonical correlations as square roots of the eigenvalues of
// Sxx^-1 Sxy Syy^-1 Syx, solved directly with a general eigensolver.
inline Eigen::VectorXd cca_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const double n = static_cast<double>(x.rows());
  const Eigen::MatrixXd sxx = xc.transpose() * xc / n;
  const Eigen::MatrixXd syy = yc.transpose() * yc / n;
  const Eigen::MatrixXd sxy = xc.transpose() * yc / n;
  const Eigen::MatrixXd m = sxx.inverse() * sxy * syy.inverse() * sxy.transpose();
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  std::vector<double> ev;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) ev.push_back(es.eigenvalues()[i].real());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  const Eigen::Index k = std::min(x.cols(), y.cols());
  Eigen::VectorXd rho(k);
  for (Eigen::Index i = 0; i < k; ++i) rho[i] = std::sqrt(std::clamp(ev[static_cast<std::size_t>(i)], 0.0, 1.0));
  return rho;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j);  // average tie rank
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd dx = x.array() - x.mean(), dy = y.array() - y.mean();
  return dx.dot(dy) / std::sqrt(dx.squaredNorm() * dy.squaredNorm());
}

}  // namespace testutil

#include "dyadfuse/cca.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <optional>

#include "dyadfuse/errors.hpp"

namespace dyadfuse {

namespace {

// Orthonormal basis of the retained principal directions of centered `m`.
Matrix reduced_basis(const Matrix& centered, double variance_keep) {
  const Index t = centered.rows();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s[0] <= 0.0) return Matrix(t, 0);
  Index nonzero = 0;
  while (nonzero < s.size() && s[nonzero] > s[0] * 1e-10) ++nonzero;
  const double total = s.head(nonzero).squaredNorm();
  Index keep = 0;
  double acc = 0.0;
  while (keep < nonzero) {
    acc += s[keep] * s[keep];
    ++keep;
    if (acc >= variance_keep * total * (1.0 - 1e-12)) break;
  }
  keep = std::min(keep, t - 1);
  return svd.matrixU().leftCols(keep);
}

Matrix center_columns(const Eigen::Ref<const Matrix>& m) {
  return m.rowwise() - m.colwise().mean();
}

}  // namespace

CcaResult cca(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y, double variance_keep) {
  if (x.rows() != y.rows())
    throw InputShapeError("cca: X has " + std::to_string(x.rows()) + " rows, Y has " + std::to_string(y.rows()));
  if (x.rows() < 3) throw DegenerateSegmentError("cca: need at least 3 frames, got " + std::to_string(x.rows()));
  if (!(variance_keep > 0.0 && variance_keep <= 1.0)) throw ConfigError("variance_keep must lie in (0, 1]");
  if (!x.allFinite() || !y.allFinite()) throw NumericalError("cca: non-finite input");

  const Matrix ux = reduced_basis(center_columns(x), variance_keep);
  const Matrix uy = reduced_basis(center_columns(y), variance_keep);
  CcaResult r;
  r.kept_rank_x = ux.cols();
  r.kept_rank_y = uy.cols();
  const Index k = std::min(ux.cols(), uy.cols());
  if (k == 0) {
    r.correlations = Vector(0);
    r.x_variates = Matrix(x.rows(), 0);
    return r;
  }
  const Matrix cross = ux.transpose() * uy;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeThinU);
  r.max_raw_correlation = svd.singularValues()[0];
  r.correlations = svd.singularValues().head(k).cwiseMax(0.0).cwiseMin(1.0);
  r.x_variates = ux * svd.matrixU().leftCols(k);
  return r;
}

double pwcca(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y, double variance_keep) {
  const CcaResult r = cca(x, y, variance_keep);
  if (r.correlations.size() == 0) return 0.0;
  const Matrix xc = center_columns(x);
  const Vector alpha = (r.x_variates.transpose() * xc).cwiseAbs().rowwise().sum();
  const double total = alpha.sum();
  if (!(total > 0.0)) return 0.0;
  return std::clamp(alpha.dot(r.correlations) / total, 0.0, 1.0);
}

SegmentWeights segmental_weights(const FeatureMatrix& speaker, const FeatureMatrix& listener,
                                 const SegmentPlan& plan, double variance_keep, Exec exec) {
  if (speaker.frames() != listener.frames() || plan.total_frames() != speaker.frames())
    throw InputShapeError("segmental_weights: speaker " + std::to_string(speaker.frames()) + " frames, listener " +
                          std::to_string(listener.frames()) + ", plan " + std::to_string(plan.total_frames()));
  const Index n = plan.count();
  SegmentWeights out{Vector::Zero(n), plan};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

  auto one = [&](Index i) {
    const auto [a, b] = plan.boundaries[static_cast<std::size_t>(i)];
    try {
      out.weights[i] = pwcca(speaker.data().middleRows(a, b - a), listener.data().middleRows(a, b - a),
                             variance_keep);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };

  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (Index i = 0; i < n; ++i) one(i);
  } else {
    for (Index i = 0; i < n; ++i) one(i);
  }

  for (Index i = 0; i < n; ++i) {
    if (!errors[static_cast<std::size_t>(i)]) continue;
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(i)]);
    } catch (const DegenerateSegmentError& e) {
      throw DegenerateSegmentError("segment " + std::to_string(i) + ": " + e.what(), static_cast<long>(i));
    }
  }
  return out;
}

FeatureMatrix gate(const FeatureMatrix& speaker, const SegmentWeights& weights) {
  if (weights.plan.total_frames() != speaker.frames() || weights.weights.size() != weights.plan.count())
    throw InputShapeError("gate: weights cover " + std::to_string(weights.plan.total_frames()) +
                          " frames, speaker has " + std::to_string(speaker.frames()));
  Matrix out = speaker.data();
  for (Index i = 0; i < weights.plan.count(); ++i) {
    const auto [a, b] = weights.plan.boundaries[static_cast<std::size_t>(i)];
    out.middleRows(a, b - a) *= weights.weights[i];
  }
  return FeatureMatrix(std::move(out));
}

void write_weights_csv(const std::filesystem::path& path, const SegmentWeights& weights) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "segment,start,end,weight\n";
  for (Index i = 0; i < weights.plan.count(); ++i) {
    const auto [a, b] = weights.plan.boundaries[static_cast<std::size_t>(i)];
    out << i << ',' << a << ',' << b << ',' << format_sig(weights.weights[i], 9) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dyadfuse

#pragma once

#include <filesystem>

#include "dyadfuse/data.hpp"

namespace dyadfuse {

inline constexpr double kDefaultVarianceKeep = 0.99;

/// Serial loops are the reference; parallel ones must reproduce them bit for bit.
enum class Exec { serial, parallel };

struct CcaResult {
  Vector correlations;  // descending, clipped to [0, 1]
  Matrix x_variates;    // T_seg x k, unit-norm canonical variates of centered X
  Index kept_rank_x = 0;
  Index kept_rank_y = 0;
  double max_raw_correlation = 0.0;  // before clipping, for range checks
};

/// Canonical correlation analysis after SVD rank reduction.
///
/// Both inputs are column-centered and reduced to the leading left singular
/// vectors that explain at least `variance_keep` of the squared singular
/// values (capped at T_seg - 1, zero-variance directions dropped). The
/// canonical correlations are then the singular values of Ux^T Uy.
CcaResult cca(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y,
              double variance_keep = kDefaultVarianceKeep);

/// Projection-weighted CCA: canonical correlations averaged with weights
/// proportional to sum_j |<h_i, x_j>| over the centered columns of X.
double pwcca(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y,
             double variance_keep = kDefaultVarianceKeep);

struct SegmentWeights {
  Vector weights;
  SegmentPlan plan;
};

/// w_i = pwcca(speaker segment i, listener segment i) for every segment.
SegmentWeights segmental_weights(const FeatureMatrix& speaker, const FeatureMatrix& listener,
                                 const SegmentPlan& plan, double variance_keep = kDefaultVarianceKeep,
                                 Exec exec = Exec::parallel);

/// Causality gating: every frame of segment i scaled by w_i.
FeatureMatrix gate(const FeatureMatrix& speaker, const SegmentWeights& weights);

/// `segment,start,end,weight` with 9 significant digits.
void write_weights_csv(const std::filesystem::path& path, const SegmentWeights& weights);

}  // namespace dyadfuse

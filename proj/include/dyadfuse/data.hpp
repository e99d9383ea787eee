#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dyadfuse {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// T x D per-frame features of one signal source. Rows are frames.
/// Construction rejects empty shapes and non-finite entries.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix data);

  Index frames() const { return data_.rows(); }
  Index dim() const { return data_.cols(); }
  const Matrix& data() const { return data_; }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
           a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

/// Per-frame ground truth for both impression dimensions.
struct LabelSequence {
  Vector competence;
  Vector warmth;

  Index frames() const { return competence.size(); }
};

/// Fixed-length partition of [0, T) into half-open frame ranges; only the
/// last range may be short.
struct SegmentPlan {
  Index segment_length = 100;
  std::vector<std::pair<Index, Index>> boundaries;

  Index count() const { return static_cast<Index>(boundaries.size()); }
  Index total_frames() const { return boundaries.empty() ? 0 : boundaries.back().second; }
  Index length(Index i) const { return boundaries[i].second - boundaries[i].first; }
};

/// One speaker stimulus paired with one listener's reaction and annotation.
struct DyadRecord {
  FeatureMatrix speaker;
  FeatureMatrix listener;
  int listener_id = 0;
  LabelSequence labels;

  /// Throws InputShapeError unless speaker, listener and labels share T.
  void validate() const;
};

/// All dyads of one experiment plus optional ground truth from the generator.
struct DyadDataset {
  std::vector<DyadRecord> dyads;
  int n_listeners = 0;
  std::vector<double> coupling_profile;  // per segment; empty for real data
  Index segment_length = 100;

  Index speaker_dim() const { return dyads.empty() ? 0 : dyads.front().speaker.dim(); }
  Index listener_dim() const { return dyads.empty() ? 0 : dyads.front().listener.dim(); }
  /// Checks dyad shapes, consistent dims and listener ids in [0, n_listeners).
  void validate() const;
};

struct NormStats {
  Vector mean;
  Vector std;

  Index dim() const { return mean.size(); }
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Window {
  std::size_t dyad = 0;
  Index start = 0;
  Index end = 0;
  double competence = 0.0;  // mean label over [start, end)
  double warmth = 0.0;
  Split split = Split::train;

  Index length() const { return end - start; }
  friend bool operator==(const Window&, const Window&) = default;
};

struct WindowSet {
  std::vector<Window> windows;

  std::vector<std::size_t> indices(Split s) const;
};

inline constexpr double kStdFloor = 1e-8;

/// Reads a one-header-row CSV of numbers. `expected_dim` < 0 takes the column
/// count from the header.
FeatureMatrix load_feature_csv(const std::filesystem::path& path, Index expected_dim = -1);
/// Reads a `competence,warmth` label CSV.
LabelSequence load_label_csv(const std::filesystem::path& path);

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& x,
                       const std::string& column_prefix);
void write_label_csv(const std::filesystem::path& path, const LabelSequence& labels);

/// JSON manifest naming per-dyad CSVs relative to the manifest's directory.
DyadDataset load_manifest(const std::filesystem::path& manifest);
/// Writes CSVs plus `manifest.json` into `dir`; returns the manifest path.
std::filesystem::path export_dataset(const DyadDataset& dataset, const std::filesystem::path& dir);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
/// Fixed significant-digit formatting (printf %.Ng).
std::string format_sig(double v, int digits);

/// Per-column mean and population std over `rows`; std floored at kStdFloor.
NormStats zscore_fit(const FeatureMatrix& x, std::span<const Index> rows);
/// Same statistics pooled over rows drawn from several matrices.
NormStats zscore_fit(std::span<const FeatureMatrix* const> sources, std::span<const std::vector<Index>> rows);
FeatureMatrix zscore_apply(const NormStats& stats, const FeatureMatrix& x);

SegmentPlan make_segment_plan(Index frames, Index segment_length);

/// Windows coincide with each dyad's segment plan. Targets are window label
/// means; splits come from a seeded permutation cut by `ratios`.
WindowSet build_windows(std::span<const DyadRecord> dyads, Index segment_length,
                        const SplitRatios& ratios, std::uint64_t seed);

/// Per-split window counts for `n` windows: floor, remainders to train first,
/// then at least one window in every split with a non-zero ratio.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

}  // namespace dyadfuse

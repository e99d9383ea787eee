#include "dyadfuse/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string_view>

#include "json.hpp"

#include "dyadfuse/errors.hpp"
#include "dyadfuse/rng.hpp"

namespace dyadfuse {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view field, const std::filesystem::path& path, std::size_t line_no) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a finite number: '" +
                     std::string(field) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<double> values;  // row-major
  std::size_t rows = 0;
};

CsvTable read_numeric_csv(const std::filesystem::path& path, Index expected_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw EmptyInputError(path.string() + ": empty file");
  for (auto f : split_fields(line)) table.header.emplace_back(trim(f));
  const std::size_t cols = expected_dim >= 0 ? static_cast<std::size_t>(expected_dim) : table.header.size();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != cols) {
      throw InputShapeError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(cols) + " fields, found " + std::to_string(fields.size()));
    }
    for (auto f : fields) table.values.push_back(parse_number(f, path, line_no));
    ++table.rows;
  }
  if (table.rows == 0) throw EmptyInputError(path.string() + ": no data rows");
  return table;
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) throw EmptyInputError("feature matrix must be at least 1x1");
  if (!data_.allFinite()) throw NumericalError("feature matrix contains non-finite entries");
}

void DyadRecord::validate() const {
  if (speaker.frames() != listener.frames() || speaker.frames() != labels.frames() ||
      labels.competence.size() != labels.warmth.size()) {
    throw InputShapeError("dyad frame counts disagree: speaker " + std::to_string(speaker.frames()) +
                          ", listener " + std::to_string(listener.frames()) + ", labels " +
                          std::to_string(labels.frames()));
  }
  if (listener_id < 0) throw IndexError("negative listener id");
}

void DyadDataset::validate() const {
  if (dyads.empty()) throw EmptyInputError("dataset has no dyads");
  for (std::size_t i = 0; i < dyads.size(); ++i) {
    const DyadRecord& d = dyads[i];
    d.validate();
    if (d.speaker.dim() != speaker_dim() || d.listener.dim() != listener_dim())
      throw InputShapeError("dyad " + std::to_string(i) + " feature dims differ from dyad 0");
    if (d.listener_id >= n_listeners)
      throw IndexError("dyad " + std::to_string(i) + " listener id " + std::to_string(d.listener_id) +
                       " >= n_listeners " + std::to_string(n_listeners));
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

std::vector<std::size_t> WindowSet::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (windows[i].split == s) out.push_back(i);
  return out;
}

FeatureMatrix load_feature_csv(const std::filesystem::path& path, Index expected_dim) {
  CsvTable t = read_numeric_csv(path, expected_dim);
  const Index cols = static_cast<Index>(t.values.size() / t.rows);
  if (expected_dim >= 0 && static_cast<Index>(t.header.size()) != expected_dim) {
    throw InputShapeError(path.string() + ": header has " + std::to_string(t.header.size()) +
                          " columns, expected " + std::to_string(expected_dim));
  }
  Matrix m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), static_cast<Index>(t.rows), cols);
  return FeatureMatrix(std::move(m));
}

LabelSequence load_label_csv(const std::filesystem::path& path) {
  CsvTable t = read_numeric_csv(path, 2);
  if (t.header.size() != 2 || t.header[0] != "competence" || t.header[1] != "warmth")
    throw ParseError(path.string() + ": label header must be 'competence,warmth'");
  LabelSequence labels;
  labels.competence.resize(static_cast<Index>(t.rows));
  labels.warmth.resize(static_cast<Index>(t.rows));
  for (std::size_t r = 0; r < t.rows; ++r) {
    labels.competence[static_cast<Index>(r)] = t.values[2 * r];
    labels.warmth[static_cast<Index>(r)] = t.values[2 * r + 1];
  }
  return labels;
}

DyadDataset load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  const auto base = manifest.parent_path();
  DyadDataset ds;
  try {
    ds.n_listeners = j.at("n_listeners").get<int>();
    ds.segment_length = j.value("segment_length", Index{100});
    if (j.contains("coupling_profile")) ds.coupling_profile = j["coupling_profile"].get<std::vector<double>>();
    const Index speaker_dim = j.value("speaker_dim", Index{-1});
    const Index listener_dim = j.value("listener_dim", Index{-1});
    for (const auto& e : j.at("dyads")) {
      DyadRecord d;
      d.speaker = load_feature_csv(base / e.at("speaker").get<std::string>(), speaker_dim);
      d.listener = load_feature_csv(base / e.at("listener").get<std::string>(), listener_dim);
      d.labels = load_label_csv(base / e.at("labels").get<std::string>());
      d.listener_id = e.at("listener_id").get<int>();
      ds.dyads.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

std::filesystem::path export_dataset(const DyadDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j;
  j["format"] = "dyadfuse-manifest";
  j["version"] = 1;
  j["n_listeners"] = ds.n_listeners;
  j["frames"] = ds.dyads.empty() ? 0 : ds.dyads.front().speaker.frames();
  j["speaker_dim"] = ds.speaker_dim();
  j["listener_dim"] = ds.listener_dim();
  j["segment_length"] = ds.segment_length;
  j["coupling_profile"] = ds.coupling_profile;
  j["listener_ids"] = nlohmann::json::array();
  j["dyads"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.dyads.size(); ++i) {
    const std::string stem = "dyad" + std::to_string(i);
    write_feature_csv(dir / (stem + "_speaker.csv"), ds.dyads[i].speaker, "s");
    write_feature_csv(dir / (stem + "_listener.csv"), ds.dyads[i].listener, "l");
    write_label_csv(dir / (stem + "_labels.csv"), ds.dyads[i].labels);
    j["listener_ids"].push_back(ds.dyads[i].listener_id);
    j["dyads"].push_back({{"speaker", stem + "_speaker.csv"},
                          {"listener", stem + "_listener.csv"},
                          {"labels", stem + "_labels.csv"},
                          {"listener_id", ds.dyads[i].listener_id},
                          {"frames", ds.dyads[i].speaker.frames()}});
  }
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
  return path;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& x,
                       const std::string& column_prefix) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (Index j = 0; j < x.dim(); ++j) out << (j ? "," : "") << column_prefix << j;
  out << '\n';
  std::string line;
  for (Index t = 0; t < x.frames(); ++t) {
    line.clear();
    for (Index j = 0; j < x.dim(); ++j) {
      if (j) line += ',';
      line += format_double(x.data()(t, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_label_csv(const std::filesystem::path& path, const LabelSequence& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "competence,warmth\n";
  for (Index t = 0; t < labels.frames(); ++t)
    out << format_double(labels.competence[t]) << ',' << format_double(labels.warmth[t]) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

NormStats zscore_fit(std::span<const FeatureMatrix* const> sources, std::span<const std::vector<Index>> rows) {
  if (sources.empty() || sources.size() != rows.size()) throw InputShapeError("zscore_fit: sources/rows mismatch");
  const Index d = sources.front()->dim();
  NormStats s{Vector::Zero(d), Vector::Zero(d)};
  std::size_t count = 0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const FeatureMatrix& x = *sources[k];
    if (x.dim() != d) throw InputShapeError("zscore_fit: sources have different dims");
    for (Index r : rows[k]) {
      if (r < 0 || r >= x.frames()) throw IndexError("zscore_fit: row " + std::to_string(r) + " out of range");
      s.mean += x.data().row(r).transpose();
    }
    count += rows[k].size();
  }
  if (count == 0) throw EmptyInputError("zscore_fit: empty row set");
  const double n = static_cast<double>(count);
  s.mean /= n;
  for (std::size_t k = 0; k < sources.size(); ++k)
    for (Index r : rows[k]) s.std += (sources[k]->data().row(r).transpose() - s.mean).array().square().matrix();
  s.std = (s.std / n).cwiseSqrt().cwiseMax(kStdFloor);
  return s;
}

NormStats zscore_fit(const FeatureMatrix& x, std::span<const Index> rows) {
  const FeatureMatrix* src[] = {&x};
  const std::vector<Index> r(rows.begin(), rows.end());
  return zscore_fit(std::span<const FeatureMatrix* const>(src), std::span<const std::vector<Index>>(&r, 1));
}

FeatureMatrix zscore_apply(const NormStats& stats, const FeatureMatrix& x) {
  if (stats.dim() != x.dim())
    throw InputShapeError("zscore_apply: stats dim " + std::to_string(stats.dim()) + " vs matrix dim " +
                          std::to_string(x.dim()));
  Matrix out = (x.data().rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array();
  return FeatureMatrix(std::move(out));
}

SegmentPlan make_segment_plan(Index frames, Index segment_length) {
  if (frames <= 0) throw EmptyInputError("make_segment_plan: no frames");
  if (segment_length < 2) throw ConfigError("segment length must be >= 2");
  SegmentPlan plan;
  plan.segment_length = segment_length;
  for (Index start = 0; start < frames; start += segment_length)
    plan.boundaries.emplace_back(start, std::min(start + segment_length, frames));
  return plan;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  const double r[3] = {ratios.train, ratios.val, ratios.test};
  for (double v : r)
    if (!(v >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::array<std::size_t, 3> c{};
  std::size_t assigned = 0;
  std::size_t required = 0;
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<std::size_t>(std::floor(r[k] * static_cast<double>(n) + 1e-9));
    assigned += c[k];
    required += r[k] > 0.0 ? 1 : 0;
  }
  if (n < required)
    throw InsufficientDataError(std::to_string(n) + " windows cannot fill " + std::to_string(required) + " splits");
  for (int k = 0; assigned < n; k = (k + 1) % 3) {
    if (r[k] > 0.0) {
      ++c[k];
      ++assigned;
    }
  }
  for (int k = 0; k < 3; ++k) {
    if (r[k] > 0.0 && c[k] == 0) {
      auto donor = std::max_element(c.begin(), c.end());
      --*donor;
      c[k] = 1;
    }
  }
  return c;
}

WindowSet build_windows(std::span<const DyadRecord> dyads, Index segment_length, const SplitRatios& ratios,
                        std::uint64_t seed) {
  WindowSet set;
  for (std::size_t d = 0; d < dyads.size(); ++d) {
    dyads[d].validate();
    const SegmentPlan plan = make_segment_plan(dyads[d].speaker.frames(), segment_length);
    for (auto [a, b] : plan.boundaries) {
      Window w;
      w.dyad = d;
      w.start = a;
      w.end = b;
      w.competence = dyads[d].labels.competence.segment(a, b - a).mean();
      w.warmth = dyads[d].labels.warmth.segment(a, b - a).mean();
      set.windows.push_back(w);
    }
  }
  if (set.windows.size() < 3)
    throw InsufficientDataError("need at least 3 windows, have " + std::to_string(set.windows.size()));
  const auto counts = split_counts(set.windows.size(), ratios);
  std::vector<std::size_t> perm(set.windows.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed, "split");
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t k = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t c = 0; c < counts[s]; ++c) set.windows[perm[k++]].split = static_cast<Split>(s);
  return set;
}

}  // namespace dyadfuse

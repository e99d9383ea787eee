#include <cstring>
#include <fstream>
#include <map>

#include "dyadfuse/config.hpp"
#include "dyadfuse/errors.hpp"
#include "dyadfuse/train.hpp"

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
// u64 block count, then named blocks of raw host-order doubles (column-major).

namespace dyadfuse {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'A', 'D', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(path + ": truncated checkpoint");
  return v;
}

void put_block(std::ostream& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::json header;
  header["model"] = to_json(c.model);
  header["train"] = to_json(c.train);
  header["epoch"] = c.epoch;
  header["rng_state"] = c.rng_state;
  header["manifest"] = c.manifest;
  header["weight_frames"] = nlohmann::json::array();
  for (const auto& w : c.weights) header["weight_frames"].push_back(w.plan.total_frames());
  const std::string text = header.dump();

  std::vector<std::pair<std::string, const Matrix*>> blocks;
  c.params.for_each([&](const std::string& n, const Matrix& m) { blocks.emplace_back("param." + n, &m); });
  const Matrix sm = c.speaker_stats.mean, ss = c.speaker_stats.std;
  const Matrix lm = c.listener_stats.mean, ls = c.listener_stats.std;
  blocks.emplace_back("norm.speaker.mean", &sm);
  blocks.emplace_back("norm.speaker.std", &ss);
  blocks.emplace_back("norm.listener.mean", &lm);
  blocks.emplace_back("norm.listener.std", &ls);
  std::vector<Matrix> weights;
  weights.reserve(c.weights.size());
  for (const auto& w : c.weights) weights.emplace_back(w.weights);
  for (std::size_t i = 0; i < weights.size(); ++i) blocks.emplace_back("weights." + std::to_string(i), &weights[i]);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, blocks.size());
  for (const auto& [name, m] : blocks) put_block(out, name, *m);
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + p);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError(p + ": not a dyadfuse checkpoint");
  const auto version = get<std::uint32_t>(in, p);
  if (version != Checkpoint::kFormatVersion)
    throw ParseError(p + ": checkpoint format version " + std::to_string(version) + ", expected " +
                     std::to_string(Checkpoint::kFormatVersion));
  const auto header_len = get<std::uint64_t>(in, p);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw IoError(p + ": truncated header");

  std::map<std::string, Matrix> blocks;
  const auto count = get<std::uint64_t>(in, p);
  for (std::uint64_t b = 0; b < count; ++b) {
    const auto name_len = get<std::uint32_t>(in, p);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError(p + ": truncated block name");
    const auto rows = get<std::uint64_t>(in, p);
    const auto cols = get<std::uint64_t>(in, p);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw IoError(p + ": truncated block " + name);
    blocks.emplace(std::move(name), std::move(m));
  }
  auto take = [&](const std::string& name) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw ParseError(p + ": missing block " + name);
    return it->second;
  };

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.model = model_config_from_json(header.at("model"));
    c.train = train_config_from_json(header.at("train"));
    c.epoch = header.at("epoch").get<int>();
    c.rng_state = header.at("rng_state").get<std::string>();
    c.manifest = header.at("manifest").get<std::string>();
    c.params = init_model(c.model, c.train.toggles);
    c.params.for_each([&](const std::string& n, Matrix& m) {
      Matrix stored = take("param." + n);
      if (stored.rows() != m.rows() || stored.cols() != m.cols())
        throw ParseError(p + ": block param." + n + " has the wrong shape");
      m = std::move(stored);
    });
    c.speaker_stats = {take("norm.speaker.mean").col(0), take("norm.speaker.std").col(0)};
    c.listener_stats = {take("norm.listener.mean").col(0), take("norm.listener.std").col(0)};
    const auto frames = header.at("weight_frames").get<std::vector<Index>>();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      SegmentWeights w{take("weights." + std::to_string(i)).col(0),
                       make_segment_plan(frames[i], c.train.segment_length)};
      if (w.weights.size() != w.plan.count()) throw ParseError(p + ": weight count does not match segment plan");
      c.weights.push_back(std::move(w));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p + ": " + e.what());
  }
  return c;
}

}  // namespace dyadfuse

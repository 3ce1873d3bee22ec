#pragma once

// Binary checkpoint container.
//
//   bytes 0..3   magic "RUIE"
//   u32          format version
//   u32 + bytes  run configuration (UTF-8 INI text)
//   u32 + bytes  state metadata (UTF-8 INI text: epoch, optimizer step,
//                catalog sizes, RNG engine states)
//   u32          tensor count
//   manifest     per tensor: u32 name length, name, u8 dtype (1 = f32),
//                u32 rank, u32 dims[rank]
//   payload      raw little-endian f32 data, tensors in manifest order
//   u64          FNV-1a checksum of every preceding byte
//
// All integers are little-endian. Tensors are the model parameters
// ("param/<name>") followed by the Adam moments ("adam_m/<name>",
// "adam_v/<name>").

#include "ruie/config.hpp"
#include "ruie/trainer.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ruie {

inline constexpr char kCheckpointMagic[4] = {'R', 'U', 'I', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  void bytes(std::string_view s) { buf_.append(s.data(), s.size()); }
  void text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v = 0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string text() { return bytes(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& s) {
  std::istringstream in(s);
  in >> rng;
  if (!in) throw CheckpointError("checkpoint: bad RNG state");
}

}  // namespace detail

inline std::string serialize_checkpoint(const TrainState& st) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.text(to_ini(st.model.config));
  boost::property_tree::ptree meta;
  meta.put("state.epoch", st.epoch);
  meta.put("state.adam_step", st.adam.step);
  meta.put("state.num_items", st.model.catalog.num_items);
  meta.put("state.num_scenarios", st.model.catalog.num_scenarios);
  meta.put("rng.shuffle", detail::rng_state(st.shuffle_rng));
  meta.put("rng.coin", detail::rng_state(st.coin_rng));
  meta.put("rng.negative", detail::rng_state(st.negative_rng));
  w.text(to_ini(meta));

  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  const auto params = st.model.params();
  for (const auto& [name, m] : params) tensors.emplace_back("param/" + name, m);
  for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("adam_m/" + params[i].first, &st.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("adam_v/" + params[i].first, &st.adam.v[i]);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.text(name);
    w.u8(kDtypeF32);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m->rows()));
    w.u32(static_cast<std::uint32_t>(m->cols()));
  }
  for (const auto& [name, m] : tensors)
    for (Eigen::Index i = 0; i < m->size(); ++i) w.f32(m->data()[i]);
  const std::uint64_t sum = fnv1a(w.str());
  w.u64(sum);
  return w.str();
}

inline TrainState deserialize_checkpoint(std::string_view data) {
  if (data.size() < 16 || data.substr(0, 4) != std::string_view(kCheckpointMagic, 4))
    throw CheckpointError("corrupt checkpoint: bad magic bytes");
  {
    detail::ByteReader tail(data.substr(data.size() - 8));
    if (tail.u64() != fnv1a(data.substr(0, data.size() - 8)))
      throw CheckpointError("corrupt checkpoint: checksum mismatch");
  }
  detail::ByteReader r(data.substr(0, data.size() - 8));
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  const TrainConfig cfg = train_config_from_ini(r.text());
  const auto meta = parse_ini_text(r.text());
  Catalog catalog;
  catalog.num_items = meta.get<Id>("state.num_items");
  catalog.num_scenarios = meta.get<Id>("state.num_scenarios");

  TrainState st = TrainState::init(cfg, catalog);
  st.epoch = meta.get<int>("state.epoch");
  st.adam.step = meta.get<std::int64_t>("state.adam_step");
  detail::set_rng_state(st.shuffle_rng, meta.get<std::string>("rng.shuffle"));
  detail::set_rng_state(st.coin_rng, meta.get<std::string>("rng.coin"));
  detail::set_rng_state(st.negative_rng, meta.get<std::string>("rng.negative"));

  std::map<std::string, Mat<float>*> slots;
  auto params = st.model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots["param/" + params[i].first] = params[i].second;
    slots["adam_m/" + params[i].first] = &st.adam.m[i];
    slots["adam_v/" + params[i].first] = &st.adam.v[i];
  }
  const std::uint32_t count = r.u32();
  if (count != slots.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(slots.size()));
  std::vector<Mat<float>*> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text();
    if (r.u8() != kDtypeF32) throw CheckpointError("checkpoint: unsupported dtype for " + name);
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw CheckpointError("checkpoint: unexpected rank for " + name);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    const auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("checkpoint: unknown tensor " + name);
    if (it->second->rows() != rows || it->second->cols() != cols)
      throw CheckpointError("checkpoint: shape mismatch for " + name);
    order.push_back(it->second);
  }
  for (auto* m : order)
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = r.f32();
  return st;
}

inline void save_checkpoint(const TrainState& st, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  const std::string bytes = serialize_checkpoint(st);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace ruie

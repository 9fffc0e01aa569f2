#pragma once

// Binary checkpoint: versioned header, the run configuration text, training
// position (iteration, generator state, epoch order), every named tensor and
// the Adam moments. Values are stored as float64 regardless of precision.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"
#include "crimgs/errors.hpp"

namespace crimgs {

struct TensorRecord {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct SlotRecord {
  std::string name;
  std::int64_t step = 0;
  std::vector<double> m, v;
};

struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;
  std::string precision = "double";
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::vector<std::uint64_t> order;
  std::uint64_t order_pos = 0;
  std::vector<TensorRecord> tensors;
  std::vector<SlotRecord> slots;

  [[nodiscard]] const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

constexpr std::array<char, 8> kCheckpointMagic{'C', 'R', 'I', 'M', 'G', 'S', 'C', 'K'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = length();
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    const auto n = length();
    std::vector<T> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    check();
    return v;
  }

 private:
  std::uint64_t length() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t(1) << 34)) throw DataError("corrupt checkpoint '" + path_ + "': implausible length");
    return n;
  }
  void check() {
    if (!in_) throw DataError("truncated checkpoint '" + path_ + "'");
  }
  std::ifstream& in_;
  std::string path_;
};

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const CheckpointData& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    detail::Writer w(out);
    out.write(detail::kCheckpointMagic.data(), 8);
    w.pod(CheckpointData::kVersion);
    w.str(c.precision);
    w.pod(c.config_hash);
    w.str(c.config_text);
    w.pod(c.iteration);
    w.str(c.rng_state);
    w.vec(c.order);
    w.pod(c.order_pos);
    w.pod<std::uint64_t>(c.tensors.size());
    for (const auto& t : c.tensors) {
      w.str(t.name);
      w.vec(std::vector<std::uint64_t>(t.shape.begin(), t.shape.end()));
      w.vec(t.values);
    }
    w.pod<std::uint64_t>(c.slots.size());
    for (const auto& s : c.slots) {
      w.str(s.name);
      w.pod(s.step);
      w.vec(s.m);
      w.vec(s.v);
    }
    if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

[[nodiscard]] inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), 8);
  if (!in || magic != detail::kCheckpointMagic) throw DataError("not a checkpoint: '" + path.string() + "'");
  detail::Reader r(in, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != CheckpointData::kVersion) {
    throw DataError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  CheckpointData c;
  c.precision = r.str();
  c.config_hash = r.pod<std::uint64_t>();
  c.config_text = r.str();
  c.iteration = r.pod<std::uint64_t>();
  c.rng_state = r.str();
  c.order = r.vec<std::uint64_t>();
  c.order_pos = r.pod<std::uint64_t>();
  const auto nt = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nt; ++i) {
    TensorRecord t;
    t.name = r.str();
    const auto dims = r.vec<std::uint64_t>();
    t.shape.assign(dims.begin(), dims.end());
    t.values = r.vec<double>();
    if (ad::numel(t.shape) != t.values.size()) throw DataError("corrupt tensor '" + t.name + "' in checkpoint");
    c.tensors.push_back(std::move(t));
  }
  const auto ns = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < ns; ++i) {
    SlotRecord s;
    s.name = r.str();
    s.step = r.pod<std::int64_t>();
    s.m = r.vec<double>();
    s.v = r.vec<double>();
    c.slots.push_back(std::move(s));
  }
  return c;
}

}  // namespace crimgs

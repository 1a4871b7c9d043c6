#include "rsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rsr::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'R', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr char kTensorMagic[8] = {'R', 'S', 'R', 'T', 'E', 'N', 'S', '\0'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void shape(const Shape& s) {
    u64(s.size());
    for (auto d : s) u64(d);
  }
  void f64vec(std::span<const double> v) {
    u64(v.size());
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  void u32vec(std::span<const std::uint32_t> v) {
    u64(v.size());
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::uint32_t));
  }
  void tensor(const Tensor& t) {
    shape(t.shape());
    out_.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = count(1);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Shape shape() {
    const auto rank = count(8);
    Shape s(rank);
    for (auto& d : s) d = static_cast<std::size_t>(u64());
    return s;
  }
  std::vector<double> f64vec() {
    const auto n = count(8);
    std::vector<double> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::vector<std::uint32_t> u32vec() {
    const auto n = count(4);
    std::vector<std::uint32_t> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(std::uint32_t));
    pos_ += n * sizeof(std::uint32_t);
    return v;
  }
  Tensor tensor() {
    Shape s = shape();
    const std::size_t n = shape_size(s);
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return Tensor(std::move(s), std::move(v));
  }
  void expect_magic(const char (&magic)[8], const char* what) {
    need(8);
    if (std::memcmp(in_.data() + pos_, magic, 8) != 0)
      throw Error(std::string("not a ") + what + " (bad magic)");
    pos_ += 8;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_)
      throw Error("truncated data: need " + std::to_string(n) + " bytes at offset " +
                  std::to_string(pos_) + ", have " + std::to_string(in_.size() - pos_));
  }
  // Reads an element count and checks the remaining bytes can hold it.
  std::size_t count(std::size_t elem) {
    const auto n = u64();
    if (n > (in_.size() - pos_) / elem)
      throw Error("truncated data: " + std::to_string(n) + " elements announced at offset " +
                  std::to_string(pos_) + ", only " + std::to_string(in_.size() - pos_) +
                  " bytes left");
    return static_cast<std::size_t>(n);
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_packed(Writer& w, const sparse::PackedSparseWeights& p) {
  w.u64(p.layer_id);
  w.shape(p.shape);
  w.u8(p.dense ? 1 : 0);
  w.u32vec(p.row_offsets);
  w.u32vec(p.indices);
  w.f64vec(p.values);
  w.f64(p.variance);
}

sparse::PackedSparseWeights read_packed(Reader& r) {
  sparse::PackedSparseWeights p;
  p.layer_id = static_cast<std::size_t>(r.u64());
  p.shape = r.shape();
  p.dense = r.u8() != 0;
  p.row_offsets = r.u32vec();
  p.indices = r.u32vec();
  p.values = r.f64vec();
  p.variance = r.f64();
  if (p.shape.empty() || p.row_offsets.size() != p.shape[0] + 1 ||
      p.indices.size() != p.values.size() || p.row_offsets.back() != p.values.size())
    throw Error("corrupt packed sparse layer " + std::to_string(p.layer_id));
  return p;
}

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  const nn::Model& m = ckpt.model;
  Writer w;
  w.raw(kMagic, 8);
  w.u32(kFormatVersion);
  w.str(m.arch);
  w.f64(m.width_multiplier);
  w.u64(m.seed);
  w.u64(m.num_classes);
  w.shape(m.input_shape);
  w.f64vec(m.normalization.mean);
  w.f64vec(m.normalization.stddev);
  w.u64(m.layers.size());
  for (const nn::Layer& l : m.layers) {
    w.u8(static_cast<std::uint8_t>(l.spec.kind));
    w.u64(l.spec.in);
    w.u64(l.spec.out);
    w.u64(l.spec.kernel_h);
    w.u64(l.spec.kernel_w);
    w.u64(l.spec.padding);
    if (!l.spec.parametric()) continue;
    w.tensor(l.weight);
    w.u8(l.noise.enabled ? 1 : 0);
    w.f64vec(l.noise.alpha);
    w.u8(l.mask ? 1 : 0);
    if (l.mask) w.tensor(*l.mask);
  }
  w.u8(ckpt.packed ? 1 : 0);
  if (ckpt.packed) {
    w.u32(sparse::kPackedFormatVersion);
    w.u64(ckpt.packed->size());
    for (const auto& p : *ckpt.packed) write_packed(w, p);
  }
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic(kMagic, "checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  nn::Model& m = c.model;
  m.arch = r.str();
  m.width_multiplier = r.f64();
  m.seed = r.u64();
  m.num_classes = static_cast<std::size_t>(r.u64());
  m.input_shape = r.shape();
  m.normalization.mean = r.f64vec();
  m.normalization.stddev = r.f64vec();
  const auto n_layers = r.u64();
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    nn::Layer l;
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(nn::LayerKind::flatten))
      throw Error("checkpoint: unknown layer kind " + std::to_string(kind));
    l.spec.kind = static_cast<nn::LayerKind>(kind);
    l.spec.in = static_cast<std::size_t>(r.u64());
    l.spec.out = static_cast<std::size_t>(r.u64());
    l.spec.kernel_h = static_cast<std::size_t>(r.u64());
    l.spec.kernel_w = static_cast<std::size_t>(r.u64());
    l.spec.padding = static_cast<std::size_t>(r.u64());
    if (l.spec.parametric()) {
      l.weight = r.tensor();
      if (l.weight.shape() != l.spec.weight_shape())
        throw Error("checkpoint: layer " + std::to_string(i) + " weight shape " +
                    to_string(l.weight.shape()) + " does not match its spec");
      l.noise.enabled = r.u8() != 0;
      l.noise.alpha = r.f64vec();
      if (l.noise.alpha.size() != l.spec.out)
        throw Error("checkpoint: layer " + std::to_string(i) + " has a bad alpha length");
      if (r.u8()) {
        l.mask = r.tensor();
        if (l.mask->shape() != l.weight.shape())
          throw Error("checkpoint: layer " + std::to_string(i) + " mask shape mismatch");
      }
    }
    m.layers.push_back(std::move(l));
  }
  if (r.u8()) {
    const auto pv = r.u32();
    if (pv != sparse::kPackedFormatVersion)
      throw Error("unsupported packed sparse version " + std::to_string(pv));
    std::vector<sparse::PackedSparseWeights> packed(static_cast<std::size_t>(r.u64()));
    for (auto& p : packed) p = read_packed(r);
    c.packed = std::move(packed);
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize(ckpt));
}

Checkpoint load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string serialize_tensor(const Tensor& t) {
  Writer w;
  w.raw(kTensorMagic, 8);
  w.u32(1);
  w.tensor(t);
  return w.take();
}

Tensor deserialize_tensor(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic(kTensorMagic, "tensor file");
  if (r.u32() != 1) throw Error("unsupported tensor file version");
  Tensor t = r.tensor();
  if (!r.done()) throw Error("tensor file has trailing bytes");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, serialize_tensor(t));
}

Tensor load_tensor(const std::filesystem::path& path) { return deserialize_tensor(read_file(path)); }

}  // namespace rsr::ckpt

#include "kdadv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "kdadv/error.hpp"
#include "kdadv/hash.hpp"

namespace kdadv {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw FormatError(origin_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    }
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const auto* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.le<std::uint32_t>(kCheckpointVersion);
  const std::string desc = model.descriptor();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(desc.size()));
  w.bytes(desc.data(), desc.size());
  w.le<std::uint64_t>(fnv1a(desc));
  const auto& norm = model.normalization();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(norm.mean.size()));
  for (float v : norm.mean) w.f32(v);
  for (float v : norm.stddev) w.f32(v);
  w.le<std::uint64_t>(static_cast<std::uint64_t>(model.parameter_count()));
  for (const auto& p : model.parameters()) {
    for (float v : p.value.data()) w.f32(v);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf), path.string());

  if (std::memcmp(r.take(sizeof(kCheckpointMagic)), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(path.string() + ": not a kdadv checkpoint (bad magic bytes)");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto desc_len = r.le<std::uint32_t>();
  const auto* d = r.take(desc_len);
  const std::string desc(reinterpret_cast<const char*>(d), desc_len);
  const auto stored_hash = r.le<std::uint64_t>();
  if (stored_hash != fnv1a(desc)) {
    throw ArchitectureMismatch(path.string() + ": architecture hash does not match its descriptor");
  }
  Model model = Model::from_descriptor(desc);

  const auto channels = r.le<std::uint32_t>();
  Normalization norm;
  norm.mean.resize(channels);
  norm.stddev.resize(channels);
  for (auto& v : norm.mean) v = r.f32();
  for (auto& v : norm.stddev) v = r.f32();
  model.set_normalization(std::move(norm));

  const auto count = r.le<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(model.parameter_count())) {
    throw FormatError(path.string() + ": parameter count " + std::to_string(count) + " does not match architecture");
  }
  for (auto& p : model.parameters()) {
    for (auto& v : p.value.data()) v = r.f32();
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after parameters");
  return model;
}

Model load_checkpoint(const std::filesystem::path& path, const Model& architecture) {
  Model m = load_checkpoint(path);
  if (m.architecture_hash() != architecture.architecture_hash()) {
    throw ArchitectureMismatch(path.string() + ": checkpoint holds architecture '" + m.name() + "' (hash " +
                               to_hex(m.architecture_hash()) + "), expected '" + architecture.name() + "' (hash " +
                               to_hex(architecture.architecture_hash()) + ")");
  }
  return m;
}

std::uint64_t parameter_checksum(const Model& model) {
  Fnv1a h;
  for (const auto& p : model.parameters()) {
    const auto d = p.value.data();
    h.update({reinterpret_cast<const std::uint8_t*>(d.data()), d.size_bytes()});
  }
  return h.digest();
}

}  // namespace kdadv

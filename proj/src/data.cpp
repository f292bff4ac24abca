#include "kdadv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "kdadv/error.hpp"
#include "kdadv/hash.hpp"

namespace kdadv {
namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Dataset::Dataset(Shape image_shape, int num_classes, Split split, std::vector<std::uint8_t> pixels,
                 std::vector<int> labels)
    : image_shape_(std::move(image_shape)),
      num_classes_(num_classes),
      split_(split),
      pixels_(std::move(pixels)),
      labels_(std::move(labels)) {
  if (image_shape_.size() != 3) throw ContractError("dataset images must be [C,H,W]");
  if (num_classes_ <= 0) throw ContractError("dataset needs a positive class count");
  if (pixels_.size() != labels_.size() * image_size()) {
    throw ContractError("dataset pixel count does not match " + std::to_string(labels_.size()) + " images of " +
                        shape_string(image_shape_));
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) throw ContractError("dataset label " + std::to_string(y) + " out of range");
  }
}

std::span<const std::uint8_t> Dataset::image(std::size_t i) const {
  return std::span<const std::uint8_t>(pixels_).subspan(i * image_size(), image_size());
}

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  Shape s{static_cast<std::int64_t>(indices.size())};
  s.insert(s.end(), image_shape_.begin(), image_shape_.end());
  Tensor out(std::move(s));
  float* dst = out.raw();
  for (auto i : indices) {
    for (auto p : image(i)) *dst++ = static_cast<float>(p);
  }
  return out;
}

Tensor Dataset::images(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return images(idx);
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels_[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, Split split) const {
  std::vector<std::uint8_t> px;
  px.reserve(indices.size() * image_size());
  for (auto i : indices) {
    const auto im = image(i);
    px.insert(px.end(), im.begin(), im.end());
  }
  return Dataset(image_shape_, num_classes_, split, std::move(px), labels(indices));
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx, split_);
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  h.update(shape_string(image_shape_) + "/" + std::to_string(num_classes_));
  h.update(pixels_);
  for (int y : labels_) {
    const auto b = static_cast<std::uint8_t>(y);
    h.update(std::span<const std::uint8_t>(&b, 1));
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary records

Dataset read_cifar_records(const std::filesystem::path& file, Split split, Shape image_shape, int num_classes) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("missing dataset file " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t image_bytes = static_cast<std::size_t>(shape_size(image_shape));
  const std::size_t record = image_bytes + 1;
  if (bytes.empty()) throw IngestionError(file.string() + ": empty file");
  if (bytes.size() % record != 0) {
    const auto last = bytes.size() - bytes.size() % record;
    throw IngestionError(file.string() + ": truncated record at byte offset " + std::to_string(last) + " (file has " +
                         std::to_string(bytes.size()) + " bytes, records are " + std::to_string(record) + ")");
  }
  const std::size_t n = bytes.size() / record;
  std::vector<std::uint8_t> px(n * image_bytes);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = bytes.data() + i * record;
    if (r[0] >= num_classes) {
      throw IngestionError(file.string() + ": label " + std::to_string(r[0]) + " out of range at byte offset " +
                           std::to_string(i * record));
    }
    labels[i] = r[0];
    std::copy(r + 1, r + record, px.begin() + static_cast<std::ptrdiff_t>(i * image_bytes));
  }
  return Dataset(std::move(image_shape), num_classes, split, std::move(px), std::move(labels));
}

void write_cifar_records(const Dataset& data, const std::filesystem::path& file) {
  if (data.num_classes() > 256) throw ContractError("record format stores labels in one byte");
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<char>(data.labels()[i]);
    out.put(label);
    const auto im = data.image(i);
    out.write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));
  }
  if (!out) throw Error("failed writing " + file.string());
}

CifarSplits load_cifar10(const std::filesystem::path& directory) {
  std::filesystem::path dir = directory;
  if (!std::filesystem::exists(dir / "test_batch.bin") && std::filesystem::exists(dir / "cifar-10-batches-bin")) {
    dir /= "cifar-10-batches-bin";
  }
  if (!std::filesystem::is_directory(dir)) throw IngestionError("CIFAR-10 directory not found: " + directory.string());
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    parts.push_back(read_cifar_records(dir / ("data_batch_" + std::to_string(i) + ".bin"), Split::kTrain));
  }
  std::vector<std::uint8_t> px;
  std::vector<int> labels;
  for (const auto& p : parts) {
    px.insert(px.end(), p.pixels().begin(), p.pixels().end());
    labels.insert(labels.end(), p.labels().begin(), p.labels().end());
  }
  CifarSplits out;
  out.train = Dataset({3, 32, 32}, 10, Split::kTrain, std::move(px), std::move(labels));
  out.test = read_cifar_records(dir / "test_batch.bin", Split::kTest);
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

std::pair<Dataset, Dataset> train_val_split(const Dataset& train, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ContractError("val_fraction must lie in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(train.num_classes()));
  for (std::size_t i = 0; i < train.size(); ++i) by_class[static_cast<std::size_t>(train.labels()[i])].push_back(i);

  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> train_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    const auto order = permutation(members.size(), seed, c);
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * val_fraction));
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < n_val ? val_idx : train_idx).push_back(members[order[k]]);
    }
  }
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {train.subset(train_idx, Split::kTrain), train.subset(val_idx, Split::kVal)};
}

// ---------------------------------------------------------------------------
// Synthetic blobs

namespace {

struct Bump {
  double cx, cy, sigma;
  double sign[3];
};

std::vector<std::vector<Bump>> class_bumps(const BlobOptions& o) {
  std::mt19937_64 rng(o.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> pos(0.15 * o.image_size, 0.85 * o.image_size);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<Bump>> out(static_cast<std::size_t>(o.num_classes));
  for (auto& bumps : out) {
    for (int k = 0; k < o.bumps; ++k) {
      Bump b{pos(rng), pos(rng), o.image_size * o.bump_width, {}};
      for (double& s : b.sign) s = coin(rng) ? 1.0 : -1.0;
      bumps.push_back(b);
    }
  }
  return out;
}

// Pattern in [-1,1] for one class, shifted by (dx, dy).
std::vector<double> pattern(const std::vector<Bump>& bumps, int size, double dx, double dy) {
  std::vector<double> p(static_cast<std::size_t>(3 * size * size), 0.0);
  for (const auto& b : bumps) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double r2 = (x - b.cx - dx) * (x - b.cx - dx) + (y - b.cy - dy) * (y - b.cy - dy);
        const double v = std::exp(-r2 / (2.0 * b.sigma * b.sigma));
        for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>((c * size + y) * size + x)] += b.sign[c] * v;
      }
    }
  }
  double peak = 0.0;
  for (double v : p) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : p) v /= peak;
  }
  return p;
}

}  // namespace

Tensor blob_class_means(const BlobOptions& o) {
  const auto bumps = class_bumps(o);
  const int s = o.image_size;
  Tensor out({o.num_classes, 3, s, s});
  for (int k = 0; k < o.num_classes; ++k) {
    const auto p = pattern(bumps[static_cast<std::size_t>(k)], s, 0.0, 0.0);
    auto dst = out.sample(k);
    for (std::size_t i = 0; i < p.size(); ++i) dst[i] = static_cast<float>(128.0 + 0.5 * o.separation * p[i]);
  }
  return out;
}

Dataset synthetic_blobs(const BlobOptions& o, Split split) {
  if (o.num_classes <= 0 || o.n_per_class <= 0 || o.image_size <= 0 || o.noise_std < 0.0 || o.jitter < 0 ||
      o.bumps <= 0 || !(o.bump_width > 0.0)) {
    throw ContractError("synthetic_blobs parameters must be positive");
  }
  const auto bumps = class_bumps(o);
  const int s = o.image_size;
  const std::size_t image_bytes = static_cast<std::size_t>(3 * s * s);
  const std::size_t n = static_cast<std::size_t>(o.num_classes) * static_cast<std::size_t>(o.n_per_class);

  // Pattern templates depend only on the class seed; noise on seed + split.
  std::vector<std::vector<double>> fixed;
  if (o.jitter == 0) {
    for (const auto& b : bumps) fixed.push_back(pattern(b, s, 0.0, 0.0));
  }
  std::mt19937_64 rng(o.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(split) + 1);
  std::normal_distribution<double> noise(0.0, o.noise_std);
  std::uniform_int_distribution<int> shift(-o.jitter, o.jitter);

  std::vector<std::uint8_t> px(n * image_bytes);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(o.num_classes));
    labels[i] = k;
    std::vector<double> jittered;
    const std::vector<double>* p = nullptr;
    if (o.jitter == 0) {
      p = &fixed[static_cast<std::size_t>(k)];
    } else {
      const int dx = shift(rng);
      const int dy = shift(rng);
      jittered = pattern(bumps[static_cast<std::size_t>(k)], s, dx, dy);
      p = &jittered;
    }
    for (std::size_t j = 0; j < image_bytes; ++j) {
      const double v = 128.0 + 0.5 * o.separation * (*p)[j] + noise(rng);
      px[i * image_bytes + j] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return Dataset({3, s, s}, o.num_classes, split, std::move(px), std::move(labels));
}

Normalization channel_statistics(const Dataset& data) {
  const auto channels = static_cast<std::size_t>(data.image_shape()[0]);
  const auto block = data.image_size() / channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto im = data.image(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = c * block; j < (c + 1) * block; ++j) {
        sum[c] += im[j];
        sq[c] += static_cast<double>(im[j]) * im[j];
      }
    }
  }
  Normalization norm;
  const double n = static_cast<double>(data.size() * block);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = n > 0 ? sum[c] / n : 0.0;
    const double var = n > 0 ? sq[c] / n - mean * mean : 1.0;
    norm.mean.push_back(static_cast<float>(mean));
    norm.stddev.push_back(static_cast<float>(std::sqrt(std::max(var, 1e-6))));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Batching

Batches::Batches(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                 std::uint64_t epoch)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw ContractError("batch size must be at least 1");
  if (shuffle_seed) {
    order_ = permutation(data.size(), *shuffle_seed, epoch + 0x5bd1e995ULL);
  } else {
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

Batch Batches::operator[](std::size_t i) const {
  const auto begin = i * batch_size_;
  const auto end = std::min(order_.size(), begin + batch_size_);
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end));
  b.images = data_->images(b.indices);
  b.labels = data_->labels(b.indices);
  return b;
}

}  // namespace kdadv

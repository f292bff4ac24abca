#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "kdadv/model.hpp"
#include "kdadv/tensor.hpp"

namespace kdadv {

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);

// Labeled images with integer pixels in [0,255], stored as bytes in
// channel-planar order ([N,C,H,W]). Immutable after construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape image_shape, int num_classes, Split split, std::vector<std::uint8_t> pixels, std::vector<int> labels);

  std::size_t size() const { return labels_.size(); }
  const Shape& image_shape() const { return image_shape_; }
  std::size_t image_size() const { return static_cast<std::size_t>(shape_size(image_shape_)); }
  int num_classes() const { return num_classes_; }
  Split split() const { return split_; }
  std::span<const int> labels() const { return labels_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<const std::uint8_t> image(std::size_t i) const;

  // [n, C, H, W] float batch for the given sample indices.
  Tensor images(std::span<const std::size_t> indices) const;
  Tensor images(std::size_t begin, std::size_t end) const;
  Tensor all_images() const { return images(0, size()); }
  std::vector<int> labels(std::span<const std::size_t> indices) const;

  Dataset subset(std::span<const std::size_t> indices, Split split) const;
  Dataset head(std::size_t n) const;
  std::uint64_t content_hash() const;

 private:
  Shape image_shape_;
  int num_classes_ = 0;
  Split split_ = Split::kTrain;
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
};

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;

// Reads CIFAR-10-layout records: one label byte then C*H*W pixel bytes
// (R plane, G plane, B plane).
Dataset read_cifar_records(const std::filesystem::path& file, Split split, Shape image_shape = {3, 32, 32},
                           int num_classes = 10);
void write_cifar_records(const Dataset& data, const std::filesystem::path& file);

struct CifarSplits {
  Dataset train;
  Dataset test;
};

// Loads data_batch_1..5.bin and test_batch.bin from `directory` (or from its
// cifar-10-batches-bin subdirectory).
CifarSplits load_cifar10(const std::filesystem::path& directory);

// Stratified, disjoint, exhaustive; deterministic under `seed`. Both halves
// keep the original sample order.
std::pair<Dataset, Dataset> train_val_split(const Dataset& train, double val_fraction, std::uint64_t seed);

struct BlobOptions {
  int num_classes = 10;
  int n_per_class = 100;
  int image_size = 32;
  std::uint64_t seed = 0;
  double noise_std = 1.0;
  double separation = 60.0;  // peak-to-peak spread of the class mean patterns
  int jitter = 0;            // max per-image shift of the pattern, in pixels
  int bumps = 3;             // Gaussian bumps per class pattern
  double bump_width = 1.0 / 6.0;  // bump sigma as a fraction of the image size
};

// Class-conditional images: a smooth class-specific mean pattern around mid
// gray plus i.i.d. Gaussian pixel noise. Labels cycle 0..K-1, so classes are
// exactly balanced and interleaved.
Dataset synthetic_blobs(const BlobOptions& options, Split split = Split::kTrain);

// The noise-free class mean images, [K, 3, S, S].
Tensor blob_class_means(const BlobOptions& options);

// Per-channel mean and stddev of the pixels, for in-model normalization.
Normalization channel_statistics(const Dataset& data);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// Mini-batches over a dataset. With a shuffle seed the order is a permutation
// determined by (seed, epoch); without one it is the dataset order. The last
// batch may be partial.
class Batches {
 public:
  Batches(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = std::nullopt,
          std::uint64_t epoch = 0);

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  Batch operator[](std::size_t i) const;
  const std::vector<std::size_t>& order() const { return order_; }

  class iterator {
   public:
    iterator(const Batches* owner, std::size_t i) : owner_(owner), i_(i) {}
    Batch operator*() const { return (*owner_)[i_]; }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator!=(const iterator& other) const { return i_ != other.i_; }

   private:
    const Batches* owner_;
    std::size_t i_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

}  // namespace kdadv

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsr/nn.hpp"
#include "rsr/tensor.hpp"

namespace rsr::data {

/// Images are (N x C x H x W) with pixels in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  Dataset slice(std::size_t begin, std::size_t end) const;
  Dataset gather(std::span<const std::size_t> rows) const;
  /// Shapes agree and every label is in [0, num_classes).
  void validate() const;
};

struct DataSplit {
  std::string name;
  Dataset train;
  Dataset test;
  nn::Normalization normalization;
};

/// Oriented-bar images, one class per orientation (horizontal, vertical,
/// diagonal, anti-diagonal). Bars vary in position, length and contrast on
/// a noisy background, so a linear probe falls well short of a small CNN.
struct SyntheticSpec {
  std::size_t n_train = 1200;
  std::size_t n_test = 400;
  std::size_t image_size = 12;
  double noise_std = 0.08;
  std::size_t distractors = 2;  // short bars of random orientation
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kSyntheticClasses = 4;

DataSplit make_synthetic(const SyntheticSpec& spec);

/// Per-channel mean and standard deviation of a dataset.
nn::Normalization channel_statistics(const Dataset& d);

nn::Normalization cifar10_normalization();

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads one CIFAR-10 binary batch file (1-byte label + 3072 pixel bytes
/// per record, channel-major).
Dataset read_cifar10_batch(const std::filesystem::path& file,
                           std::optional<std::size_t> expected_records = kCifarRecordsPerFile);

/// data_batch_1..5.bin and test_batch.bin from `dir` or from its
/// cifar-10-batches-bin subdirectory (the extracted archive). Optional limits keep
/// only the leading records of each split.
DataSplit load_cifar10(const std::filesystem::path& dir,
                       std::optional<std::size_t> max_train = std::nullopt,
                       std::optional<std::size_t> max_test = std::nullopt);

}  // namespace rsr::data

#include "rsr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rsr/rng.hpp"

namespace rsr::data {

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  if (s.empty()) return {};
  return Shape(s.begin() + 1, s.end());
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  Dataset d;
  d.images = images.slice_rows(begin, end);
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  labels.begin() + static_cast<std::ptrdiff_t>(end));
  d.num_classes = num_classes;
  return d;
}

Dataset Dataset::gather(std::span<const std::size_t> rows) const {
  Dataset d;
  d.images = gather_rows(images, rows);
  d.labels.reserve(rows.size());
  for (std::size_t r : rows) d.labels.push_back(labels.at(r));
  d.num_classes = num_classes;
  return d;
}

void Dataset::validate() const {
  if (images.rank() < 2 || images.dim(0) != labels.size())
    throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for images " +
                     to_string(images.shape()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw Error("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                  " outside [0, " + std::to_string(num_classes) + ")");
}

namespace {

constexpr std::array<std::array<int, 2>, kSyntheticClasses> kDirections = {
    {{1, 0}, {0, 1}, {1, 1}, {1, -1}}};  // (dx, dy)

// Draws a bar of `len` pixels with direction `dir` at a random position
// where it fits entirely.
void draw_bar(std::span<double> img, std::size_t size, std::array<int, 2> dir, int len,
              double level, Rng& rng) {
  const int s = static_cast<int>(size);
  const int span_x = dir[0] * (len - 1), span_y = dir[1] * (len - 1);
  const int x_lo = std::max(0, -span_x), x_hi = std::min(s - 1, s - 1 - span_x);
  const int y_lo = std::max(0, -span_y), y_hi = std::min(s - 1, s - 1 - span_y);
  const int x0 = x_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(x_hi - x_lo + 1)));
  const int y0 = y_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(y_hi - y_lo + 1)));
  for (int t = 0; t < len; ++t) {
    const int x = x0 + t * dir[0], y = y0 + t * dir[1];
    double& p = img[static_cast<std::size_t>(y * s + x)];
    p = std::max(p, level);
  }
}

Dataset synth_split(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream) {
  const std::size_t s = spec.image_size;
  if (s < 6) throw Error("synthetic images must be at least 6 pixels wide");
  Dataset d;
  d.num_classes = kSyntheticClasses;
  d.images = Tensor(Shape{n, 1, s, s});
  d.labels.resize(n);
  Rng rng(mix_seed(spec.seed, stream));
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % kSyntheticClasses);
  rng.shuffle(std::span<int>(d.labels));

  const int max_len = static_cast<int>(s) - 3;
  for (std::size_t i = 0; i < n; ++i) {
    auto img = d.images.data().subspan(i * s * s, s * s);
    const double bg = rng.uniform(0.0, 0.3);
    std::fill(img.begin(), img.end(), bg);
    for (std::size_t k = 0; k < spec.distractors; ++k) {
      const auto dir = kDirections[rng.below(kSyntheticClasses)];
      draw_bar(img, s, dir, 2, bg + rng.uniform(0.2, 0.5), rng);
    }
    const int len = 5 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - 4)));
    draw_bar(img, s, kDirections[static_cast<std::size_t>(d.labels[i])], len,
             bg + rng.uniform(0.35, 0.7), rng);
    for (double& p : img) p = std::clamp(p + spec.noise_std * rng.normal(), 0.0, 1.0);
  }
  return d;
}

}  // namespace

DataSplit make_synthetic(const SyntheticSpec& spec) {
  if (spec.n_train == 0) throw Error("synthetic dataset needs n_train > 0");
  if (spec.noise_std < 0.0) throw Error("synthetic noise_std must be >= 0");
  DataSplit split;
  split.name = "synthetic";
  split.train = synth_split(spec, spec.n_train, 1);
  split.test = synth_split(spec, spec.n_test, 2);
  split.normalization = channel_statistics(split.train);
  return split;
}

nn::Normalization channel_statistics(const Dataset& d) {
  if (d.images.rank() < 2 || d.size() == 0) throw Error("channel_statistics: empty dataset");
  const std::size_t n = d.images.dim(0), c = d.images.dim(1);
  const std::size_t plane = d.images.size() / (n * c);
  nn::Normalization norm;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> v;
    v.reserve(n * plane);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = d.images.data().subspan((i * c + ch) * plane, plane);
      v.insert(v.end(), p.begin(), p.end());
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const double sd = std::sqrt(population_variance(v));
    norm.mean.push_back(mean);
    norm.stddev.push_back(sd > 0.0 ? sd : 1.0);
  }
  return norm;
}

nn::Normalization cifar10_normalization() {
  return {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

namespace {

constexpr std::size_t kCifarPixels = kCifarRecordBytes - 1;

std::vector<unsigned char> read_cifar_bytes(const std::filesystem::path& file,
                                            std::optional<std::size_t> expected_records) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cifar10: cannot open " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (expected_records) {
    const std::size_t want = *expected_records * kCifarRecordBytes;
    if (bytes.size() != want)
      throw Error("cifar10: " + file.string() + " has " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(want) + " (" +
                  std::to_string(*expected_records) + " records of " +
                  std::to_string(kCifarRecordBytes) + "); data ends at offset " +
                  std::to_string(bytes.size()));
  } else if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error("cifar10: " + file.string() + " ends with a partial record at offset " +
                std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes));
  }
  return bytes;
}

// Decodes the first `n` records into images/labels starting at row `at`.
void decode(const std::vector<unsigned char>& bytes, const std::filesystem::path& file,
            std::size_t n, Dataset& d, std::size_t at) {
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] > 9)
      throw Error("cifar10: " + file.string() + " has label " + std::to_string(rec[0]) +
                  " at offset " + std::to_string(i * kCifarRecordBytes));
    d.labels[at + i] = rec[0];
    double* out = d.images.data().data() + (at + i) * kCifarPixels;
    for (std::size_t j = 0; j < kCifarPixels; ++j) out[j] = rec[1 + j] / 255.0;
  }
}

Dataset cifar_shell(std::size_t n) {
  Dataset d;
  d.num_classes = 10;
  d.images = Tensor(Shape{n, 3, 32, 32});
  d.labels.resize(n);
  return d;
}

Dataset read_files(const std::vector<std::filesystem::path>& files, std::optional<std::size_t> limit) {
  const std::size_t total = files.size() * kCifarRecordsPerFile;
  Dataset d = cifar_shell(limit ? std::min(*limit, total) : total);
  std::size_t at = 0;
  for (const auto& f : files) {
    if (at == d.size()) break;
    const auto bytes = read_cifar_bytes(f, kCifarRecordsPerFile);
    const std::size_t take = std::min(kCifarRecordsPerFile, d.size() - at);
    decode(bytes, f, take, d, at);
    at += take;
  }
  return d;
}

}  // namespace

Dataset read_cifar10_batch(const std::filesystem::path& file,
                           std::optional<std::size_t> expected_records) {
  const auto bytes = read_cifar_bytes(file, expected_records);
  Dataset d = cifar_shell(bytes.size() / kCifarRecordBytes);
  decode(bytes, file, d.size(), d, 0);
  return d;
}

DataSplit load_cifar10(const std::filesystem::path& dir, std::optional<std::size_t> max_train,
                       std::optional<std::size_t> max_test) {
  DataSplit split;
  split.name = "cifar10";
  // accept the extracted archive's top level as well as the batch directory
  std::filesystem::path root = dir;
  if (!std::filesystem::exists(root / "data_batch_1.bin") &&
      std::filesystem::exists(root / "cifar-10-batches-bin" / "data_batch_1.bin"))
    root /= "cifar-10-batches-bin";
  std::vector<std::filesystem::path> train;
  for (int b = 1; b <= 5; ++b) train.push_back(root / ("data_batch_" + std::to_string(b) + ".bin"));
  split.train = read_files(train, max_train);
  split.test = read_files({root / "test_batch.bin"}, max_test);
  split.normalization = cifar10_normalization();
  return split;
}

}  // namespace rsr::data

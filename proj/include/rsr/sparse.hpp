#pragma once

// Packed inference path for pruned models. Each conv/dense weight is stored
// as per-output-channel (index, value) lists over the positions its mask
// keeps, so channel-wise noise stays a row-local operation.

#include <cstdint>
#include <vector>

#include "rsr/kernels.hpp"
#include "rsr/nn.hpp"

namespace rsr::sparse {

inline constexpr std::uint32_t kPackedFormatVersion = 1;

struct PackedSparseWeights {
  std::size_t layer_id = 0;
  Shape shape;
  /// Set when the layer had no mask and every entry was stored.
  bool dense = false;
  std::vector<std::uint32_t> row_offsets;
  std::vector<std::uint32_t> indices;  // flat column within the row
  std::vector<double> values;
  /// Population variance of the dense masked tensor, the noise scale source.
  double variance = 0.0;

  std::size_t rows() const { return shape.at(0); }
  std::size_t row_length() const { return shape_size(shape) / shape.at(0); }
  kernels::CsrView view(std::span<const double> vals) const;
  /// Bytes used by indices, offsets and values.
  std::size_t packed_bytes() const;
  std::size_t dense_bytes() const { return shape_size(shape) * sizeof(double); }

  friend bool operator==(const PackedSparseWeights&, const PackedSparseWeights&) = default;
};

std::vector<PackedSparseWeights> pack_sparse(const nn::Model& model);

/// Dense tensor and mask back from the packed form (mask is empty for a
/// dense-flagged layer).
Tensor unpack_weight(const PackedSparseWeights& packed);
std::optional<Tensor> unpack_mask(const PackedSparseWeights& packed);

/// A model whose conv/dense weights live only in packed form.
struct SparseModel {
  nn::Model structure;  // conv/dense weights and masks cleared
  std::vector<PackedSparseWeights> packed;
};

SparseModel make_sparse_model(const nn::Model& model);
nn::Model unpack_model(const SparseModel& sparse);

/// Logits from the packed model. Matches nn::predict on the dense masked
/// model bit-for-bit for the same draw, noisy or not.
Tensor sparse_forward(const SparseModel& model, const Tensor& x, nn::NoiseDraw draw);

}  // namespace rsr::sparse

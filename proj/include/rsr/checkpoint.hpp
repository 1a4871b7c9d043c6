#pragma once

// Binary checkpoint container (little-endian):
//
//   magic "RSRCKPT\0" | u32 format version
//   str arch | f64 width | u64 seed | u64 classes | shape input
//   u64 channels | f64 mean[channels] | f64 std[channels]
//   u64 layers | per layer: u8 kind, u64 in/out/kh/kw/padding,
//     and for conv/dense: tensor weight, u8 noise enabled, f64vec alpha,
//     u8 has_mask [tensor mask]
//   u8 has_packed [u32 packed version, u64 count, per packed layer ...]
//
// str = u64 length + bytes; shape = u64 rank + u64 dims; tensor = shape +
// f64 data. Doubles are written as their IEEE bit patterns so a
// save/load/save cycle reproduces the bytes exactly.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rsr/nn.hpp"
#include "rsr/sparse.hpp"

namespace rsr::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  nn::Model model;
  std::optional<std::vector<sparse::PackedSparseWeights>> packed;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

inline void save_model(const std::filesystem::path& path, const nn::Model& model) {
  save(path, Checkpoint{model, std::nullopt});
}
inline nn::Model load_model(const std::filesystem::path& path) { return load(path).model; }

/// Standalone tensor file: magic "RSRTENS\0", u32 version, shape, f64 data.
std::string serialize_tensor(const Tensor& t);
Tensor deserialize_tensor(const std::string& bytes);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Atomic write via a temporary file and rename.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rsr::ckpt

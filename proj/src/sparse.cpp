#include "rsr/sparse.hpp"

#include <cmath>
#include <limits>

#include "rsr/rng.hpp"

namespace rsr::sparse {

kernels::CsrView PackedSparseWeights::view(std::span<const double> vals) const {
  return {rows(), row_length(), row_offsets, indices, vals};
}

std::size_t PackedSparseWeights::packed_bytes() const {
  return row_offsets.size() * sizeof(std::uint32_t) + indices.size() * sizeof(std::uint32_t) +
         values.size() * sizeof(double);
}

std::vector<PackedSparseWeights> pack_sparse(const nn::Model& model) {
  std::vector<PackedSparseWeights> out;
  for (std::size_t id : model.parametric_layers()) {
    const nn::Layer& layer = model.layers[id];
    const Tensor& w = layer.weight;
    if (w.size() > std::numeric_limits<std::uint32_t>::max())
      throw Error("layer too large for 32-bit sparse indices");
    PackedSparseWeights p;
    p.layer_id = id;
    p.shape = w.shape();
    p.dense = !layer.mask.has_value();
    p.variance = nn::layer_variance(w);
    const std::size_t rows = p.rows(), len = p.row_length();
    p.row_offsets.reserve(rows + 1);
    p.row_offsets.push_back(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t i = r * len + j;
        if (layer.mask && (*layer.mask)[i] == 0.0) continue;
        p.indices.push_back(static_cast<std::uint32_t>(j));
        p.values.push_back(w[i]);
      }
      p.row_offsets.push_back(static_cast<std::uint32_t>(p.values.size()));
    }
    out.push_back(std::move(p));
  }
  return out;
}

Tensor unpack_weight(const PackedSparseWeights& p) {
  Tensor w(p.shape);
  const std::size_t len = p.row_length();
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (std::uint32_t e = p.row_offsets[r]; e < p.row_offsets[r + 1]; ++e)
      w[r * len + p.indices[e]] = p.values[e];
  return w;
}

std::optional<Tensor> unpack_mask(const PackedSparseWeights& p) {
  if (p.dense) return std::nullopt;
  Tensor m(p.shape);
  const std::size_t len = p.row_length();
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (std::uint32_t e = p.row_offsets[r]; e < p.row_offsets[r + 1]; ++e)
      m[r * len + p.indices[e]] = 1.0;
  return m;
}

SparseModel make_sparse_model(const nn::Model& model) {
  SparseModel s{model, pack_sparse(model)};
  for (std::size_t id : s.structure.parametric_layers()) {
    s.structure.layers[id].weight = Tensor();
    s.structure.layers[id].mask.reset();
  }
  return s;
}

nn::Model unpack_model(const SparseModel& sparse) {
  nn::Model m = sparse.structure;
  for (const auto& p : sparse.packed) {
    m.layers.at(p.layer_id).weight = unpack_weight(p);
    m.layers.at(p.layer_id).mask = unpack_mask(p);
  }
  return m;
}

namespace {

// Stored values with channel noise applied, same arithmetic as the dense
// channel_noise primitive.
std::vector<double> noisy_values(const PackedSparseWeights& p, const nn::NoiseState& noise,
                                 std::uint64_t seed, std::uint32_t stream, std::uint64_t draw) {
  const double sigma = std::sqrt(p.variance);
  const std::size_t len = p.row_length();
  std::vector<double> v(p.values.size());
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (std::uint32_t e = p.row_offsets[r]; e < p.row_offsets[r + 1]; ++e) {
      const auto flat = static_cast<std::uint32_t>(r * len + p.indices[e]);
      const double eta = sigma * counter_normal(seed, stream, draw, flat);
      v[e] = p.values[e] + noise.alpha[r] * eta;
    }
  return v;
}

}  // namespace

Tensor sparse_forward(const SparseModel& model, const Tensor& x, nn::NoiseDraw draw) {
  const nn::Model& m = model.structure;
  nn::check_input(m, x);
  const std::size_t batch = x.dim(0);
  // non-parametric steps reuse the tape primitives as constants so their
  // arithmetic is shared with the dense path
  ag::Tape tape;
  ag::Var h = tape.constant(x);
  std::uint32_t p = 0;
  for (const nn::Layer& layer : m.layers) {
    switch (layer.spec.kind) {
      case nn::LayerKind::input_normalize:
        h = nn::normalize_input(m, h);
        break;
      case nn::LayerKind::dense:
      case nn::LayerKind::conv2d: {
        if (p >= model.packed.size()) throw Error("sparse model is missing packed layers");
        const PackedSparseWeights& pw = model.packed[p];
        std::vector<double> noisy;
        std::span<const double> vals = pw.values;
        if (draw.enabled && layer.noise.enabled) {
          noisy = noisy_values(pw, layer.noise, m.seed, p, draw.id);
          vals = noisy;
        }
        const kernels::CsrView csr = pw.view(vals);
        const Tensor& in = h.value();
        if (layer.spec.kind == nn::LayerKind::dense) {
          if (in.rank() != 2 || in.dim(1) != pw.row_length())
            throw ShapeError("sparse dense layer: input " + to_string(in.shape()) + " vs weight " +
                             to_string(pw.shape));
          Tensor out(Shape{batch, pw.rows()});
          kernels::csr_linear(csr, batch, in.data(), out.data());
          h = tape.constant(std::move(out));
        } else {
          if (in.rank() != 4 || in.dim(1) != pw.shape[1])
            throw ShapeError("sparse conv2d: input " + to_string(in.shape()) + " vs weight " +
                             to_string(pw.shape));
          kernels::ConvGeometry geo{batch,       in.dim(1),   in.dim(2),   in.dim(3),
                                    pw.shape[0], pw.shape[2], pw.shape[3], layer.spec.padding};
          Tensor out(Shape{batch, geo.out_channels, geo.out_h(), geo.out_w()});
          std::vector<double> col(geo.patch() * geo.positions());
          for (std::size_t b = 0; b < batch; ++b) {
            kernels::im2col(geo, in.data().subspan(b * geo.in_sample(), geo.in_sample()), col);
            kernels::csr_gemm(csr, geo.positions(), col,
                              out.data().subspan(b * geo.out_sample(), geo.out_sample()));
          }
          h = tape.constant(std::move(out));
        }
        ++p;
        break;
      }
      case nn::LayerKind::relu:
        h = ag::relu(h);
        break;
      case nn::LayerKind::flatten:
        h = ag::reshape(h, Shape{batch, h.value().size() / batch});
        break;
    }
  }
  return h.value();
}

}  // namespace rsr::sparse

#pragma once

#include <vector>

#include "equistruct/rng.hpp"
#include "equistruct/symmetrizer.hpp"
#include "equistruct/types.hpp"

namespace equistruct {

/// Batched activation tensor. MLP form is [batch, channels, repr]; CNN form
/// is [batch, channels, repr, height, width]. One row of `data` holds one
/// sample, flattened with channel outermost and width innermost.
struct Tensor {
  RowMatrix data;
  int channels = 1;
  int repr = 1;
  int height = 1;
  int width = 1;

  Tensor() = default;
  Tensor(Index batch, int channels, int repr, int height = 1, int width = 1)
      : data(RowMatrix::Zero(batch, Index(channels) * repr * height * width)),
        channels(channels),
        repr(repr),
        height(height),
        width(width) {}

  Index batch() const { return data.rows(); }
  int feature_size() const { return channels * repr * height * width; }
  int offset(int c, int r, int y = 0, int x = 0) const {
    return ((c * repr + r) * height + y) * width + x;
  }
  double& at(Index b, int c, int r, int y = 0, int x = 0) {
    return data(b, offset(c, r, y, x));
  }
  double at(Index b, int c, int r, int y = 0, int x = 0) const {
    return data(b, offset(c, r, y, x));
  }
};

enum class InitScheme { kXavier, kHe };
enum class LayerKind { kLinear, kConv };

/// Learnable layer whose weight is a linear combination of fixed basis
/// weights: W[c_out, r_out, c_in, k] = sum_i coeff[i, c_out, c_in] V_i[r_out, k].
/// Input slots beyond repr_in are merged-bias slots fed with constant 1.
/// Plain (unconstrained) layers use the full canonical basis plus a scalar
/// bias per output instead of merged-bias slots.
class BasisLayer {
 public:
  struct Geometry {
    int stride;
    int padding;
  };

  BasisLayer(WeightBasis basis, int channels_in, int channels_out,
             LayerKind kind = LayerKind::kLinear,
             Geometry geometry = Geometry{1, 0}, bool scalar_bias = false);

  void init(InitScheme scheme, Rng& rng);

  int rank() const { return basis_.rank(); }
  int channels_in() const { return channels_in_; }
  int channels_out() const { return channels_out_; }
  int repr_in() const { return basis_.shape.d_in - basis_.shape.bias_slots; }
  int repr_out() const { return basis_.shape.d_out; }
  LayerKind kind() const { return kind_; }
  const Geometry& geometry() const { return geometry_; }
  const WeightBasis& basis() const { return basis_; }
  bool has_scalar_bias() const { return bias_.size() > 0; }

  const Vector& coefficients() const { return coeff_; }
  const Vector& bias() const { return bias_; }
  void set_coefficients(const Vector& c);
  void set_bias(const Vector& b);
  Index coefficient_count() const { return coeff_.size(); }
  Index param_count() const { return coeff_.size() + bias_.size(); }
  Index coeff_index(int i, int c_out, int c_in) const {
    return (Index(i) * channels_out_ + c_out) * channels_in_ + c_in;
  }

  /// Realized weight matrix [c_out*r_out x c_in*cols], cached until the
  /// coefficients change.
  const Matrix& realized_weight() const;
  /// The (c_out, c_in) block of the realized weight, shaped like a basis vector.
  Matrix weight_block(int c_out, int c_in) const;

  struct Ctx {
    Matrix z_aug;               // linear: batch x (c_in * slots)
    std::vector<Matrix> cols;   // conv: per sample, (c_in*slots*kh*kw) x positions
    int out_h = 1, out_w = 1;
    Index batch = 0;
  };
  struct Grads {
    Vector coeff;
    Vector bias;
  };

  Tensor forward(const Tensor& z, Ctx* ctx = nullptr) const;
  /// Returns grad wrt the input; accumulates parameter grads into `grads`
  /// (which must be zero-initialized to this layer's shapes by the caller).
  Tensor backward(const Tensor& upstream, const Ctx& ctx, Grads& grads) const;
  Grads zero_grads() const;

  std::pair<int, int> conv_output_size(int in_h, int in_w) const;

 private:
  Tensor forward_linear(const Tensor& z, Ctx* ctx) const;
  Tensor forward_conv(const Tensor& z, Ctx* ctx) const;
  void accumulate_coeff_grads(const Matrix& weight_grad, Vector& out) const;

  WeightBasis basis_;
  int channels_in_;
  int channels_out_;
  LayerKind kind_;
  Geometry geometry_;
  Vector coeff_;
  Vector bias_;  // empty unless scalar_bias
  mutable Matrix realized_;
  mutable bool dirty_ = true;
};

/// Elementwise max(0, .); commutes with any permutation of the repr axis.
Tensor relu(const Tensor& z);
struct ReluCtx {
  RowMatrix positive;
};
Tensor relu(const Tensor& z, ReluCtx* ctx);
Tensor relu_backward(const Tensor& upstream, const ReluCtx& ctx);

/// Max over the spatial axes, keeping [batch, channels, repr]. Pooling over
/// space only, so the repr axis still transforms by the group.
struct PoolCtx {
  IntMatrix argmax;  // batch x (channels*repr), flat spatial index
  int in_h = 0, in_w = 0;
};
Tensor global_max_pool(const Tensor& z, PoolCtx* ctx = nullptr);
Tensor global_max_pool_backward(const Tensor& upstream, const PoolCtx& ctx,
                                int channels, int repr);

}  // namespace equistruct

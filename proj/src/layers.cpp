#include "equistruct/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace equistruct {

BasisLayer::BasisLayer(WeightBasis basis, int channels_in, int channels_out,
                       LayerKind kind, Geometry geometry, bool scalar_bias)
    : basis_(std::move(basis)),
      channels_in_(channels_in),
      channels_out_(channels_out),
      kind_(kind),
      geometry_(geometry) {
  if (channels_in < 1 || channels_out < 1)
    throw std::invalid_argument("channel counts must be positive");
  if (kind_ == LayerKind::kLinear && basis_.shape.spatial_size() != 1)
    throw std::invalid_argument("linear layer cannot use a spatial basis");
  coeff_ = Vector::Zero(Index(basis_.rank()) * channels_out_ * channels_in_);
  if (scalar_bias) bias_ = Vector::Zero(Index(channels_out_) * basis_.shape.d_out);
}

void BasisLayer::init(InitScheme scheme, Rng& rng) {
  const int area = basis_.shape.spatial_size();
  const double fan_in = double(channels_in_) * repr_in() * area;
  const double fan_out = double(channels_out_) * repr_out() * area;
  const double std_dev = scheme == InitScheme::kXavier
                             ? std::sqrt(2.0 / (fan_in + fan_out))
                             : std::sqrt(2.0 / fan_in);
  for (Index i = 0; i < coeff_.size(); ++i) coeff_(i) = std_dev * rng.normal();
  bias_.setZero();
  dirty_ = true;
}

void BasisLayer::set_coefficients(const Vector& c) {
  if (c.size() != coeff_.size())
    throw std::invalid_argument("coefficient size mismatch");
  coeff_ = c;
  dirty_ = true;
}

void BasisLayer::set_bias(const Vector& b) {
  if (b.size() != bias_.size()) throw std::invalid_argument("bias size mismatch");
  bias_ = b;
}

const Matrix& BasisLayer::realized_weight() const {
  if (dirty_) {
    const int r_out = repr_out();
    const int cols = basis_.shape.cols();
    realized_ = Matrix::Zero(Index(channels_out_) * r_out, Index(channels_in_) * cols);
    for (int i = 0; i < basis_.rank(); ++i) {
      const Matrix& v = basis_.vectors[i];
      for (int co = 0; co < channels_out_; ++co)
        for (int ci = 0; ci < channels_in_; ++ci) {
          double c = coeff_(coeff_index(i, co, ci));
          if (c != 0.0)
            realized_.block(Index(co) * r_out, Index(ci) * cols, r_out, cols) += c * v;
        }
    }
    dirty_ = false;
  }
  return realized_;
}

Matrix BasisLayer::weight_block(int c_out, int c_in) const {
  const int r_out = repr_out();
  const int cols = basis_.shape.cols();
  return realized_weight().block(Index(c_out) * r_out, Index(c_in) * cols, r_out, cols);
}

BasisLayer::Grads BasisLayer::zero_grads() const {
  return {Vector::Zero(coeff_.size()), Vector::Zero(bias_.size())};
}

std::pair<int, int> BasisLayer::conv_output_size(int in_h, int in_w) const {
  const int kh = basis_.shape.height, kw = basis_.shape.width;
  const int oh = (in_h + 2 * geometry_.padding - kh) / geometry_.stride + 1;
  const int ow = (in_w + 2 * geometry_.padding - kw) / geometry_.stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("filter larger than padded input");
  return {oh, ow};
}

Tensor BasisLayer::forward(const Tensor& z, Ctx* ctx) const {
  return kind_ == LayerKind::kLinear ? forward_linear(z, ctx) : forward_conv(z, ctx);
}

Tensor BasisLayer::forward_linear(const Tensor& z, Ctx* ctx) const {
  if (z.channels != channels_in_ || z.repr != repr_in() || z.height != 1 || z.width != 1)
    throw std::invalid_argument("forward_linear: input dims mismatch");
  const Index b = z.batch();
  const int slots = basis_.shape.d_in;
  const int r_in = repr_in();

  Matrix z_aug(b, Index(channels_in_) * slots);
  for (int ci = 0; ci < channels_in_; ++ci) {
    z_aug.middleCols(Index(ci) * slots, r_in) = z.data.middleCols(Index(ci) * r_in, r_in);
    for (int s = r_in; s < slots; ++s) z_aug.col(Index(ci) * slots + s).setOnes();
  }

  Tensor y(b, channels_out_, repr_out());
  y.data.noalias() = z_aug * realized_weight().transpose();
  if (bias_.size() > 0) y.data.rowwise() += bias_.transpose();
  if (ctx) {
    ctx->z_aug = std::move(z_aug);
    ctx->batch = b;
    ctx->out_h = ctx->out_w = 1;
  }
  return y;
}

Tensor BasisLayer::forward_conv(const Tensor& z, Ctx* ctx) const {
  if (z.channels != channels_in_ || z.repr != repr_in())
    throw std::invalid_argument("forward_conv: input dims mismatch");
  const Index b = z.batch();
  const int slots = basis_.shape.d_in;
  const int r_in = repr_in();
  const int kh = basis_.shape.height, kw = basis_.shape.width;
  auto [oh, ow] = conv_output_size(z.height, z.width);
  const int positions = oh * ow;
  const int stride = geometry_.stride, pad = geometry_.padding;

  Tensor y(b, channels_out_, repr_out(), oh, ow);
  const Matrix& w = realized_weight();
  std::vector<Matrix> cols_cache;
  if (ctx) cols_cache.reserve(b);

  Matrix cols(Index(channels_in_) * slots * kh * kw, positions);
  for (Index sample = 0; sample < b; ++sample) {
    for (int ci = 0; ci < channels_in_; ++ci)
      for (int s = 0; s < slots; ++s)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const Index row = ((Index(ci) * slots + s) * kh + ky) * kw + kx;
            if (s >= r_in) {
              // Merged-bias slot: constant 1 everywhere, padding included.
              cols.row(row).setOnes();
              continue;
            }
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky;
              const bool y_ok = iy >= 0 && iy < z.height;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx;
                cols(row, oy * ow + ox) = (y_ok && ix >= 0 && ix < z.width)
                                              ? z.at(sample, ci, s, iy, ix)
                                              : 0.0;
              }
            }
          }
    Matrix out = w * cols;  // (c_out*r_out) x positions
    Eigen::Map<Matrix>(y.data.row(sample).data(), positions,
                       Index(channels_out_) * repr_out()) = out.transpose();
    if (ctx) cols_cache.push_back(cols);
  }
  if (bias_.size() > 0)
    for (Index sample = 0; sample < b; ++sample)
      for (int co = 0; co < channels_out_; ++co)
        for (int ro = 0; ro < repr_out(); ++ro) {
          double add = bias_(Index(co) * repr_out() + ro);
          for (int p = 0; p < positions; ++p)
            y.data(sample, Index(co * repr_out() + ro) * positions + p) += add;
        }
  if (ctx) {
    ctx->cols = std::move(cols_cache);
    ctx->out_h = oh;
    ctx->out_w = ow;
    ctx->batch = b;
  }
  return y;
}

void BasisLayer::accumulate_coeff_grads(const Matrix& weight_grad, Vector& out) const {
  const int r_out = repr_out();
  const int cols = basis_.shape.cols();
  for (int i = 0; i < basis_.rank(); ++i) {
    const Matrix& v = basis_.vectors[i];
    for (int co = 0; co < channels_out_; ++co)
      for (int ci = 0; ci < channels_in_; ++ci)
        out(coeff_index(i, co, ci)) +=
            weight_grad.block(Index(co) * r_out, Index(ci) * cols, r_out, cols)
                .cwiseProduct(v)
                .sum();
  }
}

Tensor BasisLayer::backward(const Tensor& upstream, const Ctx& ctx, Grads& grads) const {
  const Index b = upstream.batch();
  const int r_in = repr_in();
  const int slots = basis_.shape.d_in;
  const Matrix& w = realized_weight();

  if (kind_ == LayerKind::kLinear) {
    // y = z_aug W^T (+ bias): dW = dY^T z_aug, dz_aug = dY W.
    Matrix weight_grad = upstream.data.transpose() * ctx.z_aug;
    accumulate_coeff_grads(weight_grad, grads.coeff);
    if (bias_.size() > 0) grads.bias += upstream.data.colwise().sum().transpose();
    Matrix dz_aug = upstream.data * w;
    Tensor dz(b, channels_in_, r_in);
    for (int ci = 0; ci < channels_in_; ++ci)
      dz.data.middleCols(Index(ci) * r_in, r_in) =
          dz_aug.middleCols(Index(ci) * slots, r_in);
    return dz;
  }

  const int kh = basis_.shape.height, kw = basis_.shape.width;
  const int oh = ctx.out_h, ow = ctx.out_w;
  const int positions = oh * ow;
  const int stride = geometry_.stride, pad = geometry_.padding;
  const int in_h = (oh - 1) * stride + kh - 2 * pad;
  const int in_w = (ow - 1) * stride + kw - 2 * pad;

  Matrix weight_grad = Matrix::Zero(w.rows(), w.cols());
  Tensor dz(b, channels_in_, r_in, in_h, in_w);
  for (Index sample = 0; sample < b; ++sample) {
    Eigen::Map<const Matrix> dy(upstream.data.row(sample).data(), positions,
                                Index(channels_out_) * repr_out());
    weight_grad.noalias() += dy.transpose() * ctx.cols[sample].transpose();
    Matrix dcols = w.transpose() * dy.transpose();  // rows x positions
    for (int ci = 0; ci < channels_in_; ++ci)
      for (int s = 0; s < r_in; ++s)  // bias slots receive no input grad
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const Index row = ((Index(ci) * slots + s) * kh + ky) * kw + kx;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= in_h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= in_w) continue;
                dz.at(sample, ci, s, iy, ix) += dcols(row, oy * ow + ox);
              }
            }
          }
    if (bias_.size() > 0)
      for (int co = 0; co < channels_out_; ++co)
        for (int ro = 0; ro < repr_out(); ++ro)
          grads.bias(Index(co) * repr_out() + ro) +=
              dy.col(Index(co) * repr_out() + ro).sum();
  }
  accumulate_coeff_grads(weight_grad, grads.coeff);
  return dz;
}

Tensor relu(const Tensor& z) {
  Tensor y = z;
  y.data = y.data.cwiseMax(0.0);
  return y;
}

Tensor relu(const Tensor& z, ReluCtx* ctx) {
  Tensor y = relu(z);
  if (ctx) ctx->positive = (z.data.array() > 0.0).cast<double>();
  return y;
}

Tensor relu_backward(const Tensor& upstream, const ReluCtx& ctx) {
  Tensor dz = upstream;
  dz.data = dz.data.cwiseProduct(ctx.positive);
  return dz;
}

Tensor global_max_pool(const Tensor& z, PoolCtx* ctx) {
  const Index b = z.batch();
  const int groups = z.channels * z.repr;
  const int area = z.height * z.width;
  Tensor y(b, z.channels, z.repr);
  IntMatrix argmax(b, groups);
  for (Index sample = 0; sample < b; ++sample)
    for (int gidx = 0; gidx < groups; ++gidx) {
      Index best = 0;
      double best_v = z.data(sample, Index(gidx) * area);
      for (int p = 1; p < area; ++p) {
        double v = z.data(sample, Index(gidx) * area + p);
        if (v > best_v) {
          best_v = v;
          best = p;
        }
      }
      y.data(sample, gidx) = best_v;
      argmax(sample, gidx) = static_cast<int>(best);
    }
  if (ctx) {
    ctx->argmax = std::move(argmax);
    ctx->in_h = z.height;
    ctx->in_w = z.width;
  }
  return y;
}

Tensor global_max_pool_backward(const Tensor& upstream, const PoolCtx& ctx,
                                int channels, int repr) {
  const Index b = upstream.batch();
  const int groups = channels * repr;
  const int area = ctx.in_h * ctx.in_w;
  Tensor dz(b, channels, repr, ctx.in_h, ctx.in_w);
  for (Index sample = 0; sample < b; ++sample)
    for (int gidx = 0; gidx < groups; ++gidx)
      dz.data(sample, Index(gidx) * area + ctx.argmax(sample, gidx)) =
          upstream.data(sample, gidx);
  return dz;
}

}  // namespace equistruct

#pragma once

// Neural-network building blocks on top of the tensor engine: linear layers,
// layer-norm with learnable affine, dropout, multi-head self-attention,
// pre-norm transformer layers, and a small projection head.  Every module
// exposes its learnable tensors through `collect` so optimizers and
// checkpoint code can walk them by name in declaration order.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tstcc/rng.hpp"
#include "tstcc/tensor.hpp"

namespace tstcc {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// y = x W^T + b with W of shape (out, in), b of shape (out).  Accepts inputs
// of any rank >= 1 whose trailing dimension equals `in`; the result replaces
// that dimension with `out`.
class Linear {
  public:
    Linear() = default;
    // Weights ~ U(-1/sqrt(in), 1/sqrt(in)); bias zero.
    Linear(std::size_t in, std::size_t out, Rng rng);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix);

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

    Tensor weight;  // (out, in)
    Tensor bias;    // (out)

  private:
    std::size_t in_ = 0, out_ = 0;
};

// Learnable scale/shift around the layer_norm op (normalizes the trailing
// dimension).  gamma starts at 1, beta at 0.
class LayerNormParams {
  public:
    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t width);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix);

    Tensor gamma;  // (width)
    Tensor beta;   // (width)
    double eps = 1e-5;
};

// Inverted dropout: in training mode each element is zeroed with probability
// p and survivors are scaled by 1/(1-p); in eval mode (or p == 0) the input
// passes through untouched and no random draws are consumed.
Tensor dropout_forward(double p, const Tensor& x, bool train, Rng& rng);

// Scaled dot-product self-attention with `heads` heads over inputs of shape
// (B, S, width).  Head dimension is width/heads; scores are scaled by
// 1/sqrt(width/heads).  No causal mask.  If attn_out is non-null it receives
// the detached attention weights, shape (B*heads, S, S).
class MultiHeadAttention {
  public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t width, std::size_t heads, Rng rng);

    Tensor forward(const Tensor& x, Tensor* attn_out = nullptr) const;
    void collect(ParamList& out, const std::string& prefix);

    std::size_t width() const { return width_; }
    std::size_t heads() const { return heads_; }

    Linear q, k, v, proj;

  private:
    std::size_t width_ = 0, heads_ = 0;
};

// Pre-norm transformer block:
//   a = attention(norm1(x)) + x
//   y = mlp(norm2(a)) + a
// where mlp is Linear(width -> 2*width), ReLU, dropout, Linear(2*width ->
// width).  Dropout is active only when train is true.
class TransformerLayer {
  public:
    TransformerLayer() = default;
    TransformerLayer(std::size_t width, std::size_t heads, double dropout, Rng rng);

    Tensor forward(const Tensor& x, bool train, Rng& rng) const;
    void collect(ParamList& out, const std::string& prefix);

    MultiHeadAttention attn;
    LayerNormParams norm1, norm2;
    Linear mlp1, mlp2;
    double dropout = 0.0;
};

// Two-layer MLP used to map context vectors into the space where the
// contextual contrast operates: width -> width/2, ReLU, width/2 -> width/2.
class ProjectionHead {
  public:
    ProjectionHead() = default;
    ProjectionHead(std::size_t width, Rng rng);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix);

    Linear l1, l2;
};

}  // namespace tstcc

#include "tstcc/nn.hpp"

#include <cmath>

#include "tstcc/util.hpp"

namespace tstcc {

Linear::Linear(std::size_t in, std::size_t out, Rng rng) : in_(in), out_(out) {
    if (in == 0 || out == 0) throw ValueError("linear layer dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Tensor::zeros({out, in}, true);
    for (double& w : weight.mutable_data()) w = rng.uniform(-bound, bound);
    bias = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.empty() || s.back() != in_)
        throw ShapeError("linear layer expects trailing dimension " + std::to_string(in_) +
                         ", got " + shape_str(s));
    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
    Tensor flat = s.size() == 2 ? x : reshape(x, {rows, in_});
    Tensor y = add(matmul(flat, weight, false, true), bias);
    if (s.size() == 2) return y;
    Shape out_shape = s;
    out_shape.back() = out_;
    return reshape(y, out_shape);
}

void Linear::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNormParams::LayerNormParams(std::size_t width) {
    if (width == 0) throw ValueError("layer norm width must be positive");
    gamma = Tensor::full({width}, 1.0, true);
    beta = Tensor::zeros({width}, true);
}

Tensor LayerNormParams::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNormParams::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Tensor dropout_forward(double p, const Tensor& x, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ValueError("dropout probability must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    Tensor mask = Tensor::zeros(x.shape(), false);
    const double keep = 1.0 / (1.0 - p);
    for (double& m : mask.mutable_data())
        if (rng.uniform() >= p) m = keep;
    return mul(x, mask);
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng rng)
    : width_(width), heads_(heads) {
    if (heads == 0 || width % heads != 0)
        throw ValueError("attention width " + std::to_string(width) +
                         " must be divisible by head count " + std::to_string(heads));
    q = Linear(width, width, rng.split(1));
    k = Linear(width, width, rng.split(2));
    v = Linear(width, width, rng.split(3));
    proj = Linear(width, width, rng.split(4));
}

Tensor MultiHeadAttention::forward(const Tensor& x, Tensor* attn_out) const {
    if (x.shape().size() != 3)
        throw ShapeError("attention expects a (batch, steps, width) input, got " +
                         shape_str(x.shape()));
    const std::size_t b = x.shape()[0], s = x.shape()[1];
    if (x.shape()[2] != width_)
        throw ShapeError("attention expects width " + std::to_string(width_) + ", got " +
                         shape_str(x.shape()));
    const std::size_t dh = width_ / heads_;

    auto split_heads = [&](const Tensor& t) {
        // (B, S, width) -> (B*heads, S, dh)
        Tensor r = reshape(t, {b, s, heads_, dh});
        return reshape(swap_axes(r, 1, 2), {b * heads_, s, dh});
    };
    Tensor qh = split_heads(q.forward(x));
    Tensor kh = split_heads(k.forward(x));
    Tensor vh = split_heads(v.forward(x));

    Tensor scores = scale(bmm(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(scores, 2);
    if (attn_out) *attn_out = attn.detach();
    Tensor ctx = bmm(attn, vh);  // (B*heads, S, dh)
    Tensor merged = reshape(swap_axes(reshape(ctx, {b, heads_, s, dh}), 1, 2), {b, s, width_});
    return proj.forward(merged);
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    proj.collect(out, prefix + ".proj");
}

TransformerLayer::TransformerLayer(std::size_t width, std::size_t heads, double dropout_p, Rng rng)
    : dropout(dropout_p) {
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ValueError("transformer dropout must lie in [0, 1)");
    attn = MultiHeadAttention(width, heads, rng.split(1));
    norm1 = LayerNormParams(width);
    norm2 = LayerNormParams(width);
    mlp1 = Linear(width, 2 * width, rng.split(2));
    mlp2 = Linear(2 * width, width, rng.split(3));
}

Tensor TransformerLayer::forward(const Tensor& x, bool train, Rng& rng) const {
    Tensor a = add(attn.forward(norm1.forward(x)), x);
    Tensor hidden = dropout_forward(dropout, relu(mlp1.forward(norm2.forward(a))), train, rng);
    return add(mlp2.forward(hidden), a);
}

void TransformerLayer::collect(ParamList& out, const std::string& prefix) {
    attn.collect(out, prefix + ".attn");
    norm1.collect(out, prefix + ".norm1");
    norm2.collect(out, prefix + ".norm2");
    mlp1.collect(out, prefix + ".mlp1");
    mlp2.collect(out, prefix + ".mlp2");
}

ProjectionHead::ProjectionHead(std::size_t width, Rng rng) {
    if (width < 2) throw ValueError("projection head needs width >= 2");
    l1 = Linear(width, width / 2, rng.split(1));
    l2 = Linear(width / 2, width / 2, rng.split(2));
}

Tensor ProjectionHead::forward(const Tensor& x) const { return l2.forward(relu(l1.forward(x))); }

void ProjectionHead::collect(ParamList& out, const std::string& prefix) {
    l1.collect(out, prefix + ".l1");
    l2.collect(out, prefix + ".l2");
}

}  // namespace tstcc

#include "tstcc/losses.hpp"

#include <cmath>
#include <string>

#include "tstcc/util.hpp"

namespace tstcc {

namespace {

// (n, n) identity as a constant pick mask.
Tensor eye_mask(std::size_t n) {
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
    return Tensor::from_data({n, n}, std::move(m), false);
}

// Mean over the batch of -log softmax picked on the diagonal: anchor one view,
// candidates the other view's same-step latents.
Tensor one_direction(const Tensor& anchor_ctx, const Tensor& target_z,
                     const PredictionHeads& heads) {
    const std::size_t b = anchor_ctx.dim(0);
    const std::size_t k_steps = target_z.dim(1);
    const std::size_t d = target_z.dim(2);
    const Tensor diag = eye_mask(b);

    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t k = 1; k <= k_steps; ++k) {
        Tensor preds = heads.forward_k(k, anchor_ctx);                    // (B, d)
        Tensor targets = reshape(slice(target_z, 1, k - 1, 1), {b, d});   // (B, d)
        Tensor scores = matmul(preds, targets, false, true);              // (B, B)
        acc = add(acc, sum(mul(log_softmax(scores, 1), diag)));
    }
    return scale(acc, -1.0 / (static_cast<double>(b) * static_cast<double>(k_steps)));
}

}  // namespace

LossBreakdown make_breakdown(double l_tc_s, double l_tc_w, double l_cc, double lambda1,
                             double lambda2) {
    LossBreakdown out;
    out.l_tc_s = l_tc_s;
    out.l_tc_w = l_tc_w;
    out.l_cc = l_cc;
    out.lambda1 = lambda1;
    out.lambda2 = lambda2;
    out.total = lambda1 * (l_tc_s + l_tc_w) + lambda2 * l_cc;
    return out;
}

std::pair<Tensor, Tensor> temporal_contrast_loss(const TemporalBatchViews& v,
                                                 const PredictionHeads& heads) {
    if (v.c_s.rank() != 2 || v.c_w.rank() != 2 || v.z_s.rank() != 3 || v.z_w.rank() != 3)
        throw ShapeError("temporal contrast wants contexts (B,h) and latents (B,K,d)");
    const std::size_t b = v.c_s.dim(0);
    if (v.c_w.dim(0) != b || v.z_s.dim(0) != b || v.z_w.dim(0) != b)
        throw ShapeError("temporal contrast views disagree on batch size");
    if (v.z_s.dim(1) != v.z_w.dim(1) || v.z_s.dim(2) != v.z_w.dim(2))
        throw ShapeError("temporal contrast latent views disagree on (K, d)");
    if (v.z_s.dim(1) != heads.size())
        throw ShapeError("temporal contrast has " + std::to_string(v.z_s.dim(1)) +
                         " future steps but " + std::to_string(heads.size()) +
                         " prediction heads");
    return {one_direction(v.c_s, v.z_w, heads), one_direction(v.c_w, v.z_s, heads)};
}

double cosine_sim(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size() || u.empty())
        throw ShapeError("cosine similarity needs two equal-length nonempty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw NumericError("cosine similarity of a zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

Tensor contextual_contrast_loss(const Tensor& contexts, double tau, CcAnchorMode mode) {
    if (tau <= 0.0) throw ValueError("temperature must be positive, got " + format_double(tau));
    if (contexts.rank() != 2) throw ShapeError("contexts must be (2N, width)");
    const std::size_t rows = contexts.dim(0);
    if (rows < 2 || rows % 2 != 0)
        throw ShapeError("contexts must stack both views: even row count >= 2, got " +
                         std::to_string(rows));
    const std::size_t n = rows / 2;

    Tensor unit = div(contexts, sqrt(add_scalar(sum_axis(mul(contexts, contexts), 1), 1e-24)));
    Tensor logits = scale(matmul(unit, unit, false, true), 1.0 / tau);

    // Self-similarities leave every denominator via a -1e9 shift (exp
    // underflows to exactly zero, so no gradient leaks through).
    std::vector<double> self_mask(rows * rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) self_mask[i * rows + i] = -1e9;
    Tensor logp = log_softmax(add(logits, Tensor::from_data({rows, rows}, std::move(self_mask), false)), 1);

    const std::size_t anchors = (mode == CcAnchorMode::symmetric_2n) ? rows : n;
    std::vector<double> pick(rows * rows, 0.0);
    for (std::size_t i = 0; i < anchors; ++i) pick[i * rows + (i + n) % rows] = 1.0;
    Tensor picked = sum(mul(logp, Tensor::from_data({rows, rows}, std::move(pick), false)));
    return mode == CcAnchorMode::symmetric_2n
               ? scale(picked, -1.0 / static_cast<double>(rows))
               : scale(picked, -1.0);
}

Tensor total_loss(const Tensor& l_tc_s, const Tensor& l_tc_w, const Tensor& l_cc, double lambda1,
                  double lambda2) {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ValueError("loss weights must be non-negative");
    return add(scale(add(l_tc_s, l_tc_w), lambda1), scale(l_cc, lambda2));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross entropy wants logits (B, classes)");
    const std::size_t b = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != b)
        throw ShapeError("got " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(b));
    std::vector<double> pick(b * classes, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ValueError("label " + std::to_string(labels[i]) + " outside [0, " +
                             std::to_string(classes) + ")");
        pick[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    Tensor picked = sum(mul(log_softmax(logits, 1), Tensor::from_data({b, classes}, std::move(pick), false)));
    return scale(picked, -1.0 / static_cast<double>(b));
}

}  // namespace tstcc

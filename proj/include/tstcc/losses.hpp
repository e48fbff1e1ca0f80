#pragma once

// Training objectives: the two-view temporal contrasting loss (each view's
// context predicts the other view's future latents against in-batch
// negatives), the NT-Xent-style contextual contrasting loss over projected
// contexts, their weighted total, and plain cross-entropy for the supervised
// phases.

#include <cstddef>
#include <utility>
#include <vector>

#include "tstcc/config.hpp"
#include "tstcc/model.hpp"
#include "tstcc/tensor.hpp"

namespace tstcc {

// Contexts and future latents for the cross-view prediction task.  z_s / z_w
// hold the K future steps t+1 .. t+K of each view, shape (B, K, d).
struct TemporalBatchViews {
    Tensor c_s, c_w;  // (B, h)
    Tensor z_s, z_w;  // (B, K, d)
};

// Scalar record of one step's objective values, for logging.
struct LossBreakdown {
    double l_tc_s = 0.0, l_tc_w = 0.0, l_cc = 0.0, total = 0.0;
    double lambda1 = 1.0, lambda2 = 0.7;
};

LossBreakdown make_breakdown(double l_tc_s, double l_tc_w, double l_cc, double lambda1,
                             double lambda2);

// Cross-view temporal contrasting.  For each sample i and step k the strong
// context's prediction W_k(c^s_i) is scored by dot product against the weak
// view's step-k latents of every batch sample (positive included); the term
// is -log softmax at the positive.  Returns (strong-context loss,
// weak-context loss), each the mean over samples of the per-sample step mean.
// The prediction heads are shared between the two directions.
std::pair<Tensor, Tensor> temporal_contrast_loss(const TemporalBatchViews& v,
                                                 const PredictionHeads& heads);

// Plain cosine similarity between two vectors; throws NumericError on a zero
// vector.
double cosine_sim(const std::vector<double>& u, const std::vector<double>& v);

// Contextual contrasting over stacked projected contexts, shape (2N, h').
// Row layout: sample i's strong-view context at row i, its weak-view context
// at row i + N.  Similarity is cosine, scaled by 1/tau; each anchor's
// denominator runs over the 2N-1 other rows (positive included, self
// excluded).  symmetric_2n averages the per-anchor losses over all 2N rows;
// paper_n sums them over the N strong-view rows only, unaveraged.
Tensor contextual_contrast_loss(const Tensor& contexts, double tau, CcAnchorMode mode);

// lambda1 * (l_tc_s + l_tc_w) + lambda2 * l_cc.
Tensor total_loss(const Tensor& l_tc_s, const Tensor& l_tc_w, const Tensor& l_cc, double lambda1,
                  double lambda2);

// Mean -log softmax at the true label; logits (B, classes).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace tstcc

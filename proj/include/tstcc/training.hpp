#pragma once

// Optimizer, the self-supervised pretraining loop, and the downstream
// protocols: linear probing on frozen features, semi-supervised fine-tuning
// on a labeled fraction, and the paired cross-domain transfer comparison.
// Classification quality is summarized by accuracy, per-class F1, and
// macro-F1 over a confusion matrix.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tstcc/config.hpp"
#include "tstcc/data.hpp"
#include "tstcc/losses.hpp"
#include "tstcc/model.hpp"
#include "tstcc/nn.hpp"

namespace tstcc {

// Adam with bias correction and decoupled weight decay: both the gradient
// step and the decay term are computed from the pre-step parameter value.
// A parameter without a gradient is treated as having zero gradient (its
// moments still decay and weight decay still applies).  A non-finite
// gradient raises NumericError naming the offending parameter.
class Adam {
  public:
    Adam(ParamList params, double lr, double weight_decay, double beta1, double beta2,
         double eps);

    void step();
    void zero_grad();
    std::size_t steps_taken() const { return t_; }

  private:
    ParamList params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
};

// One entry per epoch; each is the sample-weighted mean of that epoch's
// per-batch losses.
struct PretrainResult {
    std::vector<LossBreakdown> epoch_log;
};

// Self-supervised pretraining of `model` in place on the series in `data`
// (labels ignored).  All hyperparameters come from model.config(); the run
// is deterministic given the config seed.
PretrainResult pretrain(TSTCCModel& model, const Dataset& data);

// Classification quality on a labeled split.
struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> precision, recall, f1;        // per class
    std::vector<std::vector<std::size_t>> confusion;  // [true class][predicted class]
    std::uint64_t seed = 0;
};

// Confusion-matrix statistics; a class absent from both vectors scores 0
// precision/recall/F1 and still counts toward macro-F1.
MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& labels,
                              std::size_t classes);

// Trains a fresh linear classifier on frozen mean-pooled encoder features
// (eval-mode statistics, no gradient into the encoder) and reports test-set
// metrics.  The model is left bit-identical, buffers included.
MetricsReport linear_evaluate(TSTCCModel& model, const Dataset& train_data,
                              const Dataset& test_data);

// Fine-tunes the encoder plus a fresh linear head end-to-end on a labeled
// fraction of `train_data` (fraction in (0, 1]; 1.0 keeps every label) and
// reports test-set metrics.
MetricsReport finetune_semi_supervised(TSTCCModel& model, double fraction,
                                       const Dataset& train_data, const Dataset& test_data,
                                       bool stratified = false);

// Paired cross-domain comparison trained on `source`, evaluated on `target`:
// (a) purely supervised training from random initialization, versus
// (b) self-supervised pretraining followed by supervised fine-tuning.
struct TransferResult {
    MetricsReport supervised;  // scheme (a)
    MetricsReport pretrained;  // scheme (b)
};

TransferResult transfer_experiment(const TrainConfig& cfg, const Dataset& source,
                                   const Dataset& target);

}  // namespace tstcc

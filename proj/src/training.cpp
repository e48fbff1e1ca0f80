#include "tstcc/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tstcc/augment.hpp"
#include "tstcc/tensor.hpp"
#include "tstcc/util.hpp"

namespace tstcc {

namespace {

// Training alternately allocates and frees large activation buffers; asking
// glibc to keep those regions instead of returning them to the kernel every
// step removes a steady stream of page faults.
void retain_heap_pages() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return order;
}

void check_eval_data(const TrainConfig& cfg, const Dataset& train, const Dataset& test) {
    train.validate();
    test.validate();
    if (train.size() == 0 || test.size() == 0)
        throw ValueError("evaluation needs non-empty train and test splits");
    if (train.channels != test.channels || train.length != test.length)
        throw ShapeError("train and test series shapes differ");
    if (train.classes != test.classes)
        throw ValueError("train and test class counts differ");
    if (train.channels != cfg.in_channels || train.length != cfg.input_length)
        throw ShapeError("dataset shape (" + std::to_string(train.channels) + " x " +
                         std::to_string(train.length) + ") does not match the model input (" +
                         std::to_string(cfg.in_channels) + " x " +
                         std::to_string(cfg.input_length) + ")");
}

// Mean over time of eval-mode encoder latents, detached from the graph.
// Returns row-major (n, d).
std::vector<double> frozen_features(TSTCCModel& model, const Dataset& ds) {
    const std::size_t n = ds.size();
    const std::size_t d = model.config().d;
    const std::size_t chunk = std::max<std::size_t>(1, model.config().batch_size);
    const double inv_t = 1.0 / static_cast<double>(model.latent_steps());
    std::vector<double> rows(n * d);
    Rng unused(0);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t b = std::min(chunk, n - start);
        std::vector<std::size_t> idx(b);
        std::iota(idx.begin(), idx.end(), start);
        Tensor z = model.encode(ds.gather(idx).x, false, unused);
        Tensor pooled = scale(sum_axis(z, 1), inv_t);  // (b, 1, d)
        std::copy(pooled.data().begin(), pooled.data().end(), rows.begin() + start * d);
    }
    return rows;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    const std::vector<double>& v = logits.data();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (v[i * c + j] > v[i * c + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

// Trains `clf` on fixed feature rows with Adam; epochs/batching/lr follow cfg.
void fit_linear_on_features(Linear& clf, const std::vector<double>& rows,
                            const std::vector<int>& labels, std::size_t d,
                            const TrainConfig& cfg, Rng rng) {
    ParamList params;
    clf.collect(params, "classifier");
    Adam opt(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps_adam);
    const std::size_t n = labels.size();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = shuffled_order(n, rng.split(epoch));
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::vector<double> xb(b * d);
            std::vector<int> yb(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t src = order[start + i];
                std::copy_n(rows.begin() + src * d, d, xb.begin() + i * d);
                yb[i] = labels[src];
            }
            Tensor x = Tensor::from_data({b, d}, std::move(xb));
            Tensor loss = cross_entropy(clf.forward(x), yb);
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
}

MetricsReport classify_frozen(TSTCCModel& model, const Linear& clf, const Dataset& test) {
    const std::size_t d = model.config().d;
    std::vector<double> rows = frozen_features(model, test);
    Tensor logits = clf.forward(Tensor::from_data({test.size(), d}, std::move(rows)));
    MetricsReport rep = compute_metrics(argmax_rows(logits), test.labels, test.classes);
    rep.seed = model.config().seed;
    return rep;
}

}  // namespace

Adam::Adam(ParamList params, double lr, double weight_decay, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].tensor.numel(), 0.0);
        v_[i].assign(params_[i].tensor.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        const double* g = nullptr;
        if (p.has_grad()) {
            const std::vector<double>& gr = p.grad();
            for (double gv : gr)
                if (!std::isfinite(gv))
                    throw NumericError("non-finite gradient for parameter '" + params_[i].name +
                                       "'");
            g = gr.data();
        }
        std::vector<double>& w = p.mutable_data();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g ? g[j] : 0.0;
            m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
            v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            // Both terms read the pre-step value of w[j].
            w[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[j]);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

PretrainResult pretrain(TSTCCModel& model, const Dataset& data) {
    retain_heap_pages();
    const TrainConfig& cfg = model.config();
    data.validate();
    const std::size_t n = data.size();
    if (n == 0) throw ValueError("pretrain: empty dataset");
    if (data.channels != cfg.in_channels || data.length != cfg.input_length)
        throw ShapeError("pretrain: dataset shape does not match the model input");

    Adam opt(model.parameters(), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps_adam);
    Rng train_rng = Rng(cfg.seed).split(1);
    const std::size_t T = model.latent_steps();
    const std::size_t K = model.predict_steps();
    bool warned_small = false;

    PretrainResult out;
    out.epoch_log.reserve(cfg.epochs);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng erng = train_rng.split(epoch);
        std::vector<std::size_t> order = shuffled_order(n, erng.split(0));
        double sum_s = 0.0, sum_w = 0.0, sum_cc = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            if (cfg.use_cc && b < 2 && !warned_small) {
                std::cerr << "warning: contextual contrasting is degenerate with a single-sample"
                             " batch; its loss term is zero there\n";
                warned_small = true;
            }
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + start + b);
            TimeSeriesBatch batch = data.gather(idx);

            Rng brng = erng.split(batch_index + 1);
            TimeSeriesBatch view_s, view_w;
            switch (cfg.aug_mode) {
                case AugMode::both:
                    view_s = strong_augment(batch, cfg.augment, brng.split(1));
                    view_w = weak_augment(batch, cfg.augment, brng.split(2));
                    break;
                case AugMode::weak_only:  // two independent draws from one family
                    view_s = weak_augment(batch, cfg.augment, brng.split(1));
                    view_w = weak_augment(batch, cfg.augment, brng.split(2));
                    break;
                case AugMode::strong_only:
                    view_s = strong_augment(batch, cfg.augment, brng.split(1));
                    view_w = strong_augment(batch, cfg.augment, brng.split(2));
                    break;
            }

            Rng drop_rng = brng.split(3);
            Tensor z_s = model.encode(view_s.x, true, drop_rng);
            Tensor z_w = model.encode(view_w.x, true, drop_rng);
            std::size_t t = model.anchor_step();
            if (cfg.random_t) {
                Rng trng = brng.split(4);
                t = static_cast<std::size_t>(
                    trng.uniform_int(1, static_cast<std::int64_t>(T - K)));
            }
            Tensor c_s = model.summarize_prefix(z_s, t, true, drop_rng);
            Tensor c_w = model.summarize_prefix(z_w, t, true, drop_rng);
            Tensor fut_s = slice(z_s, 1, t, K);
            Tensor fut_w = slice(z_w, 1, t, K);

            TemporalBatchViews views;
            views.c_s = c_s;
            views.c_w = c_w;
            if (cfg.cross_view) {
                views.z_s = fut_s;
                views.z_w = fut_w;
            } else {  // each context predicts its own view's future
                views.z_s = fut_w;
                views.z_w = fut_s;
            }
            auto [l_s, l_w] = temporal_contrast_loss(views, model.heads);

            Tensor l_cc = Tensor::scalar(0.0);
            if (cfg.use_cc) {
                Tensor ctx =
                    concat(model.proj_head.forward(c_s), model.proj_head.forward(c_w), 0);
                l_cc = contextual_contrast_loss(ctx, cfg.tau, cfg.cc_anchor_mode);
            }
            Tensor total = total_loss(l_s, l_w, l_cc, cfg.lambda1, cfg.lambda2);

            opt.zero_grad();
            total.backward();
            opt.step();

            const double wgt = static_cast<double>(b);
            sum_s += l_s.item() * wgt;
            sum_w += l_w.item() * wgt;
            sum_cc += l_cc.item() * wgt;
        }
        const double inv = 1.0 / static_cast<double>(n);
        out.epoch_log.push_back(
            make_breakdown(sum_s * inv, sum_w * inv, sum_cc * inv, cfg.lambda1, cfg.lambda2));
    }
    return out;
}

MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& labels,
                              std::size_t classes) {
    if (predicted.size() != labels.size())
        throw ShapeError("metrics: prediction and label counts differ");
    if (labels.empty()) throw ValueError("metrics: no samples");
    if (classes == 0) throw ValueError("metrics: class count must be positive");

    MetricsReport r;
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predicted[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes || p < 0 ||
            static_cast<std::size_t>(p) >= classes)
            throw ValueError("metrics: label outside [0, " + std::to_string(classes) + ")");
        ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    }

    std::size_t correct = 0;
    r.precision.assign(classes, 0.0);
    r.recall.assign(classes, 0.0);
    r.f1.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        correct += r.confusion[c][c];
        std::size_t row = 0, col = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            row += r.confusion[c][j];
            col += r.confusion[j][c];
        }
        const double tp = static_cast<double>(r.confusion[c][c]);
        r.precision[c] = col ? tp / static_cast<double>(col) : 0.0;
        r.recall[c] = row ? tp / static_cast<double>(row) : 0.0;
        const double pr = r.precision[c] + r.recall[c];
        r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
        r.macro_f1 += r.f1[c];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    r.macro_f1 /= static_cast<double>(classes);
    return r;
}

MetricsReport linear_evaluate(TSTCCModel& model, const Dataset& train_data,
                              const Dataset& test_data) {
    retain_heap_pages();
    const TrainConfig& cfg = model.config();
    check_eval_data(cfg, train_data, test_data);

    std::vector<double> rows = frozen_features(model, train_data);
    Rng rng = Rng(cfg.seed).split(2);
    Linear clf(cfg.d, train_data.classes, rng.split(0));
    fit_linear_on_features(clf, rows, train_data.labels, cfg.d, cfg, rng.split(1));
    return classify_frozen(model, clf, test_data);
}

MetricsReport finetune_semi_supervised(TSTCCModel& model, double fraction,
                                       const Dataset& train_data, const Dataset& test_data,
                                       bool stratified) {
    retain_heap_pages();
    const TrainConfig& cfg = model.config();
    check_eval_data(cfg, train_data, test_data);
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ValueError("labeled fraction must lie in (0, 1]");

    Dataset subset = label_subsample(train_data, fraction, stratified, cfg.seed);
    const std::size_t n = subset.size();
    if (n < 2) throw ValueError("fine-tuning needs at least two labeled samples");

    Rng rng = Rng(cfg.seed).split(3);
    Linear clf(cfg.d, train_data.classes, rng.split(0));
    ParamList params;
    model.encoder.collect(params, "encoder");
    clf.collect(params, "classifier");
    Adam opt(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps_adam);

    const double inv_t = 1.0 / static_cast<double>(model.latent_steps());
    const std::size_t bs = std::max<std::size_t>(1, cfg.finetune_batch_size);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng erng = rng.split(epoch);
        std::vector<std::size_t> order = shuffled_order(n, erng.split(0));
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
            const std::size_t b = std::min(bs, n - start);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + start + b);
            TimeSeriesBatch batch = subset.gather(idx);
            Rng drop_rng = erng.split(batch_index + 1);
            Tensor z = model.encode(batch.x, true, drop_rng);
            Tensor pooled = reshape(scale(sum_axis(z, 1), inv_t), {b, cfg.d});
            Tensor loss = cross_entropy(clf.forward(pooled), batch.labels);
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
    return classify_frozen(model, clf, test_data);
}

TransferResult transfer_experiment(const TrainConfig& cfg, const Dataset& source,
                                   const Dataset& target) {
    source.validate();
    target.validate();
    if (source.size() == 0 || target.size() == 0)
        throw ValueError("transfer: empty source or target dataset");
    if (source.channels != target.channels || source.length != target.length)
        throw ShapeError("transfer: source and target series shapes differ");
    if (source.classes != target.classes)
        throw ValueError("transfer: source and target class counts differ");

    TransferResult out;
    {
        TSTCCModel m(cfg, source.channels, source.length, Rng(cfg.seed).split(10));
        out.supervised = finetune_semi_supervised(m, 1.0, source, target);
    }
    {
        TSTCCModel m(cfg, source.channels, source.length, Rng(cfg.seed).split(11));
        pretrain(m, source);
        out.pretrained = finetune_semi_supervised(m, 1.0, source, target);
    }
    return out;
}

}  // namespace tstcc

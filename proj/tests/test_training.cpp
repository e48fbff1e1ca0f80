#include "tstcc/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "testkit.hpp"
#include "tstcc/augment.hpp"
#include "tstcc/data.hpp"
#include "tstcc/rng.hpp"
#include "tstcc/util.hpp"

using namespace tstcc;

namespace {

TrainConfig mini_cfg() {
    TrainConfig cfg;
    cfg.d = 16;
    cfg.h = 12;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.finetune_batch_size = 8;
    return cfg;
}

Dataset mini_data(std::size_t n, std::uint64_t seed) {
    SynthSpec sp;
    sp.n = n;
    sp.channels = 2;
    sp.length = 32;
    sp.subject_count = 4;
    sp.seed = seed;
    return synth_generate(sp);
}

TSTCCModel mini_model(const TrainConfig& cfg, const Dataset& ds) {
    return TSTCCModel(cfg, ds.channels, ds.length, Rng(cfg.seed).split(0));
}

std::vector<std::vector<double>> snapshot_params(TSTCCModel& m) {
    std::vector<std::vector<double>> out;
    for (auto& p : m.parameters()) out.push_back(p.tensor.data());
    return out;
}

std::vector<std::vector<double>> snapshot_buffers(TSTCCModel& m) {
    std::vector<std::vector<double>> out;
    for (auto& b : m.buffers()) out.push_back(*b.data);
    return out;
}

double logsumexp(const std::vector<double>& xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

// Per-sample, per-step, per-candidate evaluation of one prediction direction.
double tc_loop_oracle(const Tensor& ctx, const Tensor& z, const PredictionHeads& heads) {
    const std::size_t b = ctx.dim(0), h = ctx.dim(1), k_steps = z.dim(1), d = z.dim(2);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double sample = 0.0;
        for (std::size_t k = 0; k < k_steps; ++k) {
            std::vector<double> p(d);
            for (std::size_t j = 0; j < d; ++j) {
                p[j] = heads.heads[k].bias.data()[j];
                for (std::size_t t = 0; t < h; ++t)
                    p[j] += heads.heads[k].weight.at({j, t}) * ctx.at({i, t});
            }
            std::vector<double> scores(b);
            for (std::size_t n = 0; n < b; ++n) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += p[j] * z.at({n, k, j});
                scores[n] = dot;
            }
            sample += logsumexp(scores) - scores[i];
        }
        total += sample / static_cast<double>(k_steps);
    }
    return total / static_cast<double>(b);
}

void test_adam_scalar_reference() {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const double lr = rng.uniform(1e-4, 1e-2);
        const double wd = rng.uniform(0.0, 0.1);
        const double b1 = rng.uniform(0.8, 0.95);
        const double b2 = rng.uniform(0.95, 0.999);
        const double eps = 1e-8;
        double theta = rng.uniform(-2.0, 2.0);
        Tensor p = Tensor::scalar(theta, true);
        Adam opt({{"w", p}}, lr, wd, b1, b2, eps);
        double m = 0.0, v = 0.0;
        for (int t = 1; t <= 10; ++t) {
            const double g = rng.uniform(-1.0, 1.0);
            Tensor loss = mul(p, Tensor::scalar(g));
            opt.zero_grad();
            loss.backward();
            opt.step();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            const double mhat = m / (1.0 - std::pow(b1, t));
            const double vhat = v / (1.0 - std::pow(b2, t));
            theta -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
            REQUIRE_CLOSE(p.data()[0], theta, 1e-12);
        }
        REQUIRE(opt.steps_taken() == 10);
    }
}

void test_adam_edge_cases() {
    // First step with unit gradient moves by exactly lr / (1 + eps).
    Tensor p = Tensor::scalar(1.0, true);
    Adam opt({{"w", p}}, 3e-4, 0.0, 0.9, 0.99, 1e-8);
    Tensor loss = mul(p, Tensor::scalar(1.0));
    loss.backward();
    opt.step();
    REQUIRE_CLOSE(p.data()[0], 1.0 - 3e-4 * (1.0 / (1.0 + 1e-8)), 1e-15);

    // Zero gradient and zero decay leave the parameter untouched (fresh state).
    Tensor q = Tensor::scalar(0.7, true);
    Adam opt2({{"q", q}}, 1e-2, 0.0, 0.9, 0.99, 1e-8);
    q.zero_grad();
    opt2.step();
    REQUIRE(q.data()[0] == 0.7);

    // A parameter that never received a gradient still gets weight decay.
    Tensor r = Tensor::scalar(2.0, true);
    Adam opt3({{"r", r}}, 1e-2, 0.1, 0.9, 0.99, 1e-8);
    opt3.step();
    REQUIRE_CLOSE(r.data()[0], 2.0 - 1e-2 * 0.1 * 2.0, 1e-15);

    // Non-finite gradients are rejected with the parameter's name.
    Tensor s = Tensor::scalar(1.0, true);
    Adam opt4({{"enc.w3", s}}, 1e-2, 0.0, 0.9, 0.99, 1e-8);
    Tensor bad = mul(s, Tensor::scalar(std::numeric_limits<double>::infinity()));
    bad.backward();
    bool named = false;
    try {
        opt4.step();
    } catch (const NumericError& e) {
        named = std::string(e.what()).find("enc.w3") != std::string::npos;
    }
    REQUIRE(named);
}

void test_metrics_hand_case() {
    const std::vector<int> labels = {1, 1, 0, 0};
    const std::vector<int> preds = {1, 0, 0, 0};
    MetricsReport r = compute_metrics(preds, labels, 2);
    REQUIRE_CLOSE(r.accuracy, 0.75, 1e-15);
    REQUIRE_CLOSE(r.f1[1], 2.0 / 3.0, 1e-12);
    REQUIRE_CLOSE(r.f1[0], 0.8, 1e-12);
    REQUIRE_CLOSE(r.macro_f1, (0.8 + 2.0 / 3.0) / 2.0, 1e-12);
    REQUIRE(r.confusion[0][0] == 2 && r.confusion[0][1] == 0);
    REQUIRE(r.confusion[1][0] == 1 && r.confusion[1][1] == 1);
    // Row sums equal the per-class label counts.
    REQUIRE(r.confusion[0][0] + r.confusion[0][1] == 2);
    REQUIRE(r.confusion[1][0] + r.confusion[1][1] == 2);

    // A class absent from labels and predictions scores zero F1 but still
    // enters the macro average.
    MetricsReport r3 = compute_metrics(preds, labels, 3);
    REQUIRE(r3.f1[2] == 0.0);
    REQUIRE_CLOSE(r3.macro_f1, (0.8 + 2.0 / 3.0) / 3.0, 1e-12);

    MetricsReport all = compute_metrics(labels, labels, 2);
    REQUIRE(all.accuracy == 1.0 && all.macro_f1 == 1.0);

    REQUIRE_THROWS_AS(compute_metrics({}, {}, 2), ValueError);
    REQUIRE_THROWS_AS(compute_metrics({0, 1}, {0}, 2), ShapeError);
    REQUIRE_THROWS_AS(compute_metrics({0, 5}, {0, 1}, 2), ValueError);
    REQUIRE_THROWS_AS(compute_metrics({0, -1}, {0, 1}, 2), ValueError);

    Rng rng(9);
    std::vector<int> ry(200), rp(200);
    for (auto& y : ry) y = static_cast<int>(rng.uniform_int(0, 4));
    for (auto& y : rp) y = static_cast<int>(rng.uniform_int(0, 4));
    MetricsReport rr = compute_metrics(rp, ry, 5);
    REQUIRE(rr.accuracy >= 0.0 && rr.accuracy <= 1.0);
    REQUIRE(rr.macro_f1 >= 0.0 && rr.macro_f1 <= 1.0);
}

void test_pretrain_decreases_loss() {
    TrainConfig cfg = mini_cfg();
    cfg.epochs = 40;
    Dataset ds = mini_data(48, 7);
    TSTCCModel model = mini_model(cfg, ds);
    PretrainResult res = pretrain(model, ds);
    REQUIRE(res.epoch_log.size() == 40);
    const double first = res.epoch_log.front().total;
    const double last = res.epoch_log.back().total;
    std::printf("  pretrain total  epoch1 %.4f  epoch40 %.4f\n", first, last);
    REQUIRE(last < first);
    for (const auto& e : res.epoch_log) REQUIRE(std::isfinite(e.total));
}

void test_pretrain_deterministic() {
    TrainConfig cfg = mini_cfg();
    Dataset ds = mini_data(40, 5);
    TSTCCModel m1 = mini_model(cfg, ds);
    TSTCCModel m2 = mini_model(cfg, ds);
    PretrainResult r1 = pretrain(m1, ds);
    PretrainResult r2 = pretrain(m2, ds);
    REQUIRE(r1.epoch_log.size() == r2.epoch_log.size());
    for (std::size_t i = 0; i < r1.epoch_log.size(); ++i) {
        REQUIRE(r1.epoch_log[i].total == r2.epoch_log[i].total);
        REQUIRE(r1.epoch_log[i].l_cc == r2.epoch_log[i].l_cc);
    }
    auto p1 = snapshot_params(m1), p2 = snapshot_params(m2);
    REQUIRE(p1 == p2);
    auto b1 = snapshot_buffers(m1), b2 = snapshot_buffers(m2);
    REQUIRE(b1 == b2);
}

void test_pretrain_no_cc() {
    TrainConfig cfg = mini_cfg();
    cfg.use_cc = false;
    Dataset ds = mini_data(32, 2);
    TSTCCModel model = mini_model(cfg, ds);
    PretrainResult res = pretrain(model, ds);
    for (const auto& e : res.epoch_log) REQUIRE(e.l_cc == 0.0);
    // total reduces to lambda1 * (l_tc_s + l_tc_w)
    const auto& e0 = res.epoch_log[0];
    REQUIRE_CLOSE(e0.total, cfg.lambda1 * (e0.l_tc_s + e0.l_tc_w), 1e-12);
}

void test_pretrain_single_sample_batch() {
    TrainConfig cfg = mini_cfg();
    cfg.epochs = 1;
    Dataset ds = mini_data(17, 3);  // batch of 16 then a 1-sample remainder
    TSTCCModel model = mini_model(cfg, ds);
    PretrainResult res = pretrain(model, ds);  // warns, must not throw
    REQUIRE(res.epoch_log.size() == 1);
    REQUIRE(std::isfinite(res.epoch_log[0].total));
}

void test_same_view_oracle() {
    TrainConfig cfg = mini_cfg();
    cfg.cross_view = false;
    cfg.use_cc = false;
    cfg.epochs = 1;
    Dataset ds = mini_data(16, 4);  // exactly one batch
    TSTCCModel m1 = mini_model(cfg, ds);
    TSTCCModel m2 = mini_model(cfg, ds);
    PretrainResult res = pretrain(m1, ds);

    // Replay the single batch with identical streams and score each context
    // against its own view's futures with the explicit loop oracle.
    Rng erng = Rng(cfg.seed).split(1).split(1);
    std::vector<std::size_t> order(16);
    for (std::size_t i = 0; i < 16; ++i) order[i] = i;
    {
        Rng srng = erng.split(0);
        srng.shuffle(order);
    }
    TimeSeriesBatch batch = ds.gather(order);
    Rng brng = erng.split(1);
    TimeSeriesBatch vs = strong_augment(batch, cfg.augment, brng.split(1));
    TimeSeriesBatch vw = weak_augment(batch, cfg.augment, brng.split(2));
    Rng drop = brng.split(3);
    Tensor z_s = m2.encode(vs.x, true, drop);
    Tensor z_w = m2.encode(vw.x, true, drop);
    const std::size_t t = m2.anchor_step(), k = m2.predict_steps();
    Tensor c_s = m2.summarize_prefix(z_s, t, true, drop);
    Tensor c_w = m2.summarize_prefix(z_w, t, true, drop);
    const double want_s = tc_loop_oracle(c_s, slice(z_s, 1, t, k), m2.heads);
    const double want_w = tc_loop_oracle(c_w, slice(z_w, 1, t, k), m2.heads);
    REQUIRE_CLOSE(res.epoch_log[0].l_tc_s, want_s, 1e-9);
    REQUIRE_CLOSE(res.epoch_log[0].l_tc_w, want_w, 1e-9);

    // Cross-view scoring is genuinely different on the same batch.
    const double crossed = tc_loop_oracle(c_s, slice(z_w, 1, t, k), m2.heads);
    REQUIRE(std::abs(crossed - want_s) > 1e-6);
}

void test_linear_eval_frozen_and_chance() {
    TrainConfig cfg = mini_cfg();
    cfg.epochs = 10;
    Dataset all = mini_data(900, 11);
    std::vector<std::size_t> tr_idx(600), te_idx(300);
    for (std::size_t i = 0; i < 600; ++i) tr_idx[i] = i;
    for (std::size_t i = 0; i < 300; ++i) te_idx[i] = 600 + i;
    Dataset train = all.subset(tr_idx), test = all.subset(te_idx);

    // Break the label/feature association while keeping class counts.
    Rng sh(77);
    sh.shuffle(train.labels);
    sh.shuffle(test.labels);

    TSTCCModel model = mini_model(cfg, train);
    auto params_before = snapshot_params(model);
    auto buffers_before = snapshot_buffers(model);
    MetricsReport rep = linear_evaluate(model, train, test);
    REQUIRE(snapshot_params(model) == params_before);  // encoder bit-identical
    REQUIRE(snapshot_buffers(model) == buffers_before);

    std::printf("  permuted-label probe accuracy %.4f\n", rep.accuracy);
    REQUIRE(rep.accuracy > 0.33 - 0.05 && rep.accuracy < 0.33 + 0.05);
    REQUIRE(rep.seed == cfg.seed);

    // Same call, same result.
    MetricsReport rep2 = linear_evaluate(model, train, test);
    REQUIRE(rep2.accuracy == rep.accuracy && rep2.macro_f1 == rep.macro_f1);

    // Schema mismatches are rejected up front.
    Dataset other = mini_data(20, 1);
    other.length = 16;
    other.values.resize(other.size() * other.channels * 16);
    REQUIRE_THROWS_AS(linear_evaluate(model, train, other), ShapeError);
}

void test_finetune_fraction_handling() {
    TrainConfig cfg = mini_cfg();
    Dataset train = mini_data(40, 6), test = mini_data(20, 8);
    TSTCCModel model = mini_model(cfg, train);
    REQUIRE_THROWS_AS(finetune_semi_supervised(model, 0.0, train, test), ValueError);
    REQUIRE_THROWS_AS(finetune_semi_supervised(model, -0.3, train, test), ValueError);
    REQUIRE_THROWS_AS(finetune_semi_supervised(model, 1.2, train, test), ValueError);
    // A fraction that keeps a single sample is too small to train on.
    REQUIRE_THROWS_AS(finetune_semi_supervised(model, 0.01, train, test), ValueError);

    // Fraction 1.0 keeps every label.
    REQUIRE(label_subsample(train, 1.0, false, 0).size() == train.size());

    // Fractional rounding: 10% of 9200 samples keeps exactly 920.
    SynthSpec sp;
    sp.n = 9200;
    sp.channels = 1;
    sp.length = 32;
    sp.seed = 21;
    Dataset big = synth_generate(sp);
    REQUIRE(label_subsample(big, 0.10, false, 0).size() == 920);
    Dataset strat = label_subsample(big, 0.10, true, 0);
    REQUIRE(strat.size() >= 919 && strat.size() <= 921);
}

void test_finetune_trains_encoder() {
    TrainConfig cfg = mini_cfg();
    cfg.epochs = 2;
    Dataset train = mini_data(40, 6), test = mini_data(20, 8);
    TSTCCModel model = mini_model(cfg, train);
    auto before = snapshot_params(model);
    MetricsReport rep = finetune_semi_supervised(model, 0.5, train, test);
    REQUIRE(rep.accuracy >= 0.0 && rep.accuracy <= 1.0);
    REQUIRE(rep.macro_f1 >= 0.0 && rep.macro_f1 <= 1.0);
    REQUIRE(snapshot_params(model) != before);  // encoder weights moved

    std::size_t row_total = 0;
    for (std::size_t c = 0; c < rep.confusion.size(); ++c) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < rep.confusion[c].size(); ++j) row += rep.confusion[c][j];
        std::size_t want = 0;
        for (int y : test.labels)
            if (y == static_cast<int>(c)) ++want;
        REQUIRE(row == want);
        row_total += row;
    }
    REQUIRE(row_total == test.size());

    TSTCCModel again = mini_model(cfg, train);
    MetricsReport rep2 = finetune_semi_supervised(again, 0.5, train, test);
    REQUIRE(rep2.accuracy == rep.accuracy);
}

void test_transfer() {
    TrainConfig cfg = mini_cfg();
    cfg.epochs = 2;
    Dataset source = mini_data(40, 13);
    Dataset target = mini_data(24, 14);
    TransferResult res = transfer_experiment(cfg, source, target);
    REQUIRE(res.supervised.accuracy >= 0.0 && res.supervised.accuracy <= 1.0);
    REQUIRE(res.pretrained.accuracy >= 0.0 && res.pretrained.accuracy <= 1.0);

    TransferResult res2 = transfer_experiment(cfg, source, target);
    REQUIRE(res2.supervised.accuracy == res.supervised.accuracy);
    REQUIRE(res2.pretrained.accuracy == res.pretrained.accuracy);

    // Degenerate case: evaluating on the source itself still runs end to end.
    TransferResult self = transfer_experiment(cfg, source, source);
    REQUIRE(self.supervised.accuracy >= 0.0 && self.supervised.accuracy <= 1.0);

    Dataset bad_shape = source;
    bad_shape.channels = 3;
    bad_shape.values.resize(bad_shape.size() * 3 * bad_shape.length);
    REQUIRE_THROWS_AS(transfer_experiment(cfg, source, bad_shape), ShapeError);

    Dataset bad_classes = source;
    bad_classes.classes = 5;
    REQUIRE_THROWS_AS(transfer_experiment(cfg, source, bad_classes), ValueError);
}

}  // namespace

int main() {
    test_adam_scalar_reference();
    test_adam_edge_cases();
    test_metrics_hand_case();
    test_pretrain_decreases_loss();
    test_pretrain_deterministic();
    test_pretrain_no_cc();
    test_pretrain_single_sample_batch();
    test_same_view_oracle();
    test_linear_eval_frozen_and_chance();
    test_finetune_fraction_handling();
    test_finetune_trains_encoder();
    test_transfer();
    TEST_SUMMARY("training");
    return 0;
}

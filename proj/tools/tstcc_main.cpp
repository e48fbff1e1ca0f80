// Command-line driver.  Every subcommand materializes a run directory holding
// a config snapshot, CSV outputs, and a manifest with input/artifact
// checksums, so any run can be replayed and verified byte for byte.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "tstcc/artifacts.hpp"
#include "tstcc/augment.hpp"
#include "tstcc/config.hpp"
#include "tstcc/data.hpp"
#include "tstcc/gradcheck.hpp"
#include "tstcc/losses.hpp"
#include "tstcc/model.hpp"
#include "tstcc/nn.hpp"
#include "tstcc/rng.hpp"
#include "tstcc/tensor.hpp"
#include "tstcc/training.hpp"
#include "tstcc/util.hpp"

namespace fs = std::filesystem;
using namespace tstcc;

namespace {

// ---------------------------------------------------------------- plumbing

std::string default_output_root() {
    const char* env = std::getenv("TSTCC_OUTPUT_ROOT");
    return (env && *env) ? std::string(env) : std::string("runs");
}

fs::path unique_dir(const fs::path& want) {
    if (!fs::exists(want)) return want;
    for (int i = 2; i < 1000; ++i) {
        fs::path p = want;
        p += "-" + std::to_string(i);
        if (!fs::exists(p)) return p;
    }
    throw IoError("cannot find a free run directory near '" + want.string() + "'");
}

// Creates the run directory, writes the config snapshot and a "running"
// manifest up front, and finalizes the manifest with artifact checksums and
// wall time at the end.
class RunContext {
  public:
    RunContext(const std::string& command, const std::vector<std::string>& args,
               const std::string& out_flag, const std::string& forced_dir,
               const std::string& config_text, const std::vector<std::uint64_t>& seeds,
               const std::vector<std::string>& input_paths) {
        start_ = std::chrono::steady_clock::now();
        m_.command = command;
        m_.args = args;
        m_.config_text = config_text;
        m_.seeds = seeds;
        m_.status = "running";
        m_.run_id = make_run_id(command, args, config_text, seeds);
        const fs::path want = !forced_dir.empty()
                                  ? fs::path(forced_dir)
                                  : (!out_flag.empty() ? fs::path(out_flag)
                                                       : fs::path(default_output_root()) /
                                                             m_.run_id);
        dir_ = unique_dir(want);
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec)
            throw IoError("cannot create run directory '" + dir_.string() + "': " + ec.message());
        m_.output_dir = dir_.string();
        for (const std::string& p : input_paths)
            m_.inputs.push_back({hex64(fnv1a64_file(p)), p});
        write_artifact("config.txt", config_text);
        save_manifest(m_, (dir_ / "manifest.txt").string());
    }

    const std::string& run_id() const { return m_.run_id; }
    const fs::path& dir() const { return dir_; }

    void write_artifact(const std::string& rel, const std::string& content) {
        write_text_file((dir_ / rel).string(), content);
        m_.artifacts.push_back({hex64(fnv1a64(content)), rel});
    }

    // Registers a file some other writer already put into the run directory.
    void register_artifact(const std::string& rel) {
        m_.artifacts.push_back({hex64(fnv1a64_file((dir_ / rel).string())), rel});
    }

    void finalize() {
        m_.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        m_.status = "complete";
        save_manifest(m_, (dir_ / "manifest.txt").string());
        std::printf("run %s -> %s\n", m_.run_id.c_str(), dir_.string().c_str());
    }

  private:
    RunManifest m_;
    fs::path dir_;
    std::chrono::steady_clock::time_point start_;
};

struct CmdResult {
    int code = 0;
    std::string run_dir;
};

CmdResult dispatch(const std::vector<std::string>& args, const std::string& forced_dir);

// ---------------------------------------------------------------- options

struct ConfigOpts {
    std::string file;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_config_opts(CLI::App* cmd, ConfigOpts& o) {
    cmd->add_option("--config", o.file, "config file (key = value lines)");
    cmd->add_option("--set", o.sets, "override one config field, e.g. --set lr=0.001");
    o.seed_opt = cmd->add_option("--seed", o.seed, "base seed (overrides the config file)");
}

TrainConfig resolve_config(const ConfigOpts& o) {
    TrainConfig cfg;
    if (!o.file.empty()) cfg = load_config_file(o.file);
    for (const std::string& kv : o.sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed_opt != nullptr && o.seed_opt->count() > 0) cfg.seed = o.seed;
    cfg.validate();
    return cfg;
}

struct SourceOpts {
    std::string checkpoint;
    std::string pretrain_data;
    bool scratch = false;
};

void add_source_opts(CLI::App* cmd, SourceOpts& o, const char* scratch_flag,
                     const char* scratch_help) {
    auto* a = cmd->add_option("--checkpoint", o.checkpoint,
                              "start from this checkpoint (its config governs the model)");
    auto* b = cmd->add_option("--pretrain-data", o.pretrain_data,
                              "pretrain on this dataset first (per seed)");
    auto* c = cmd->add_flag(scratch_flag, o.scratch, scratch_help);
    a->excludes(b);
    a->excludes(c);
    b->excludes(c);
}

void check_source(const SourceOpts& o) {
    const int n = (!o.checkpoint.empty() ? 1 : 0) + (!o.pretrain_data.empty() ? 1 : 0) +
                  (o.scratch ? 1 : 0);
    if (n != 1)
        throw ConfigError(
            "choose exactly one of --checkpoint, --pretrain-data, or the from-scratch flag");
}

// Builds the per-seed model: loaded checkpoint, pipeline pretraining (with
// per-seed loss log and checkpoint artifacts), or random initialization.
TSTCCModel seeded_model(const TrainConfig& cfg, const SourceOpts& src, const Dataset& shape_ref,
                        const Dataset* pretrain_ds, RunContext& rc) {
    if (!src.checkpoint.empty()) {
        TSTCCModel m = load_checkpoint(src.checkpoint);
        m.set_seed(cfg.seed);
        return m;
    }
    TSTCCModel m(cfg, shape_ref.channels, shape_ref.length, Rng(cfg.seed).split(0));
    if (pretrain_ds != nullptr) {
        PretrainResult pr = pretrain(m, *pretrain_ds);
        const std::string tag = "-s" + std::to_string(cfg.seed);
        rc.write_artifact("loss_log" + tag + ".csv", loss_log_csv(pr.epoch_log));
        const std::string ck = "checkpoint" + tag + ".tsck";
        save_checkpoint(m, (rc.dir() / ck).string());
        rc.register_artifact(ck);
    }
    return m;
}

// ---------------------------------------------------------------- reporting

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
}

void print_row(const MetricsRow& r) {
    std::printf("  seed %-4llu %-36s accuracy %.4f  macro-F1 %.4f\n",
                static_cast<unsigned long long>(r.seed), r.split.c_str(), r.report.accuracy,
                r.report.macro_f1);
}

void print_aggregate(const std::vector<MetricsRow>& rows) {
    std::vector<std::string> splits;
    for (const auto& r : rows)
        if (std::find(splits.begin(), splits.end(), r.split) == splits.end())
            splits.push_back(r.split);
    for (const auto& split : splits) {
        std::vector<double> acc, mf1;
        for (const auto& r : rows)
            if (r.split == split) {
                acc.push_back(r.report.accuracy);
                mf1.push_back(r.report.macro_f1);
            }
        const auto [am, as] = mean_std(acc);
        const auto [fm, fsd] = mean_std(mf1);
        std::printf("  mean %-40s accuracy %.4f +/- %.4f  macro-F1 %.4f +/- %.4f  (n=%zu)\n",
                    split.c_str(), am, as, fm, fsd, acc.size());
    }
}

std::vector<std::uint64_t> effective_seeds(const std::vector<std::uint64_t>& flag,
                                           const TrainConfig& cfg) {
    return flag.empty() ? std::vector<std::uint64_t>{cfg.seed} : flag;
}

// ---------------------------------------------------------------- synth

struct SynthOpts {
    SynthSpec spec;
    bool csv = false;
    std::string out;
};

CmdResult run_synth(const SynthOpts& o, const std::vector<std::string>& tail,
                    const std::string& forced) {
    o.spec.validate();
    std::string text;
    text += "synth.classes = " + std::to_string(o.spec.classes) + "\n";
    text += "synth.n = " + std::to_string(o.spec.n) + "\n";
    text += "synth.channels = " + std::to_string(o.spec.channels) + "\n";
    text += "synth.length = " + std::to_string(o.spec.length) + "\n";
    text += "synth.noise = " + csv_num(o.spec.noise) + "\n";
    text += "synth.domain_scale = " + csv_num(o.spec.domain_scale) + "\n";
    text += "synth.domain_noise = " + csv_num(o.spec.domain_noise) + "\n";
    text += "synth.subject_count = " + std::to_string(o.spec.subject_count) + "\n";
    text += "synth.seed = " + std::to_string(o.spec.seed) + "\n";
    RunContext rc("synth", tail, o.out, forced, text, {o.spec.seed}, {});
    Dataset ds = synth_generate(o.spec);
    save_dataset(ds, (rc.dir() / "data.tsds").string());
    rc.register_artifact("data.tsds");
    if (o.csv) {
        export_csv(ds, (rc.dir() / "data.csv").string());
        rc.register_artifact("data.csv");
    }
    std::printf("  generated %zu series: %zu channels x %zu steps, %zu classes\n", ds.size(),
                ds.channels, ds.length, ds.classes);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- split

struct SplitOpts {
    std::string data, out;
    SplitSpec spec;
};

CmdResult run_split(const SplitOpts& o, const std::vector<std::string>& tail,
                    const std::string& forced) {
    Dataset ds = load_dataset(o.data);
    std::string text;
    text += "split.train = " + csv_num(o.spec.train) + "\n";
    text += "split.val = " + csv_num(o.spec.val) + "\n";
    text += "split.test = " + csv_num(o.spec.test) + "\n";
    text += "split.subject_wise = " + std::string(o.spec.subject_wise ? "true" : "false") + "\n";
    text += "split.seed = " + std::to_string(o.spec.seed) + "\n";
    RunContext rc("split", tail, o.out, forced, text, {o.spec.seed}, {o.data});
    SplitResult r = split_dataset(ds, o.spec);
    auto emit = [&](const char* name, const Dataset& part) {
        if (part.size() == 0) return;
        save_dataset(part, (rc.dir() / (std::string(name) + ".tsds")).string());
        rc.register_artifact(std::string(name) + ".tsds");
        std::printf("  %-5s %zu series\n", name, part.size());
    };
    emit("train", r.train);
    emit("val", r.val);
    emit("test", r.test);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- pretrain

struct PretrainOpts {
    std::string data, out;
    ConfigOpts cfg;
};

CmdResult run_pretrain(const PretrainOpts& o, const std::vector<std::string>& tail,
                       const std::string& forced) {
    TrainConfig cfg = resolve_config(o.cfg);
    Dataset ds = load_dataset(o.data);
    std::vector<std::string> inputs{o.data};
    if (!o.cfg.file.empty()) inputs.push_back(o.cfg.file);
    RunContext rc("pretrain", tail, o.out, forced, serialize_config(cfg), {cfg.seed}, inputs);
    std::printf("  pretraining on %zu series for %zu epochs (batch %zu)\n", ds.size(), cfg.epochs,
                cfg.batch_size);
    TSTCCModel model(cfg, ds.channels, ds.length, Rng(cfg.seed).split(0));
    PretrainResult res = pretrain(model, ds);
    for (std::size_t e = 0; e < res.epoch_log.size(); ++e) {
        const auto& l = res.epoch_log[e];
        std::printf("  epoch %3zu  l_tc_s %.5f  l_tc_w %.5f  l_cc %.5f  total %.5f\n", e + 1,
                    l.l_tc_s, l.l_tc_w, l.l_cc, l.total);
    }
    save_checkpoint(model, (rc.dir() / "checkpoint.tsck").string());
    rc.register_artifact("checkpoint.tsck");
    rc.write_artifact("loss_log.csv", loss_log_csv(res.epoch_log));
    rc.finalize();
    return {0, rc.dir().string()};
}

// ------------------------------------------------- linear-eval / finetune

struct ProtocolOpts {
    std::string train_path, test_path, out;
    SourceOpts src;
    ConfigOpts cfg;
    std::vector<std::uint64_t> seeds;
    double fraction = 0.1;
    bool stratified = false;
};

CmdResult run_protocol(const char* name, bool finetune_mode, const ProtocolOpts& o,
                       const std::vector<std::string>& tail, const std::string& forced) {
    check_source(o.src);
    TrainConfig cfg0 = resolve_config(o.cfg);
    Dataset train = load_dataset(o.train_path);
    Dataset test = load_dataset(o.test_path);
    std::optional<Dataset> uds;
    if (!o.src.pretrain_data.empty()) uds = load_dataset(o.src.pretrain_data);

    const std::vector<std::uint64_t> seeds = effective_seeds(o.seeds, cfg0);
    std::vector<std::string> inputs{o.train_path, o.test_path};
    if (!o.src.pretrain_data.empty()) inputs.push_back(o.src.pretrain_data);
    if (!o.src.checkpoint.empty()) inputs.push_back(o.src.checkpoint);
    if (!o.cfg.file.empty()) inputs.push_back(o.cfg.file);

    RunContext rc(name, tail, o.out, forced, serialize_config(cfg0), seeds, inputs);
    std::vector<MetricsRow> rows;
    for (std::uint64_t s : seeds) {
        TrainConfig cfg = cfg0;
        cfg.seed = s;
        TSTCCModel model = seeded_model(cfg, o.src, train, uds ? &*uds : nullptr, rc);
        MetricsReport rep =
            finetune_mode ? finetune_semi_supervised(model, o.fraction, train, test, o.stratified)
                          : linear_evaluate(model, train, test);
        rows.push_back({rc.run_id(), s, "test", rep});
        print_row(rows.back());
    }
    rc.write_artifact("metrics.csv", metrics_csv(rows));
    rc.write_artifact("summary.csv", summary_csv(rows));
    print_aggregate(rows);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- transfer

struct TransferOpts {
    std::vector<std::string> sources, targets;
    std::string out;
    ConfigOpts cfg;
    std::vector<std::uint64_t> seeds;
};

CmdResult run_transfer(const TransferOpts& o, const std::vector<std::string>& tail,
                       const std::string& forced) {
    TrainConfig cfg0 = resolve_config(o.cfg);
    std::vector<Dataset> srcs, tgts;
    for (const auto& p : o.sources) srcs.push_back(load_dataset(p));
    for (const auto& p : o.targets) tgts.push_back(load_dataset(p));
    const std::vector<std::uint64_t> seeds = effective_seeds(o.seeds, cfg0);
    std::vector<std::string> inputs = o.sources;
    inputs.insert(inputs.end(), o.targets.begin(), o.targets.end());
    if (!o.cfg.file.empty()) inputs.push_back(o.cfg.file);

    RunContext rc("transfer", tail, o.out, forced, serialize_config(cfg0), seeds, inputs);
    std::vector<MetricsRow> rows;
    for (std::size_t si = 0; si < srcs.size(); ++si) {
        for (std::size_t ti = 0; ti < tgts.size(); ++ti) {
            const std::string pair = fs::path(o.sources[si]).stem().string() + "->" +
                                     fs::path(o.targets[ti]).stem().string();
            for (std::uint64_t s : seeds) {
                TrainConfig cfg = cfg0;
                cfg.seed = s;
                TransferResult tr = transfer_experiment(cfg, srcs[si], tgts[ti]);
                rows.push_back({rc.run_id(), s, "supervised:" + pair, tr.supervised});
                print_row(rows.back());
                rows.push_back({rc.run_id(), s, "pretrained:" + pair, tr.pretrained});
                print_row(rows.back());
            }
        }
    }
    rc.write_artifact("metrics.csv", metrics_csv(rows));
    rc.write_artifact("summary.csv", summary_csv(rows));
    print_aggregate(rows);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- ablate

struct AblateOpts {
    std::string train_path, test_path, out;
    ConfigOpts cfg;
    std::vector<std::uint64_t> seeds;
};

CmdResult run_ablate(const AblateOpts& o, const std::vector<std::string>& tail,
                     const std::string& forced) {
    TrainConfig cfg0 = resolve_config(o.cfg);
    Dataset train = load_dataset(o.train_path);
    Dataset test = load_dataset(o.test_path);
    const std::vector<std::uint64_t> seeds = effective_seeds(o.seeds, cfg0);
    std::vector<std::string> inputs{o.train_path, o.test_path};
    if (!o.cfg.file.empty()) inputs.push_back(o.cfg.file);

    using Mutator = std::function<TrainConfig(TrainConfig)>;
    const std::vector<std::pair<std::string, Mutator>> variants = {
        {"TC only",
         [](TrainConfig c) {
             c.cross_view = false;
             c.use_cc = false;
             return c;
         }},
        {"TC + X-Aug",
         [](TrainConfig c) {
             c.cross_view = true;
             c.use_cc = false;
             return c;
         }},
        {"TC + X-Aug + CC",
         [](TrainConfig c) {
             c.cross_view = true;
             c.use_cc = true;
             return c;
         }},
        {"Weak aug only",
         [](TrainConfig c) {
             c.aug_mode = AugMode::weak_only;
             return c;
         }},
        {"Strong aug only",
         [](TrainConfig c) {
             c.aug_mode = AugMode::strong_only;
             return c;
         }},
    };

    RunContext rc("ablate", tail, o.out, forced, serialize_config(cfg0), seeds, inputs);
    std::vector<MetricsRow> rows;
    for (const auto& [label, mutate] : variants) {
        for (std::uint64_t s : seeds) {
            TrainConfig cfg = mutate(cfg0);
            cfg.seed = s;
            TSTCCModel model(cfg, train.channels, train.length, Rng(cfg.seed).split(0));
            pretrain(model, train);
            MetricsReport rep = linear_evaluate(model, train, test);
            rows.push_back({rc.run_id(), s, label, rep});
            print_row(rows.back());
        }
    }
    rc.write_artifact("metrics.csv", metrics_csv(rows));
    rc.write_artifact("summary.csv", summary_csv(rows));
    print_aggregate(rows);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ------------------------------------------------------------ sensitivity

struct SensitivityOpts {
    std::string param, train_path, test_path, out;
    std::vector<std::string> values;
    ConfigOpts cfg;
    std::vector<std::uint64_t> seeds;
};

CmdResult run_sensitivity(const SensitivityOpts& o, const std::vector<std::string>& tail,
                          const std::string& forced) {
    if (o.param != "lambda1" && o.param != "lambda2" && o.param != "k_ratio")
        throw ConfigError("--param must be one of lambda1, lambda2, k_ratio");
    std::vector<std::string> values = o.values;
    if (values.empty()) {
        if (o.param == "k_ratio")
            values = {"0.1", "0.2", "0.4", "0.7"};
        else
            values = {"0.001", "0.01", "0.1", "1", "10", "100", "1000"};
    }
    TrainConfig cfg0 = resolve_config(o.cfg);
    Dataset train = load_dataset(o.train_path);
    Dataset test = load_dataset(o.test_path);
    const std::vector<std::uint64_t> seeds = effective_seeds(o.seeds, cfg0);
    std::vector<std::string> inputs{o.train_path, o.test_path};
    if (!o.cfg.file.empty()) inputs.push_back(o.cfg.file);

    RunContext rc("sensitivity", tail, o.out, forced, serialize_config(cfg0), seeds, inputs);
    std::vector<MetricsRow> rows;
    for (const std::string& val : values) {
        TrainConfig base = cfg0;
        apply_override(base, o.param, val);
        base.validate();
        for (std::uint64_t s : seeds) {
            TrainConfig cfg = base;
            cfg.seed = s;
            TSTCCModel model(cfg, train.channels, train.length, Rng(cfg.seed).split(0));
            pretrain(model, train);
            MetricsReport rep = linear_evaluate(model, train, test);
            rows.push_back({rc.run_id(), s, o.param + "=" + val, rep});
            print_row(rows.back());
        }
    }
    rc.write_artifact("metrics.csv", metrics_csv(rows));
    rc.write_artifact("summary.csv", summary_csv(rows));
    print_aggregate(rows);
    rc.finalize();
    return {0, rc.dir().string()};
}

// --------------------------------------------------------- augment-preview

struct PreviewOpts {
    std::string data, out;
    std::size_t index = 0;
    ConfigOpts cfg;
};

CmdResult run_preview(const PreviewOpts& o, const std::vector<std::string>& tail,
                      const std::string& forced) {
    TrainConfig cfg = resolve_config(o.cfg);
    Dataset ds = load_dataset(o.data);
    if (o.index >= ds.size())
        throw ValueError("--index " + std::to_string(o.index) + " out of range (dataset has " +
                         std::to_string(ds.size()) + " series)");
    RunContext rc("augment-preview", tail, o.out, forced, serialize_config(cfg), {cfg.seed},
                  {o.data});
    TimeSeriesBatch batch = ds.gather({o.index});
    TimeSeriesBatch weak = weak_augment(batch, cfg.augment, Rng(cfg.seed).split(1));
    TimeSeriesBatch strong = strong_augment(batch, cfg.augment, Rng(cfg.seed).split(2));
    std::string csv = "channel,t,original,weak,strong\n";
    const std::size_t C = ds.channels, L = ds.length;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < L; ++t)
            csv += std::to_string(c) + "," + std::to_string(t) + "," +
                   csv_num(batch.x.data()[c * L + t]) + "," + csv_num(weak.x.data()[c * L + t]) +
                   "," + csv_num(strong.x.data()[c * L + t]) + "\n";
    rc.write_artifact("augment_preview.csv", csv);
    std::printf("  wrote weak/strong views of series %zu (%zu channels x %zu steps)\n", o.index,
                C, L);
    rc.finalize();
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- gradcheck

Tensor rnd_tensor(Rng& r, Shape s, double lo, double hi, bool rg) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = r.uniform(lo, hi);
    return Tensor::from_data(std::move(s), std::move(v), rg);
}

// Fourth-order five-point estimate on sampled coordinates, for compositions
// deep enough that the plain central difference is truncation-limited.
double fd_deep(const std::function<Tensor()>& f, std::vector<Tensor> params,
               std::size_t max_coords) {
    for (Tensor& p : params) p.zero_grad();
    f().backward();
    const double eps = 2e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::vector<double> analytic = params[pi].grad();
        std::vector<double>& d = params[pi].mutable_data();
        Rng pick(2024 + pi);
        const std::size_t n = d.size();
        const std::size_t m = n < max_coords ? n : max_coords;
        for (std::size_t s = 0; s < m; ++s) {
            const std::size_t i =
                (n <= max_coords)
                    ? s
                    : static_cast<std::size_t>(
                          pick.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            const double save = d[i];
            d[i] = save + eps;
            const double f1 = f().item();
            d[i] = save - eps;
            const double f2 = f().item();
            d[i] = save + 2 * eps;
            const double f3 = f().item();
            d[i] = save - 2 * eps;
            const double f4 = f().item();
            d[i] = save;
            const double est = (8.0 * (f1 - f2) - (f3 - f4)) / (12.0 * eps);
            worst = std::max(worst, std::abs(analytic[i] - est) / (std::abs(est) + 1e-12));
        }
    }
    return worst;
}

// Attention key biases cancel inside the softmax, so their true gradient is
// zero; exclude them from relative checks and bound them absolutely instead.
void split_key_bias(ParamList& pl, std::vector<Tensor>& check, std::vector<Tensor>& kb) {
    for (auto& nt : pl)
        (nt.name.find("k.bias") != std::string::npos ? kb : check).push_back(nt.tensor);
}

double key_bias_magnitude(const std::vector<Tensor>& kb) {
    double worst = 0.0;
    for (const Tensor& t : kb)
        if (t.has_grad())
            for (double g : t.grad()) worst = std::max(worst, std::abs(g));
    return worst;
}

struct GradcheckOpts {
    std::string out;
};

CmdResult run_gradcheck(const GradcheckOpts& o, const std::vector<std::string>& tail,
                        const std::string& forced) {
    RunContext rc("gradcheck", tail, o.out, forced, "gradcheck.eps = 1e-5\n", {}, {});
    std::vector<std::pair<std::string, double>> table;
    Rng r(31);
    auto fd = [](const std::function<Tensor()>& f, const std::vector<Tensor>& params) {
        return finite_diff_check(f, params, 1e-5);
    };

    {
        Tensor a = rnd_tensor(r, {2, 3}, -1, 1, true), b = rnd_tensor(r, {3}, -1, 1, true);
        table.push_back({"add (broadcast)", fd([&] { return mean(mul(add(a, b), add(a, b))); },
                                               {a, b})});
        table.push_back({"subtract", fd([&] { return mean(mul(sub(a, b), sub(a, b))); }, {a, b})});
    }
    {
        Tensor a = rnd_tensor(r, {2, 3}, -1, 1, true), b = rnd_tensor(r, {2, 3}, 0.5, 1.5, true);
        table.push_back({"multiply", fd([&] { return mean(mul(mul(a, b), a)); }, {a, b})});
        table.push_back({"divide", fd([&] { return mean(mul(div(a, b), a)); }, {a, b})});
        table.push_back({"relu", fd([&] { return mean(mul(relu(a), relu(a))); }, {a})});
    }
    {
        Tensor a = rnd_tensor(r, {2, 4}, 0.5, 2.0, true);
        table.push_back({"exp", fd([&] { return mean(mul(tstcc::exp(scale(a, 0.3)), a)); }, {a})});
        table.push_back({"log", fd([&] { return mean(mul(tstcc::log(a), a)); }, {a})});
        table.push_back({"sqrt", fd([&] { return mean(mul(tstcc::sqrt(a), a)); }, {a})});
        table.push_back({"softmax", fd([&] { return mean(mul(softmax(a, 1), a)); }, {a})});
        table.push_back(
            {"log-softmax", fd([&] { return mean(mul(log_softmax(a, 1), a)); }, {a})});
    }
    {
        Tensor a = rnd_tensor(r, {2, 3}, -1, 1, true), b = rnd_tensor(r, {3, 4}, -1, 1, true);
        table.push_back(
            {"matmul", fd([&] { return mean(mul(matmul(a, b), matmul(a, b))); }, {a, b})});
        Tensor ba = rnd_tensor(r, {2, 2, 3}, -1, 1, true);
        Tensor bb = rnd_tensor(r, {2, 3, 2}, -1, 1, true);
        table.push_back(
            {"batched matmul", fd([&] { return mean(mul(bmm(ba, bb), bmm(ba, bb))); }, {ba, bb})});
    }
    {
        Tensor x = rnd_tensor(r, {2, 2, 12}, -1, 1, true);
        Tensor k = rnd_tensor(r, {3, 2, 4}, -1, 1, true);
        table.push_back({"conv1d", fd([&] {
                                       Tensor y = conv1d(x, k, 2, 3);
                                       return mean(mul(y, y));
                                   },
                                      {x, k})});
        table.push_back({"maxpool1d", fd([&] {
                                          Tensor y = maxpool1d(x, 3, 2);
                                          return mean(mul(y, y));
                                      },
                                         {x})});
    }
    {
        Tensor x = rnd_tensor(r, {2, 3, 5}, -1, 1, true);
        Tensor g = rnd_tensor(r, {5}, 0.5, 1.5, true), b = rnd_tensor(r, {5}, -0.5, 0.5, true);
        table.push_back({"layer norm", fd([&] {
                                           Tensor y = layer_norm(x, g, b);
                                           return mean(mul(y, y));
                                       },
                                          {x, g, b})});
        Tensor xc = rnd_tensor(r, {2, 4, 6}, -1, 1, true);
        Tensor gc = rnd_tensor(r, {4}, 0.5, 1.5, true), bc = rnd_tensor(r, {4}, -0.5, 0.5, true);
        table.push_back({"batch norm (train)", fd([&] {
                                                   std::vector<double> rm(4, 0.0), rv(4, 1.0);
                                                   Tensor y = batch_norm1d(xc, gc, bc, rm, rv,
                                                                           true);
                                                   return mean(mul(y, y));
                                               },
                                                  {xc, gc, bc})});
        table.push_back({"dropout (train)", fd([&] {
                                                Rng dr(5);
                                                Tensor y = dropout_forward(0.35, x, true, dr);
                                                return mean(mul(y, y));
                                            },
                                               {x})});
    }
    {
        Linear lin(5, 3, r.split(1));
        Tensor x = rnd_tensor(r, {2, 4, 5}, -1, 1, true);
        table.push_back({"linear", fd([&] {
                                       Tensor y = lin.forward(x);
                                       return mean(mul(y, y));
                                   },
                                      {x, lin.weight, lin.bias})});
    }
    {
        MultiHeadAttention mha(8, 2, r.split(2));
        Tensor x = rnd_tensor(r, {2, 3, 8}, -1, 1, true);
        ParamList pl;
        mha.collect(pl, "attn");
        std::vector<Tensor> check{x}, kb;
        split_key_bias(pl, check, kb);
        for (Tensor& t : kb) t.zero_grad();
        const double err = fd([&] {
            Tensor y = mha.forward(x);
            return mean(mul(y, y));
        },
                              check);
        table.push_back({"multi-head attention", std::max(err, key_bias_magnitude(kb))});
    }
    {
        TransformerLayer tl(8, 2, 0.1, r.split(3));
        Tensor x = rnd_tensor(r, {2, 3, 8}, -1, 1, true);
        ParamList pl;
        tl.collect(pl, "layer");
        std::vector<Tensor> check{x}, kb;
        split_key_bias(pl, check, kb);
        for (Tensor& t : kb) t.zero_grad();
        const double err = fd_deep(
            [&] {
                Rng dr(11);
                Tensor y = tl.forward(x, true, dr);
                return mean(mul(y, y));
            },
            check, 25);
        table.push_back({"transformer layer", std::max(err, key_bias_magnitude(kb))});
    }
    {
        ConvBlock cb(2, 4, 8, r.split(4));
        Tensor x = rnd_tensor(r, {2, 2, 16}, -1, 1, true);
        ParamList pl;
        cb.collect(pl, "block");
        std::vector<Tensor> params{x};
        for (auto& nt : pl) params.push_back(nt.tensor);
        table.push_back({"conv block", fd_deep([&] {
                                           Tensor y = cb.forward(x, true);
                                           return mean(mul(y, y));
                                       },
                                               params, 25)});
    }
    {
        Encoder enc(2, 6, 0.35, r.split(5));
        Tensor x = rnd_tensor(r, {2, 2, 32}, -1, 1, true);
        ParamList pl;
        enc.collect(pl, "encoder");
        std::vector<Tensor> params{x};
        for (auto& nt : pl) params.push_back(nt.tensor);
        table.push_back({"encoder", fd_deep([&] {
                                        Rng dr(13);
                                        Tensor z = enc.forward(x, true, dr);
                                        return mean(mul(z, z));
                                    },
                                            params, 20)});
    }
    {
        ARModel ar(6, 8, 2, 1, 0.1, false, 8, r.split(6));
        Tensor z = rnd_tensor(r, {2, 3, 6}, -1, 1, true);
        ParamList pl;
        ar.collect(pl, "ar");
        std::vector<Tensor> check{z}, kb;
        split_key_bias(pl, check, kb);
        for (Tensor& t : kb) t.zero_grad();
        const double err = fd_deep(
            [&] {
                Rng dr(17);
                Tensor c = ar.forward(z, true, dr);
                return mean(mul(c, c));
            },
            check, 20);
        table.push_back({"context summarizer", std::max(err, key_bias_magnitude(kb))});
    }
    {
        ProjectionHead ph(8, r.split(7));
        Tensor x = rnd_tensor(r, {3, 8}, -1, 1, true);
        table.push_back({"projection head", fd([&] {
                                                Tensor y = ph.forward(x);
                                                return mean(mul(y, y));
                                            },
                                               {x, ph.l1.weight, ph.l1.bias, ph.l2.weight,
                                                ph.l2.bias})});
    }
    {
        PredictionHeads heads(4, 3, 2, r.split(8));
        TemporalBatchViews v{rnd_tensor(r, {3, 4}, -1, 1, true),
                             rnd_tensor(r, {3, 4}, -1, 1, true),
                             rnd_tensor(r, {3, 2, 3}, -1, 1, true),
                             rnd_tensor(r, {3, 2, 3}, -1, 1, true)};
        ParamList pl;
        heads.collect(pl, "heads");
        std::vector<Tensor> params{v.c_s, v.c_w, v.z_s, v.z_w};
        for (auto& nt : pl) params.push_back(nt.tensor);
        table.push_back({"temporal contrast loss", fd([&] {
                                                       auto [ls, lw] =
                                                           temporal_contrast_loss(v, heads);
                                                       return add(ls, lw);
                                                   },
                                                      params)});
    }
    {
        Tensor ctx = rnd_tensor(r, {6, 5}, -1, 1, true);
        table.push_back({"contextual contrast loss",
                         fd([&] { return contextual_contrast_loss(ctx, 0.2,
                                                                  CcAnchorMode::symmetric_2n); },
                            {ctx})});
        Tensor logits = rnd_tensor(r, {4, 3}, -1, 1, true);
        const std::vector<int> labels{0, 2, 1, 1};
        table.push_back(
            {"cross entropy", fd([&] { return cross_entropy(logits, labels); }, {logits})});
    }
    {
        TrainConfig cfg;
        cfg.d = 8;
        cfg.h = 8;
        cfg.heads = 2;
        cfg.layers = 1;
        TSTCCModel model(cfg, 2, 32, r.split(9));
        Tensor xs = rnd_tensor(r, {2, 2, 32}, -1, 1, false);
        Tensor xw = rnd_tensor(r, {2, 2, 32}, -1, 1, false);
        ParamList pl = model.parameters();
        std::vector<Tensor> check, kb;
        split_key_bias(pl, check, kb);
        for (Tensor& t : kb) t.zero_grad();
        const std::size_t t_anchor = model.anchor_step(), k = model.predict_steps();
        const double err = fd_deep(
            [&] {
                Rng dr(19);
                Tensor z_s = model.encode(xs, true, dr);
                Tensor z_w = model.encode(xw, true, dr);
                Tensor c_s = model.summarize_prefix(z_s, t_anchor, true, dr);
                Tensor c_w = model.summarize_prefix(z_w, t_anchor, true, dr);
                TemporalBatchViews v{c_s, c_w, slice(z_s, 1, t_anchor, k),
                                     slice(z_w, 1, t_anchor, k)};
                auto [ls, lw] = temporal_contrast_loss(v, model.heads);
                Tensor ctx = concat(model.proj_head.forward(c_s), model.proj_head.forward(c_w), 0);
                Tensor lcc = contextual_contrast_loss(ctx, 0.2, CcAnchorMode::symmetric_2n);
                return total_loss(ls, lw, lcc, 1.0, 0.7);
            },
            check, 8);
        table.push_back({"full objective", std::max(err, key_bias_magnitude(kb))});
    }

    std::string csv = "check,max_rel_err,threshold,status\n";
    bool ok = true;
    std::printf("  %-26s max rel err\n", "check");
    for (const auto& [name, err] : table) {
        const bool pass = err < 1e-6;
        ok = ok && pass;
        std::printf("  %-26s %.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
        csv += name + "," + csv_num(err) + ",1e-06," + (pass ? "ok" : "fail") + "\n";
    }
    rc.write_artifact("gradcheck.csv", csv);
    rc.finalize();
    if (!ok) {
        std::fprintf(stderr, "error: gradient checks exceeded the 1e-6 threshold\n");
        return {5, rc.dir().string()};
    }
    return {0, rc.dir().string()};
}

// -------------------------------------------------------------- oracle-check

double logsumexp_vec(const std::vector<double>& xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

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
            sample += logsumexp_vec(scores) - scores[i];
        }
        total += sample / static_cast<double>(k_steps);
    }
    return total / static_cast<double>(b);
}

double cc_loop_oracle(const Tensor& ctx, double tau, CcAnchorMode mode) {
    const std::size_t rows = ctx.dim(0), w = ctx.dim(1), n = rows / 2;
    std::vector<std::vector<double>> row(rows, std::vector<double>(w));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j) row[i][j] = ctx.at({i, j});
    const std::size_t anchors = (mode == CcAnchorMode::symmetric_2n) ? rows : n;
    double total = 0.0;
    for (std::size_t i = 0; i < anchors; ++i) {
        const std::size_t pos = (i + n) % rows;
        std::vector<double> logits;
        double pos_logit = 0.0;
        for (std::size_t m = 0; m < rows; ++m) {
            if (m == i) continue;
            const double s = cosine_sim(row[i], row[m]) / tau;
            logits.push_back(s);
            if (m == pos) pos_logit = s;
        }
        total += logsumexp_vec(logits) - pos_logit;
    }
    return mode == CcAnchorMode::symmetric_2n ? total / static_cast<double>(rows) : total;
}

struct OracleOpts {
    std::string out;
};

CmdResult run_oracle_check(const OracleOpts& o, const std::vector<std::string>& tail,
                           const std::string& forced) {
    RunContext rc("oracle-check", tail, o.out, forced, "oracle.cases = 100\n", {}, {});
    std::vector<std::tuple<std::string, double, double>> table;  // name, err, tol

    double worst_tc = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng r(1000 + seed);
        const std::size_t b = 1 + r.uniform_int(0, 3);
        const std::size_t k = 1 + r.uniform_int(0, 2);
        const std::size_t d = 1 + r.uniform_int(0, 4);
        const std::size_t h = 1 + r.uniform_int(0, 3);
        PredictionHeads heads(h, d, k, r.split(1));
        TemporalBatchViews v{rnd_tensor(r, {b, h}, -1, 1, false),
                             rnd_tensor(r, {b, h}, -1, 1, false),
                             rnd_tensor(r, {b, k, d}, -1, 1, false),
                             rnd_tensor(r, {b, k, d}, -1, 1, false)};
        auto [ls, lw] = temporal_contrast_loss(v, heads);
        worst_tc = std::max(worst_tc, std::abs(ls.item() - tc_loop_oracle(v.c_s, v.z_w, heads)));
        worst_tc = std::max(worst_tc, std::abs(lw.item() - tc_loop_oracle(v.c_w, v.z_s, heads)));
    }
    table.push_back({"temporal vs loop reference (100 cases)", worst_tc, 1e-9});

    double worst_cc = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng r(2000 + seed);
        const std::size_t n = 1 + r.uniform_int(0, 3);
        const std::size_t w = 1 + r.uniform_int(0, 4);
        const double tau = r.uniform(0.1, 2.0);
        Tensor ctx = rnd_tensor(r, {2 * n, w}, -1.0, 1.0, false);
        for (auto mode : {CcAnchorMode::symmetric_2n, CcAnchorMode::paper_n})
            worst_cc = std::max(worst_cc, std::abs(contextual_contrast_loss(ctx, tau, mode).item() -
                                                   cc_loop_oracle(ctx, tau, mode)));
    }
    table.push_back({"contextual vs loop reference (100 cases)", worst_cc, 1e-9});

    {
        Rng r(1);
        PredictionHeads heads(3, 2, 2, r);
        TemporalBatchViews v{rnd_tensor(r, {1, 3}, -1, 1, false),
                             rnd_tensor(r, {1, 3}, -1, 1, false),
                             rnd_tensor(r, {1, 2, 2}, -1, 1, false),
                             rnd_tensor(r, {1, 2, 2}, -1, 1, false)};
        auto [ls, lw] = temporal_contrast_loss(v, heads);
        table.push_back({"temporal single-sample batch is zero",
                         std::max(std::abs(ls.item()), std::abs(lw.item())), 1e-12});
    }
    {
        Rng r(0);
        PredictionHeads heads(1, 1, 1, r);
        heads.heads[0].weight.mutable_data()[0] = 1.0;
        heads.heads[0].bias.mutable_data()[0] = 0.0;
        Tensor c = Tensor::from_data({2, 1}, {1.0, -1.0}, false);
        Tensor z = Tensor::from_data({2, 1, 1}, {1.0, -1.0}, false);
        TemporalBatchViews v{c, c, z, z};
        auto [ls, lw] = temporal_contrast_loss(v, heads);
        const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
        table.push_back({"temporal two-sample closed form (0.126928)",
                         std::max(std::abs(ls.item() - want), std::abs(lw.item() - want)), 1e-9});
    }
    {
        Tensor ctx = Tensor::from_data({4, 3}, {0.3, -0.7, 0.2, 0.3, -0.7, 0.2, 0.3, -0.7, 0.2,
                                                0.3, -0.7, 0.2},
                                       false);
        const double got =
            contextual_contrast_loss(ctx, 0.2, CcAnchorMode::symmetric_2n).item();
        table.push_back({"contextual identical rows = ln 3", std::abs(got - std::log(3.0)),
                         1e-9});
    }
    {
        Tensor ctx = Tensor::from_data({4, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0}, false);
        const double want = std::log(1.0 + 2.0 * std::exp(-5.0));
        const double got =
            contextual_contrast_loss(ctx, 0.2, CcAnchorMode::symmetric_2n).item();
        table.push_back({"contextual orthogonal pairs = ln(1+2e^-5)", std::abs(got - want),
                         1e-9});
    }

    std::string csv = "check,abs_err,tolerance,status\n";
    bool ok = true;
    std::printf("  %-44s abs err\n", "check");
    for (const auto& [name, err, tol] : table) {
        const bool pass = err <= tol;
        ok = ok && pass;
        std::printf("  %-44s %.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
        csv += name + "," + csv_num(err) + "," + csv_num(tol) + "," + (pass ? "ok" : "fail") +
               "\n";
    }
    rc.write_artifact("oracle_check.csv", csv);
    rc.finalize();
    if (!ok) {
        std::fprintf(stderr, "error: loss implementations diverged from the references\n");
        return {5, rc.dir().string()};
    }
    return {0, rc.dir().string()};
}

// ---------------------------------------------------------------- replay

struct ReplayOpts {
    std::string manifest;
    std::string out;
};

CmdResult run_replay(const ReplayOpts& o) {
    RunManifest m = load_manifest(o.manifest);
    if (m.command == "replay") throw ValueError("cannot replay a replay run");
    if (m.status != "complete")
        throw ValueError("manifest '" + o.manifest + "' records an unfinished run");
    for (const auto& [sum, path] : m.inputs) {
        const std::string now = hex64(fnv1a64_file(path));
        if (now != sum)
            throw IoError("input '" + path + "' changed since the recorded run (checksum " +
                          now + ", expected " + sum + ")");
    }
    const fs::path fresh =
        unique_dir(o.out.empty() ? fs::path(m.output_dir + "-replay") : fs::path(o.out));
    std::printf("replaying %s into %s\n", m.run_id.c_str(), fresh.string().c_str());
    std::vector<std::string> args{m.command};
    args.insert(args.end(), m.args.begin(), m.args.end());
    CmdResult inner = dispatch(args, fresh.string());
    if (inner.code != 0) return inner;
    RunManifest m2 = load_manifest((fresh / "manifest.txt").string());
    bool ok = m2.artifacts.size() == m.artifacts.size();
    if (!ok)
        std::fprintf(stderr, "error: replay produced %zu artifacts, original had %zu\n",
                     m2.artifacts.size(), m.artifacts.size());
    for (std::size_t i = 0; ok && i < m.artifacts.size(); ++i) {
        const auto& [sum_a, rel_a] = m.artifacts[i];
        const auto& [sum_b, rel_b] = m2.artifacts[i];
        const bool match = rel_a == rel_b && sum_a == sum_b;
        std::printf("  %-9s %s\n", match ? "match" : "MISMATCH", rel_a.c_str());
        ok = ok && match;
    }
    if (!ok) {
        std::fprintf(stderr, "error: replay outputs differ from the recorded run\n");
        return {5, fresh.string()};
    }
    std::printf("replay verified: %zu artifacts bit-identical\n", m.artifacts.size());
    return {0, fresh.string()};
}

// ---------------------------------------------------------------- dispatch

CmdResult dispatch(const std::vector<std::string>& args, const std::string& forced_dir) {
    CLI::App app{"self-supervised time-series representation learning toolkit"};
    app.require_subcommand(1);
    CmdResult result;
    const std::vector<std::string> tail =
        args.size() > 1 ? std::vector<std::string>(args.begin() + 1, args.end())
                        : std::vector<std::string>{};

    SynthOpts synth_o;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    synth->add_option("--n", synth_o.spec.n, "number of series");
    synth->add_option("--classes", synth_o.spec.classes, "number of classes");
    synth->add_option("--channels", synth_o.spec.channels, "channels per series");
    synth->add_option("--length", synth_o.spec.length, "steps per series");
    synth->add_option("--noise", synth_o.spec.noise, "additive noise sigma");
    synth->add_option("--domain-scale", synth_o.spec.domain_scale, "signal amplitude");
    synth->add_option("--domain-noise", synth_o.spec.domain_noise, "extra noise floor");
    synth->add_option("--subjects", synth_o.spec.subject_count, "subject count");
    synth->add_option("--seed", synth_o.spec.seed, "generator seed");
    synth->add_flag("--csv", synth_o.csv, "also export the series as CSV");
    synth->add_option("--out", synth_o.out, "run directory");
    synth->callback([&] { result = run_synth(synth_o, tail, forced_dir); });

    SplitOpts split_o;
    auto* split = app.add_subcommand("split", "split a dataset into train/val/test");
    split->add_option("--data", split_o.data, "dataset file")->required();
    split->add_option("--train-frac", split_o.spec.train, "train fraction");
    split->add_option("--val-frac", split_o.spec.val, "validation fraction");
    split->add_option("--test-frac", split_o.spec.test, "test fraction");
    split->add_flag("--subject-wise", split_o.spec.subject_wise,
                    "keep each subject in a single split");
    split->add_option("--seed", split_o.spec.seed, "shuffle seed");
    split->add_option("--out", split_o.out, "run directory");
    split->callback([&] { result = run_split(split_o, tail, forced_dir); });

    PretrainOpts pre_o;
    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    pre->add_option("--data", pre_o.data, "training series (labels ignored)")->required();
    pre->add_option("--out", pre_o.out, "run directory");
    add_config_opts(pre, pre_o.cfg);
    pre->callback([&] { result = run_pretrain(pre_o, tail, forced_dir); });

    ProtocolOpts lin_o;
    auto* lin = app.add_subcommand("linear-eval",
                                   "train a linear probe on frozen encoder features");
    lin->add_option("--train", lin_o.train_path, "labeled training split")->required();
    lin->add_option("--test", lin_o.test_path, "labeled test split")->required();
    lin->add_option("--seeds", lin_o.seeds, "comma-separated seed list")->delimiter(',');
    lin->add_option("--out", lin_o.out, "run directory");
    add_source_opts(lin, lin_o.src, "--random-init", "evaluate a randomly initialized encoder");
    add_config_opts(lin, lin_o.cfg);
    lin->callback([&] { result = run_protocol("linear-eval", false, lin_o, tail, forced_dir); });

    ProtocolOpts fin_o;
    auto* fin = app.add_subcommand("finetune",
                                   "fine-tune encoder + classifier on a labeled fraction");
    fin->add_option("--train", fin_o.train_path, "labeled training split")->required();
    fin->add_option("--test", fin_o.test_path, "labeled test split")->required();
    fin->add_option("--fraction", fin_o.fraction, "labeled fraction in (0,1], default 0.1");
    fin->add_flag("--stratified", fin_o.stratified, "stratify the labeled subset per class");
    fin->add_option("--seeds", fin_o.seeds, "comma-separated seed list")->delimiter(',');
    fin->add_option("--out", fin_o.out, "run directory");
    add_source_opts(fin, fin_o.src, "--from-scratch", "train from random initialization");
    add_config_opts(fin, fin_o.cfg);
    fin->callback([&] { result = run_protocol("finetune", true, fin_o, tail, forced_dir); });

    TransferOpts tra_o;
    auto* tra = app.add_subcommand("transfer",
                                   "paired supervised vs pretrain+finetune cross-domain runs");
    tra->add_option("--source", tra_o.sources, "source dataset(s)")->required()->delimiter(',');
    tra->add_option("--target", tra_o.targets, "target dataset(s)")->required()->delimiter(',');
    tra->add_option("--seeds", tra_o.seeds, "comma-separated seed list")->delimiter(',');
    tra->add_option("--out", tra_o.out, "run directory");
    add_config_opts(tra, tra_o.cfg);
    tra->callback([&] { result = run_transfer(tra_o, tail, forced_dir); });

    AblateOpts abl_o;
    auto* abl = app.add_subcommand("ablate", "run the five training-objective variants");
    abl->add_option("--train", abl_o.train_path, "labeled training split")->required();
    abl->add_option("--test", abl_o.test_path, "labeled test split")->required();
    abl->add_option("--seeds", abl_o.seeds, "comma-separated seed list")->delimiter(',');
    abl->add_option("--out", abl_o.out, "run directory");
    add_config_opts(abl, abl_o.cfg);
    abl->callback([&] { result = run_ablate(abl_o, tail, forced_dir); });

    SensitivityOpts sen_o;
    auto* sen = app.add_subcommand("sensitivity", "sweep lambda1, lambda2, or k_ratio");
    sen->add_option("--param", sen_o.param, "lambda1 | lambda2 | k_ratio")->required();
    sen->add_option("--values", sen_o.values, "comma-separated sweep values")->delimiter(',');
    sen->add_option("--train", sen_o.train_path, "labeled training split")->required();
    sen->add_option("--test", sen_o.test_path, "labeled test split")->required();
    sen->add_option("--seeds", sen_o.seeds, "comma-separated seed list")->delimiter(',');
    sen->add_option("--out", sen_o.out, "run directory");
    add_config_opts(sen, sen_o.cfg);
    sen->callback([&] { result = run_sensitivity(sen_o, tail, forced_dir); });

    PreviewOpts prev_o;
    auto* prev = app.add_subcommand("augment-preview",
                                    "write weak/strong augmented views of one series");
    prev->add_option("--data", prev_o.data, "dataset file")->required();
    prev->add_option("--index", prev_o.index, "series index (default 0)");
    prev->add_option("--out", prev_o.out, "run directory");
    add_config_opts(prev, prev_o.cfg);
    prev->callback([&] { result = run_preview(prev_o, tail, forced_dir); });

    GradcheckOpts grad_o;
    auto* grad = app.add_subcommand("gradcheck",
                                    "finite-difference checks for every layer and loss");
    grad->add_option("--out", grad_o.out, "run directory");
    grad->callback([&] { result = run_gradcheck(grad_o, tail, forced_dir); });

    OracleOpts ora_o;
    auto* ora = app.add_subcommand("oracle-check",
                                   "compare vectorized losses against loop references");
    ora->add_option("--out", ora_o.out, "run directory");
    ora->callback([&] { result = run_oracle_check(ora_o, tail, forced_dir); });

    ReplayOpts rep_o;
    auto* rep = app.add_subcommand("replay", "re-run a manifest and verify bit-identical outputs");
    rep->add_option("--manifest", rep_o.manifest, "manifest.txt of the recorded run")->required();
    rep->add_option("--out", rep_o.out, "directory for the replayed run");
    rep->callback([&] { result = run_replay(rep_o); });

    std::vector<const char*> cargv;
    cargv.push_back("tstcc");
    for (const std::string& a : args) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::CallForHelp& e) {
        result.code = app.exit(e);
        return result;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        result.code = 2;
        return result;
    }
    return result;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args, "").code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const ValueError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    }
}

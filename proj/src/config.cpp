#include "tstcc/config.hpp"

#include <functional>
#include <vector>

#include "tstcc/util.hpp"

namespace tstcc {

std::string to_string(AugMode m) {
    switch (m) {
        case AugMode::both: return "both";
        case AugMode::weak_only: return "weak_only";
        default: return "strong_only";
    }
}

std::string to_string(CcAnchorMode m) {
    return m == CcAnchorMode::symmetric_2n ? "symmetric_2n" : "paper_n";
}

AugMode parse_aug_mode(const std::string& s) {
    if (s == "both") return AugMode::both;
    if (s == "weak_only") return AugMode::weak_only;
    if (s == "strong_only") return AugMode::strong_only;
    throw ConfigError("aug_mode must be both, weak_only, or strong_only; got '" + s + "'");
}

CcAnchorMode parse_cc_anchor_mode(const std::string& s) {
    if (s == "symmetric_2n") return CcAnchorMode::symmetric_2n;
    if (s == "paper_n") return CcAnchorMode::paper_n;
    throw ConfigError("cc_anchor_mode must be symmetric_2n or paper_n; got '" + s + "'");
}

namespace {

struct Field {
    const char* section;
    const char* key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

bool parse_bool(const char* key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(std::string(key) + " must be true or false; got '" + s + "'");
}

double to_double(const char* key, const std::string& s) {
    try {
        return parse_double(s);
    } catch (const ValueError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
}

std::uint64_t to_count(const char* key, const std::string& s) {
    long long v;
    try {
        v = parse_int(s);
    } catch (const ValueError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative; got " + s);
    return static_cast<std::uint64_t>(v);
}

#define F_DOUBLE(sec, name, member)                                            \
    Field{sec, name, [](const TrainConfig& c) { return format_double(c.member); }, \
          [](TrainConfig& c, const std::string& v) { c.member = to_double(name, v); }}
#define F_COUNT(sec, name, member)                                                       \
    Field{sec, name, [](const TrainConfig& c) { return std::to_string(c.member); },      \
          [](TrainConfig& c, const std::string& v) {                                     \
              c.member = static_cast<decltype(c.member)>(to_count(name, v));             \
          }}
#define F_BOOL(sec, name, member)                                             \
    Field{sec, name, [](const TrainConfig& c) { return fmt_bool(c.member); }, \
          [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        F_COUNT("model", "d", d),
        F_COUNT("model", "h", h),
        F_COUNT("model", "heads", heads),
        F_COUNT("model", "layers", layers),
        F_DOUBLE("model", "dropout_transformer", dropout_transformer),
        F_DOUBLE("model", "dropout_encoder", dropout_encoder),
        F_DOUBLE("model", "k_ratio", k_ratio),
        F_BOOL("model", "random_t", random_t),
        F_BOOL("model", "positional_embedding", positional_embedding),
        F_COUNT("augment", "max_segments", augment.max_segments),
        F_DOUBLE("augment", "jitter_weak", augment.jitter_sigma_weak),
        F_DOUBLE("augment", "jitter_strong", augment.jitter_sigma_strong),
        F_DOUBLE("augment", "scale_mean", augment.scale_mean),
        F_DOUBLE("augment", "scale_sigma", augment.scale_sigma),
        F_DOUBLE("loss", "lambda1", lambda1),
        F_DOUBLE("loss", "lambda2", lambda2),
        F_DOUBLE("loss", "tau", tau),
        Field{"loss", "cc_anchor_mode",
              [](const TrainConfig& c) { return to_string(c.cc_anchor_mode); },
              [](TrainConfig& c, const std::string& v) { c.cc_anchor_mode = parse_cc_anchor_mode(v); }},
        F_COUNT("train", "epochs", epochs),
        F_COUNT("train", "batch_size", batch_size),
        F_COUNT("train", "finetune_batch_size", finetune_batch_size),
        F_DOUBLE("train", "lr", lr),
        F_DOUBLE("train", "weight_decay", weight_decay),
        F_DOUBLE("train", "beta1", beta1),
        F_DOUBLE("train", "beta2", beta2),
        F_DOUBLE("train", "eps_adam", eps_adam),
        F_COUNT("train", "seed", seed),
        F_BOOL("mode", "cross_view", cross_view),
        F_BOOL("mode", "use_cc", use_cc),
        Field{"mode", "aug_mode", [](const TrainConfig& c) { return to_string(c.aug_mode); },
              [](TrainConfig& c, const std::string& v) { c.aug_mode = parse_aug_mode(v); }},
        F_COUNT("resolved", "in_channels", in_channels),
        F_COUNT("resolved", "input_length", input_length),
    };
    return table;
}

#undef F_DOUBLE
#undef F_COUNT
#undef F_BOOL

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (d == 0 || h == 0 || heads == 0 || layers == 0)
        fail("model dims (d, h, heads, layers) must all be positive");
    if (h % heads != 0)
        fail("h = " + std::to_string(h) + " must be divisible by heads = " + std::to_string(heads));
    if (dropout_transformer < 0.0 || dropout_transformer >= 1.0)
        fail("dropout_transformer must lie in [0, 1)");
    if (dropout_encoder < 0.0 || dropout_encoder >= 1.0) fail("dropout_encoder must lie in [0, 1)");
    if (!(k_ratio > 0.0) || k_ratio >= 1.0) fail("k_ratio must lie in (0, 1)");
    try {
        augment.validate();
    } catch (const ValueError& e) {
        fail(std::string("augment: ") + e.what());
    }
    if (lambda1 < 0.0 || lambda2 < 0.0) fail("loss weights must be non-negative");
    if (!(tau > 0.0)) fail("tau must be positive");
    if (epochs == 0) fail("epochs must be at least 1");
    if (batch_size == 0 || finetune_batch_size == 0) fail("batch sizes must be at least 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (weight_decay < 0.0) fail("weight_decay must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        fail("beta1/beta2 must lie in [0, 1)");
    if (!(eps_adam > 0.0)) fail("eps_adam must be positive");
}

std::string serialize_config(const TrainConfig& cfg) {
    std::string out;
    const char* current = "";
    for (const Field& f : fields()) {
        if (std::string(current) != f.section) {
            if (!out.empty()) out += "\n";
            out += std::string("[") + f.section + "]\n";
            current = f.section;
        }
        out += std::string(f.key) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const std::string k = trim(key);
    const std::string dotted_sep = ".";
    for (const Field& f : fields()) {
        if (k == f.key || k == std::string(f.section) + dotted_sep + f.key) {
            f.set(cfg, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    for (const std::string& raw : split_string(text, '\n')) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                              line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const Field& f : fields()) {
            if (f.section == section && f.key == key) {
                f.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found)
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                              "' in section [" + section + "]");
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config_file(const std::string& path) { return parse_config(read_text_file(path)); }

void save_config_file(const TrainConfig& cfg, const std::string& path) {
    write_text_file(path, serialize_config(cfg));
}

}  // namespace tstcc

#pragma once

// Run configuration: every knob of the pipeline in one struct, serialized as
// line-oriented `key = value` text grouped into [sections].  CLI flags
// override file values; validation happens at load.

#include <cstddef>
#include <cstdint>
#include <string>

#include "tstcc/augment.hpp"

namespace tstcc {

enum class AugMode { both, weak_only, strong_only };
enum class CcAnchorMode { symmetric_2n, paper_n };

std::string to_string(AugMode m);
std::string to_string(CcAnchorMode m);
AugMode parse_aug_mode(const std::string& s);
CcAnchorMode parse_cc_anchor_mode(const std::string& s);

struct TrainConfig {
    // [model]
    std::size_t d = 128;       // latent channel width out of the encoder
    std::size_t h = 100;       // context width inside the summarizer
    std::size_t heads = 4;     // attention heads
    std::size_t layers = 4;    // transformer depth
    double dropout_transformer = 0.1;
    double dropout_encoder = 0.35;
    double k_ratio = 0.4;      // fraction of latent steps predicted ahead
    bool random_t = false;     // draw the anchor step per batch instead of T-K
    bool positional_embedding = false;

    // [augment]
    AugmentParams augment;

    // [loss]
    double lambda1 = 1.0;
    double lambda2 = 0.7;
    double tau = 0.2;
    CcAnchorMode cc_anchor_mode = CcAnchorMode::symmetric_2n;

    // [train]
    std::size_t epochs = 40;
    std::size_t batch_size = 128;
    std::size_t finetune_batch_size = 32;
    double lr = 3e-4;
    double weight_decay = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps_adam = 1e-8;
    std::uint64_t seed = 0;

    // [mode]
    bool cross_view = true;
    bool use_cc = true;
    AugMode aug_mode = AugMode::both;

    // [resolved] — data-dependent dims recorded when a model is built, so a
    // checkpoint is self-describing.  Zero means not yet resolved.
    std::size_t in_channels = 0;
    std::size_t input_length = 0;

    void validate() const;  // throws ConfigError
};

std::string serialize_config(const TrainConfig& cfg);
TrainConfig parse_config(const std::string& text);  // validates
TrainConfig load_config_file(const std::string& path);
void save_config_file(const TrainConfig& cfg, const std::string& path);

// key may be section-qualified ("train.lr") or bare ("lr"); value parsed the
// same way as in files.  Does not re-validate; callers validate when done.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace tstcc

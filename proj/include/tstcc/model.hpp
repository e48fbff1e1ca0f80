#pragma once

// The full network: three-block convolutional encoder, transformer-based
// context summarizer with a learnable context token, per-step prediction
// heads, and the projection head, plus a self-describing checkpoint format.

#include <cstddef>
#include <string>
#include <vector>

#include "tstcc/config.hpp"
#include "tstcc/nn.hpp"

namespace tstcc {

// Non-trainable state that still belongs in a checkpoint (batch-norm running
// statistics).  Pointers alias the owning module.
struct NamedBuffer {
    std::string name;
    std::vector<double>* data;
};

// conv1d (length-preserving) + batch-norm + ReLU + max-pool(2).
class ConvBlock {
  public:
    ConvBlock() = default;
    ConvBlock(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng rng);

    Tensor forward(const Tensor& x, bool train);
    void collect(ParamList& out, const std::string& prefix);
    void collect_buffers(std::vector<NamedBuffer>& out, const std::string& prefix);

    Tensor kernel;  // (out, in, k)
    Tensor gamma, beta;
    std::vector<double> running_mean, running_var;
    std::size_t ksize = 8;
};

// (B, C, L) -> (B, T, d) with T = floor(floor(floor(L/2)/2)/2); channel plan
// 32 -> 64 -> d, kernel 8 everywhere, dropout after the first block.
class Encoder {
  public:
    Encoder() = default;
    Encoder(std::size_t in_channels, std::size_t d, double dropout, Rng rng);

    Tensor forward(const Tensor& x, bool train, Rng& rng);
    void collect(ParamList& out, const std::string& prefix);
    void collect_buffers(std::vector<NamedBuffer>& out, const std::string& prefix);

    static std::size_t out_steps(std::size_t input_length);

    ConvBlock b1, b2, b3;
    double dropout = 0.35;
    std::size_t in_channels = 0, d = 0;
};

// Projects latents d -> h, prepends the learnable context token, applies the
// pre-norm transformer stack, and returns position 0 as the context vector.
class ARModel {
  public:
    ARModel() = default;
    ARModel(std::size_t d, std::size_t h, std::size_t heads, std::size_t layers, double dropout,
            bool positional, std::size_t max_steps, Rng rng);

    // z_prefix: (B, S, d) with S >= 1; returns (B, h).
    Tensor forward(const Tensor& z_prefix, bool train, Rng& rng) const;
    void collect(ParamList& out, const std::string& prefix);

    Linear w_tran;
    Tensor token;      // (h)
    Tensor pos_embed;  // (max_steps + 1, h) when positional embeddings are on
    std::vector<TransformerLayer> layers;
    std::size_t h = 0, d = 0;
    bool positional = false;
};

// K independent h -> d linear maps, one per future step; k is 1-based.
class PredictionHeads {
  public:
    PredictionHeads() = default;
    PredictionHeads(std::size_t h, std::size_t d, std::size_t k_steps, Rng rng);

    Tensor forward_k(std::size_t k, const Tensor& context) const;
    std::size_t size() const { return heads.size(); }
    void collect(ParamList& out, const std::string& prefix);

    std::vector<Linear> heads;
};

class TSTCCModel {
  public:
    TSTCCModel(const TrainConfig& cfg, std::size_t in_channels, std::size_t input_length, Rng rng);

    Tensor encode(const Tensor& x, bool train, Rng& rng);          // (B,C,L) -> (B,T,d)
    Tensor summarize(const Tensor& z_prefix, bool train, Rng& rng) const;
    Tensor summarize_prefix(const Tensor& z, std::size_t t, bool train, Rng& rng) const;

    ParamList parameters();
    std::vector<NamedBuffer> buffers();

    const TrainConfig& config() const { return cfg_; }
    // Re-seeds downstream protocols (classifier init, shuffles) when one
    // loaded checkpoint is evaluated under several seeds.
    void set_seed(std::uint64_t seed) { cfg_.seed = seed; }
    std::size_t latent_steps() const { return t_steps_; }     // T
    std::size_t predict_steps() const { return k_steps_; }    // K
    std::size_t anchor_step() const { return t_steps_ - k_steps_; }

    Encoder encoder;
    ARModel ar;
    PredictionHeads heads;
    ProjectionHead proj_head;

  private:
    TrainConfig cfg_;
    std::size_t t_steps_ = 0, k_steps_ = 0;
};

// Checkpoint: magic "TSTC", version u32, length-prefixed config text, then
// every parameter and buffer in declaration order as (name, dims, f64 data).
void save_checkpoint(TSTCCModel& model, const std::string& path);
TSTCCModel load_checkpoint(const std::string& path);

}  // namespace tstcc

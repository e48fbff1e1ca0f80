#include "tstcc/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tstcc/util.hpp"

namespace tstcc {

ConvBlock::ConvBlock(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng rng)
    : ksize(kernel) {
    if (in_ch == 0 || out_ch == 0 || kernel == 0)
        throw ValueError("conv block dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
    this->kernel = Tensor::zeros({out_ch, in_ch, kernel}, true);
    for (double& w : this->kernel.mutable_data()) w = rng.uniform(-bound, bound);
    gamma = Tensor::full({out_ch}, 1.0, true);
    beta = Tensor::zeros({out_ch}, true);
    running_mean.assign(out_ch, 0.0);
    running_var.assign(out_ch, 1.0);
}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
    // Length-preserving padding for any kernel size.
    const int pad_left = static_cast<int>(ksize / 2);
    const int pad_right = static_cast<int>((ksize - 1) / 2);
    Tensor y = conv1d(x, kernel, 1, pad_left, pad_right);
    y = batch_norm1d(y, gamma, beta, running_mean, running_var, train);
    return maxpool1d(relu(y), 2, 2);
}

void ConvBlock::collect(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".kernel", kernel});
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

void ConvBlock::collect_buffers(std::vector<NamedBuffer>& out, const std::string& prefix) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
}

Encoder::Encoder(std::size_t in_ch, std::size_t d_out, double dropout_p, Rng rng)
    : dropout(dropout_p), in_channels(in_ch), d(d_out) {
    if (d_out == 0) throw ValueError("encoder output width must be positive");
    b1 = ConvBlock(in_ch, 32, 8, rng.split(1));
    b2 = ConvBlock(32, 64, 8, rng.split(2));
    b3 = ConvBlock(64, d_out, 8, rng.split(3));
}

std::size_t Encoder::out_steps(std::size_t input_length) {
    std::size_t l = input_length;
    for (int i = 0; i < 3; ++i) l /= 2;
    return l;
}

Tensor Encoder::forward(const Tensor& x, bool train, Rng& rng) {
    if (x.rank() != 3)
        throw ShapeError("encoder expects (batch, channels, length), got " + shape_str(x.shape()));
    if (x.dim(1) != in_channels)
        throw ShapeError("encoder built for " + std::to_string(in_channels) +
                         " channels, got input with " + std::to_string(x.dim(1)));
    if (out_steps(x.dim(2)) == 0)
        throw ShapeError("input length " + std::to_string(x.dim(2)) +
                         " too short for the three pooling stages (needs >= 8)");
    Tensor h1 = dropout_forward(dropout, b1.forward(x, train), train, rng);
    Tensor h3 = b3.forward(b2.forward(h1, train), train);
    return swap_axes(h3, 1, 2);  // (B, T, d)
}

void Encoder::collect(ParamList& out, const std::string& prefix) {
    b1.collect(out, prefix + ".b1");
    b2.collect(out, prefix + ".b2");
    b3.collect(out, prefix + ".b3");
}

void Encoder::collect_buffers(std::vector<NamedBuffer>& out, const std::string& prefix) {
    b1.collect_buffers(out, prefix + ".b1");
    b2.collect_buffers(out, prefix + ".b2");
    b3.collect_buffers(out, prefix + ".b3");
}

ARModel::ARModel(std::size_t d_in, std::size_t h_width, std::size_t heads, std::size_t n_layers,
                 double dropout, bool pos, std::size_t max_steps, Rng rng)
    : h(h_width), d(d_in), positional(pos) {
    if (n_layers == 0) throw ValueError("summarizer needs at least one layer");
    w_tran = Linear(d_in, h_width, rng.split(1));
    token = Tensor::zeros({h_width}, true);
    Rng tr = rng.split(2);
    for (double& v : token.mutable_data()) v = tr.normal(0.0, 0.02);
    for (std::size_t i = 0; i < n_layers; ++i)
        layers.emplace_back(h_width, heads, dropout, rng.split(10 + i));
    if (positional) {
        pos_embed = Tensor::zeros({max_steps + 1, h_width}, true);
        Rng pr = rng.split(3);
        for (double& v : pos_embed.mutable_data()) v = pr.normal(0.0, 0.02);
    }
}

Tensor ARModel::forward(const Tensor& z_prefix, bool train, Rng& rng) const {
    if (z_prefix.rank() != 3 || z_prefix.dim(2) != d)
        throw ShapeError("summarizer expects (batch, steps, " + std::to_string(d) + "), got " +
                         shape_str(z_prefix.shape()));
    const std::size_t b = z_prefix.dim(0), s = z_prefix.dim(1);
    Tensor projected = w_tran.forward(z_prefix);              // (B, S, h)
    Tensor tok = add(Tensor::zeros({b, 1, h}), token);        // broadcast to (B, 1, h)
    Tensor psi = concat(tok, projected, 1);                   // (B, S+1, h)
    if (positional) {
        if (s + 1 > pos_embed.dim(0))
            throw ShapeError("prefix longer than the positional table supports");
        psi = add(psi, slice(pos_embed, 0, 0, s + 1));
    }
    for (const TransformerLayer& layer : layers) psi = layer.forward(psi, train, rng);
    return reshape(slice(psi, 1, 0, 1), {b, h});  // context = position 0
}

void ARModel::collect(ParamList& out, const std::string& prefix) {
    w_tran.collect(out, prefix + ".w_tran");
    out.push_back({prefix + ".token", token});
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(out, prefix + ".layer" + std::to_string(i));
    if (positional) out.push_back({prefix + ".pos_embed", pos_embed});
}

PredictionHeads::PredictionHeads(std::size_t h, std::size_t d, std::size_t k_steps, Rng rng) {
    if (k_steps == 0) throw ValueError("need at least one prediction step");
    for (std::size_t k = 0; k < k_steps; ++k) heads.emplace_back(h, d, rng.split(k + 1));
}

Tensor PredictionHeads::forward_k(std::size_t k, const Tensor& context) const {
    if (k < 1 || k > heads.size())
        throw ValueError("prediction step " + std::to_string(k) + " out of range [1, " +
                         std::to_string(heads.size()) + "]");
    return heads[k - 1].forward(context);
}

void PredictionHeads::collect(ParamList& out, const std::string& prefix) {
    for (std::size_t k = 0; k < heads.size(); ++k)
        heads[k].collect(out, prefix + ".w" + std::to_string(k + 1));
}

TSTCCModel::TSTCCModel(const TrainConfig& cfg, std::size_t in_channels, std::size_t input_length,
                       Rng rng)
    : cfg_(cfg) {
    cfg_.validate();
    if (in_channels == 0 || input_length == 0)
        throw ValueError("model needs positive channel count and input length");
    cfg_.in_channels = in_channels;
    cfg_.input_length = input_length;
    t_steps_ = Encoder::out_steps(input_length);
    if (t_steps_ < 2)
        throw ShapeError("input length " + std::to_string(input_length) +
                         " leaves fewer than 2 latent steps");
    k_steps_ = static_cast<std::size_t>(std::floor(cfg.k_ratio * static_cast<double>(t_steps_)));
    if (k_steps_ < 1)
        throw ValueError("k_ratio " + format_double(cfg.k_ratio) + " gives no prediction steps at T = " +
                         std::to_string(t_steps_));
    if (t_steps_ - k_steps_ < 1)
        throw ValueError("k_ratio leaves an empty context prefix");
    encoder = Encoder(in_channels, cfg.d, cfg.dropout_encoder, rng.split(1));
    ar = ARModel(cfg.d, cfg.h, cfg.heads, cfg.layers, cfg.dropout_transformer,
                 cfg.positional_embedding, t_steps_, rng.split(2));
    heads = PredictionHeads(cfg.h, cfg.d, k_steps_, rng.split(3));
    proj_head = ProjectionHead(cfg.h, rng.split(4));
}

Tensor TSTCCModel::encode(const Tensor& x, bool train, Rng& rng) {
    return encoder.forward(x, train, rng);
}

Tensor TSTCCModel::summarize(const Tensor& z_prefix, bool train, Rng& rng) const {
    return ar.forward(z_prefix, train, rng);
}

Tensor TSTCCModel::summarize_prefix(const Tensor& z, std::size_t t, bool train, Rng& rng) const {
    if (t < 1 || t > z.dim(1))
        throw ValueError("anchor step " + std::to_string(t) + " out of range");
    return ar.forward(slice(z, 1, 0, t), train, rng);
}

ParamList TSTCCModel::parameters() {
    ParamList out;
    encoder.collect(out, "encoder");
    ar.collect(out, "ar");
    heads.collect(out, "heads");
    proj_head.collect(out, "proj");
    return out;
}

std::vector<NamedBuffer> TSTCCModel::buffers() {
    std::vector<NamedBuffer> out;
    encoder.collect_buffers(out, "encoder");
    return out;
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_record(std::string& out, const std::string& name, const Shape& dims,
                const std::vector<double>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t dim : dims) put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : data) put_f64(out, v);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    const unsigned char* need(std::size_t n) {
        if (pos + n > buf.size())
            throw FormatError("checkpoint truncated: wanted " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos));
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data()) + pos;
        pos += n;
        return p;
    }
    std::uint32_t u32() {
        const unsigned char* p = need(4);
        return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
               static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    }
    double f64() {
        const unsigned char* p = need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        const unsigned char* p = need(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
};

void read_record_into(Reader& r, const std::string& want_name, const Shape& want_dims,
                      std::vector<double>& dst) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    if (name != want_name)
        throw FormatError("checkpoint tensor order mismatch: expected '" + want_name + "', found '" +
                          name + "'");
    const std::uint32_t rank = r.u32();
    Shape dims(rank);
    for (auto& dim : dims) dim = r.u32();
    if (dims != want_dims)
        throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(dims) +
                          ", expected " + shape_str(want_dims));
    dst.resize(shape_numel(dims));
    for (double& v : dst) v = r.f64();
}

}  // namespace

void save_checkpoint(TSTCCModel& model, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string cfg_text = serialize_config(model.config());
    put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
    out += cfg_text;
    for (const NamedTensor& nt : model.parameters())
        put_record(out, nt.name, nt.tensor.shape(), nt.tensor.data());
    for (const NamedBuffer& nb : model.buffers())
        put_record(out, nb.name, {nb.data->size()}, *nb.data);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

TSTCCModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    if (std::memcmp(r.need(4), kMagic, 4) != 0)
        throw FormatError("bad magic bytes: not a TSTC checkpoint: " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");
    const std::uint32_t cfg_len = r.u32();
    TrainConfig cfg;
    try {
        cfg = parse_config(r.str(cfg_len));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
    }
    if (cfg.in_channels == 0 || cfg.input_length == 0)
        throw FormatError("checkpoint config lacks resolved input dims");

    TSTCCModel model(cfg, cfg.in_channels, cfg.input_length, Rng(cfg.seed));
    for (NamedTensor& nt : model.parameters())
        read_record_into(r, nt.name, nt.tensor.shape(), nt.tensor.mutable_data());
    for (NamedBuffer& nb : model.buffers()) read_record_into(r, nb.name, {nb.data->size()}, *nb.data);
    if (r.pos != buf.size()) throw FormatError("checkpoint has trailing bytes");
    return model;
}

}  // namespace tstcc

#include "tstcc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "tstcc/rng.hpp"
#include "tstcc/util.hpp"

namespace tstcc {

void Dataset::validate() const {
    if (channels == 0 || length == 0) throw ValueError("dataset needs channels and length >= 1");
    if (classes == 0) throw ValueError("dataset needs at least one class");
    if (values.size() != size() * channels * length)
        throw ValueError("dataset value count " + std::to_string(values.size()) +
                         " does not match " + std::to_string(size()) + " samples of shape (" +
                         std::to_string(channels) + ", " + std::to_string(length) + ")");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw ValueError("label " + std::to_string(l) + " outside [0, " +
                             std::to_string(classes) + ")");
    if (!subjects.empty() && subjects.size() != size())
        throw ValueError("subject count does not match sample count");
}

TimeSeriesBatch Dataset::gather(const std::vector<std::size_t>& idx) const {
    const std::size_t row = channels * length;
    std::vector<double> out(idx.size() * row);
    TimeSeriesBatch tb;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= size()) throw ValueError("sample index out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                    out.begin() + static_cast<std::ptrdiff_t>(i * row));
        tb.labels.push_back(labels[idx[i]]);
        if (has_subjects()) tb.subjects.push_back(subjects[idx[i]]);
    }
    tb.x = Tensor::from_data({idx.size(), channels, length}, std::move(out));
    return tb;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.channels = channels;
    out.length = length;
    out.classes = classes;
    out.metadata = metadata;
    const std::size_t row = channels * length;
    out.values.resize(idx.size() * row);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= size()) throw ValueError("sample index out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                    out.values.begin() + static_cast<std::ptrdiff_t>(i * row));
        out.labels.push_back(labels[idx[i]]);
        if (has_subjects()) out.subjects.push_back(subjects[idx[i]]);
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    const unsigned char* need(std::size_t n) {
        if (pos + n > buf.size())
            throw FormatError("dataset file truncated: wanted " + std::to_string(n) +
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
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        const unsigned char* p = need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
};

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::string out;
    out.reserve(32 + ds.values.size() * 8 + ds.labels.size() * 8 + ds.metadata.size());
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(ds.size()));
    put_u32(out, static_cast<std::uint32_t>(ds.channels));
    put_u32(out, static_cast<std::uint32_t>(ds.length));
    put_u32(out, static_cast<std::uint32_t>(ds.classes));
    out.push_back(ds.has_subjects() ? 1 : 0);
    for (int l : ds.labels) put_i32(out, l);
    for (int s : ds.subjects) put_i32(out, s);
    for (double v : ds.values) put_f64(out, v);
    put_u32(out, static_cast<std::uint32_t>(ds.metadata.size()));
    out.append(ds.metadata);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open dataset file: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    const unsigned char* magic = r.need(4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic bytes: not a TSDS dataset file: " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported TSDS version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    Dataset ds;
    const std::uint32_t n = r.u32();
    ds.channels = r.u32();
    ds.length = r.u32();
    ds.classes = r.u32();
    const unsigned char flags = *r.need(1);
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = r.i32();
    if (flags & 1) {
        ds.subjects.resize(n);
        for (auto& s : ds.subjects) s = r.i32();
    }
    ds.values.resize(static_cast<std::size_t>(n) * ds.channels * ds.length);
    for (auto& v : ds.values) v = r.f64();
    const std::uint32_t meta_len = r.u32();
    const unsigned char* meta = r.need(meta_len);
    ds.metadata.assign(reinterpret_cast<const char*>(meta), meta_len);
    try {
        ds.validate();
    } catch (const ValueError& e) {
        throw FormatError(std::string("dataset file holds invalid contents: ") + e.what());
    }
    return ds;
}

void SplitSpec::validate() const {
    if (train <= 0.0 || val <= 0.0 || test <= 0.0)
        throw ValueError("split fractions must all be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9)
        throw ValueError("split fractions must sum to 1");
}

namespace {

SplitResult finish_split(const Dataset& ds, std::vector<std::size_t> tr, std::vector<std::size_t> va,
                         std::vector<std::size_t> te) {
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    std::sort(te.begin(), te.end());
    SplitResult out;
    out.train = ds.subset(tr);
    out.val = ds.subset(va);
    out.test = ds.subset(te);
    out.train_idx = std::move(tr);
    out.val_idx = std::move(va);
    out.test_idx = std::move(te);
    return out;
}

}  // namespace

SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec) {
    spec.validate();
    ds.validate();
    const std::size_t n = ds.size();
    Rng rng(spec.seed);

    if (!spec.subject_wise) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        const auto n_train = static_cast<std::size_t>(std::llround(spec.train * n));
        const auto n_val = static_cast<std::size_t>(std::llround(spec.val * n));
        if (n_train + n_val > n) throw ValueError("split fractions leave no room for a test set");
        std::vector<std::size_t> tr(idx.begin(), idx.begin() + n_train);
        std::vector<std::size_t> va(idx.begin() + n_train, idx.begin() + n_train + n_val);
        std::vector<std::size_t> te(idx.begin() + n_train + n_val, idx.end());
        return finish_split(ds, std::move(tr), std::move(va), std::move(te));
    }

    if (!ds.has_subjects())
        throw ValueError("subject-wise split requested but dataset has no subject ids");
    std::vector<int> subjects;
    for (int s : ds.subjects)
        if (std::find(subjects.begin(), subjects.end(), s) == subjects.end())
            subjects.push_back(s);
    rng.shuffle(subjects);

    const double targets[3] = {spec.train * n, spec.val * n, spec.test * n};
    double have[3] = {0.0, 0.0, 0.0};
    std::vector<std::size_t> parts[3];
    for (int s : subjects) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (ds.subjects[i] == s) members.push_back(i);
        // Deal the whole subject to the split with the largest deficit.
        int best = 0;
        for (int j = 1; j < 3; ++j)
            if (targets[j] - have[j] > targets[best] - have[best]) best = j;
        have[best] += static_cast<double>(members.size());
        parts[best].insert(parts[best].end(), members.begin(), members.end());
    }
    return finish_split(ds, std::move(parts[0]), std::move(parts[1]), std::move(parts[2]));
}

Dataset label_subsample(const Dataset& ds, double fraction, bool stratified, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ValueError("subsample fraction must lie in (0, 1]");
    ds.validate();
    Rng rng(seed);
    std::vector<std::size_t> picked;

    if (!stratified) {
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        const auto k = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(fraction * ds.size())));
        picked.assign(idx.begin(), idx.begin() + std::min(k, ds.size()));
    } else {
        for (std::size_t c = 0; c < ds.classes; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (ds.labels[i] == static_cast<int>(c)) members.push_back(i);
            if (members.empty()) continue;
            rng.split(c).shuffle(members);
            const auto k = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(fraction * members.size())));
            picked.insert(picked.end(), members.begin(),
                          members.begin() + std::min(k, members.size()));
        }
    }
    std::sort(picked.begin(), picked.end());
    return ds.subset(picked);
}

void SynthSpec::validate() const {
    if (classes < 2) throw ValueError("synthetic generator needs at least 2 classes");
    if (length < 32) throw ValueError("synthetic generator needs length >= 32");
    if (n < classes) throw ValueError("need at least one sample per class");
    if (channels == 0) throw ValueError("need at least one channel");
    if (noise < 0.0 || domain_noise < 0.0) throw ValueError("noise levels must be non-negative");
    if (domain_scale <= 0.0) throw ValueError("domain_scale must be positive");
    if (subject_count == 0) throw ValueError("need at least one subject");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Clean class-conditional signal for one channel, before noise and
// normalization.  Family cycles with the class index; band shifts the
// frequency content so more than four classes stay distinguishable.
void synth_channel(std::vector<double>& row, std::size_t family, std::size_t band, Rng& rng) {
    const std::size_t l = row.size();
    switch (family) {
        case 0: {  // sinusoid, integer cycle count
            const double f = 3.0 + 2.0 * static_cast<double>(band);
            const double phase = rng.uniform(0.0, 2.0 * kPi);
            for (std::size_t t = 0; t < l; ++t)
                row[t] = std::sin(2.0 * kPi * f * static_cast<double>(t) / static_cast<double>(l) +
                                  phase);
            break;
        }
        case 1: {  // sawtooth
            const double cycles = 4.0 + 2.0 * static_cast<double>(band);
            const double phase = rng.uniform(0.0, 1.0);
            for (std::size_t t = 0; t < l; ++t) {
                const double u = cycles * static_cast<double>(t) / static_cast<double>(l) + phase;
                row[t] = 2.0 * (u - std::floor(u)) - 1.0;
            }
            break;
        }
        case 2: {  // amplitude-modulated noise burst
            const double center = rng.uniform(0.3, 0.7) * static_cast<double>(l);
            const double width = static_cast<double>(l) / 12.0;
            for (std::size_t t = 0; t < l; ++t) {
                const double d = (static_cast<double>(t) - center) / width;
                row[t] = std::exp(-0.5 * d * d) * rng.normal() * 2.0;
            }
            break;
        }
        default: {  // AR(2) with a resonant pole pair
            const double radius = 0.85;
            const double theta = kPi * (0.15 + 0.08 * static_cast<double>(band));
            const double a1 = 2.0 * radius * std::cos(theta), a2 = -radius * radius;
            double prev1 = 0.0, prev2 = 0.0;
            for (std::size_t t = 0; t < l + 64; ++t) {  // burn-in
                const double x = a1 * prev1 + a2 * prev2 + rng.normal();
                prev2 = prev1;
                prev1 = x;
                if (t >= 64) row[t - 64] = x * 0.5;
            }
            break;
        }
    }
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.channels = spec.channels;
    ds.length = spec.length;
    ds.classes = spec.classes;
    ds.metadata = "synthetic: " + std::to_string(spec.classes) + " classes, noise " +
                  format_double(spec.noise) + ", domain scale " + format_double(spec.domain_scale) +
                  ", domain noise " + format_double(spec.domain_noise);
    ds.values.resize(spec.n * spec.channels * spec.length);
    const Rng root(spec.seed);

    std::vector<double> row(spec.length);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const auto label = static_cast<int>(i % spec.classes);
        ds.labels.push_back(label);
        ds.subjects.push_back(static_cast<int>(i % spec.subject_count));
        Rng sample_rng = root.split(i);
        const std::size_t family = static_cast<std::size_t>(label) % 4;
        const std::size_t band = static_cast<std::size_t>(label) / 4;
        for (std::size_t c = 0; c < spec.channels; ++c) {
            Rng ch_rng = sample_rng.split(c);
            synth_channel(row, family, band, ch_rng);
            const double sigma = spec.noise + spec.domain_noise;
            for (double& v : row) {
                v *= spec.domain_scale;
                if (sigma > 0.0) v += sigma * ch_rng.normal();
            }
            // Per-row z-normalization.
            double s1 = 0.0, s2 = 0.0;
            for (double v : row) s1 += v;
            const double mu = s1 / static_cast<double>(spec.length);
            for (double v : row) s2 += (v - mu) * (v - mu);
            const double sd = std::sqrt(s2 / static_cast<double>(spec.length));
            if (!(sd > 0.0)) throw NumericError("degenerate constant synthetic row");
            double* dst = ds.values.data() + (i * spec.channels + c) * spec.length;
            for (std::size_t t = 0; t < spec.length; ++t) dst[t] = (row[t] - mu) / sd;
        }
    }
    return ds;
}

void export_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::string out = "id,label,subject";
    for (std::size_t c = 0; c < ds.channels; ++c)
        for (std::size_t t = 0; t < ds.length; ++t)
            out += ",c" + std::to_string(c) + "_t" + std::to_string(t);
    out += "\n";
    const std::size_t row = ds.channels * ds.length;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out += std::to_string(i) + "," + std::to_string(ds.labels[i]) + "," +
               std::to_string(ds.has_subjects() ? ds.subjects[i] : -1);
        for (std::size_t j = 0; j < row; ++j) out += "," + format_double(ds.values[i * row + j]);
        out += "\n";
    }
    write_text_file(path, out);
}

}  // namespace tstcc

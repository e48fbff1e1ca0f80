#include "tstcc/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tstcc/util.hpp"

namespace tstcc {

namespace {

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string csv_num(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string serialize_manifest(const RunManifest& m) {
    std::ostringstream os;
    os << "command = " << m.command << "\n";
    os << "run_id = " << m.run_id << "\n";
    os << "output_dir = " << m.output_dir << "\n";
    os << "status = " << m.status << "\n";
    os << "wall_seconds = " << csv_num(m.wall_seconds) << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < m.seeds.size(); ++i) os << (i ? "," : "") << m.seeds[i];
    os << "\n";
    for (const auto& a : m.args) os << "arg = " << a << "\n";
    for (const auto& [sum, path] : m.inputs) os << "input = " << sum << " " << path << "\n";
    for (const auto& [sum, path] : m.artifacts) os << "artifact = " << sum << " " << path << "\n";
    os << "[config]\n" << m.config_text;
    return os.str();
}

RunManifest parse_manifest(const std::string& text) {
    RunManifest m;
    std::istringstream is(text);
    std::string line;
    bool in_config = false;
    std::ostringstream config;
    while (std::getline(is, line)) {
        if (in_config) {
            config << line << "\n";
            continue;
        }
        if (line == "[config]") {
            in_config = true;
            continue;
        }
        if (line.empty()) continue;
        const std::size_t sep = line.find(" = ");
        if (sep == std::string::npos)
            throw FormatError("manifest line without 'key = value': '" + line + "'");
        const std::string key = line.substr(0, sep);
        const std::string value = line.substr(sep + 3);
        auto sum_path = [&]() -> std::pair<std::string, std::string> {
            const std::size_t sp = value.find(' ');
            if (sp == std::string::npos)
                throw FormatError("manifest '" + key + "' entry needs '<checksum> <path>'");
            return {value.substr(0, sp), value.substr(sp + 1)};
        };
        if (key == "command") m.command = value;
        else if (key == "run_id") m.run_id = value;
        else if (key == "output_dir") m.output_dir = value;
        else if (key == "status") m.status = value;
        else if (key == "wall_seconds") m.wall_seconds = std::strtod(value.c_str(), nullptr);
        else if (key == "seeds") {
            for (const auto& tok : split_csv_list(value))
                m.seeds.push_back(std::strtoull(tok.c_str(), nullptr, 10));
        } else if (key == "arg") m.args.push_back(value);
        else if (key == "input") m.inputs.push_back(sum_path());
        else if (key == "artifact") m.artifacts.push_back(sum_path());
        else throw FormatError("unknown manifest key '" + key + "'");
    }
    if (!in_config) throw FormatError("manifest is missing its [config] section");
    m.config_text = config.str();
    return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    write_text_file(path, serialize_manifest(m));
}

RunManifest load_manifest(const std::string& path) {
    return parse_manifest(read_text_file(path));
}

std::string make_run_id(const std::string& command, const std::vector<std::string>& args,
                        const std::string& config_text, const std::vector<std::uint64_t>& seeds) {
    std::uint64_t h = fnv1a64(config_text);
    for (const auto& a : args) {
        h ^= fnv1a64(a);
        h *= kFnvPrime;
    }
    for (std::uint64_t s : seeds) {
        h ^= s;
        h *= kFnvPrime;
    }
    return command + "-" + hex64(h);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    if (rows.empty()) throw ValueError("metrics_csv: no rows");
    const std::size_t classes = rows.front().report.f1.size();
    std::ostringstream os;
    os << "run_id,seed,split,accuracy,mf1";
    for (std::size_t c = 0; c < classes; ++c) os << ",f1_" << c;
    os << "\n";
    for (const auto& r : rows) {
        if (r.report.f1.size() != classes)
            throw ShapeError("metrics_csv: rows disagree on class count");
        os << r.run_id << "," << r.seed << "," << r.split << "," << csv_num(r.report.accuracy)
           << "," << csv_num(r.report.macro_f1);
        for (double f : r.report.f1) os << "," << csv_num(f);
        os << "\n";
    }
    return os.str();
}

std::string loss_log_csv(const std::vector<LossBreakdown>& log) {
    std::ostringstream os;
    os << "epoch,l_tc_s,l_tc_w,l_cc,total\n";
    for (std::size_t i = 0; i < log.size(); ++i)
        os << (i + 1) << "," << csv_num(log[i].l_tc_s) << "," << csv_num(log[i].l_tc_w) << ","
           << csv_num(log[i].l_cc) << "," << csv_num(log[i].total) << "\n";
    return os.str();
}

std::string summary_csv(const std::vector<MetricsRow>& rows) {
    if (rows.empty()) throw ValueError("summary_csv: no rows");
    std::vector<std::string> splits;
    for (const auto& r : rows)
        if (std::find(splits.begin(), splits.end(), r.split) == splits.end())
            splits.push_back(r.split);
    std::ostringstream os;
    os << "run_id,split,metric,mean,std,runs\n";
    for (const auto& split : splits) {
        std::vector<double> acc, mf1;
        for (const auto& r : rows)
            if (r.split == split) {
                acc.push_back(r.report.accuracy);
                mf1.push_back(r.report.macro_f1);
            }
        auto emit = [&](const char* metric, const std::vector<double>& xs) {
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double var = 0.0;
            for (double x : xs) var += (x - mean) * (x - mean);
            const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1))
                                            : 0.0;
            os << rows.front().run_id << "," << split << "," << metric << "," << csv_num(mean)
               << "," << csv_num(sd) << "," << xs.size() << "\n";
        };
        emit("accuracy", acc);
        emit("mf1", mf1);
    }
    return os.str();
}

}  // namespace tstcc

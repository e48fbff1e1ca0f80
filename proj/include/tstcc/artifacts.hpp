#pragma once

// Run bookkeeping: FNV-1a checksums, CSV emitters for metrics and loss logs,
// and the RunManifest that records everything needed to replay a run and
// verify its outputs byte for byte.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tstcc/losses.hpp"
#include "tstcc/training.hpp"
#include "tstcc/util.hpp"

namespace tstcc {

std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

// Shortest decimal text that round-trips the double exactly.
std::string csv_num(double v);

// Everything needed to reproduce one CLI run: the subcommand with its
// arguments, the full config snapshot, the seeds, and checksums of every
// input consumed and artifact produced.  Written with status "running" before
// the work starts and finalized to "complete" afterwards.
struct RunManifest {
    std::string command;
    std::string run_id;
    std::string output_dir;
    std::string status;
    double wall_seconds = 0.0;
    std::vector<std::string> args;   // argv after the subcommand name
    std::vector<std::uint64_t> seeds;
    std::vector<std::pair<std::string, std::string>> inputs;     // checksum hex, path
    std::vector<std::pair<std::string, std::string>> artifacts;  // checksum hex, relative path
    std::string config_text;
};

std::string serialize_manifest(const RunManifest& m);
RunManifest parse_manifest(const std::string& text);
void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Deterministic run identifier: the subcommand plus a hash of its arguments,
// config snapshot, and seed list.  Replaying the same inputs reproduces it.
std::string make_run_id(const std::string& command, const std::vector<std::string>& args,
                        const std::string& config_text, const std::vector<std::uint64_t>& seeds);

// One metrics row per (seed, split label) pair.
struct MetricsRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string split;
    MetricsReport report;
};

// Header: run_id,seed,split,accuracy,mf1,f1_0..f1_{C-1}.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

// Header: epoch,l_tc_s,l_tc_w,l_cc,total (epochs 1-based).
std::string loss_log_csv(const std::vector<LossBreakdown>& log);

// Mean and sample standard deviation over seeds, grouped by split label.
// Header: run_id,split,metric,mean,std,runs.
std::string summary_csv(const std::vector<MetricsRow>& rows);

}  // namespace tstcc

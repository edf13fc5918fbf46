#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace isct {

struct BenchConfig {
    int dims = 4;
    int depth = 2;
    int steps = 10000;
    std::uint64_t seed = 0;
    /// Steps per probe window at the start and the end of the stream.
    int probe_steps = 100;
    /// Steps per timed block inside a probe window.
    int block = 10;
    int repeats = 5;
    /// Number of prefix lengths at which full recomputation is timed.
    int recompute_samples = 8;
};

struct RecomputeSample {
    std::size_t prefix_steps = 0;
    double seconds = 0.0;
};

struct BenchReport {
    BenchConfig config;
    double stream_ns_early = 0.0;  // median per-step time over the first probe window
    double stream_ns_late = 0.0;   // median per-step time over the last probe window
    double stream_ratio = 0.0;     // late / early
    double baseline_ns = 0.0;      // per-step time of a depth-0 stream
    std::vector<RecomputeSample> recompute;
    double recompute_slope_ns_per_step = 0.0;  // least-squares slope of time vs prefix length

    [[nodiscard]] bool stream_flat(double tolerance = 2.0) const { return stream_ratio <= tolerance; }
    [[nodiscard]] bool recompute_grows() const { return recompute_slope_ns_per_step > 0.0; }
    [[nodiscard]] std::string to_tsv() const;
};

/// Streams a random path of `steps` increments, timing stream_update near
/// the beginning and the end, and times signature_batch over growing
/// prefixes. InvalidArgument on non-positive sizes or steps < probe_steps.
BenchReport run_bench(const BenchConfig& cfg);

}  // namespace isct

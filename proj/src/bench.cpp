#include "isct/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "isct/error.hpp"
#include "isct/rng.hpp"
#include "isct/signature.hpp"

namespace isct {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// Streams every increment once; per-step block timings are collected for
// steps in [0, probe) and [n - probe, n).
void timed_stream(const std::vector<std::vector<double>>& incs, int depth, const BenchConfig& cfg,
                  std::vector<double>& early, std::vector<double>& late) {
    auto state = stream_init(cfg.dims, depth);
    const auto n = incs.size();
    const auto probe = static_cast<std::size_t>(cfg.probe_steps);
    const auto block = static_cast<std::size_t>(cfg.block);
    std::size_t i = 0;
    while (i < n) {
        const bool in_early = i < probe;
        const bool in_late = i >= n - probe;
        if (in_early || in_late) {
            const std::size_t end = std::min({i + block, n, in_early ? probe : n});
            const auto t0 = Clock::now();
            for (std::size_t k = i; k < end; ++k) (void)stream_update(state, incs[k]);
            const auto t1 = Clock::now();
            const double per = std::chrono::duration<double, std::nano>(t1 - t0).count() / static_cast<double>(end - i);
            (in_early ? early : late).push_back(per);
            i = end;
        } else {
            (void)stream_update(state, incs[i]);
            ++i;
        }
    }
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
    if (cfg.dims < 1 || cfg.depth < 0 || cfg.steps < 1 || cfg.probe_steps < 1 || cfg.block < 1 || cfg.repeats < 1 ||
        cfg.recompute_samples < 2) {
        throw InvalidArgument("bench: sizes must be positive (depth >= 0, at least 2 recompute samples)");
    }
    if (cfg.steps < cfg.probe_steps) throw InvalidArgument("bench: steps must be >= probe_steps");

    Rng rng(cfg.seed);
    std::vector<std::vector<double>> incs(static_cast<std::size_t>(cfg.steps),
                                          std::vector<double>(static_cast<std::size_t>(cfg.dims)));
    for (auto& inc : incs) {
        for (auto& v : inc) v = rng.uniform(-1.0, 1.0) / std::sqrt(static_cast<double>(cfg.steps));
    }

    BenchReport report;
    report.config = cfg;
    std::vector<double> early;
    std::vector<double> late;
    std::vector<double> scratch_early;
    std::vector<double> scratch_late;
    timed_stream(incs, cfg.depth, cfg, scratch_early, scratch_late);  // warm-up
    for (int r = 0; r < cfg.repeats; ++r) timed_stream(incs, cfg.depth, cfg, early, late);
    report.stream_ns_early = median(early);
    report.stream_ns_late = median(late);
    report.stream_ratio = report.stream_ns_early > 0 ? report.stream_ns_late / report.stream_ns_early : 1.0;

    std::vector<double> base_early;
    std::vector<double> base_late;
    for (int r = 0; r < cfg.repeats; ++r) timed_stream(incs, 0, cfg, base_early, base_late);
    base_early.insert(base_early.end(), base_late.begin(), base_late.end());
    report.baseline_ns = median(base_early);

    std::vector<double> points;
    points.reserve((static_cast<std::size_t>(cfg.steps) + 1) * static_cast<std::size_t>(cfg.dims));
    points.assign(static_cast<std::size_t>(cfg.dims), 0.0);
    for (const auto& inc : incs) {
        const std::size_t last = points.size() - static_cast<std::size_t>(cfg.dims);
        for (int j = 0; j < cfg.dims; ++j) points.push_back(points[last + static_cast<std::size_t>(j)] + inc[static_cast<std::size_t>(j)]);
    }
    for (int s = 1; s <= cfg.recompute_samples; ++s) {
        const auto n = static_cast<std::size_t>(cfg.steps) * static_cast<std::size_t>(s) /
                       static_cast<std::size_t>(cfg.recompute_samples);
        const Path prefix(cfg.dims, std::vector<double>(points.begin(),
                                                        points.begin() + static_cast<std::ptrdiff_t>((n + 1) * static_cast<std::size_t>(cfg.dims))));
        std::vector<double> times;
        for (int r = 0; r < cfg.repeats; ++r) {
            const auto t0 = Clock::now();
            const auto sig = signature_batch(prefix, cfg.depth);
            const auto t1 = Clock::now();
            if (sig.size() == 0) throw Error("unreachable");
            times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        report.recompute.push_back({n, median(times)});
    }
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : report.recompute) {
        mx += static_cast<double>(p.prefix_steps);
        my += p.seconds;
    }
    mx /= static_cast<double>(report.recompute.size());
    my /= static_cast<double>(report.recompute.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (const auto& p : report.recompute) {
        const double dx = static_cast<double>(p.prefix_steps) - mx;
        sxy += dx * (p.seconds - my);
        sxx += dx * dx;
    }
    report.recompute_slope_ns_per_step = sxx > 0 ? sxy / sxx * 1e9 : 0.0;
    return report;
}

std::string BenchReport::to_tsv() const {
    std::ostringstream out;
    out.precision(6);
    out << "dims\t" << config.dims << "\n"
        << "depth\t" << config.depth << "\n"
        << "steps\t" << config.steps << "\n"
        << "stream_ns_per_step_first_" << config.probe_steps << "\t" << stream_ns_early << "\n"
        << "stream_ns_per_step_last_" << config.probe_steps << "\t" << stream_ns_late << "\n"
        << "stream_ratio_late_over_early\t" << stream_ratio << "\n"
        << "baseline_depth0_ns_per_step\t" << baseline_ns << "\n"
        << "recompute_slope_ns_per_step\t" << recompute_slope_ns_per_step << "\n"
        << "prefix_steps\trecompute_seconds\n";
    for (const auto& r : recompute) out << r.prefix_steps << "\t" << r.seconds << "\n";
    return out.str();
}

}  // namespace isct

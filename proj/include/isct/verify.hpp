#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "isct/rng.hpp"
#include "isct/signature.hpp"

namespace isct {

/// Randomized checks of the signature identities, shared by the `verify`
/// command and the test suites.
///
///   chen    reconstruct(isc_sequence) == signature_batch per group
///           (relative error < 1e-10 per level, see max_relative_level_error); level-1 records equal the
///           projected increments exactly.
///   stream  streaming composition == signature_batch (< 1e-12 abs);
///           Chen level 2 == strict level 2 + 1/2 sum dx (x) dx (< 1e-12).
///   decay   ||S^(k)||_1 <= (sum_n ||dx_n||_1)^k / k!  for k <= depth.
///   reparam duplicated points leave the signature unchanged (< 1e-12)
///           and produce exactly-zero records.
///   fit     signed area of random loops is fit exactly at depth 2
///           (RMSE <= 1e-6) and per-depth RMSE is non-increasing.
struct VerifyOutcome {
    std::string suite;
    std::size_t trials = 0;
    std::size_t failures = 0;
    /// Largest observed violation metric (suite specific).
    double worst = 0.0;
    /// Human-readable dump of the first failing input, empty on success.
    std::string counterexample;

    [[nodiscard]] bool passed() const { return failures == 0; }
};

std::vector<std::string> verify_suite_names();

/// Throws InvalidArgument for an unknown suite name.
VerifyOutcome run_verify_suite(std::string_view suite, std::size_t trials, std::uint64_t seed);

/// Path starting uniformly in [-1,1]^dim with increments uniform in
/// [-amplitude, amplitude] per coordinate.
Path random_path(Rng& rng, int dim, std::size_t steps, double amplitude = 1.0);

/// Closed 2-D polygonal loop with `vertices` random vertices on a
/// perturbed circle; the last point repeats the first.
Path random_loop(Rng& rng, std::size_t vertices);

/// Random partition of 0..dim-1 into 1..dim non-empty groups.
ChannelSpec random_partition(Rng& rng, int dim);

/// (sum_n ||dx_n||_1)^k / k! for k = 0..depth: the factorial-decay bound on
/// ||S^(k)||_1, used as the magnitude scale of level k.
std::vector<double> variation_scales(const Path& path, int depth);

/// Per-level relative error ||a_k - b_k||_1 / max(||b_k||_1, scale_k);
/// returns the maximum over levels. The scale keeps the measure
/// well-conditioned when a level cancels to nearly zero (e.g. a 1-D group
/// whose net displacement is tiny). Pass an empty span for the plain
/// relative error.
double max_relative_level_error(const TruncatedTensor& a, const TruncatedTensor& b,
                                std::span<const double> level_scales = {});

std::string describe_path(const Path& path);

}  // namespace isct

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "isct/tensor_core.hpp"

namespace isct {

/// A sampled path x_0..x_N in R^d, stored row-major. Increments are
/// dx_n = x_{n+1} - x_n for n = 0..N-1.
class Path {
public:
    explicit Path(int dim);
    explicit Path(const std::vector<std::vector<double>>& points);
    Path(int dim, std::vector<double> flat_points);

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] std::size_t num_points() const { return points_.size() / static_cast<std::size_t>(dim_); }
    /// N, the number of increments.
    [[nodiscard]] std::size_t num_steps() const { return num_points() == 0 ? 0 : num_points() - 1; }

    [[nodiscard]] std::span<const double> point(std::size_t n) const;
    [[nodiscard]] std::vector<double> increment(std::size_t n) const;
    [[nodiscard]] std::span<const double> flat() const { return points_; }

    void push_back(std::span<const double> point);

    /// Path restricted to the given coordinates, in the order listed.
    [[nodiscard]] Path project(std::span<const int> coords) const;

private:
    int dim_;
    std::vector<double> points_;
};

/// Partition of (a subset of) the coordinates into groups whose
/// incremental contributions are computed independently.
struct ChannelSpec {
    std::vector<std::vector<int>> groups;

    /// One group covering 0..dim-1.
    static ChannelSpec whole(int dim);

    /// Throws InvalidArgument if a group is empty, groups overlap, or an
    /// index falls outside 0..dim-1.
    void validate(int dim) const;

    [[nodiscard]] std::size_t num_groups() const { return groups.size(); }

    friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// Running signature S_{0,n} of the increments consumed so far.
struct SignatureState {
    TruncatedTensor current;
    std::size_t steps_consumed = 0;
};

/// Incremental contributions of one step. contributions[g] holds, at level
/// k, the change of the level-k signature of group g caused by this step;
/// level 0 is always 0.
struct IscRecord {
    std::size_t step_index = 0;
    std::vector<TruncatedTensor> contributions;
};

/// Chen signature: ordered product of tt_exp(dx_n). Empty path -> unit.
TruncatedTensor signature_batch(const Path& path, int depth);

SignatureState stream_init(int dim, int depth);

/// Consumes one increment. For every level k >= 1,
///   dS^(k) = sum_{j=1..k} S^(k-j) (x) delta^{(x) j} / j!
/// is computed from the pre-update state and added to it. Cost is
/// O(depth * sum_k d^k), independent of steps_consumed.
TruncatedTensor stream_update(SignatureState& state, std::span<const double> delta);

/// Streams several channel groups side by side over full-dimensional
/// increments.
class GroupedSignatureStream {
public:
    GroupedSignatureStream(int path_dim, int depth, ChannelSpec channels);

    IscRecord update(std::span<const double> delta);

    [[nodiscard]] const SignatureState& state(std::size_t group) const { return states_.at(group); }
    [[nodiscard]] const ChannelSpec& channels() const { return channels_; }
    [[nodiscard]] int depth() const { return depth_; }
    [[nodiscard]] std::size_t steps_consumed() const { return steps_; }

private:
    int path_dim_;
    int depth_;
    ChannelSpec channels_;
    std::vector<SignatureState> states_;
    std::size_t steps_ = 0;
    std::vector<double> scratch_;
};

/// One record per increment of the path, one contribution per group.
std::vector<IscRecord> isc_sequence(const Path& path, int depth, const ChannelSpec& channels);

/// Unit plus the sum of the group's contributions. Step indices must be
/// strictly increasing (ValidationError otherwise).
TruncatedTensor reconstruct(std::span<const IscRecord> records, std::size_t group, int dim,
                            int depth);

/// Brute-force sum over strictly increasing index tuples
/// n_1 < ... < n_k of dx_{n_1} (x) ... (x) dx_{n_k}. No Chen shortcut.
/// Guarded to N <= 64 and depth <= 4 (ResourceLimitError).
TruncatedTensor strict_iterated_sum(const Path& path, int depth);

inline constexpr std::size_t kStrictSumMaxSteps = 64;
inline constexpr int kStrictSumMaxDepth = 4;

/// Signed (shoelace) area enclosed by a closed 2-D polygonal path.
double signed_area(const Path& path);

/// Ordinary least squares with ridge damping from flattened truncated
/// signatures (levels 0..m) to scalar targets, for every m = 1..depth.
/// The level-0 coordinate acts as the intercept and is not damped.
struct FitOptions {
    double ridge = 1e-8;
};

struct FitReport {
    int depth = 0;
    /// Coefficients of the depth-`depth` fit, indexed by flatten order.
    std::vector<double> coefficients;
    double training_rmse = 0.0;
    /// rmse_by_depth[m-1] is the in-sample RMSE using levels 0..m.
    std::vector<double> rmse_by_depth;
};

FitReport universal_fit(std::span<const Path> paths, std::span<const double> targets, int depth,
                        FitOptions options = {});

}  // namespace isct

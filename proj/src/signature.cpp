#include "isct/signature.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "isct/error.hpp"

namespace isct {

Path::Path(int dim) : dim_(dim) {
    if (dim < 1) throw InvalidArgument("Path: dim must be >= 1");
}

Path::Path(const std::vector<std::vector<double>>& points)
    : dim_(points.empty() ? 1 : static_cast<int>(points.front().size())) {
    if (dim_ < 1) throw ShapeError("Path: points must have at least one coordinate");
    for (const auto& p : points) push_back(p);
}

Path::Path(int dim, std::vector<double> flat_points) : dim_(dim), points_(std::move(flat_points)) {
    if (dim < 1) throw InvalidArgument("Path: dim must be >= 1");
    if (points_.size() % static_cast<std::size_t>(dim) != 0) {
        throw ShapeError("Path: flat buffer length is not a multiple of dim");
    }
}

std::span<const double> Path::point(std::size_t n) const {
    if (n >= num_points()) throw RangeError("Path: point index out of range");
    return std::span<const double>(points_).subspan(n * dim_, dim_);
}

std::vector<double> Path::increment(std::size_t n) const {
    if (n >= num_steps()) throw RangeError("Path: increment index out of range");
    std::vector<double> d(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) d[i] = points_[(n + 1) * dim_ + i] - points_[n * dim_ + i];
    return d;
}

void Path::push_back(std::span<const double> point) {
    if (point.size() != static_cast<std::size_t>(dim_)) {
        throw ShapeError("Path: point has " + std::to_string(point.size()) +
                         " coordinates, expected " + std::to_string(dim_));
    }
    points_.insert(points_.end(), point.begin(), point.end());
}

Path Path::project(std::span<const int> coords) const {
    if (coords.empty()) throw InvalidArgument("Path::project: empty coordinate list");
    Path out(static_cast<int>(coords.size()));
    out.points_.reserve(num_points() * coords.size());
    for (std::size_t n = 0; n < num_points(); ++n) {
        for (int c : coords) {
            if (c < 0 || c >= dim_) throw InvalidArgument("Path::project: coordinate out of range");
            out.points_.push_back(points_[n * dim_ + c]);
        }
    }
    return out;
}

ChannelSpec ChannelSpec::whole(int dim) {
    ChannelSpec spec;
    spec.groups.emplace_back();
    for (int i = 0; i < dim; ++i) spec.groups.back().push_back(i);
    return spec;
}

void ChannelSpec::validate(int dim) const {
    if (groups.empty()) throw InvalidArgument("ChannelSpec: no groups");
    std::vector<bool> seen(static_cast<std::size_t>(std::max(dim, 0)), false);
    for (const auto& g : groups) {
        if (g.empty()) throw InvalidArgument("ChannelSpec: empty group");
        for (int c : g) {
            if (c < 0 || c >= dim) {
                throw InvalidArgument("ChannelSpec: index " + std::to_string(c) +
                                      " outside 0.." + std::to_string(dim - 1));
            }
            if (seen[c]) throw InvalidArgument("ChannelSpec: groups overlap at index " + std::to_string(c));
            seen[c] = true;
        }
    }
}

TruncatedTensor signature_batch(const Path& path, int depth) {
    TruncatedTensor sig = tt_unit(path.dim(), depth);
    for (std::size_t n = 0; n < path.num_steps(); ++n) {
        const auto dx = path.increment(n);
        sig = tt_product(sig, tt_exp(dx, path.dim(), depth));
    }
    return sig;
}

SignatureState stream_init(int dim, int depth) { return SignatureState{tt_unit(dim, depth), 0}; }

TruncatedTensor stream_update(SignatureState& state, std::span<const double> delta) {
    const int dim = state.current.dim();
    const int depth = state.current.depth();
    if (delta.size() != static_cast<std::size_t>(dim)) {
        throw ShapeError("stream_update: increment has " + std::to_string(delta.size()) +
                         " entries, state dim is " + std::to_string(dim));
    }
    const auto d = static_cast<std::size_t>(dim);

    // powers[j] = delta^{(x) j} / j!
    std::vector<std::vector<double>> powers(static_cast<std::size_t>(depth) + 1);
    powers[0] = {1.0};
    for (int j = 1; j <= depth; ++j) {
        const auto& prev = powers[j - 1];
        auto& cur = powers[j];
        cur.resize(prev.size() * d);
#ifdef ISCT_MUTANT_DROP_FACTORIAL
        const double inv = 1.0;
#else
        const double inv = 1.0 / static_cast<double>(j);
#endif
        for (std::size_t p = 0; p < prev.size(); ++p) {
            for (std::size_t q = 0; q < d; ++q) cur[p * d + q] = prev[p] * delta[q] * inv;
        }
    }

    TruncatedTensor contribution(dim, depth);
    for (int k = 1; k <= depth; ++k) {
        auto dst = contribution.level(k);
        for (int j = 1; j <= k; ++j) {
            auto left = state.current.level(k - j);
            const auto& right = powers[j];
            const std::size_t rn = right.size();
            for (std::size_t p = 0; p < left.size(); ++p) {
                const double l = left[p];
                if (l == 0.0) continue;
                double* row = dst.data() + p * rn;
                for (std::size_t q = 0; q < rn; ++q) row[q] += l * right[q];
            }
        }
    }
    auto cur = state.current.coefficients();
    auto inc = contribution.coefficients();
    for (std::size_t i = 1; i < cur.size(); ++i) cur[i] += inc[i];
    ++state.steps_consumed;
    return contribution;
}

GroupedSignatureStream::GroupedSignatureStream(int path_dim, int depth, ChannelSpec channels)
    : path_dim_(path_dim), depth_(depth), channels_(std::move(channels)) {
    channels_.validate(path_dim);
    for (const auto& g : channels_.groups) states_.push_back(stream_init(static_cast<int>(g.size()), depth));
}

IscRecord GroupedSignatureStream::update(std::span<const double> delta) {
    if (delta.size() != static_cast<std::size_t>(path_dim_)) {
        throw ShapeError("GroupedSignatureStream: increment has " + std::to_string(delta.size()) +
                         " entries, expected " + std::to_string(path_dim_));
    }
    IscRecord rec;
    rec.step_index = steps_;
    rec.contributions.reserve(states_.size());
    for (std::size_t g = 0; g < states_.size(); ++g) {
        const auto& idx = channels_.groups[g];
        scratch_.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) scratch_[i] = delta[idx[i]];
        rec.contributions.push_back(stream_update(states_[g], scratch_));
    }
    ++steps_;
    return rec;
}

std::vector<IscRecord> isc_sequence(const Path& path, int depth, const ChannelSpec& channels) {
    GroupedSignatureStream stream(path.dim(), depth, channels);
    std::vector<IscRecord> out;
    out.reserve(path.num_steps());
    for (std::size_t n = 0; n < path.num_steps(); ++n) out.push_back(stream.update(path.increment(n)));
    return out;
}

TruncatedTensor reconstruct(std::span<const IscRecord> records, std::size_t group, int dim,
                            int depth) {
    TruncatedTensor out(dim, depth);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (i > 0 && rec.step_index <= records[i - 1].step_index) {
            throw ValidationError("reconstruct: step index " + std::to_string(rec.step_index) +
                                  " follows " + std::to_string(records[i - 1].step_index) +
                                  " (records must be strictly increasing)");
        }
        if (group >= rec.contributions.size()) {
            throw ValidationError("reconstruct: record has no group " + std::to_string(group));
        }
        const auto& c = rec.contributions[group];
        if (!c.same_shape(out)) throw ShapeError("reconstruct: contribution shape mismatch");
        auto dst = out.coefficients();
        auto src = c.coefficients();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    out.set_scalar(1.0);
    return out;
}

namespace {

// Adds every tuple extending `prefix` (which ends at index `last`) into the
// levels above prefix_level.
void enumerate_strict(const std::vector<std::vector<double>>& incs, std::size_t first,
                      const std::vector<double>& prefix, int prefix_level, int depth,
                      TruncatedTensor& out) {
    if (prefix_level == depth) return;
    const std::size_t d = static_cast<std::size_t>(out.dim());
    std::vector<double> extended(prefix.size() * d);
    for (std::size_t n = first; n < incs.size(); ++n) {
        const auto& dx = incs[n];
        for (std::size_t p = 0; p < prefix.size(); ++p) {
            for (std::size_t q = 0; q < d; ++q) extended[p * d + q] = prefix[p] * dx[q];
        }
        auto dst = out.level(prefix_level + 1);
        for (std::size_t i = 0; i < extended.size(); ++i) dst[i] += extended[i];
        enumerate_strict(incs, n + 1, extended, prefix_level + 1, depth, out);
    }
}

}  // namespace

TruncatedTensor strict_iterated_sum(const Path& path, int depth) {
    if (path.num_steps() > kStrictSumMaxSteps || depth > kStrictSumMaxDepth) {
        throw ResourceLimitError("strict_iterated_sum: guard exceeded (N=" +
                                 std::to_string(path.num_steps()) + ", depth=" +
                                 std::to_string(depth) + "; limits N<=64, depth<=4)");
    }
    std::vector<std::vector<double>> incs;
    for (std::size_t n = 0; n < path.num_steps(); ++n) incs.push_back(path.increment(n));
    TruncatedTensor out = tt_unit(path.dim(), depth);
    enumerate_strict(incs, 0, {1.0}, 0, depth, out);
    return out;
}

double signed_area(const Path& path) {
    if (path.dim() != 2) throw ShapeError("signed_area: path must be 2-D");
    double a = 0.0;
    const std::size_t n = path.num_points();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto p = path.point(i);
        const auto q = path.point(i + 1);
        a += p[0] * q[1] - q[0] * p[1];
    }
    if (n > 1) {
        // close the polygon if the caller did not
        const auto p = path.point(n - 1);
        const auto q = path.point(0);
        a += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * a;
}

namespace {

struct LeastSquaresResult {
    Eigen::VectorXd coefficients;
    double rmse;
};

LeastSquaresResult ridge_solve(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, double ridge) {
    const Eigen::Index rows = design.rows();
    const Eigen::Index cols = design.cols();
    Eigen::VectorXd w;
    if (ridge > 0.0) {
        Eigen::MatrixXd aug(rows + cols, cols);
        aug.topRows(rows) = design;
        aug.bottomRows(cols) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(cols, cols);
        aug(rows, 0) = 0.0;  // level-0 column is the intercept; not damped
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows + cols);
        rhs.head(rows) = y;
        w = aug.colPivHouseholderQr().solve(rhs);
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        if (qr.rank() < cols) {
            throw SingularSystemError("universal_fit: design matrix has rank " +
                                      std::to_string(qr.rank()) + " < " + std::to_string(cols) +
                                      " columns and ridge damping is 0");
        }
        w = qr.solve(y);
    }
    const Eigen::VectorXd resid = design * w - y;
    return {w, std::sqrt(resid.squaredNorm() / static_cast<double>(rows))};
}

}  // namespace

FitReport universal_fit(std::span<const Path> paths, std::span<const double> targets, int depth,
                        FitOptions options) {
    if (paths.size() < 2) throw InvalidArgument("universal_fit: need at least 2 paths");
    if (paths.size() != targets.size()) throw ShapeError("universal_fit: paths/targets length mismatch");
    if (depth < 1) throw InvalidArgument("universal_fit: depth must be >= 1");
    if (options.ridge < 0.0) throw InvalidArgument("universal_fit: ridge must be >= 0");
    const int dim = paths.front().dim();

    const auto levels = all_levels(depth);
    const auto full_width = static_cast<Eigen::Index>(flattened_size(dim, levels));
    Eigen::MatrixXd features(static_cast<Eigen::Index>(paths.size()), full_width);
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (paths[i].dim() != dim) throw ShapeError("universal_fit: paths differ in dimension");
        const auto row = flatten(signature_batch(paths[i], depth), levels);
        for (Eigen::Index j = 0; j < full_width; ++j) features(static_cast<Eigen::Index>(i), j) = row[j];
    }
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets.data(),
                                                                static_cast<Eigen::Index>(targets.size()));

    FitReport report;
    report.depth = depth;
    for (int m = 1; m <= depth; ++m) {
        const auto width = static_cast<Eigen::Index>(flattened_size(dim, level_range(0, m)));
        auto fit = ridge_solve(features.leftCols(width), y, options.ridge);
        report.rmse_by_depth.push_back(fit.rmse);
        if (m == depth) {
            report.coefficients.assign(fit.coefficients.data(), fit.coefficients.data() + width);
            report.training_rmse = fit.rmse;
        }
    }
    return report;
}

}  // namespace isct

#include "isct/tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "isct/error.hpp"

namespace isct {

namespace {

void require_same_shape(const TruncatedTensor& a, const TruncatedTensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch (dim " + std::to_string(a.dim()) +
                         ", depth " + std::to_string(a.depth()) + " vs dim " +
                         std::to_string(b.dim()) + ", depth " + std::to_string(b.depth()) + ")");
    }
}

std::vector<int> normalized_levels(std::span<const int> levels, int depth) {
    if (levels.empty()) {
        throw InvalidArgument("flatten: empty level set");
    }
    std::vector<int> out(levels.begin(), levels.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.front() < 0 || out.back() > depth) {
        throw InvalidArgument("flatten: level outside 0.." + std::to_string(depth));
    }
    return out;
}

}  // namespace

std::size_t ipow(std::size_t base, int exponent) {
    std::size_t r = 1;
    for (int i = 0; i < exponent; ++i) r *= base;
    return r;
}

TruncatedTensor::TruncatedTensor(int dim, int depth) : dim_(dim), depth_(depth) {
    if (dim < 1) throw InvalidArgument("TruncatedTensor: dim must be >= 1");
    if (depth < 0) throw InvalidArgument("TruncatedTensor: depth must be >= 0");
    offsets_.resize(static_cast<std::size_t>(depth) + 2);
    offsets_[0] = 0;
    for (int k = 0; k <= depth; ++k) {
        offsets_[k + 1] = offsets_[k] + ipow(static_cast<std::size_t>(dim), k);
    }
    coeffs_.assign(offsets_.back(), 0.0);
}

std::size_t TruncatedTensor::level_offset(int k) const {
    if (k < 0 || k > depth_) throw InvalidArgument("level index out of range");
    return offsets_[k];
}

std::size_t TruncatedTensor::level_size(int k) const {
    if (k < 0 || k > depth_) throw InvalidArgument("level index out of range");
    return offsets_[k + 1] - offsets_[k];
}

std::span<double> TruncatedTensor::level(int k) {
    return std::span<double>(coeffs_).subspan(level_offset(k), level_size(k));
}

std::span<const double> TruncatedTensor::level(int k) const {
    return std::span<const double>(coeffs_).subspan(level_offset(k), level_size(k));
}

std::size_t MultiIndex::rank(int dim) const {
    std::size_t r = 0;
    for (int letter : word) {
        if (letter < 0 || letter >= dim) throw InvalidArgument("MultiIndex: letter out of range");
        r = r * static_cast<std::size_t>(dim) + static_cast<std::size_t>(letter);
    }
    return r;
}

MultiIndex MultiIndex::from_rank(std::size_t rank, int length, int dim) {
    MultiIndex m;
    m.word.assign(static_cast<std::size_t>(length), 0);
    for (int i = length - 1; i >= 0; --i) {
        m.word[i] = static_cast<int>(rank % static_cast<std::size_t>(dim));
        rank /= static_cast<std::size_t>(dim);
    }
    if (rank != 0) throw InvalidArgument("MultiIndex: rank exceeds d^length");
    return m;
}

TruncatedTensor tt_unit(int dim, int depth) {
    TruncatedTensor t(dim, depth);
    t.set_scalar(1.0);
    return t;
}

TruncatedTensor tt_add(const TruncatedTensor& a, const TruncatedTensor& b) {
    require_same_shape(a, b, "tt_add");
    TruncatedTensor out = a;
    auto dst = out.coefficients();
    auto src = b.coefficients();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return out;
}

TruncatedTensor tt_scale(const TruncatedTensor& a, double c) {
    TruncatedTensor out = a;
    for (double& x : out.coefficients()) x *= c;
    return out;
}

TruncatedTensor tt_product(const TruncatedTensor& a, const TruncatedTensor& b) {
    require_same_shape(a, b, "tt_product");
    TruncatedTensor out(a.dim(), a.depth());
    for (int k = 0; k <= a.depth(); ++k) {
        auto dst = out.level(k);
        for (int i = 0; i <= k; ++i) {
            auto left = a.level(i);
            auto right = b.level(k - i);
            const std::size_t rn = right.size();
            for (std::size_t p = 0; p < left.size(); ++p) {
                const double l = left[p];
                if (l == 0.0) continue;
                double* row = dst.data() + p * rn;
                for (std::size_t q = 0; q < rn; ++q) row[q] += l * right[q];
            }
        }
    }
    return out;
}

std::vector<double> tensor_power(std::span<const double> v, int j, int depth) {
    if (j < 0 || j > depth) {
        throw InvalidArgument("tensor_power: power " + std::to_string(j) + " outside 0.." +
                              std::to_string(depth));
    }
    std::vector<double> cur{1.0};
    for (int step = 0; step < j; ++step) {
        std::vector<double> next(cur.size() * v.size());
        for (std::size_t p = 0; p < cur.size(); ++p) {
            for (std::size_t q = 0; q < v.size(); ++q) next[p * v.size() + q] = cur[p] * v[q];
        }
        cur = std::move(next);
    }
    return cur;
}

TruncatedTensor tt_exp(std::span<const double> v, int dim, int depth) {
    if (v.size() != static_cast<std::size_t>(dim)) {
        throw ShapeError("tt_exp: vector length " + std::to_string(v.size()) + " != dim " +
                         std::to_string(dim));
    }
    TruncatedTensor out = tt_unit(dim, depth);
    // level j = level(j-1) (x) v / j
    for (int j = 1; j <= depth; ++j) {
        auto prev = out.level(j - 1);
        auto dst = out.level(j);
        const double inv = 1.0 / static_cast<double>(j);
        for (std::size_t p = 0; p < prev.size(); ++p) {
            for (std::size_t q = 0; q < v.size(); ++q) dst[p * v.size() + q] = prev[p] * v[q] * inv;
        }
    }
    return out;
}

double tt_norm_level(const TruncatedTensor& a, int k) {
    if (k < 0 || k > a.depth()) {
        throw InvalidArgument("tt_norm_level: level " + std::to_string(k) + " outside 0.." +
                              std::to_string(a.depth()));
    }
    double s = 0.0;
    for (double x : a.level(k)) s += std::abs(x);
    return s;
}

std::vector<double> flatten(const TruncatedTensor& a, std::span<const int> levels) {
    const auto lv = normalized_levels(levels, a.depth());
    std::vector<double> out;
    out.reserve(flattened_size(a.dim(), lv));
    for (int k : lv) {
        auto src = a.level(k);
        out.insert(out.end(), src.begin(), src.end());
    }
    return out;
}

TruncatedTensor unflatten(std::span<const double> flat, int dim, int depth,
                          std::span<const int> levels) {
    const auto lv = normalized_levels(levels, depth);
    if (flat.size() != flattened_size(dim, lv)) {
        throw ShapeError("unflatten: expected " + std::to_string(flattened_size(dim, lv)) +
                         " coefficients, got " + std::to_string(flat.size()));
    }
    TruncatedTensor out(dim, depth);
    std::size_t pos = 0;
    for (int k : lv) {
        auto dst = out.level(k);
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
        pos += dst.size();
    }
    return out;
}

std::vector<int> all_levels(int depth) { return level_range(0, depth); }

std::vector<int> level_range(int first, int last) {
    std::vector<int> out;
    for (int k = first; k <= last; ++k) out.push_back(k);
    return out;
}

std::size_t flattened_size(int dim, std::span<const int> levels) {
    std::size_t n = 0;
    for (int k : levels) n += ipow(static_cast<std::size_t>(dim), k);
    return n;
}

double max_abs_diff(const TruncatedTensor& a, const TruncatedTensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto x = a.coefficients();
    auto y = b.coefficients();
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

}  // namespace isct

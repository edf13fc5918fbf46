#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace isct {

/// d^k for small non-negative k.
std::size_t ipow(std::size_t base, int exponent);

/// Element of the degree-K truncated tensor algebra over R^d.
///
/// Storage is one contiguous buffer holding levels 0..K back to back.
/// Level k occupies d^k coefficients in row-major (lexicographic) order:
/// the coefficient of the word (i_1, ..., i_k), letters 0-based, sits at
/// offset  sum_m i_m * d^(k-m)  within the level, so the first letter is
/// the most significant digit. Level 0 is a single scalar and is stored
/// explicitly; it is 1 for signatures and 0 for incremental contributions.
class TruncatedTensor {
public:
    /// All-zero tensor. Throws InvalidArgument for dim < 1 or depth < 0.
    TruncatedTensor(int dim, int depth);

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] int depth() const { return depth_; }

    [[nodiscard]] std::size_t level_offset(int k) const;
    [[nodiscard]] std::size_t level_size(int k) const;
    [[nodiscard]] std::size_t size() const { return coeffs_.size(); }

    [[nodiscard]] std::span<double> level(int k);
    [[nodiscard]] std::span<const double> level(int k) const;

    /// Every coefficient, levels 0..K concatenated in the flatten order.
    [[nodiscard]] std::span<double> coefficients() { return coeffs_; }
    [[nodiscard]] std::span<const double> coefficients() const { return coeffs_; }

    [[nodiscard]] double scalar() const { return coeffs_[0]; }
    void set_scalar(double v) { coeffs_[0] = v; }

    [[nodiscard]] bool same_shape(const TruncatedTensor& other) const {
        return dim_ == other.dim_ && depth_ == other.depth_;
    }

    friend bool operator==(const TruncatedTensor&, const TruncatedTensor&) = default;

private:
    int dim_;
    int depth_;
    std::vector<std::size_t> offsets_;  // depth+2 entries; offsets_[k+1]-offsets_[k] = d^k
    std::vector<double> coeffs_;
};

/// A word over the alphabet {0..d-1}.
struct MultiIndex {
    std::vector<int> word;

    /// Base-d lexicographic rank among words of the same length; equals the
    /// coefficient offset inside the level.
    [[nodiscard]] std::size_t rank(int dim) const;
    static MultiIndex from_rank(std::size_t rank, int length, int dim);
};

TruncatedTensor tt_unit(int dim, int depth);
TruncatedTensor tt_add(const TruncatedTensor& a, const TruncatedTensor& b);
TruncatedTensor tt_scale(const TruncatedTensor& a, double c);

/// Truncated graded product: (a b)_k = sum_{i+j=k} a_i (x) b_j for k <= depth.
TruncatedTensor tt_product(const TruncatedTensor& a, const TruncatedTensor& b);

/// v^{(x) j} as a flat array of d^j entries; j = 0 gives {1}.
std::vector<double> tensor_power(std::span<const double> v, int j, int depth);

/// sum_{j=0..K} v^{(x) j} / j!  -- the signature of one straight segment.
TruncatedTensor tt_exp(std::span<const double> v, int dim, int depth);

/// l1 norm of level k.
double tt_norm_level(const TruncatedTensor& a, int k);

/// Concatenates the requested levels in increasing order (duplicates are
/// ignored), each in the lexicographic order documented on TruncatedTensor.
std::vector<double> flatten(const TruncatedTensor& a, std::span<const int> levels);

/// Inverse of flatten; levels absent from the set come back as zero.
TruncatedTensor unflatten(std::span<const double> flat, int dim, int depth,
                          std::span<const int> levels);

/// {0, 1, ..., depth}
std::vector<int> all_levels(int depth);
/// {first, ..., last}
std::vector<int> level_range(int first, int last);

/// Number of coefficients flatten() produces for the given level set.
std::size_t flattened_size(int dim, std::span<const int> levels);

double max_abs_diff(const TruncatedTensor& a, const TruncatedTensor& b);

}  // namespace isct

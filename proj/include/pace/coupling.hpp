#pragma once

// Real-basis Clebsch-Gordan coefficients and the chained ("generalized")
// couplings used by the symmetric contraction.
//
// clebsch_gordan(l1, l2, l3) returns C[m1][m2][m3] (0-based m indices, m+l)
// such that out_{m3} = sum C u_{m1} v_{m2} maps l1 x l2 -> l3 equivariantly
// under the real harmonics convention of irreps.hpp. Coefficients come from
// the Racah formula in the complex basis, conjugated by the complex-to-real
// unitary, and are orthonormal over (m1, m2). The global sign of each
// (l1, l2, l3) block makes its first nonzero entry (lexicographic in
// m1, m2, m3) positive; in particular (l, l, 0) has positive trace.
//
// A contraction path of length v is (l_1, L_1=l_1, l_2, L_2, ..., l_v, L_v),
// flattened as eta = (l1, l2, L2, l3, L3, ...). Its coefficient block is
// stored dense in row-major order over (m_1, ..., m_v, M).

#include <cstddef>
#include <map>
#include <memory>
#include <utility>
#include <vector>

namespace pace {

class CGTensor {
public:
    CGTensor(int l1, int l2, int l3, std::vector<double> values);
    int l1() const { return l1_; }
    int l2() const { return l2_; }
    int l3() const { return l3_; }
    /// m indices are 0-based (m + l).
    double operator()(int m1, int m2, int m3) const {
        return values_[static_cast<std::size_t>((m1 * (2 * l2_ + 1) + m2) * (2 * l3_ + 1) + m3)];
    }
    const std::vector<double>& values() const { return values_; }
    bool is_zero() const;

    struct Entry {
        int m1, m2, m3;
        double value;
    };
    /// Nonzero entries (|c| > 1e-15) in (m1, m2, m3) lexicographic order.
    std::vector<Entry> nonzeros() const;

private:
    int l1_, l2_, l3_;
    std::vector<double> values_;
};

/// Triangle-violating triples give the zero tensor. Results are cached.
const CGTensor& clebsch_gordan(int l1, int l2, int l3);

struct ContractionPath {
    std::vector<int> ls;       // l_1 .. l_v
    std::vector<int> couples;  // L_1 .. L_v, with L_1 = l_1
    int order() const { return static_cast<int>(ls.size()); }
    int target() const { return couples.back(); }
    /// Flattened (l1, l2, L2, ..., lv, Lv).
    std::vector<int> eta() const;
    /// Triangle rule at every step and L_1 = l_1.
    bool valid() const;
    bool operator==(const ContractionPath&) const = default;
    auto operator<=>(const ContractionPath& o) const { return eta() <=> o.eta(); }
};

/// Paths per correlation order v = 1..v_max (index v-1) with target L.
/// All l_i and intermediate L_i are bounded by l_max; the final L_v equals
/// L_target. Each list is lexicographic in eta.
std::vector<std::vector<ContractionPath>> enumerate_paths(int l_max, int L_target, int v_max);

/// Dense chained coupling block over (m_1, ..., m_v, M). Throws InputError for
/// an invalid path.
std::vector<double> generalized_cg(const ContractionPath& path);

struct PathBlock {
    ContractionPath path;
    std::vector<double> block;
};

/// Immutable map (L, v) -> paths and blocks, built once per model.
class GeneralizedCGTable {
public:
    GeneralizedCGTable(int l_max, std::vector<int> targets, int v_max);
    int l_max() const { return l_max_; }
    int v_max() const { return v_max_; }
    const std::vector<int>& targets() const { return targets_; }
    bool has(int L, int v) const { return entries_.count({L, v}) != 0; }
    /// Throws ConfigError when (L, v) was not built.
    const std::vector<PathBlock>& at(int L, int v) const;
    /// Mutable access for fault-injection tests.
    std::vector<PathBlock>& mutable_at(int L, int v);

private:
    int l_max_;
    int v_max_;
    std::vector<int> targets_;
    std::map<std::pair<int, int>, std::vector<PathBlock>> entries_;
};

}  // namespace pace

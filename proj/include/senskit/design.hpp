// Regular 3-level fractional factorial designs over GF(3).
//
// A regular design with b basic columns and n factors assigns every factor a
// generator vector g in GF(3)^b; run r (one of the 3^b basic-level tuples)
// gets code g . r mod 3 in that factor's column. Basic columns use the unit
// vectors, added columns use combinations found by search. The defining
// contrast words are the null space of the b x n generator matrix, and the
// design resolution is the minimum Hamming weight over its nonzero words;
// equivalently, a design has resolution >= R iff every R-1 generator columns
// are linearly independent, which is what the depth-first search maintains
// incrementally.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "senskit/common.hpp"
#include "senskit/csv.hpp"
#include "senskit/factors.hpp"
#include "senskit/rng.hpp"

namespace senskit {

inline constexpr int kInfiniteResolution = std::numeric_limits<int>::max();

struct DesignMatrix {
    int n_runs = 0;
    int n_factors = 0;
    int n_basic = 0;
    std::vector<std::uint8_t> codes;  // n_runs x n_factors, row-major
    // Generator exponent vectors, one per factor, each of length n_basic.
    // Empty for non-regular (externally loaded) arrays.
    std::vector<std::vector<std::uint8_t>> generators;

    bool regular() const { return !generators.empty(); }

    std::uint8_t at(int run, int factor) const {
        return codes[static_cast<std::size_t>(run) * static_cast<std::size_t>(n_factors) +
                     static_cast<std::size_t>(factor)];
    }

    std::vector<std::uint8_t> row(int run) const {
        const auto* p = &codes[static_cast<std::size_t>(run) * static_cast<std::size_t>(n_factors)];
        return std::vector<std::uint8_t>(p, p + n_factors);
    }

    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a64(codes.data(), codes.size());
        h = fnv1a64(&n_runs, sizeof n_runs, h);
        h = fnv1a64(&n_factors, sizeof n_factors, h);
        return h;
    }
};

struct StrengthReport {
    int strength = 0;
    int resolution = 0;  // kInfiniteResolution when there are no defining words
    std::map<int, long> word_length_pattern;  // word length -> count of nonzero words
    long checked_projections = 0;             // filled in by projection verification
};

struct StrengthViolation {
    std::vector<int> columns;
    std::vector<std::uint8_t> tuple;
    long count = 0;
    long expected = 0;
};

struct StrengthCheck {
    bool ok = true;
    int t = 0;
    long checked_projections = 0;
    long violating_projections = 0;
    std::vector<StrengthViolation> violations;  // capped sample
};

namespace detail {

inline int pow3(int e) {
    int v = 1;
    while (e-- > 0) v *= 3;
    return v;
}

// Encoded GF(3)^b vectors: digit i of the base-3 value is coordinate i,
// coordinate 0 most significant, so integer order equals lexicographic order.
struct Gf3Space {
    int dim;
    int size;                          // 3^dim
    std::vector<std::uint16_t> add;    // size*size pairwise sums
    std::vector<std::uint16_t> twice;  // scalar-2 multiples
    std::vector<std::uint8_t> weight;  // Hamming weights

    explicit Gf3Space(int b) : dim(b), size(pow3(b)) {
        std::vector<std::array<std::uint8_t, 16>> digits(static_cast<std::size_t>(size));
        for (int v = 0; v < size; ++v) {
            int x = v;
            for (int i = dim - 1; i >= 0; --i) {
                digits[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(x % 3);
                x /= 3;
            }
        }
        weight.resize(static_cast<std::size_t>(size));
        twice.resize(static_cast<std::size_t>(size));
        for (int v = 0; v < size; ++v) {
            int w = 0, d = 0;
            for (int i = 0; i < dim; ++i) {
                const int di = digits[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
                if (di) ++w;
                d = d * 3 + (2 * di) % 3;
            }
            weight[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(w);
            twice[static_cast<std::size_t>(v)] = static_cast<std::uint16_t>(d);
        }
        add.resize(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
        for (int a = 0; a < size; ++a)
            for (int b2 = 0; b2 < size; ++b2) {
                int s = 0;
                for (int i = 0; i < dim; ++i)
                    s = s * 3 + (digits[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] +
                                 digits[static_cast<std::size_t>(b2)][static_cast<std::size_t>(i)]) % 3;
                add[static_cast<std::size_t>(a) * static_cast<std::size_t>(size) + static_cast<std::size_t>(b2)] =
                    static_cast<std::uint16_t>(s);
            }
    }

    int plus(int a, int b) const {
        return add[static_cast<std::size_t>(a) * static_cast<std::size_t>(size) + static_cast<std::size_t>(b)];
    }
    std::vector<std::uint8_t> decode(int v) const {
        std::vector<std::uint8_t> out(static_cast<std::size_t>(dim));
        for (int i = dim - 1; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v % 3);
            v /= 3;
        }
        return out;
    }
    int encode(const std::vector<std::uint8_t>& v) const {
        int x = 0;
        for (int i = 0; i < dim; ++i) x = x * 3 + v[static_cast<std::size_t>(i)];
        return x;
    }
};

// Membership sets over encoded vectors, one per combination size, tracking
// which vectors are reachable as nonzero-coefficient combinations of exactly
// s chosen generator columns.
struct ReachSets {
    int size;
    int max_s;
    std::vector<std::vector<std::uint8_t>> by_size;  // [s][vector] flags, s in 1..max_s

    ReachSets(int space_size, int s_max) : size(space_size), max_s(s_max) {
        by_size.assign(static_cast<std::size_t>(max_s) + 1, std::vector<std::uint8_t>(static_cast<std::size_t>(size), 0));
    }

    bool reachable(int v) const {
        for (int s = 1; s <= max_s; ++s)
            if (by_size[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)]) return true;
        return false;
    }

    // Extends the sets with one new column (both its scalar multiples).
    void add_column(const Gf3Space& gs, int g) {
        const int g2 = gs.twice[static_cast<std::size_t>(g)];
        for (int s = max_s; s >= 1; --s) {
            auto& dst = by_size[static_cast<std::size_t>(s)];
            if (s == 1) {
                dst[static_cast<std::size_t>(g)] = 1;
                dst[static_cast<std::size_t>(g2)] = 1;
                continue;
            }
            const auto& src = by_size[static_cast<std::size_t>(s) - 1];
            for (int x = 0; x < size; ++x) {
                if (!src[static_cast<std::size_t>(x)]) continue;
                dst[static_cast<std::size_t>(gs.plus(x, g))] = 1;
                dst[static_cast<std::size_t>(gs.plus(x, g2))] = 1;
            }
        }
    }
};

}  // namespace detail

/// Model-free strength check: every t-column projection must contain each of
/// the 3^t level tuples exactly n_runs/3^t times.
inline StrengthCheck verify_strength(const DesignMatrix& design, int t,
                                     std::size_t max_recorded_violations = 16) {
    if (t < 0 || t > design.n_factors)
        throw std::invalid_argument("verify_strength: t out of range");
    const long cells = detail::pow3(t);
    if (design.n_runs % cells != 0)
        throw std::invalid_argument("verify_strength: n_runs not divisible by 3^t");

    StrengthCheck result;
    result.t = t;
    if (t == 0) {
        result.checked_projections = 1;
        return result;
    }
    const long expected = design.n_runs / cells;

    std::vector<int> cols(static_cast<std::size_t>(t));
    std::iota(cols.begin(), cols.end(), 0);
    std::vector<long> counts(static_cast<std::size_t>(cells));
    while (true) {
        ++result.checked_projections;
        std::fill(counts.begin(), counts.end(), 0L);
        for (int r = 0; r < design.n_runs; ++r) {
            int key = 0;
            for (int c : cols) key = key * 3 + design.at(r, c);
            ++counts[static_cast<std::size_t>(key)];
        }
        bool bad = false;
        for (long k = 0; k < cells; ++k) {
            if (counts[static_cast<std::size_t>(k)] == expected) continue;
            bad = true;
            if (result.violations.size() < max_recorded_violations) {
                StrengthViolation v;
                v.columns = cols;
                v.count = counts[static_cast<std::size_t>(k)];
                v.expected = expected;
                v.tuple.resize(static_cast<std::size_t>(t));
                long key = k;
                for (int i = t - 1; i >= 0; --i) {
                    v.tuple[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(key % 3);
                    key /= 3;
                }
                result.violations.push_back(std::move(v));
            }
        }
        if (bad) {
            result.ok = false;
            ++result.violating_projections;
        }
        // next t-combination of columns
        int i = t - 1;
        while (i >= 0 && cols[static_cast<std::size_t>(i)] == design.n_factors - t + i) --i;
        if (i < 0) break;
        ++cols[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < t; ++j) cols[static_cast<std::size_t>(j)] = cols[static_cast<std::size_t>(j) - 1] + 1;
    }
    return result;
}

/// Enumerates the defining contrast subgroup of a regular design and reports
/// the word length pattern; resolution is the minimum nonzero word length.
inline StrengthReport word_length_pattern(const DesignMatrix& design) {
    if (!design.regular()) throw NotRegular("word_length_pattern requires generator metadata");
    const int n_basic = design.n_basic;
    const int n_add = design.n_factors - n_basic;
    detail::Gf3Space gs(n_basic);

    StrengthReport report;
    if (n_add == 0) {
        report.resolution = kInfiniteResolution;
        report.strength = design.n_factors;
        return report;
    }

    std::vector<int> added(static_cast<std::size_t>(n_add));
    for (int j = 0; j < n_add; ++j)
        added[static_cast<std::size_t>(j)] = gs.encode(design.generators[static_cast<std::size_t>(n_basic + j)]);

    // Every word is determined by its coefficients on the added columns: the
    // basic-column part must cancel the resulting combination.
    const int n_words = detail::pow3(n_add);
    int min_len = kInfiniteResolution;
    for (int w = 1; w < n_words; ++w) {
        int combo = 0;  // sum over added columns of coeff * generator
        int nz = 0;
        int x = w;
        for (int j = n_add - 1; j >= 0; --j) {
            const int coeff = x % 3;
            x /= 3;
            if (coeff == 0) continue;
            ++nz;
            int term = added[static_cast<std::size_t>(j)];
            if (coeff == 2) term = gs.twice[static_cast<std::size_t>(term)];
            combo = gs.plus(combo, term);
        }
        const int len = nz + gs.weight[static_cast<std::size_t>(combo)];
        ++report.word_length_pattern[len];
        min_len = std::min(min_len, len);
    }
    report.resolution = min_len;
    report.strength = min_len - 1;
    return report;
}

namespace detail {

struct DesignSearch {
    const Gf3Space& gs;
    int n_add;
    const std::vector<int>& candidates;
    long budget;
    long visited = 0;
    std::vector<int> chosen;

    bool dfs(std::vector<ReachSets>& stack, std::size_t next_candidate) {
        if (static_cast<int>(chosen.size()) == n_add) return true;
        const std::size_t depth = stack.size() - 1;
        for (std::size_t ci = next_candidate; ci < candidates.size(); ++ci) {
            if (candidates.size() - ci < static_cast<std::size_t>(n_add) - chosen.size())
                break;  // not enough candidates left
            const int g = candidates[ci];
            if (++visited > budget) return false;
            if (stack[depth].reachable(g)) continue;
            ReachSets child = stack[depth];
            child.add_column(gs, g);
            chosen.push_back(g);
            stack.push_back(std::move(child));
            if (dfs(stack, ci + 1)) return true;
            if (visited > budget) return false;
            stack.pop_back();
            chosen.pop_back();
        }
        return false;
    }
};

}  // namespace detail

/// Searches for a 3^n_basic-run regular design on n_factors columns whose
/// defining words all have length >= min_resolution. The first pass scans
/// candidate generators in lexicographic order; if the node budget runs out,
/// seeded shuffled restarts are attempted before giving up.
inline DesignMatrix generate_regular_design(int n_factors, int n_basic, int min_resolution,
                                            std::uint64_t seed = 0, long budget = 1000000) {
    if (n_factors < 3) throw std::invalid_argument("generate_regular_design: n_factors < 3");
    if (n_basic < 1 || n_basic > n_factors)
        throw std::invalid_argument("generate_regular_design: need 1 <= n_basic <= n_factors");
    if (n_basic > 7) throw std::invalid_argument("generate_regular_design: n_basic too large");
    if (min_resolution >= 3 && detail::pow3(n_basic) < 1 + 2 * n_factors)
        throw InfeasibleDesign("run count below the main-effect estimability bound");

    detail::Gf3Space gs(n_basic);
    const int n_add = n_factors - n_basic;

    std::vector<std::vector<std::uint8_t>> generators;
    for (int i = 0; i < n_basic; ++i) {
        std::vector<std::uint8_t> e(static_cast<std::size_t>(n_basic), 0);
        e[static_cast<std::size_t>(i)] = 1;
        generators.push_back(std::move(e));
    }

    if (n_add > 0) {
        // Candidate generators: normalized (first nonzero coefficient 1, so
        // scalar multiples appear once) with enough support that the word
        // pairing the new column against its own definition is long enough.
        const int min_weight = std::max(1, min_resolution - 1);
        std::vector<int> candidates;
        for (int v = 1; v < gs.size; ++v) {
            if (gs.weight[static_cast<std::size_t>(v)] < min_weight) continue;
            const auto digits = gs.decode(v);
            std::uint8_t first = 0;
            for (auto d : digits)
                if (d) { first = d; break; }
            if (first == 1) candidates.push_back(v);
        }

        const int max_dep = std::max(0, min_resolution - 2);
        const int n_attempts = 4;  // lexicographic pass + seeded shuffled restarts
        const long slice = std::max(1000L, budget / n_attempts);
        bool found = false;
        std::vector<int> chosen_final;
        for (int attempt = 0; attempt < n_attempts && !found; ++attempt) {
            std::vector<int> order = candidates;
            if (attempt > 0) {
                std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[uniform_below(rng, i)]);
            }
            detail::DesignSearch search{gs, n_add, order, slice};
            std::vector<detail::ReachSets> stack;
            stack.emplace_back(gs.size, max_dep);
            // Seed reach sets with the basic (unit vector) columns.
            for (int i = 0; i < n_basic; ++i) {
                int e = 1;
                for (int k = 0; k < n_basic - 1 - i; ++k) e *= 3;
                stack.back().add_column(gs, e);
            }
            if (search.dfs(stack, 0)) {
                chosen_final = search.chosen;
                found = true;
            } else if (search.visited <= search.budget) {
                // The scan was exhaustive, so no generator set exists at all.
                throw InfeasibleDesign("no generator set reaches the requested resolution");
            }
        }
        if (!found)
            throw InfeasibleDesign("generator search exceeded its candidate budget");
        for (int g : chosen_final) {
            auto digits = gs.decode(g);
            generators.push_back(std::vector<std::uint8_t>(digits.begin(), digits.end()));
        }
    }

    DesignMatrix design;
    design.n_factors = n_factors;
    design.n_basic = n_basic;
    design.n_runs = detail::pow3(n_basic);
    design.generators = generators;
    design.codes.resize(static_cast<std::size_t>(design.n_runs) * static_cast<std::size_t>(n_factors));
    for (int r = 0; r < design.n_runs; ++r) {
        // Basic levels of run r: base-3 digits, first column slowest.
        int x = r;
        std::vector<std::uint8_t> basic(static_cast<std::size_t>(n_basic));
        for (int i = n_basic - 1; i >= 0; --i) {
            basic[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(x % 3);
            x /= 3;
        }
        for (int f = 0; f < n_factors; ++f) {
            int dot = 0;
            const auto& g = design.generators[static_cast<std::size_t>(f)];
            for (int i = 0; i < n_basic; ++i) dot += g[static_cast<std::size_t>(i)] * basic[static_cast<std::size_t>(i)];
            design.codes[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_factors) + static_cast<std::size_t>(f)] =
                static_cast<std::uint8_t>(dot % 3);
        }
    }

    // The search maintains the resolution invariant incrementally; re-derive
    // it from the defining words as an independent gate before returning.
    if (n_add > 0) {
        const StrengthReport report = word_length_pattern(design);
        if (report.resolution < min_resolution)
            throw InfeasibleDesign("generator set failed the word-length check");
    }
    return design;
}

/// Design export: factor ids header plus one row of 0/1/2 codes per run.
inline void write_design_csv(const DesignMatrix& design, const std::vector<std::string>& ids,
                             const std::filesystem::path& path) {
    if (static_cast<int>(ids.size()) != design.n_factors)
        throw LengthMismatch("write_design_csv: id count != n_factors");
    CsvWriter w(ids);
    for (int r = 0; r < design.n_runs; ++r) {
        for (int f = 0; f < design.n_factors; ++f) w.cell(static_cast<int>(design.at(r, f)));
        w.endrow();
    }
    w.save(path);
}

/// Companion export with physical level values substituted for the codes.
inline void write_design_physical_csv(const DesignMatrix& design, const FactorSet& set,
                                      const std::filesystem::path& path) {
    if (static_cast<int>(set.size()) != design.n_factors)
        throw LengthMismatch("write_design_physical_csv: factor set size mismatch");
    CsvWriter w(set.ids());
    for (int r = 0; r < design.n_runs; ++r) {
        for (int f = 0; f < design.n_factors; ++f)
            w.cell(set[static_cast<std::size_t>(f)].labels[design.at(r, f)]);
        w.endrow();
    }
    w.save(path);
}

}  // namespace senskit

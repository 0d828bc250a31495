#pragma once

// Tile-pattern statistics: pattern KL-divergence and slice uniqueness.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "toad/corpus.hpp"

namespace toad {

struct PatternDistribution {
    int pattern_size = 0;
    // Key: the p*p token indices in row-major order, one byte each.
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t total = 0;

    void add(const PatternDistribution& other);
};

PatternDistribution pattern_distribution(const LevelGrid& grid, int p);

inline constexpr double kDefaultSmoothing = 1e-5;

// w * KL(p || q) + (1 - w) * KL(q || p) over smoothed distributions on the union support.
double tpkl_div(const PatternDistribution& p, const PatternDistribution& q, double w = 1.0,
                double eps = kDefaultSmoothing);

struct TpklReport {
    std::vector<int> sizes;
    std::vector<double> per_size;
    double mean = 0.0;
};

// Pools the patterns of every generated level, then compares with the original per size.
TpklReport tpkl_report(const std::vector<LevelGrid>& generated, const LevelGrid& original,
                       const std::vector<int>& sizes = {2, 3, 4}, double w = 1.0,
                       double eps = kDefaultSmoothing);
double mean_tpkl(const std::vector<LevelGrid>& generated, const LevelGrid& original,
                 const std::vector<int>& sizes = {2, 3, 4}, double w = 1.0, double eps = kDefaultSmoothing);

struct DivergenceMatrix {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> values;  // values[i][j]: generated_i vs original_j
};

DivergenceMatrix divergence_matrix(const std::map<std::string, std::vector<LevelGrid>>& generated,
                                   const std::map<std::string, LevelGrid>& originals);

// Fraction of slices whose exact grid occurs once in the list.
double uniqueness(const std::vector<LevelGrid>& slices);
// Fraction of distinct grids among the slices.
double distinct_fraction(const std::vector<LevelGrid>& slices);

// A level of the given size drawn i.i.d. from the token frequencies of `reference`.
LevelGrid frequency_matched_random(const LevelGrid& reference, int h, int w, std::uint64_t seed);

}  // namespace toad

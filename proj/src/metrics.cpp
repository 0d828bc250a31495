#include "toad/metrics.hpp"

#include <cmath>
#include <random>
#include <set>

#include "toad/errors.hpp"

namespace toad {

void PatternDistribution::add(const PatternDistribution& other) {
    if (other.pattern_size != pattern_size) throw SizeMismatch("pattern sizes differ");
    for (const auto& [key, n] : other.counts) counts[key] += n;
    total += other.total;
}

PatternDistribution pattern_distribution(const LevelGrid& grid, int p) {
    if (p < 1) throw Error("pattern size must be positive");
    if (p > grid.height() || p > grid.width())
        throw PatternTooLarge("pattern size " + std::to_string(p) + " exceeds the " + std::to_string(grid.height()) +
                              "x" + std::to_string(grid.width()) + " grid");
    PatternDistribution dist;
    dist.pattern_size = p;
    std::string key(static_cast<std::size_t>(p * p), '\0');
    for (int r = 0; r + p <= grid.height(); ++r)
        for (int c = 0; c + p <= grid.width(); ++c) {
            std::size_t k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) key[k++] = static_cast<char>(grid.at(r + y, c + x));
            ++dist.counts[key];
            ++dist.total;
        }
    return dist;
}

double tpkl_div(const PatternDistribution& p, const PatternDistribution& q, double w, double eps) {
    if (p.pattern_size != q.pattern_size) throw SizeMismatch("pattern sizes differ");
    if (!(eps > 0.0)) throw Error("smoothing must be positive");
    std::size_t support = p.counts.size();
    for (const auto& [key, n] : q.counts)
        if (!p.counts.count(key)) ++support;
    const double n = static_cast<double>(support);
    const double p_den = static_cast<double>(p.total) + eps * n;
    const double q_den = static_cast<double>(q.total) + eps * n;

    double forward = 0.0;
    double backward = 0.0;
    auto term = [&](double pc, double qc) {
        const double a = (pc + eps) / p_den;
        const double b = (qc + eps) / q_den;
        forward += a * std::log(a / b);
        backward += b * std::log(b / a);
    };
    // Walk both sorted maps together.
    auto i = p.counts.begin();
    auto j = q.counts.begin();
    while (i != p.counts.end() || j != q.counts.end()) {
        if (j == q.counts.end() || (i != p.counts.end() && i->first < j->first)) {
            term(static_cast<double>(i->second), 0.0);
            ++i;
        } else if (i == p.counts.end() || j->first < i->first) {
            term(0.0, static_cast<double>(j->second));
            ++j;
        } else {
            term(static_cast<double>(i->second), static_cast<double>(j->second));
            ++i;
            ++j;
        }
    }
    return std::max(0.0, w * forward + (1.0 - w) * backward);
}

TpklReport tpkl_report(const std::vector<LevelGrid>& generated, const LevelGrid& original, const std::vector<int>& sizes,
                       double w, double eps) {
    if (generated.empty()) throw Error("no generated levels to compare");
    if (sizes.empty()) throw Error("no pattern sizes given");
    TpklReport report;
    report.sizes = sizes;
    for (int p : sizes) {
        PatternDistribution pooled;
        pooled.pattern_size = p;
        for (const auto& g : generated) pooled.add(pattern_distribution(g, p));
        report.per_size.push_back(tpkl_div(pattern_distribution(original, p), pooled, w, eps));
    }
    double sum = 0.0;
    for (double v : report.per_size) sum += v;
    report.mean = sum / static_cast<double>(sizes.size());
    return report;
}

double mean_tpkl(const std::vector<LevelGrid>& generated, const LevelGrid& original, const std::vector<int>& sizes,
                 double w, double eps) {
    return tpkl_report(generated, original, sizes, w, eps).mean;
}

DivergenceMatrix divergence_matrix(const std::map<std::string, std::vector<LevelGrid>>& generated,
                                   const std::map<std::string, LevelGrid>& originals) {
    if (generated.empty()) throw Error("no generated sets");
    DivergenceMatrix m;
    for (const auto& [id, levels] : generated) {
        if (!originals.count(id)) throw Error("no original level for '" + id + "'");
        m.ids.push_back(id);
    }
    if (originals.size() != generated.size()) throw Error("generated and original ids differ");
    for (const auto& gi : m.ids) {
        std::vector<double> row;
        for (const auto& oj : m.ids) row.push_back(mean_tpkl(generated.at(gi), originals.at(oj)));
        m.values.push_back(std::move(row));
    }
    return m;
}

namespace {

std::map<std::vector<int>, int> multiplicities(const std::vector<LevelGrid>& slices) {
    if (slices.empty()) throw Error("no slices given");
    std::map<std::vector<int>, int> seen;
    for (const auto& s : slices) {
        if (s.height() != slices.front().height() || s.width() != slices.front().width())
            throw ShapeMismatch("slices differ in shape");
        ++seen[std::vector<int>(s.cells().begin(), s.cells().end())];
    }
    return seen;
}

}  // namespace

double uniqueness(const std::vector<LevelGrid>& slices) {
    const auto seen = multiplicities(slices);
    std::size_t once = 0;
    for (const auto& [grid, n] : seen) once += n == 1;
    return static_cast<double>(once) / static_cast<double>(slices.size());
}

double distinct_fraction(const std::vector<LevelGrid>& slices) {
    return static_cast<double>(multiplicities(slices).size()) / static_cast<double>(slices.size());
}

LevelGrid frequency_matched_random(const LevelGrid& reference, int h, int w, std::uint64_t seed) {
    std::map<int, double> freq;
    for (int v : reference.cells()) freq[v] += 1.0;
    std::vector<int> tokens;
    std::vector<double> weights;
    for (const auto& [t, n] : freq) {
        tokens.push_back(t);
        weights.push_back(n);
    }
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    LevelGrid out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = tokens[pick(rng)];
    return out;
}

}  // namespace toad

// Acceptance checks: one PASS/FAIL line per criterion, tolerances fixed below.
//
//   acceptance                          run every criterion (trains the desk model in-process)
//   acceptance <name>... [--model DIR]  run selected criteria; desk criteria load DIR if given
//   acceptance --train-desk DIR         train the desk model and save it to DIR

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "toad/cascade.hpp"
#include "toad/checkpoint.hpp"
#include "toad/embedding.hpp"
#include "toad/metrics.hpp"

using namespace toad;
namespace fs = std::filesystem;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

// Tolerances and budgets.
constexpr int kDownsampleGrids = 1000;
constexpr double kDownsampleTol = 1e-6;
constexpr int kTpklCases = 1000;
constexpr double kTpklTol = 1e-12;
constexpr double kSelfTpklTol = 1e-6;
constexpr int kPenaltyDraws = 50;
constexpr double kPenaltyRelTol = 1e-3;
constexpr int kDeskSteps = 1000;
constexpr int kDeskSamples = 100;
constexpr int kDeskWidth = 200;
constexpr int kDeskHeight = 16;
constexpr double kDeskTpklMax = 1.0;
constexpr int kUniquenessSlicesPerLevel = 100;  // 10,000 slices over the 100 levels
constexpr double kUniquenessMin = 0.5;
constexpr int kToySteps = 500;
constexpr int kToySeeds = 20;
constexpr double kInjectionRatioMin = 2.0;
constexpr double kHeldoutMin = 0.5;

const char* kDeskLevel = "vglc-01";

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path source_dir() { return TOAD_SOURCE_DIR; }

std::map<std::string, LevelGrid> corpus(const TokenAlphabet& alphabet) {
    std::map<std::string, LevelGrid> out;
    for (const auto& entry : fs::directory_iterator(source_dir() / "data/levels"))
        if (entry.path().extension() == ".txt") out[entry.path().stem().string()] = load_level(entry.path(), alphabet);
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

LevelGrid random_grid(std::mt19937_64& rng, int h, int w, int tokens) {
    std::uniform_int_distribution<int> pick(0, tokens - 1);
    LevelGrid g(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(r, c) = pick(rng);
    return g;
}

// ---- oracles ----

Outcome downsample_oracle() {
    const TokenAlphabet a({{'-', "sky", 0}, {'X', "ground", 1}, {'S', "brick", 2}, {'E', "enemy", 3}, {'?', "bonus", 4}});
    std::mt19937_64 rng(2024);
    const double factors[] = {0.5, 0.75, 0.88, 0.3, 0.6};
    int argmax_mismatch = 0;
    double worst = 0.0;
    for (int i = 0; i < kDownsampleGrids; ++i) {
        const auto grid = random_grid(rng, 8, 8, a.size());
        const double f = factors[i % 5];
        const auto got = hierarchical_downsample(encode_onehot(grid, a), a, f);
        const auto want = oracle::downsample(grid, a, scaled_dim(8, f), scaled_dim(8, f));
        if (got.height() != want.height() || got.width() != want.width()) return {false, "shape mismatch"};
        argmax_mismatch += !(decode_argmax(got) == decode_argmax(want));
        for (std::size_t k = 0; k < got.values().size(); ++k)
            worst = std::max(worst, std::abs(got.values()[k] - want.values()[k]));
    }
    return {argmax_mismatch == 0 && worst <= kDownsampleTol,
            std::to_string(kDownsampleGrids) + " grids, argmax mismatches " + std::to_string(argmax_mismatch) +
                ", max |diff| " + fmt("%.3g", worst) + " (tol " + fmt("%.0e", kDownsampleTol) + ")"};
}

std::map<std::string, double> as_table(const PatternDistribution& d) {
    std::map<std::string, double> t;
    for (const auto& [k, n] : d.counts) t[k] = static_cast<double>(n);
    return t;
}

Outcome tpkl_oracle() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> dim(4, 9);
    double worst = 0.0;
    for (int i = 0; i < kTpklCases; ++i) {
        const int p = 1 + i % 3;
        const int tokens = 2 + i % 3;
        const auto a = pattern_distribution(random_grid(rng, dim(rng), dim(rng), tokens), p);
        const auto b = pattern_distribution(random_grid(rng, dim(rng), dim(rng), tokens), p);
        const double w = i % 4 == 0 ? 1.0 : u(rng);
        worst = std::max(worst, std::abs(tpkl_div(a, b, w) - oracle::smoothed_kl(as_table(a), as_table(b), w, kDefaultSmoothing)));
    }
    double self_worst = 0.0;
    const auto levels = corpus(platformer_alphabet());
    for (const auto& [id, level] : levels) self_worst = std::max(self_worst, mean_tpkl({level}, level));
    return {worst <= kTpklTol && self_worst <= kSelfTpklTol && levels.size() == 15,
            std::to_string(kTpklCases) + " cases, max |diff| " + fmt("%.3g", worst) + " (tol " + fmt("%.0e", kTpklTol) +
                "); max mean_tpkl(X, X) over " + std::to_string(levels.size()) + " levels " + fmt("%.3g", self_worst) +
                " (tol " + fmt("%.0e", kSelfTpklTol) + ")"};
}

Outcome gradient_penalty_fd() {
    std::mt19937_64 rng(31);
    double worst = 0.0;
    for (int draw = 0; draw < kPenaltyDraws; ++draw) {
        nn::ConvNet<double> net({3, 4, 1}, 3, 0.2, rng);  // two convolutions
        const CriticFn<double> critic = [&](const Var<double>& x) { return net.forward_train(nn::pad2d(x, 2)); };
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Tensor<double> real(Shape{2, 3, 4, 4});
        Tensor<double> fake(Shape{2, 3, 4, 4});
        for (auto& v : real.span()) v = u(rng);
        for (auto& v : fake.span()) v = u(rng);
        const std::vector<double> eps{u(rng), u(rng)};
        const auto params = net.parameters();
        const auto analytic = nn::grad(gradient_penalty(critic, real, fake, eps, 0.1), params);
        double diff = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& value = const_cast<Var<double>&>(params[k]).mutable_value();
            for (std::size_t i = 0; i < value.numel(); ++i) {
                const double keep = value[i];
                const double h = 1e-6;
                value[i] = keep + h;
                const double up = gradient_penalty(critic, real, fake, eps, 0.1).item();
                value[i] = keep - h;
                const double down = gradient_penalty(critic, real, fake, eps, 0.1).item();
                value[i] = keep;
                const double numeric = (up - down) / (2 * h);
                diff += std::pow(numeric - analytic[k].value()[i], 2);
                norm += numeric * numeric;
            }
        }
        worst = std::max(worst, std::sqrt(diff / std::max(norm, 1e-300)));
    }
    return {worst < kPenaltyRelTol, std::to_string(kPenaltyDraws) + " draws, worst relative error " + fmt("%.3g", worst) +
                                        " (tol " + fmt("%.0e", kPenaltyRelTol) + ")"};
}

// ---- toy cascades ----

TokenAlphabet two_tokens() { return TokenAlphabet({{'-', "sky", 0}, {'X', "ground", 1}}); }

LevelGrid toy_level(int h, int w) {
    LevelGrid g(h, w);
    for (int c = 0; c < w; ++c) {
        g.at(h - 1, c) = 1;
        g.at(h - 2, c) = c % 11 < 8;
        if (c % 13 >= 4 && c % 13 < 8) g.at(h - 6, c) = 1;
    }
    return g;
}

CascadeModel train_toy(int steps, int filters, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.steps_per_scale = steps;
    cfg.rng_seed = seed;
    NetConfig net;
    net.filters = filters;
    const auto level = toy_level(16, 64);
    return train_cascade(level, two_tokens(), compute_scales(level, net.receptive_field(), ScalePolicy::platformer_default()),
                         net, cfg);
}

Outcome structural() {
    std::vector<std::string> failures;
    const auto model = train_toy(20, 8, 3);

    // Zero residual: every scale returns its (upsampled) input bit for bit.
    auto zeroed = model;
    std::mt19937_64 rng(5);
    for (std::size_t n = 0; n < zeroed.scales.size(); ++n) {
        auto& s = zeroed.scales[n];
        s.generator.zero_all();
        const int h = s.height, w = s.width;
        const auto coarse = sample_noise(2, std::max(1, h / 2), std::max(1, w / 2), 1.0, rng);
        const auto prev = nn::resize_bilinear(coarse, h, w);
        if (!(generator_forward(s, prev, sample_noise(2, h, w, 0.5, rng), model.net.padding()) == prev))
            failures.push_back("zero-residual scale " + std::to_string(n));
    }

    // Shape sweep at every scale.
    int checked = 0;
    for (int width : {16, 40, 80, 200}) {
        const auto dims = cascade_dims(model, 16, width);
        for (std::size_t n = 0; n < dims.size(); ++n) {
            const auto [h, w] = dims[n];
            const auto prev = sample_noise(2, h, w, 1.0, rng);
            const auto out = generator_forward(model.scales[n], prev, sample_noise(2, h, w, 1.0, rng), model.net.padding());
            if (!(out.shape() == Shape{1, 2, h, w})) failures.push_back("shape at width " + std::to_string(width));
            ++checked;
        }
        GenerationRequest req;
        req.target_w = width;
        req.rng_seed = 9;
        const auto g = generate(model, req).grid;
        if (g.height() != 16 || g.width() != width) failures.push_back("output dims at width " + std::to_string(width));
    }

    // End-to-end seed determinism: training and generation.
    const auto again = train_toy(20, 8, 3);
    for (std::size_t n = 0; n < model.scales.size(); ++n)
        if (model.scales[n].final_hash != again.scales[n].final_hash) failures.push_back("training hash scale " + std::to_string(n));
    for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
        GenerationRequest req;
        req.target_w = 80;
        req.rng_seed = seed;
        const auto a = generate(model, req);
        const auto b = generate(again, req);
        if (!(a.grid == b.grid) || !std::equal(a.map.values().begin(), a.map.values().end(), b.map.values().begin()))
            failures.push_back("generation seed " + std::to_string(seed));
    }
    std::string detail = "zero-residual on " + std::to_string(model.scales.size()) + " scales, " + std::to_string(checked) +
                         " scale shapes over widths {16, 40, 80, 200}, retrain + regenerate bit-identical";
    if (!failures.empty()) detail += "; failed: " + failures.front() + (failures.size() > 1 ? " ..." : "");
    return {failures.empty(), detail};
}

Outcome toy_injection() {
    const auto model = train_toy(kToySteps, NetConfig{}.filters, 0);
    const int x = model.alphabet.index_of('X').value();
    const int scale = 0;
    const auto [mh, mw] = cascade_dims(model, 16, 64)[scale];
    LevelGrid bar(mh, mw);
    const int c0 = mw / 2 - 1;
    for (int r = 0; r < mh; ++r)
        for (int c = c0; c < c0 + 3; ++c) bar.at(r, c) = 1;
    const auto target = upsample_mask(bar, 16, 64);

    double with = 0.0, without = 0.0;
    for (int seed = 0; seed < kToySeeds; ++seed) {
        GenerationRequest req;
        req.target_w = 64;
        req.rng_seed = static_cast<std::uint64_t>(seed);
        without += mask_iou(target, token_mask(generate(model, req).grid, x));
        req.injection = InjectionSpec{scale, x, bar, InjectionSpec::Blend::replace_channel};
        with += mask_iou(target, token_mask(generate_with_injection(model, req).grid, x));
    }
    with /= kToySeeds;
    without /= kToySeeds;
    const double ratio = without > 0 ? with / without : (with > 0 ? INFINITY : 0.0);
    return {ratio >= kInjectionRatioMin,
            "mean IoU " + fmt("%.3f", with) + " injected vs " + fmt("%.3f", without) + " plain over " +
                std::to_string(kToySeeds) + " seeds, ratio " + fmt("%.2f", ratio) + " (min " + fmt("%.1f", kInjectionRatioMin) + ")"};
}

Outcome persistence(const fs::path& work) {
    const auto model = train_toy(20, 8, 4);
    const auto dir = work / "persistence";
    fs::remove_all(dir);
    std::vector<std::pair<std::string, std::vector<double>>> before;
    auto run = [](const CascadeModel& m, std::uint64_t seed, int width) {
        GenerationRequest req;
        req.target_w = width;
        req.rng_seed = seed;
        const auto r = generate(m, req);
        return std::make_pair(render_level(r.grid, m.alphabet), std::vector<double>(r.map.values().begin(), r.map.values().end()));
    };
    for (std::uint64_t seed : {0ull, 7ull, 99ull}) before.push_back(run(model, seed, 50 + static_cast<int>(seed)));
    save_checkpoint(model, dir);
    const auto loaded = load_checkpoint(dir);
    int i = 0, same = 0;
    for (std::uint64_t seed : {0ull, 7ull, 99ull}) same += run(loaded, seed, 50 + static_cast<int>(seed)) == before[static_cast<std::size_t>(i++)];
    fs::remove_all(dir);
    return {same == 3, std::to_string(same) + "/3 seeds byte-identical after save -> load (level text and soft maps)"};
}

// ---- desk scale ----

struct Desk {
    CascadeModel model;
    std::vector<LevelGrid> samples;
};

CascadeModel train_desk() {
    const auto full = platformer_alphabet();
    const auto raw = load_level(source_dir() / "data/levels" / (std::string(kDeskLevel) + ".txt"), full);
    const auto alphabet = full.subset(present_tokens(raw));
    const auto level = remap(raw, full, alphabet);
    TrainConfig cfg;
    cfg.steps_per_scale = kDeskSteps;
    const NetConfig net;
    TrainHooks hooks;
    const auto t0 = std::chrono::steady_clock::now();
    hooks.on_scale_trained = [&](const CascadeModel& m) {
        std::fprintf(stderr, "  desk scale %zu trained (%.0f s)\n", m.scales.size() - 1,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };
    return train_cascade(level, alphabet, compute_scales(level, net.receptive_field(), ScalePolicy::platformer_default()), net,
                         cfg, hooks);
}

const Desk& desk(const std::optional<fs::path>& model_dir) {
    static std::optional<Desk> d;
    if (!d) {
        Desk out;
        out.model = model_dir ? load_checkpoint(*model_dir) : train_desk();
        for (int i = 0; i < kDeskSamples; ++i) {
            GenerationRequest req;
            req.target_w = kDeskWidth;
            req.target_h = kDeskHeight;
            req.rng_seed = 1000 + static_cast<std::uint64_t>(i);
            out.samples.push_back(generate(out.model, req).grid);
        }
        d = std::move(out);
    }
    return *d;
}

Outcome desk_tpkl(const std::optional<fs::path>& model_dir) {
    const auto& d = desk(model_dir);
    const auto report = tpkl_report(d.samples, d.model.level, {2, 3, 4}, 1.0);
    const auto baseline = frequency_matched_random(d.model.level, kDeskHeight, kDeskWidth, 7);
    const double base = mean_tpkl({baseline}, d.model.level, {2, 3, 4}, 1.0);
    return {report.mean <= kDeskTpklMax && report.mean < base,
            "mean TPKL-Div " + fmt("%.3f", report.mean) + " (sizes 2/3/4: " + fmt("%.3f", report.per_size[0]) + "/" +
                fmt("%.3f", report.per_size[1]) + "/" + fmt("%.3f", report.per_size[2]) + ") over " +
                std::to_string(kDeskSamples) + " levels, max " + fmt("%.1f", kDeskTpklMax) + ", random baseline " +
                fmt("%.3f", base)};
}

Outcome desk_uniqueness(const std::optional<fs::path>& model_dir) {
    const auto& d = desk(model_dir);
    std::vector<LevelGrid> slices;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        auto s = extract_slices(d.samples[i], 16, 16, kUniquenessSlicesPerLevel, 5000 + i);
        slices.insert(slices.end(), s.begin(), s.end());
    }
    const double u = uniqueness(slices);
    return {u >= kUniquenessMin, "uniqueness " + fmt("%.4f", u) + " over " + std::to_string(slices.size()) +
                                     " 16x16 slices (min " + fmt("%.2f", kUniquenessMin) + "), distinct fraction " +
                                     fmt("%.4f", distinct_fraction(slices))};
}

// ---- embedding ----

struct EvalSet {
    std::vector<LevelGrid> slices;
    std::vector<int> labels;
};

// The slices train_classifier evaluates, rebuilt with the same seeds.
EvalSet eval_slices(const std::map<std::string, LevelGrid>& levels, const ClassifierConfig& cfg, bool heldout) {
    EvalSet out;
    int l = 0;
    for (const auto& [id, g] : levels) {
        const auto seed = cfg.rng_seed + 7919 * static_cast<std::uint64_t>(l + 1) + (heldout ? 1 : 0);
        const auto offsets = slice_offsets(g.width(), cfg, heldout);
        auto s = slices_at(g, cfg.slice_h, cfg.slice_w, offsets, cfg.eval_slices_per_level, seed);
        out.slices.insert(out.slices.end(), s.begin(), s.end());
        out.labels.insert(out.labels.end(), s.size(), l);
        ++l;
    }
    return out;
}

std::string columns_info;

Outcome embedding() {
    const auto alphabet = platformer_alphabet();
    const auto levels = corpus(alphabet);
    ClassifierConfig cfg;
    ClassifierReport report;
    const auto clf = train_classifier(levels, alphabet, cfg, &report);
    const auto held = eval_slices(levels, cfg, true);
    const auto train = eval_slices(levels, cfg, false);
    const double held_acc = clf.accuracy(held.slices, held.labels);

    // Prediction is the argmax of the head applied to the embedding on every evaluated slice.
    int consistent = 0, total = 0;
    const auto w = clf.head_weights();
    const auto b = clf.head_bias();
    const std::size_t dim = static_cast<std::size_t>(clf.feature_dim());
    FeatureMatrix all_phi;
    for (const auto* set : {&held, &train}) {
        const auto phi = clf.embed(set->slices);
        const auto pred = clf.predict(set->slices);
        for (std::size_t i = 0; i < phi.size(); ++i) {
            int best = 0;
            double best_v = -1e300;
            for (std::size_t k = 0; k < b.size(); ++k) {
                double v = b[k];
                for (std::size_t j = 0; j < dim; ++j) v += w[k * dim + j] * phi[i][j];
                if (v > best_v) best_v = v, best = static_cast<int>(k);
            }
            consistent += pred[i] == best;
            ++total;
        }
        all_phi.insert(all_phi.end(), phi.begin(), phi.end());
    }

    // PCA reuse: the projection of a point does not depend on what else is transformed.
    PcaProjector pca;
    pca.fit(all_phi);
    const FeatureMatrix probe(all_phi.begin(), all_phi.begin() + 50);
    const auto alone = pca.transform(probe);
    const auto batch = pca.transform(all_phi);
    PcaProjector refit;
    refit.fit(all_phi);
    bool reuse = refit.transform(probe) == alone;
    for (std::size_t i = 0; i < probe.size(); ++i) reuse = reuse && batch[i] == alone[i];

    // Informational: spatially disjoint split.
    ClassifierConfig columns = cfg;
    columns.holdout = ClassifierConfig::Holdout::columns;
    ClassifierReport col_report;
    train_classifier(levels, alphabet, columns, &col_report);
    columns_info = "rightmost-columns hold-out: train " + fmt("%.3f", col_report.train_accuracy) + ", held-out " +
                   fmt("%.3f", col_report.heldout_accuracy);

    return {held_acc > kHeldoutMin && consistent == total && reuse && held_acc == report.heldout_accuracy,
            "held-out accuracy " + fmt("%.3f", held_acc) + " on " + std::to_string(held.slices.size()) + " slices (min " +
                fmt("%.2f", kHeldoutMin) + ", chance " + fmt("%.3f", 1.0 / static_cast<double>(levels.size())) +
                "), train " + fmt("%.3f", report.train_accuracy) + "; head/argmax consistent on " + std::to_string(consistent) +
                "/" + std::to_string(total) + "; pca reuse " + (reuse ? "exact" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> selected;
    std::optional<fs::path> model_dir;
    fs::path work = fs::temp_directory_path() / "toad-acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--model" && i + 1 < argc) {
            model_dir = argv[++i];
        } else if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (arg == "--train-desk" && i + 1 < argc) {
            const fs::path dir = argv[++i];
            const auto t0 = std::chrono::steady_clock::now();
            const auto model = train_desk();
            fs::remove_all(dir);
            save_checkpoint(model, dir);
            std::printf("[DONE] desk model trained on %s, %d steps per scale, saved to %s (%.0f s)\n", kDeskLevel, kDeskSteps,
                        dir.c_str(), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            return 0;
        } else {
            selected.push_back(arg);
        }
    }
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"downsample_oracle", downsample_oracle},
        {"tpkl_oracle", tpkl_oracle},
        {"gradient_penalty", gradient_penalty_fd},
        {"structural", structural},
        {"desk_tpkl", [&] { return desk_tpkl(model_dir); }},
        {"desk_uniqueness", [&] { return desk_uniqueness(model_dir); }},
        {"toy_injection", toy_injection},
        {"embedding", embedding},
        {"persistence", [&] { return persistence(work); }},
    };

    int failed = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
        if (name == "embedding" && !columns_info.empty()) std::printf("[INFO] embedding: %s\n", columns_info.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    if (ran == 0) {
        std::fprintf(stderr, "no criterion matched\n");
        return 2;
    }
    return failed == 0 ? 0 : 1;
}

#include "toad/embedding.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "toad/checkpoint.hpp"
#include "toad/errors.hpp"
#include "toad/nn/layers.hpp"

namespace toad {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr float kSlope = 0.2f;

}  // namespace

SliceClassifier::SliceClassifier(TokenAlphabet alphabet, std::vector<std::string> labels, const ClassifierConfig& cfg,
                                 std::mt19937_64& rng)
    : alphabet_(std::move(alphabet)), labels_(std::move(labels)), cfg_(cfg) {
    if (cfg.slice_h < 4 || cfg.slice_w < 4) throw Error("classifier slices must be at least 4x4");
    const int in[4] = {alphabet_.size(), cfg.widths[0], cfg.widths[1], cfg.widths[2]};
    const int out[4] = {cfg.widths[0], cfg.widths[1], cfg.widths[2], static_cast<int>(labels_.size())};
    for (int i = 0; i < 4; ++i) {
        const int k = i < 3 ? 3 : 1;
        // He-style scaling keeps activations in range at any width.
        std::normal_distribution<double> init(0.0, std::sqrt(2.0 / (in[i] * k * k)));
        Tensor<float> w(Shape{out[i], in[i], k, k});
        for (auto& v : w.span()) v = static_cast<float>(init(rng));
        weights_.emplace_back(std::move(w), true);
        biases_.emplace_back(Tensor<float>(Shape{1, out[i], 1, 1}), true);
    }
}

Tensor<float> SliceClassifier::encode(const std::vector<LevelGrid>& slices) const {
    const int c = alphabet_.size();
    Tensor<float> t(Shape{static_cast<int>(slices.size()), c, cfg_.slice_h, cfg_.slice_w});
    for (std::size_t n = 0; n < slices.size(); ++n) {
        const auto& s = slices[n];
        if (s.height() != cfg_.slice_h || s.width() != cfg_.slice_w)
            throw ShapeMismatch("slice is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                                ", the classifier expects " + std::to_string(cfg_.slice_h) + "x" +
                                std::to_string(cfg_.slice_w));
        for (int r = 0; r < s.height(); ++r)
            for (int col = 0; col < s.width(); ++col) {
                const int token = s.at(r, col);
                if (token < 0 || token >= c) throw Error("slice holds a token outside the classifier alphabet");
                t(static_cast<int>(n), token, r, col) = 1.0f;
            }
    }
    return t;
}

Var<float> SliceClassifier::features(const Tensor<float>& batch) const {
    Var<float> h(batch);
    for (int i = 0; i < 3; ++i) {
        h = nn::conv2d(nn::pad2d(h, 1), weights_[static_cast<std::size_t>(i)]);
        h = nn::add(h, nn::broadcast_nhw(biases_[static_cast<std::size_t>(i)], h.shape()));
        h = nn::leaky_relu(h, kSlope);
        if (i < 2) h = nn::max_pool2(h);
    }
    const auto s = h.shape();
    return nn::scale(nn::sum_hw(h), 1.0f / static_cast<float>(s.h * s.w));
}

Var<float> SliceClassifier::logits(const Var<float>& phi) const {
    const Var<float> z = nn::conv2d(phi, weights_[3]);
    return nn::add(z, nn::broadcast_nhw(biases_[3], z.shape()));
}

FeatureMatrix SliceClassifier::embed(const std::vector<LevelGrid>& slices) const {
    nn::NoGrad no_grad;
    FeatureMatrix out;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < slices.size(); start += chunk) {
        const std::vector<LevelGrid> part(slices.begin() + static_cast<long>(start),
                                          slices.begin() + static_cast<long>(std::min(slices.size(), start + chunk)));
        const auto phi = features(encode(part));
        const int d = phi.shape().c;
        for (std::size_t n = 0; n < part.size(); ++n) {
            std::vector<double> row(static_cast<std::size_t>(d));
            for (int k = 0; k < d; ++k) row[static_cast<std::size_t>(k)] = phi.value()[n * static_cast<std::size_t>(d) + k];
            out.push_back(std::move(row));
        }
    }
    return out;
}

std::vector<int> SliceClassifier::predict(const std::vector<LevelGrid>& slices) const {
    nn::NoGrad no_grad;
    std::vector<int> out;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < slices.size(); start += chunk) {
        const std::vector<LevelGrid> part(slices.begin() + static_cast<long>(start),
                                          slices.begin() + static_cast<long>(std::min(slices.size(), start + chunk)));
        const auto z = logits(features(encode(part)));
        const int l = z.shape().c;
        for (std::size_t n = 0; n < part.size(); ++n) {
            const float* row = z.value().data() + n * static_cast<std::size_t>(l);
            out.push_back(static_cast<int>(std::max_element(row, row + l) - row));
        }
    }
    return out;
}

std::vector<double> SliceClassifier::head_weights() const {
    const auto& w = weights_[3].value();
    return std::vector<double>(w.span().begin(), w.span().end());
}

std::vector<double> SliceClassifier::head_bias() const {
    const auto& b = biases_[3].value();
    return std::vector<double>(b.span().begin(), b.span().end());
}

double SliceClassifier::accuracy(const std::vector<LevelGrid>& slices, const std::vector<int>& labels) const {
    if (slices.empty()) return 0.0;
    const auto pred = predict(slices);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Var<float> SliceClassifier::loss(const std::vector<LevelGrid>& slices, const std::vector<int>& labels) const {
    return nn::cross_entropy(logits(features(encode(slices))), labels);
}

std::vector<Var<float>> SliceClassifier::parameters() const {
    std::vector<Var<float>> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back(weights_[i]);
        out.push_back(biases_[i]);
    }
    return out;
}

void SliceClassifier::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<std::pair<std::string, const Tensor<float>*>> entries;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        entries.emplace_back("layer" + std::to_string(i) + ".weight", &weights_[i].value());
        entries.emplace_back("layer" + std::to_string(i) + ".bias", &biases_[i].value());
    }
    write_tensor_archive(dir / "classifier.bin", entries);
    const nlohmann::json doc{{"alphabet", alphabet_.to_json()},
                             {"labels", labels_},
                             {"slice_h", cfg_.slice_h},
                             {"slice_w", cfg_.slice_w},
                             {"widths", {cfg_.widths[0], cfg_.widths[1], cfg_.widths[2]}},
                             {"steps", cfg_.steps},
                             {"batch", cfg_.batch},
                             {"learning_rate", cfg_.learning_rate},
                             {"holdout", cfg_.holdout == ClassifierConfig::Holdout::offsets ? "offsets" : "columns"},
                             {"holdout_stride", cfg_.holdout_stride},
                             {"train_fraction", cfg_.train_fraction},
                             {"rng_seed", cfg_.rng_seed}};
    write_file_atomic(dir / "classifier.json", doc.dump(2) + "\n");
}

SliceClassifier SliceClassifier::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "classifier.json");
    if (!in) throw CheckpointError("no classifier in " + dir.string());
    const auto doc = nlohmann::json::parse(in);
    ClassifierConfig cfg;
    cfg.slice_h = doc.at("slice_h");
    cfg.slice_w = doc.at("slice_w");
    for (int i = 0; i < 3; ++i) cfg.widths[i] = doc.at("widths").at(static_cast<std::size_t>(i));
    cfg.steps = doc.value("steps", cfg.steps);
    cfg.batch = doc.value("batch", cfg.batch);
    cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
    cfg.holdout = doc.value("holdout", "offsets") == "columns" ? ClassifierConfig::Holdout::columns
                                                                 : ClassifierConfig::Holdout::offsets;
    cfg.holdout_stride = doc.value("holdout_stride", cfg.holdout_stride);
    cfg.train_fraction = doc.value("train_fraction", cfg.train_fraction);
    cfg.rng_seed = doc.value("rng_seed", cfg.rng_seed);
    std::mt19937_64 rng(0);
    SliceClassifier c(TokenAlphabet::from_json(doc.at("alphabet")), doc.at("labels").get<std::vector<std::string>>(),
                      cfg, rng);
    auto tensors = read_tensor_archive(dir / "classifier.bin");
    for (std::size_t i = 0; i < c.weights_.size(); ++i) {
        for (auto* pair : {&c.weights_[i], &c.biases_[i]}) {
            const std::string name = "layer" + std::to_string(i) + (pair == &c.weights_[i] ? ".weight" : ".bias");
            auto found = tensors.find(name);
            if (found == tensors.end() || !(found->second.shape() == pair->shape()))
                throw CheckpointError("classifier archive lacks a matching '" + name + "'");
            pair->mutable_value() = found->second;
        }
    }
    return c;
}

std::vector<int> slice_offsets(int level_width, const ClassifierConfig& cfg, bool heldout) {
    std::vector<int> out;
    const int last = level_width - cfg.slice_w;
    if (cfg.holdout == ClassifierConfig::Holdout::offsets) {
        if (cfg.holdout_stride < 2) throw Error("holdout_stride must be at least 2");
        for (int c = 0; c <= last; ++c)
            if ((c % cfg.holdout_stride == cfg.holdout_stride - 1) == heldout) out.push_back(c);
    } else {
        if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) throw Error("train_fraction must be in (0, 1]");
        const int cut = static_cast<int>(std::floor(level_width * cfg.train_fraction));
        const int lo = heldout ? cut : 0;
        const int hi = heldout ? last : cut - cfg.slice_w;
        for (int c = lo; c <= hi; ++c) out.push_back(c);
    }
    return out;
}

std::vector<LevelGrid> slices_at(const LevelGrid& level, int h, int w, const std::vector<int>& offsets, int count,
                                 std::uint64_t seed) {
    if (h > level.height() || offsets.empty())
        throw SliceTooLarge("no room for a " + std::to_string(h) + "x" + std::to_string(w) + " slice");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> row(0, level.height() - h);
    std::uniform_int_distribution<std::size_t> pick(0, offsets.size() - 1);
    std::vector<LevelGrid> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int r = row(rng);
        out.push_back(level.crop(r, offsets[pick(rng)], h, w));
    }
    return out;
}

SliceClassifier train_classifier(const std::map<std::string, LevelGrid>& levels, const TokenAlphabet& alphabet,
                                 const ClassifierConfig& cfg, ClassifierReport* report) {
    if (levels.size() < 2) throw InsufficientClasses("need at least two levels, got " + std::to_string(levels.size()));
    std::vector<std::string> labels;
    std::vector<const LevelGrid*> grids;
    std::vector<std::vector<int>> train_offsets;
    for (const auto& [id, grid] : levels) {
        labels.push_back(id);
        grids.push_back(&grid);
        train_offsets.push_back(slice_offsets(grid.width(), cfg, false));
        if (train_offsets.back().empty() || grid.height() < cfg.slice_h)
            throw SliceTooLarge("level '" + id + "' is too small for " + std::to_string(cfg.slice_h) + "x" +
                                std::to_string(cfg.slice_w) + " training slices");
    }

    std::mt19937_64 rng(cfg.rng_seed);
    SliceClassifier classifier(alphabet, labels, cfg, rng);
    nn::Adam<float> opt(classifier.parameters(), cfg.learning_rate, 0.9, 0.999);
    std::uniform_int_distribution<int> pick_level(0, static_cast<int>(grids.size()) - 1);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<LevelGrid> batch;
        std::vector<int> batch_labels;
        for (int b = 0; b < cfg.batch; ++b) {
            const int l = pick_level(rng);
            const auto& g = *grids[static_cast<std::size_t>(l)];
            const auto& offsets = train_offsets[static_cast<std::size_t>(l)];
            std::uniform_int_distribution<int> row(0, g.height() - cfg.slice_h);
            std::uniform_int_distribution<std::size_t> col(0, offsets.size() - 1);
            const int r = row(rng);
            batch.push_back(g.crop(r, offsets[col(rng)], cfg.slice_h, cfg.slice_w));
            batch_labels.push_back(l);
        }
        const auto loss = classifier.loss(batch, batch_labels);
        if (!std::isfinite(loss.item())) throw NonFiniteLoss("classifier loss diverged at step " + std::to_string(step));
        opt.step(nn::grad(loss, classifier.parameters()));
    }

    if (report) {
        std::vector<LevelGrid> train_s, held_s;
        std::vector<int> train_l, held_l;
        for (std::size_t l = 0; l < grids.size(); ++l) {
            const auto& g = *grids[l];
            const auto seed = cfg.rng_seed + 7919 * (l + 1);
            auto a = slices_at(g, cfg.slice_h, cfg.slice_w, train_offsets[l], cfg.eval_slices_per_level, seed);
            train_s.insert(train_s.end(), a.begin(), a.end());
            train_l.insert(train_l.end(), a.size(), static_cast<int>(l));
            const auto held_offsets = slice_offsets(g.width(), cfg, true);
            if (!held_offsets.empty()) {
                auto b = slices_at(g, cfg.slice_h, cfg.slice_w, held_offsets, cfg.eval_slices_per_level, seed + 1);
                held_s.insert(held_s.end(), b.begin(), b.end());
                held_l.insert(held_l.end(), b.size(), static_cast<int>(l));
            }
        }
        report->train_accuracy = classifier.accuracy(train_s, train_l);
        report->heldout_accuracy = classifier.accuracy(held_s, held_l);
        report->train_slices = static_cast<int>(train_s.size());
        report->heldout_slices = static_cast<int>(held_s.size());
    }
    return classifier;
}

void PcaProjector::fit(const FeatureMatrix& features) {
    if (features.size() < 3) throw DegenerateInput("need at least three points to fit a projection");
    const auto d = features.front().size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d) throw ShapeMismatch("feature rows differ in length");
        for (std::size_t k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = features[i][k];
    }
    const Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(features.size() - 1);
    if (cov.trace() <= 0.0) throw DegenerateInput("features have zero variance");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw DegenerateInput("eigendecomposition failed");

    mean_.assign(mu.data(), mu.data() + d);
    components_.clear();
    variance_.clear();
    const auto n = static_cast<Eigen::Index>(d);
    for (int k = 0; k < 2; ++k) {
        std::vector<double> comp(d, 0.0);
        double var = 0.0;
        if (n - 1 - k >= 0) {
            const Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - k);
            Eigen::Index top = 0;
            v.cwiseAbs().maxCoeff(&top);
            const double sign = v(top) < 0.0 ? -1.0 : 1.0;
            for (std::size_t j = 0; j < d; ++j) comp[j] = sign * v(static_cast<Eigen::Index>(j));
            var = std::max(0.0, solver.eigenvalues()(n - 1 - k));
        }
        components_.push_back(std::move(comp));
        variance_.push_back(var);
    }
}

FeatureMatrix PcaProjector::transform(const FeatureMatrix& features) const {
    if (components_.empty()) throw Error("projector is not fitted");
    FeatureMatrix out;
    out.reserve(features.size());
    for (const auto& row : features) {
        if (row.size() != mean_.size()) throw ShapeMismatch("feature row does not match the fitted dimension");
        std::vector<double> p(2, 0.0);
        for (int k = 0; k < 2; ++k)
            for (std::size_t j = 0; j < row.size(); ++j) p[static_cast<std::size_t>(k)] += (row[j] - mean_[j]) * components_[static_cast<std::size_t>(k)][j];
        out.push_back(std::move(p));
    }
    return out;
}

std::unique_ptr<Projector> make_projector(const std::string& name) {
    if (name == "pca") return std::make_unique<PcaProjector>();
    throw Error("unknown projector '" + name + "'");
}

std::map<std::string, bool> nearest_centroid(const std::map<std::string, FeatureMatrix>& original,
                                             const std::map<std::string, FeatureMatrix>& generated) {
    auto centroid = [](const FeatureMatrix& m) {
        if (m.empty()) throw Error("empty feature set");
        std::vector<double> c(m.front().size(), 0.0);
        for (const auto& row : m)
            for (std::size_t j = 0; j < c.size(); ++j) c[j] += row[j];
        for (auto& v : c) v /= static_cast<double>(m.size());
        return c;
    };
    std::map<std::string, std::vector<double>> centres;
    for (const auto& [id, m] : original) centres[id] = centroid(m);
    std::map<std::string, bool> out;
    for (const auto& [id, m] : generated) {
        const auto g = centroid(m);
        std::string best;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [oid, c] : centres) {
            double d = 0.0;
            for (std::size_t j = 0; j < c.size(); ++j) d += (g[j] - c[j]) * (g[j] - c[j]);
            if (d < best_d) {
                best_d = d;
                best = oid;
            }
        }
        out[id] = best == id;
    }
    return out;
}

}  // namespace toad

#pragma once

// Slice classifier over original levels, its penultimate-layer features, and 2-D projections.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "toad/corpus.hpp"
#include "toad/nn/autograd.hpp"

namespace toad {

using FeatureMatrix = std::vector<std::vector<double>>;

struct ClassifierConfig {
    int slice_h = 16;
    int slice_w = 16;
    int widths[3] = {32, 64, 64};
    int steps = 1500;
    int batch = 32;
    double learning_rate = 1e-3;
    // offsets: slices starting at column c with c % holdout_stride == holdout_stride - 1 are
    // held out. columns: training slices lie in the leftmost train_fraction of each level,
    // held-out slices in the rest, with no shared columns.
    enum class Holdout { offsets, columns };
    Holdout holdout = Holdout::offsets;
    int holdout_stride = 5;
    double train_fraction = 0.75;
    int eval_slices_per_level = 100;
    std::uint64_t rng_seed = 0;
};

class SliceClassifier {
public:
    SliceClassifier() = default;
    SliceClassifier(TokenAlphabet alphabet, std::vector<std::string> labels, const ClassifierConfig& cfg,
                    std::mt19937_64& rng);

    const TokenAlphabet& alphabet() const { return alphabet_; }
    const std::vector<std::string>& labels() const { return labels_; }
    int feature_dim() const { return cfg_.widths[2]; }
    int slice_h() const { return cfg_.slice_h; }
    int slice_w() const { return cfg_.slice_w; }
    const ClassifierConfig& config() const { return cfg_; }

    // phi(s) for each slice.
    FeatureMatrix embed(const std::vector<LevelGrid>& slices) const;
    // argmax of the full network output.
    std::vector<int> predict(const std::vector<LevelGrid>& slices) const;
    // Row-major L x D weights and L biases of the final linear map.
    std::vector<double> head_weights() const;
    std::vector<double> head_bias() const;

    double accuracy(const std::vector<LevelGrid>& slices, const std::vector<int>& labels) const;

    // Mean cross-entropy on a batch, with graph.
    nn::Var<float> loss(const std::vector<LevelGrid>& slices, const std::vector<int>& labels) const;
    std::vector<nn::Var<float>> parameters() const;

    void save(const std::filesystem::path& dir) const;
    static SliceClassifier load(const std::filesystem::path& dir);

private:
    nn::Var<float> features(const nn::Tensor<float>& batch) const;
    nn::Var<float> logits(const nn::Var<float>& phi) const;
    nn::Tensor<float> encode(const std::vector<LevelGrid>& slices) const;

    TokenAlphabet alphabet_;
    std::vector<std::string> labels_;
    ClassifierConfig cfg_;
    std::vector<nn::Var<float>> weights_;  // three 3x3 convs, then the 1x1 head
    std::vector<nn::Var<float>> biases_;
};

struct ClassifierReport {
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;
    int train_slices = 0;
    int heldout_slices = 0;
};

// Levels must share `alphabet`. Throws InsufficientClasses for fewer than two levels.
SliceClassifier train_classifier(const std::map<std::string, LevelGrid>& levels, const TokenAlphabet& alphabet,
                                 const ClassifierConfig& cfg, ClassifierReport* report = nullptr);

// Admissible slice start columns for training (`heldout` false) or evaluation.
std::vector<int> slice_offsets(int level_width, const ClassifierConfig& cfg, bool heldout);

// `count` slices with start columns drawn from `offsets` and rows uniformly.
std::vector<LevelGrid> slices_at(const LevelGrid& level, int h, int w, const std::vector<int>& offsets, int count,
                                 std::uint64_t seed);

class Projector {
public:
    virtual ~Projector() = default;
    virtual void fit(const FeatureMatrix& features) = 0;
    virtual FeatureMatrix transform(const FeatureMatrix& features) const = 0;
    virtual std::string name() const = 0;
};

// Principal components with a fixed sign convention (largest-magnitude loading positive).
class PcaProjector : public Projector {
public:
    void fit(const FeatureMatrix& features) override;
    FeatureMatrix transform(const FeatureMatrix& features) const override;
    std::string name() const override { return "pca"; }

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& explained_variance() const { return variance_; }

private:
    std::vector<double> mean_;
    std::vector<std::vector<double>> components_;  // 2 x D
    std::vector<double> variance_;
};

std::unique_ptr<Projector> make_projector(const std::string& name);

// For each label, whether the mean generated feature is closest to the same label's mean
// original feature.
std::map<std::string, bool> nearest_centroid(const std::map<std::string, FeatureMatrix>& original,
                                             const std::map<std::string, FeatureMatrix>& generated);

}  // namespace toad

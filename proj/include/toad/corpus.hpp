#pragma once

// Token alphabets, level grids and their one-hot tensor form.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace toad {

struct Token {
    char symbol = '-';
    std::string name;
    int rank = 0;  // hierarchy rank; higher survives downsampling
};

class TokenAlphabet {
public:
    TokenAlphabet() = default;
    explicit TokenAlphabet(std::vector<Token> tokens);

    static TokenAlphabet from_json(const nlohmann::json& doc);
    static TokenAlphabet load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    int size() const { return static_cast<int>(tokens_.size()); }
    const Token& operator[](int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
    std::span<const Token> tokens() const { return tokens_; }

    std::optional<int> index_of(char symbol) const;
    int rank(int index) const { return (*this)[index].rank; }
    char symbol(int index) const { return (*this)[index].symbol; }

    // Stable 64-bit FNV-1a hash over symbols, names and ranks, hex encoded.
    std::string fingerprint() const;

    // Sub-alphabet keeping the given indices in the given order.
    TokenAlphabet subset(std::span<const int> indices) const;

    bool operator==(const TokenAlphabet& other) const;

private:
    std::vector<Token> tokens_;
    std::array<std::int16_t, 256> lookup_{};
};

// Bundled defaults. The platformer alphabet carries the nine-group token
// hierarchy (sky .. hidden blocks); the kart alphabet the four-rank one.
TokenAlphabet platformer_alphabet();
TokenAlphabet kart_alphabet();
std::optional<TokenAlphabet> bundled_alphabet(std::string_view id);
std::vector<std::string> bundled_alphabet_ids();

class LevelGrid {
public:
    LevelGrid() = default;
    LevelGrid(int height, int width, int fill = 0);
    LevelGrid(int height, int width, std::vector<int> cells);

    int height() const { return height_; }
    int width() const { return width_; }
    int at(int row, int col) const { return cells_[index(row, col)]; }
    int& at(int row, int col) { return cells_[index(row, col)]; }
    std::span<const int> cells() const { return cells_; }

    LevelGrid crop(int row, int col, int h, int w) const;
    bool operator==(const LevelGrid& other) const = default;

private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<int> cells_;
};

// C x H x W map of per-pixel token weights.
class SoftTokenMap {
public:
    SoftTokenMap() = default;
    SoftTokenMap(int channels, int height, int width, double fill = 0.0);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }

    double at(int c, int h, int w) const { return values_[index(c, h, w)]; }
    double& at(int c, int h, int w) { return values_[index(c, h, w)]; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

private:
    std::size_t index(int c, int h, int w) const {
        return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) +
                static_cast<std::size_t>(h)) *
                   static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(w);
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

LevelGrid parse_level(std::string_view text, const TokenAlphabet& alphabet);
std::string render_level(const LevelGrid& grid, const TokenAlphabet& alphabet);
LevelGrid load_level(const std::filesystem::path& path, const TokenAlphabet& alphabet);

SoftTokenMap encode_onehot(const LevelGrid& grid, const TokenAlphabet& alphabet);
// Ties resolve to the lowest channel index.
LevelGrid decode_argmax(const SoftTokenMap& map);

std::vector<LevelGrid> extract_slices(const LevelGrid& grid, int slice_h, int slice_w, int count,
                                      std::uint64_t rng_seed);

// Sorted indices of the tokens that occur in the grid.
std::vector<int> present_tokens(const LevelGrid& grid);
std::vector<int> present_tokens(std::span<const LevelGrid> grids);

// Re-express a grid over another alphabet by symbol; throws UnknownToken if a
// symbol is missing from the target.
LevelGrid remap(const LevelGrid& grid, const TokenAlphabet& from, const TokenAlphabet& to);

}  // namespace toad

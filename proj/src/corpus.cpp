#include "toad/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "toad/errors.hpp"

namespace toad {

TokenAlphabet::TokenAlphabet(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw Error("alphabet must contain at least one token");
    if (tokens_.size() > 255) throw Error("alphabet is limited to 255 tokens");
    lookup_.fill(-1);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto key = static_cast<unsigned char>(tokens_[i].symbol);
        if (tokens_[i].symbol == '\n' || tokens_[i].symbol == '\r')
            throw Error("newline cannot be a token");
        if (lookup_[key] >= 0)
            throw Error("duplicate token '" + std::string(1, tokens_[i].symbol) + "'");
        if (tokens_[i].rank < 0)
            throw Error("token '" + std::string(1, tokens_[i].symbol) + "' has a negative rank");
        lookup_[key] = static_cast<std::int16_t>(i);
    }
}

TokenAlphabet TokenAlphabet::from_json(const nlohmann::json& doc) {
    std::vector<Token> tokens;
    for (const auto& entry : doc.at("tokens")) {
        const auto symbol = entry.at("char").get<std::string>();
        if (symbol.size() != 1) throw Error("token char must be a single character: '" + symbol + "'");
        tokens.push_back({symbol[0], entry.value("name", std::string{}), entry.at("rank").get<int>()});
    }
    return TokenAlphabet(std::move(tokens));
}

TokenAlphabet TokenAlphabet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open alphabet file " + path.string());
    return from_json(nlohmann::json::parse(in));
}

nlohmann::json TokenAlphabet::to_json() const {
    auto list = nlohmann::json::array();
    for (const auto& t : tokens_)
        list.push_back({{"char", std::string(1, t.symbol)}, {"name", t.name}, {"rank", t.rank}});
    return {{"tokens", list}};
}

std::optional<int> TokenAlphabet::index_of(char symbol) const {
    if (tokens_.empty()) return std::nullopt;
    const auto idx = lookup_[static_cast<unsigned char>(symbol)];
    if (idx < 0) return std::nullopt;
    return idx;
}

std::string TokenAlphabet::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](unsigned char byte) {
        h ^= byte;
        h *= 1099511628211ULL;
    };
    for (const auto& t : tokens_) {
        mix(static_cast<unsigned char>(t.symbol));
        for (char ch : t.name) mix(static_cast<unsigned char>(ch));
        mix(0);
        for (int shift = 0; shift < 32; shift += 8) mix(static_cast<unsigned char>(t.rank >> shift));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

TokenAlphabet TokenAlphabet::subset(std::span<const int> indices) const {
    std::vector<Token> picked;
    picked.reserve(indices.size());
    for (int i : indices) picked.push_back((*this)[i]);
    return TokenAlphabet(std::move(picked));
}

bool TokenAlphabet::operator==(const TokenAlphabet& other) const {
    if (tokens_.size() != other.tokens_.size()) return false;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& a = tokens_[i];
        const auto& b = other.tokens_[i];
        if (a.symbol != b.symbol || a.name != b.name || a.rank != b.rank) return false;
    }
    return true;
}

TokenAlphabet platformer_alphabet() {
    return TokenAlphabet({
        {'-', "sky", 0},
        {'X', "ground", 1},
        {'#', "pyramid block", 2},
        {'S', "brick", 3},
        {'Q', "empty question block", 3},
        {'D', "used block", 3},
        {'%', "jump-through platform", 3},
        {'|', "platform background", 3},
        {'<', "pipe top left", 4},
        {'>', "pipe top right", 4},
        {'[', "pipe left", 4},
        {']', "pipe right", 4},
        {'t', "empty pipe", 4},
        {'T', "flower pipe", 4},
        {'E', "enemy", 5},
        {'g', "goomba", 5},
        {'k', "green koopa", 5},
        {'r', "red koopa", 5},
        {'y', "spiny", 5},
        {'G', "winged goomba", 6},
        {'K', "winged green koopa", 6},
        {'R', "winged red koopa", 6},
        {'Y', "winged spiny", 6},
        {'*', "bullet bill", 6},
        {'B', "cannon top", 6},
        {'b', "cannon base", 6},
        {'?', "question block with item", 7},
        {'@', "question block with mushroom", 7},
        {'!', "question block with coin", 7},
        {'C', "brick with coin", 7},
        {'o', "coin", 7},
        {'U', "brick with mushroom", 8},
        {'L', "brick with 1-up", 8},
        {'2', "hidden coin block", 8},
        {'1', "hidden 1-up block", 8},
    });
}

TokenAlphabet kart_alphabet() {
    return TokenAlphabet({
        {'-', "ground", 0},
        {'W', "wall", 1},
        {'R', "road", 2},
        {'O', "coin", 3},
        {'Q', "item box", 3},
        {'=', "boost pad", 3},
    });
}

std::optional<TokenAlphabet> bundled_alphabet(std::string_view id) {
    if (id == "platformer") return platformer_alphabet();
    if (id == "kart") return kart_alphabet();
    return std::nullopt;
}

std::vector<std::string> bundled_alphabet_ids() { return {"platformer", "kart"}; }

LevelGrid::LevelGrid(int height, int width, int fill)
    : height_(height), width_(width),
      cells_(static_cast<std::size_t>(std::max(height, 0)) * static_cast<std::size_t>(std::max(width, 0)),
             fill) {
    if (height < 1 || width < 1) throw Error("level dimensions must be positive");
}

LevelGrid::LevelGrid(int height, int width, std::vector<int> cells)
    : height_(height), width_(width), cells_(std::move(cells)) {
    if (height < 1 || width < 1) throw Error("level dimensions must be positive");
    if (cells_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
        throw Error("cell count does not match level dimensions");
}

LevelGrid LevelGrid::crop(int row, int col, int h, int w) const {
    if (row < 0 || col < 0 || row + h > height_ || col + w > width_)
        throw SliceTooLarge("crop exceeds level bounds");
    LevelGrid out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = at(row + r, col + c);
    return out;
}

SoftTokenMap::SoftTokenMap(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width),
      values_(static_cast<std::size_t>(std::max(channels, 0)) * static_cast<std::size_t>(std::max(height, 0)) *
                  static_cast<std::size_t>(std::max(width, 0)),
              fill) {
    if (channels < 1 || height < 1 || width < 1) throw Error("map dimensions must be positive");
}

LevelGrid parse_level(std::string_view text, const TokenAlphabet& alphabet) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        pos = end + 1;
    }
    // A single trailing newline does not start a new row.
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw Error("level text is empty");

    const auto width = lines.front().size();
    for (std::size_t r = 0; r < lines.size(); ++r) {
        if (lines[r].empty()) throw RaggedInput("row " + std::to_string(r) + " is empty");
        if (lines[r].size() != width)
            throw RaggedInput("row " + std::to_string(r) + " has " + std::to_string(lines[r].size()) +
                              " tokens, expected " + std::to_string(width));
    }

    LevelGrid grid(static_cast<int>(lines.size()), static_cast<int>(width));
    for (std::size_t r = 0; r < lines.size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const auto idx = alphabet.index_of(lines[r][c]);
            if (!idx) throw UnknownToken(lines[r][c], static_cast<int>(r), static_cast<int>(c));
            grid.at(static_cast<int>(r), static_cast<int>(c)) = *idx;
        }
    }
    return grid;
}

std::string render_level(const LevelGrid& grid, const TokenAlphabet& alphabet) {
    std::string out;
    out.reserve(static_cast<std::size_t>(grid.height()) * static_cast<std::size_t>(grid.width() + 1));
    for (int r = 0; r < grid.height(); ++r) {
        for (int c = 0; c < grid.width(); ++c) out.push_back(alphabet.symbol(grid.at(r, c)));
        out.push_back('\n');
    }
    return out;
}

LevelGrid load_level(const std::filesystem::path& path, const TokenAlphabet& alphabet) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open level file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_level(buf.str(), alphabet);
}

SoftTokenMap encode_onehot(const LevelGrid& grid, const TokenAlphabet& alphabet) {
    SoftTokenMap map(alphabet.size(), grid.height(), grid.width());
    for (int r = 0; r < grid.height(); ++r) {
        for (int c = 0; c < grid.width(); ++c) {
            const int token = grid.at(r, c);
            if (token < 0 || token >= alphabet.size()) throw Error("grid cell outside alphabet");
            map.at(token, r, c) = 1.0;
        }
    }
    return map;
}

LevelGrid decode_argmax(const SoftTokenMap& map) {
    LevelGrid grid(map.height(), map.width());
    for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
            int best = 0;
            double best_value = map.at(0, r, c);
            for (int ch = 1; ch < map.channels(); ++ch) {
                if (map.at(ch, r, c) > best_value) {
                    best_value = map.at(ch, r, c);
                    best = ch;
                }
            }
            grid.at(r, c) = best;
        }
    }
    return grid;
}

std::vector<LevelGrid> extract_slices(const LevelGrid& grid, int slice_h, int slice_w, int count,
                                      std::uint64_t rng_seed) {
    if (slice_h < 1 || slice_w < 1) throw Error("slice dimensions must be positive");
    if (slice_h > grid.height() || slice_w > grid.width())
        throw SliceTooLarge("slice " + std::to_string(slice_h) + "x" + std::to_string(slice_w) +
                            " exceeds level " + std::to_string(grid.height()) + "x" +
                            std::to_string(grid.width()));
    if (count < 1) throw Error("slice count must be at least 1");

    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<int> row_dist(0, grid.height() - slice_h);
    std::uniform_int_distribution<int> col_dist(0, grid.width() - slice_w);
    std::vector<LevelGrid> slices;
    slices.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int row = row_dist(rng);
        const int col = col_dist(rng);
        slices.push_back(grid.crop(row, col, slice_h, slice_w));
    }
    return slices;
}

std::vector<int> present_tokens(const LevelGrid& grid) {
    return present_tokens(std::span<const LevelGrid>(&grid, 1));
}

std::vector<int> present_tokens(std::span<const LevelGrid> grids) {
    std::set<int> seen;
    for (const auto& g : grids)
        for (int cell : g.cells()) seen.insert(cell);
    return {seen.begin(), seen.end()};
}

LevelGrid remap(const LevelGrid& grid, const TokenAlphabet& from, const TokenAlphabet& to) {
    std::vector<int> table(static_cast<std::size_t>(from.size()), -1);
    LevelGrid out(grid.height(), grid.width());
    for (int r = 0; r < grid.height(); ++r) {
        for (int c = 0; c < grid.width(); ++c) {
            const int src = grid.at(r, c);
            auto& dst = table.at(static_cast<std::size_t>(src));
            if (dst < 0) {
                const auto idx = to.index_of(from.symbol(src));
                if (!idx) throw UnknownToken(from.symbol(src), r, c);
                dst = *idx;
            }
            out.at(r, c) = dst;
        }
    }
    return out;
}

}  // namespace toad

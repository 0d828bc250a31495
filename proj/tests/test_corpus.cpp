#include <doctest.h>

#include <filesystem>
#include <set>

#include "toad/corpus.hpp"
#include "toad/errors.hpp"

using namespace toad;

namespace {

const std::filesystem::path kLevels = std::filesystem::path(TOAD_SOURCE_DIR) / "data" / "levels";

}  // namespace

TEST_CASE("parse and render round-trip") {
    const auto alphabet = platformer_alphabet();
    const std::string text = "--?-\nXXXX\n";
    const auto grid = parse_level(text, alphabet);
    CHECK(grid.height() == 2);
    CHECK(grid.width() == 4);
    CHECK(alphabet.symbol(grid.at(0, 2)) == '?');
    CHECK(render_level(grid, alphabet) == text);
}

TEST_CASE("parse accepts CRLF and missing trailing newline") {
    const auto alphabet = platformer_alphabet();
    CHECK(parse_level("--\r\nXX\r\n", alphabet) == parse_level("--\nXX", alphabet));
}

TEST_CASE("unknown token reports its position") {
    const auto alphabet = kart_alphabet();
    try {
        parse_level("--\n-Z\n", alphabet);
        FAIL("expected UnknownToken");
    } catch (const UnknownToken& e) {
        CHECK(e.symbol == 'Z');
        CHECK(e.row == 1);
        CHECK(e.col == 1);
    }
}

TEST_CASE("ragged rows are rejected") {
    CHECK_THROWS_AS(parse_level("---\n--\n", platformer_alphabet()), RaggedInput);
}

TEST_CASE("alphabet JSON round-trip and fingerprint") {
    const auto alphabet = platformer_alphabet();
    const auto copy = TokenAlphabet::from_json(alphabet.to_json());
    CHECK(copy == alphabet);
    CHECK(copy.fingerprint() == alphabet.fingerprint());
    CHECK(kart_alphabet().fingerprint() != alphabet.fingerprint());
    CHECK_THROWS_AS(TokenAlphabet({{'a', "a", 0}, {'a', "b", 1}}), Error);
    CHECK(bundled_alphabet("kart").has_value());
    CHECK_FALSE(bundled_alphabet("nope").has_value());
}

TEST_CASE("platformer hierarchy orders sky below ground below enemies") {
    const auto a = platformer_alphabet();
    const int sky = *a.index_of('-');
    const int ground = *a.index_of('X');
    const int enemy = *a.index_of('E');
    const int question = *a.index_of('?');
    CHECK(a.rank(sky) < a.rank(ground));
    CHECK(a.rank(ground) < a.rank(enemy));
    CHECK(a.rank(enemy) < a.rank(question));
}

TEST_CASE("one-hot encode then argmax decode is the identity") {
    const auto alphabet = platformer_alphabet();
    const auto grid = parse_level("-E?X\nXXSS\n", alphabet);
    const auto map = encode_onehot(grid, alphabet);
    CHECK(map.channels() == alphabet.size());
    double total = 0.0;
    for (double v : map.values()) total += v;
    CHECK(total == doctest::Approx(8.0));
    CHECK(decode_argmax(map) == grid);
}

TEST_CASE("argmax ties resolve to the lowest channel") {
    SoftTokenMap map(3, 1, 1);
    map.at(1, 0, 0) = 0.5;
    map.at(2, 0, 0) = 0.5;
    CHECK(decode_argmax(map).at(0, 0) == 1);
}

TEST_CASE("slices are deterministic and within bounds") {
    LevelGrid grid(4, 10);
    for (int c = 0; c < 10; ++c) grid.at(0, c) = c % 3;
    const auto a = extract_slices(grid, 4, 4, 20, 7);
    const auto b = extract_slices(grid, 4, 4, 20, 7);
    CHECK(a == b);
    for (const auto& s : a) {
        CHECK(s.height() == 4);
        CHECK(s.width() == 4);
    }
    CHECK_THROWS_AS(extract_slices(grid, 5, 4, 1, 0), SliceTooLarge);
}

TEST_CASE("present tokens and remap") {
    const auto big = platformer_alphabet();
    const auto grid = parse_level("-S-\nXXX\n", big);
    const auto present = present_tokens(grid);
    CHECK(present.size() == 3);
    const auto small = big.subset(present);
    const auto remapped = remap(grid, big, small);
    CHECK(render_level(remapped, small) == render_level(grid, big));
    CHECK_THROWS_AS(remap(parse_level("E", big), big, small), UnknownToken);
}

TEST_CASE("bundled corpus levels parse against the platformer alphabet") {
    const auto alphabet = platformer_alphabet();
    int count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(kLevels)) {
        if (entry.path().extension() != ".txt") continue;
        const auto grid = load_level(entry.path(), alphabet);
        CHECK(grid.height() == 16);
        CHECK(grid.width() >= 200);
        ++count;
    }
    CHECK(count == 15);
}

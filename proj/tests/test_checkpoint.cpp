#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "toad/cascade.hpp"
#include "toad/checkpoint.hpp"
#include "toad/errors.hpp"
#include "toy_model.hpp"

using namespace toad;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("toad_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("tensor archive round-trip") {
    const auto dir = scratch("archive");
    fs::create_directories(dir);
    nn::Tensor<float> a(nn::Shape{1, 2, 3, 4});
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(i) * 0.1f - 1.0f;
    write_tensor_archive(dir / "t.bin", {{"a", &a}});
    const auto back = read_tensor_archive(dir / "t.bin");
    CHECK(back.at("a") == a);
    std::ofstream(dir / "bad.bin") << "garbage";
    CHECK_THROWS_AS(read_tensor_archive(dir / "bad.bin"), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip generates identical levels") {
    const auto& m = toy::model();
    const auto dir = scratch("ckpt");
    save_checkpoint(m, dir);
    CHECK(has_checkpoint(dir));
    const auto loaded = load_checkpoint(dir);
    CHECK(loaded.trained());
    CHECK(loaded.alphabet == m.alphabet);
    CHECK(loaded.level == m.level);
    REQUIRE(loaded.scales.size() == m.scales.size());
    for (std::size_t k = 0; k < m.scales.size(); ++k) {
        CHECK(loaded.scales[k].noise_amp == m.scales[k].noise_amp);
        CHECK(loaded.scales[k].generator.hash() == m.scales[k].generator.hash());
        CHECK(loaded.scales[k].critic.hash() == m.scales[k].critic.hash());
        CHECK(loaded.scales[k].losses.size() == m.scales[k].losses.size());
    }
    GenerationRequest req;
    req.target_w = 77;
    req.rng_seed = 4;
    const auto a = generate(m, req);
    const auto b = generate(loaded, req);
    CHECK(render_level(a.grid, m.alphabet) == render_level(b.grid, loaded.alphabet));
    CHECK(std::equal(a.map.values().begin(), a.map.values().end(), b.map.values().begin()));
    fs::remove_all(dir);
}

TEST_CASE("manifest lists only committed scales") {
    auto m = toy::model();
    m.scales.pop_back();
    const auto dir = scratch("partial");
    save_checkpoint(m, dir);
    const auto loaded = load_checkpoint(dir);
    CHECK(loaded.scales.size() == 2);
    CHECK_FALSE(loaded.trained());
    for (const auto& entry : fs::directory_iterator(dir)) CHECK(entry.path().extension() != ".tmp");
    const auto manifest = cascade_manifest(m);
    CHECK(manifest["trained_scales"] == 2);
    CHECK(manifest["total_scales"] == 3);
    fs::remove_all(dir);
}

TEST_CASE("tampered archives are rejected") {
    const auto& m = toy::model();
    const auto dir = scratch("tamper");
    save_checkpoint(m, dir);
    auto tensors = read_tensor_archive(dir / "scale_01.bin");
    tensors.at("generator.layer0.weight")[0] += 1.0f;
    std::vector<std::pair<std::string, const nn::Tensor<float>*>> entries;
    for (const auto& [k, v] : tensors) entries.emplace_back(k, &v);
    write_tensor_archive(dir / "scale_01.bin", entries);
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), CheckpointError);
    fs::remove_all(dir);
}

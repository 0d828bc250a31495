#pragma once

// Request parsing and report building shared by the HTTP service and the CLI.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toad/cascade.hpp"
#include "toad/errors.hpp"

namespace toad::api {

// Thrown for malformed requests (HTTP 400).
class BadRequest : public Error {
public:
    using Error::Error;
};

// Thrown for well-formed but semantically invalid requests (HTTP 422).
class Unprocessable : public Error {
public:
    using Error::Error;
};

struct TrainSpec {
    std::string alphabet_id;  // "custom" for inline alphabets
    TokenAlphabet alphabet;   // tokens present in the level
    LevelGrid level;
    ScaleSchedule schedule;
    NetConfig net;
    TrainConfig train;
};

// `alphabet` is a bundled id or an inline {"tokens": [...]} object.
TokenAlphabet resolve_alphabet(const nlohmann::json& alphabet, std::string* id = nullptr);

// Body keys: level (text), alphabet, scales ("default" | "automatic" | [factors]),
// net {...}, train {...}, reduce_alphabet (default true).
TrainSpec parse_train_request(const nlohmann::json& body);

// Text grid (token char or '1' = on, '-', '0', '.' or ' ' = off) or
// {"base64": ..., "height": h, "width": w} packed row-major, most significant bit first.
LevelGrid parse_mask(const nlohmann::json& mask);
std::string encode_mask_base64(const LevelGrid& mask);

struct ParsedGeneration {
    GenerationRequest request;
    bool seed_given = false;
};

// Body keys: width, height, seed, temperature, injection {token, scale_index, blend, mask | grid}.
ParsedGeneration parse_generation(const nlohmann::json& body, const CascadeModel& model);

nlohmann::json token_counts(const LevelGrid& grid, const TokenAlphabet& alphabet);

// Level text plus stats; includes the injected-token IoU when an injection was applied.
nlohmann::json generation_json(const CascadeModel& model, const GenerationRequest& req, const GenerationResult& result);

struct MetricsParams {
    std::vector<int> sizes{2, 3, 4};
    int n_samples = 10;
    int sample_w = 200;
    std::optional<int> sample_h;
    int slice_size = 16;
    int slices_per_sample = 100;
    double weight = 1.0;
    double eps = 1e-5;
    std::uint64_t seed = 0;
};

MetricsParams parse_metrics_params(const nlohmann::json& query);
// Generated samples use seeds seed, seed + 1, ...
std::vector<LevelGrid> sample_levels(const CascadeModel& model, const MetricsParams& params);
nlohmann::json metrics_report(const CascadeModel& model, const MetricsParams& params);

nlohmann::json injection_dims(const CascadeModel& model, int height, int width, int scale_index);

nlohmann::json model_summary(const CascadeModel& model);

}  // namespace toad::api

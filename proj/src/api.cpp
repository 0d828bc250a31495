#include "toad/api.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <sstream>

#include "toad/metrics.hpp"

namespace toad::api {

using nlohmann::json;

namespace {

template <typename T>
T number(const json& v, const char* key) {
    if (v.is_number()) return v.get<T>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        std::istringstream in(s);
        T out{};
        in >> out;
        if (in && in.peek() == std::char_traits<char>::eof()) return out;
    }
    throw BadRequest(std::string("'") + key + "' must be a number");
}

template <typename T>
std::optional<T> optional_number(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    return number<T>(body[key], key);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, sep))
        if (!part.empty()) out.push_back(part);
    return out;
}

std::vector<std::string> text_rows(const std::string& text) {
    std::vector<std::string> rows;
    std::string row;
    std::istringstream in(text);
    while (std::getline(in, row)) {
        if (!row.empty() && row.back() == '\r') row.pop_back();
        if (!row.empty()) rows.push_back(row);
    }
    return rows;
}

constexpr const char* kBase64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::vector<unsigned char> base64_decode(const std::string& text) {
    std::array<int, 256> table;
    table.fill(-1);
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kBase64[i])] = i;
    std::vector<unsigned char> out;
    int acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=' || ch == '\n' || ch == '\r' || ch == ' ') continue;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0) throw BadRequest("invalid base64 in mask");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
        }
    }
    return out;
}

InjectionSpec::Blend parse_blend(const json& v) {
    const auto s = v.get<std::string>();
    if (s == "replace_channel") return InjectionSpec::Blend::replace_channel;
    if (s == "replace_all") return InjectionSpec::Blend::replace_all;
    throw BadRequest("unknown blend '" + s + "'");
}

}  // namespace

TokenAlphabet resolve_alphabet(const json& alphabet, std::string* id) {
    if (alphabet.is_null()) {
        if (id) *id = "platformer";
        return platformer_alphabet();
    }
    if (alphabet.is_string()) {
        const auto name = alphabet.get<std::string>();
        auto found = bundled_alphabet(name);
        if (!found) throw BadRequest("unknown alphabet '" + name + "'");
        if (id) *id = name;
        return *found;
    }
    if (alphabet.is_object()) {
        if (id) *id = "custom";
        try {
            return TokenAlphabet::from_json(alphabet);
        } catch (const json::exception& e) {
            throw BadRequest(std::string("invalid alphabet: ") + e.what());
        }
    }
    throw BadRequest("'alphabet' must be an id or an alphabet object");
}

TrainSpec parse_train_request(const json& body) {
    if (!body.is_object()) throw BadRequest("request body must be a JSON object");
    if (!body.contains("level") || !body["level"].is_string()) throw BadRequest("'level' text is required");

    TrainSpec spec;
    const auto full = resolve_alphabet(body.value("alphabet", json()), &spec.alphabet_id);
    const auto level = parse_level(body["level"].get<std::string>(), full);
    if (body.value("reduce_alphabet", true)) {
        const auto present = present_tokens(level);
        spec.alphabet = full.subset(present);
        spec.level = remap(level, full, spec.alphabet);
    } else {
        spec.alphabet = full;
        spec.level = level;
    }

    const bool kart = spec.alphabet_id == "kart";
    try {
        spec.net = kart ? NetConfig::kart_preset() : NetConfig{};
        if (body.contains("net")) {
            auto merged = spec.net.to_json();
            merged.update(body["net"]);
            spec.net = NetConfig::from_json(merged);
        }
        spec.net.validate();
        if (body.contains("train")) {
            auto merged = spec.train.to_json();
            merged.update(body["train"]);
            spec.train = TrainConfig::from_json(merged);
        }
        spec.train.validate();
    } catch (const json::exception& e) {
        throw BadRequest(std::string("invalid config: ") + e.what());
    } catch (const BadRequest&) {
        throw;
    } catch (const Error& e) {
        throw BadRequest(e.what());
    }

    const auto scales = body.value("scales", json("default"));
    ScalePolicy policy = kart ? ScalePolicy::kart_default() : ScalePolicy::platformer_default();
    if (scales.is_string()) {
        const auto s = scales.get<std::string>();
        if (s == "automatic") policy = ScalePolicy::automatic();
        else if (s != "default") throw BadRequest("'scales' must be \"default\", \"automatic\" or a factor list");
    } else if (scales.is_array()) {
        policy = {ScalePolicy::Kind::fixed, scales.get<std::vector<double>>(), 0.75};
    } else {
        throw BadRequest("'scales' must be \"default\", \"automatic\" or a factor list");
    }
    try {
        spec.schedule = compute_scales(spec.level, spec.net.receptive_field(), policy);
    } catch (const Error& e) {
        throw BadRequest(e.what());
    }
    for (double f : spec.schedule.factors)
        if (scaled_dim(spec.level.height(), f) < spec.net.receptive_field())
            throw BadRequest("scale " + std::to_string(f) + " is smaller than the receptive field");
    return spec;
}

LevelGrid parse_mask(const json& mask) {
    if (mask.is_string()) {
        const auto rows = text_rows(mask.get<std::string>());
        if (rows.empty()) throw BadRequest("mask is empty");
        const int h = static_cast<int>(rows.size());
        const int w = static_cast<int>(rows[0].size());
        LevelGrid out(h, w);
        for (int r = 0; r < h; ++r) {
            if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != w) throw BadRequest("mask rows differ in length");
            for (int c = 0; c < w; ++c) {
                const char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
                out.at(r, c) = (ch == '-' || ch == '0' || ch == '.' || ch == ' ') ? 0 : 1;
            }
        }
        return out;
    }
    if (mask.is_object() && mask.contains("base64")) {
        const int h = number<int>(mask.value("height", json()), "height");
        const int w = number<int>(mask.value("width", json()), "width");
        if (h < 1 || w < 1) throw BadRequest("mask dims must be positive");
        const auto bytes = base64_decode(mask["base64"].get<std::string>());
        const std::size_t cells = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        if (bytes.size() != (cells + 7) / 8) throw BadRequest("mask bitmap length does not match its dims");
        std::vector<int> out(cells);
        for (std::size_t i = 0; i < cells; ++i) out[i] = (bytes[i / 8] >> (7 - i % 8)) & 1;
        return LevelGrid(h, w, std::move(out));
    }
    throw BadRequest("mask must be a text grid or {base64, height, width}");
}

std::string encode_mask_base64(const LevelGrid& mask) {
    const auto cells = mask.cells();
    std::vector<unsigned char> bytes((cells.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i]) bytes[i / 8] |= static_cast<unsigned char>(1u << (7 - i % 8));
    std::string out;
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const unsigned v = (static_cast<unsigned>(bytes[i]) << 16) |
                           (i + 1 < bytes.size() ? static_cast<unsigned>(bytes[i + 1]) << 8 : 0u) |
                           (i + 2 < bytes.size() ? static_cast<unsigned>(bytes[i + 2]) : 0u);
        out += kBase64[(v >> 18) & 63];
        out += kBase64[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kBase64[(v >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kBase64[v & 63] : '=';
    }
    return out;
}

ParsedGeneration parse_generation(const json& body, const CascadeModel& model) {
    if (!body.is_object()) throw BadRequest("request body must be a JSON object");
    ParsedGeneration out;
    auto& req = out.request;
    req.target_w = optional_number<int>(body, "width").value_or(model.train_width);
    req.target_h = optional_number<int>(body, "height");
    req.temperature = optional_number<double>(body, "temperature").value_or(1.0);
    if (!(req.temperature >= 0.0)) throw Unprocessable("temperature must be non-negative");
    if (auto seed = optional_number<std::uint64_t>(body, "seed")) {
        req.rng_seed = *seed;
        out.seed_given = true;
    } else {
        std::random_device rd;
        req.rng_seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    const int h = req.target_h.value_or(model.train_height);
    if (req.target_w < 1 || h < 1) throw Unprocessable("width and height must be positive");

    if (body.contains("injection") && !body["injection"].is_null()) {
        const auto& inj = body["injection"];
        InjectionSpec spec;
        spec.scale_index = optional_number<int>(inj, "scale_index").value_or(0);
        if (spec.scale_index < 0 || spec.scale_index >= model.schedule.size())
            throw Unprocessable("scale_index must be in [0, " + std::to_string(model.schedule.size()) + ")");
        spec.blend = inj.contains("blend") ? parse_blend(inj["blend"]) : InjectionSpec::Blend::replace_channel;
        const auto dims = cascade_dims(model, h, req.target_w)[static_cast<std::size_t>(spec.scale_index)];
        if (spec.blend == InjectionSpec::Blend::replace_channel) {
            if (!inj.contains("token") || !inj["token"].is_string() || inj["token"].get<std::string>().size() != 1)
                throw BadRequest("injection 'token' must be a single token character");
            const char symbol = inj["token"].get<std::string>()[0];
            const auto index = model.alphabet.index_of(symbol);
            if (!index) throw Unprocessable("token '" + std::string(1, symbol) + "' is not in the model alphabet");
            spec.token = *index;
            if (!inj.contains("mask")) throw BadRequest("injection 'mask' is required");
            spec.map = parse_mask(inj["mask"]);
        } else {
            if (!inj.contains("grid") || !inj["grid"].is_string()) throw BadRequest("replace_all needs a 'grid' text");
            spec.map = parse_level(inj["grid"].get<std::string>(), model.alphabet);
        }
        if (spec.map.height() != dims.first || spec.map.width() != dims.second)
            throw MaskShapeMismatch(dims.first, dims.second, spec.map.height(), spec.map.width());
        // An empty mask is a plain generation.
        const auto cells = spec.map.cells();
        const bool empty = spec.blend == InjectionSpec::Blend::replace_channel &&
                           std::none_of(cells.begin(), cells.end(), [](int v) { return v != 0; });
        if (!empty) req.injection = std::move(spec);
    }
    return out;
}

json token_counts(const LevelGrid& grid, const TokenAlphabet& alphabet) {
    std::vector<long> counts(static_cast<std::size_t>(alphabet.size()), 0);
    for (int v : grid.cells()) ++counts[static_cast<std::size_t>(v)];
    json out = json::object();
    for (int i = 0; i < alphabet.size(); ++i)
        out[std::string(1, alphabet.symbol(i))] = counts[static_cast<std::size_t>(i)];
    return out;
}

json generation_json(const CascadeModel& model, const GenerationRequest& req, const GenerationResult& result) {
    json out{{"level", render_level(result.grid, model.alphabet)},
             {"height", result.grid.height()},
             {"width", result.grid.width()},
             {"seed", req.rng_seed},
             {"temperature", req.temperature},
             {"token_counts", token_counts(result.grid, model.alphabet)}};
    if (req.injection) {
        const auto& inj = *req.injection;
        json info{{"scale_index", inj.scale_index},
                  {"blend", inj.blend == InjectionSpec::Blend::replace_channel ? "replace_channel" : "replace_all"}};
        if (inj.blend == InjectionSpec::Blend::replace_channel) {
            const auto target = upsample_mask(inj.map, result.grid.height(), result.grid.width());
            info["token"] = std::string(1, model.alphabet.symbol(inj.token));
            info["iou"] = mask_iou(target, token_mask(result.grid, inj.token));
        }
        out["injection"] = info;
    }
    return out;
}

MetricsParams parse_metrics_params(const json& query) {
    MetricsParams p;
    if (query.contains("sizes")) {
        const auto& v = query["sizes"];
        p.sizes.clear();
        if (v.is_array()) {
            for (const auto& s : v) p.sizes.push_back(number<int>(s, "sizes"));
        } else {
            for (const auto& s : split(v.get<std::string>(), ',')) p.sizes.push_back(number<int>(json(s), "sizes"));
        }
    }
    p.n_samples = optional_number<int>(query, "n_samples").value_or(p.n_samples);
    p.sample_w = optional_number<int>(query, "sample_w").value_or(p.sample_w);
    p.sample_h = optional_number<int>(query, "sample_h");
    p.slice_size = optional_number<int>(query, "slice_size").value_or(p.slice_size);
    p.slices_per_sample = optional_number<int>(query, "slices_per_sample").value_or(p.slices_per_sample);
    p.weight = optional_number<double>(query, "w").value_or(p.weight);
    p.seed = optional_number<std::uint64_t>(query, "seed").value_or(p.seed);

    if (p.n_samples < 1) throw Unprocessable("n_samples must be at least 1");
    if (p.sample_w < 1 || (p.sample_h && *p.sample_h < 1)) throw Unprocessable("sample dims must be positive");
    if (p.sizes.empty()) throw Unprocessable("sizes must not be empty");
    for (int s : p.sizes)
        if (s < 1) throw Unprocessable("pattern sizes must be positive");
    if (p.slice_size < 1 || p.slices_per_sample < 0) throw Unprocessable("invalid slice parameters");
    if (!(p.weight >= 0.0 && p.weight <= 1.0)) throw Unprocessable("w must lie in [0, 1]");
    return p;
}

std::vector<LevelGrid> sample_levels(const CascadeModel& model, const MetricsParams& params) {
    std::vector<LevelGrid> out;
    out.reserve(static_cast<std::size_t>(params.n_samples));
    for (int i = 0; i < params.n_samples; ++i) {
        GenerationRequest req;
        req.target_w = params.sample_w;
        req.target_h = params.sample_h;
        req.rng_seed = params.seed + static_cast<std::uint64_t>(i);
        out.push_back(generate(model, req).grid);
    }
    return out;
}

json metrics_report(const CascadeModel& model, const MetricsParams& params) {
    const auto levels = sample_levels(model, params);
    const int h = levels.front().height();
    const int w = levels.front().width();
    for (int s : params.sizes)
        if (s > std::min({h, w, model.level.height(), model.level.width()}))
            throw Unprocessable("pattern size " + std::to_string(s) + " exceeds the level size");
    const auto report = tpkl_report(levels, model.level, params.sizes, params.weight, params.eps);

    json tpkl = json::object();
    for (std::size_t i = 0; i < report.sizes.size(); ++i) tpkl[std::to_string(report.sizes[i])] = report.per_size[i];
    tpkl["mean"] = report.mean;

    json out{{"tpkl", tpkl}};
    if (params.slice_size <= h && params.slice_size <= w && params.slices_per_sample > 0) {
        std::vector<LevelGrid> slices;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            auto part = extract_slices(levels[i], params.slice_size, params.slice_size, params.slices_per_sample,
                                       params.seed + 0x9e3779b97f4a7c15ull + i);
            slices.insert(slices.end(), part.begin(), part.end());
        }
        out["uniqueness"] = uniqueness(slices);
        out["distinct_fraction"] = distinct_fraction(slices);
        out["n_slices"] = slices.size();
    } else {
        out["uniqueness"] = nullptr;
        out["distinct_fraction"] = nullptr;
        out["n_slices"] = 0;
    }
    out["params"] = {{"sizes", params.sizes},
                     {"n_samples", params.n_samples},
                     {"sample_w", w},
                     {"sample_h", h},
                     {"slice_size", params.slice_size},
                     {"slices_per_sample", params.slices_per_sample},
                     {"w", params.weight},
                     {"eps", params.eps},
                     {"seed", params.seed}};
    return out;
}

json injection_dims(const CascadeModel& model, int height, int width, int scale_index) {
    const auto dims = cascade_dims(model, height, width);
    json scales = json::array();
    for (std::size_t i = 0; i < dims.size(); ++i)
        scales.push_back({{"scale_index", i}, {"height", dims[i].first}, {"width", dims[i].second}});
    json out{{"height", height}, {"width", width}, {"scales", scales}};
    if (scale_index >= 0) {
        if (scale_index >= static_cast<int>(dims.size()))
            throw Unprocessable("scale_index must be in [0, " + std::to_string(dims.size()) + ")");
        out["scale_index"] = scale_index;
        out["mask_height"] = dims[static_cast<std::size_t>(scale_index)].first;
        out["mask_width"] = dims[static_cast<std::size_t>(scale_index)].second;
    }
    return out;
}

json model_summary(const CascadeModel& model) {
    int trained = 0;
    for (const auto& s : model.scales) trained += s.trained ? 1 : 0;
    return {{"alphabet", model.alphabet.to_json()},
            {"schedule", model.schedule.factors},
            {"net", model.net.to_json()},
            {"train", model.train.to_json()},
            {"train_height", model.train_height},
            {"train_width", model.train_width},
            {"trained_scales", trained},
            {"total_scales", model.schedule.size()},
            {"trained", model.trained()}};
}

}  // namespace toad::api

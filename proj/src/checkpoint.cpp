#include "toad/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "toad/errors.hpp"

namespace toad {

namespace fs = std::filesystem;
using nn::Tensor;

namespace {

constexpr char kMagic[8] = {'T', 'O', 'A', 'D', 'T', 'N', 'S', '1'};
constexpr const char* kFormat = "toad-cascade/1";

template <typename V>
void put(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const fs::path& path) {
    V v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CheckpointError("truncated archive " + path.string());
    return v;
}

std::string scale_file(int index) {
    std::ostringstream name;
    name << "scale_" << (index < 10 ? "0" : "") << index << ".bin";
    return name.str();
}

nlohmann::json loss_summary(const std::vector<StepLosses>& losses) {
    if (losses.empty()) return nlohmann::json::object();
    StepLosses mean;
    for (const auto& l : losses) {
        mean.critic += l.critic;
        mean.penalty += l.penalty;
        mean.adversarial += l.adversarial;
        mean.reconstruction += l.reconstruction;
    }
    const auto n = static_cast<float>(losses.size());
    auto row = [](const StepLosses& l) {
        return nlohmann::json{{"critic", l.critic},
                              {"penalty", l.penalty},
                              {"adversarial", l.adversarial},
                              {"reconstruction", l.reconstruction}};
    };
    mean = {mean.critic / n, mean.penalty / n, mean.adversarial / n, mean.reconstruction / n};
    return {{"steps", losses.size()}, {"first", row(losses.front())}, {"last", row(losses.back())}, {"mean", row(mean)}};
}

Tensor<float> losses_tensor(const std::vector<StepLosses>& losses) {
    Tensor<float> t(nn::Shape{std::max<int>(1, static_cast<int>(losses.size())), 4, 1, 1});
    for (std::size_t i = 0; i < losses.size(); ++i) {
        t[4 * i] = losses[i].critic;
        t[4 * i + 1] = losses[i].penalty;
        t[4 * i + 2] = losses[i].adversarial;
        t[4 * i + 3] = losses[i].reconstruction;
    }
    return t;
}

std::vector<StepLosses> losses_from(const Tensor<float>& t, std::size_t steps) {
    std::vector<StepLosses> out(steps);
    for (std::size_t i = 0; i < steps; ++i) out[i] = {t[4 * i], t[4 * i + 1], t[4 * i + 2], t[4 * i + 3]};
    return out;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw CheckpointError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_tensor_archive(const fs::path& path, const std::vector<std::pair<std::string, const Tensor<float>*>>& entries) {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& s = tensor->shape();
        for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(tensor->data()), static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
    }
    write_file_atomic(path, out.str());
}

std::map<std::string, Tensor<float>> read_tensor_archive(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open archive " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw CheckpointError(path.string() + " is not a tensor archive");
    const auto count = get<std::uint32_t>(in, path);
    std::map<std::string, Tensor<float>> out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = get<std::uint32_t>(in, path);
        if (len > 4096) throw CheckpointError("corrupt entry name in " + path.string());
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw CheckpointError("truncated archive " + path.string());
        nn::Shape s;
        s.n = get<std::int32_t>(in, path);
        s.c = get<std::int32_t>(in, path);
        s.h = get<std::int32_t>(in, path);
        s.w = get<std::int32_t>(in, path);
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.numel() > (std::size_t{1} << 30))
            throw CheckpointError("corrupt shape for '" + name + "' in " + path.string());
        Tensor<float> t(s);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float))))
            throw CheckpointError("truncated archive " + path.string());
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

nlohmann::json cascade_manifest(const CascadeModel& model) {
    nlohmann::json scales = nlohmann::json::array();
    int trained = 0;
    for (const auto& s : model.scales) {
        if (!s.trained) break;
        ++trained;
        scales.push_back({{"index", s.scale_index},
                          {"factor", model.schedule.factors.at(static_cast<std::size_t>(s.scale_index))},
                          {"height", s.height},
                          {"width", s.width},
                          {"noise_amp", s.noise_amp},
                          {"file", scale_file(s.scale_index)},
                          {"initial_hash", s.initial_hash},
                          {"final_hash", s.final_hash},
                          {"losses", loss_summary(s.losses)}});
    }
    auto train = model.train.to_json();
    train["source"] = "implementation defaults unless overridden";
    return {{"format", kFormat},
            {"alphabet", model.alphabet.to_json()},
            {"alphabet_fingerprint", model.alphabet.fingerprint()},
            {"schedule", model.schedule.factors},
            {"net", model.net.to_json()},
            {"train", train},
            {"training_level",
             {{"height", model.train_height},
              {"width", model.train_width},
              {"text", model.level.height() > 0 ? render_level(model.level, model.alphabet) : ""}}},
            {"noise_amps",
             [&] {
                 nlohmann::json a = nlohmann::json::array();
                 for (const auto& s : model.scales)
                     if (s.trained) a.push_back(s.noise_amp);
                 return a;
             }()},
            {"trained_scales", trained},
            {"total_scales", model.schedule.size()},
            {"scales", scales}};
}

void save_checkpoint(const CascadeModel& model, const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto& s : model.scales) {
        if (!s.trained) break;
        std::vector<std::pair<std::string, const Tensor<float>*>> entries;
        for (const auto& [name, t] : s.generator.state()) entries.emplace_back("generator." + name, t);
        for (const auto& [name, t] : s.critic.state()) entries.emplace_back("critic." + name, t);
        if (!s.reconstruction_noise.empty()) entries.emplace_back("reconstruction_noise", &s.reconstruction_noise);
        const auto losses = losses_tensor(s.losses);
        entries.emplace_back("losses", &losses);
        write_tensor_archive(dir / scale_file(s.scale_index), entries);
    }
    write_file_atomic(dir / kManifestName, cascade_manifest(model).dump(2) + "\n");
}

bool has_checkpoint(const fs::path& dir) { return fs::exists(dir / kManifestName); }

CascadeModel load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / kManifestName);
    if (!in) throw CheckpointError("no manifest in " + dir.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("manifest in " + dir.string() + " is not valid JSON: " + e.what());
    }
    if (doc.value("format", "") != kFormat) throw CheckpointError("unsupported checkpoint format in " + dir.string());

    CascadeModel model;
    model.alphabet = TokenAlphabet::from_json(doc.at("alphabet"));
    if (model.alphabet.fingerprint() != doc.at("alphabet_fingerprint").get<std::string>())
        throw CheckpointError("alphabet fingerprint mismatch in " + dir.string());
    model.schedule.factors = doc.at("schedule").get<std::vector<double>>();
    model.schedule.validate();
    model.net = NetConfig::from_json(doc.at("net"));
    model.train = TrainConfig::from_json(doc.at("train"));
    model.train_height = doc.at("training_level").at("height").get<int>();
    model.train_width = doc.at("training_level").at("width").get<int>();
    const auto text = doc.at("training_level").value("text", "");
    if (!text.empty()) model.level = parse_level(text, model.alphabet);

    for (const auto& entry : doc.at("scales")) {
        ScaleModel s;
        s.scale_index = entry.at("index").get<int>();
        if (s.scale_index != static_cast<int>(model.scales.size())) throw CheckpointError("scales out of order");
        s.height = entry.at("height").get<int>();
        s.width = entry.at("width").get<int>();
        s.noise_amp = entry.at("noise_amp").get<double>();
        s.initial_hash = entry.at("initial_hash").get<std::string>();
        s.final_hash = entry.at("final_hash").get<std::string>();
        std::mt19937_64 rng(0);
        s.generator = make_generator(model.channels(), model.net, rng);
        s.critic = make_critic(model.channels(), model.net, rng);

        auto tensors = read_tensor_archive(dir / entry.at("file").get<std::string>());
        auto restore = [&](nn::ConvNet<float>& net, const std::string& prefix) {
            for (auto& [name, t] : net.state()) {
                auto found = tensors.find(prefix + name);
                if (found == tensors.end()) throw CheckpointError("archive lacks '" + prefix + name + "'");
                if (!(found->second.shape() == t->shape()))
                    throw CheckpointError("'" + prefix + name + "' has shape " + found->second.shape().str() +
                                          ", expected " + t->shape().str());
                *t = std::move(found->second);
            }
        };
        restore(s.generator, "generator.");
        restore(s.critic, "critic.");
        if (auto rn = tensors.find("reconstruction_noise"); rn != tensors.end()) s.reconstruction_noise = rn->second;
        if (auto l = tensors.find("losses"); l != tensors.end())
            s.losses = losses_from(l->second, entry.at("losses").value("steps", std::size_t{0}));
        if (s.generator.hash() != s.final_hash)
            throw CheckpointError("generator hash mismatch for scale " + std::to_string(s.scale_index));
        s.trained = true;
        model.scales.push_back(std::move(s));
    }
    return model;
}

}  // namespace toad

// toad: command-line front end. Offline verbs mirror the HTTP endpoints.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "svg.hpp"
#include "toad/api.hpp"
#include "toad/checkpoint.hpp"
#include "toad/embedding.hpp"
#include "toad/metrics.hpp"
#include "toad/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw toad::Error("cannot read " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw toad::Error("cannot write " + path.string());
    out << text;
}

// An alphabet argument is a bundled id or a path to an alphabet JSON file.
json alphabet_arg(const std::string& value) {
    if (toad::bundled_alphabet(value)) return value;
    return json::parse(read_file(value));
}

toad::TokenAlphabet load_alphabet(const std::string& value) { return toad::api::resolve_alphabet(alphabet_arg(value)); }

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(std::stod(part));
    return out;
}

// Levels as <dir>/<id>.txt, sorted by id.
std::map<std::string, toad::LevelGrid> load_levels(const fs::path& dir, const toad::TokenAlphabet& alphabet) {
    std::map<std::string, toad::LevelGrid> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".txt") out[entry.path().stem().string()] = toad::load_level(entry.path(), alphabet);
    if (out.empty()) throw toad::Error("no .txt levels in " + dir.string());
    return out;
}

// Generated levels as <dir>/<id>/*.txt.
std::map<std::string, std::vector<toad::LevelGrid>> load_generated(const fs::path& dir, const toad::TokenAlphabet& alphabet) {
    std::map<std::string, std::vector<toad::LevelGrid>> out;
    for (const auto& sub : fs::directory_iterator(dir)) {
        if (!sub.is_directory()) continue;
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(sub.path()))
            if (f.path().extension() == ".txt") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out[sub.path().filename().string()].push_back(toad::load_level(f, alphabet));
    }
    return out;
}

std::atomic<bool> g_interrupted{false};
toad::service::Service* g_service = nullptr;

void on_signal(int) {
    g_interrupted = true;
    if (g_service) g_service->stop();
}

int cmd_serve(const std::optional<std::string>& data_dir, const std::string& host, int port, const std::string& ui_dir,
              long cell_limit, int threads) {
    toad::service::ServiceConfig cfg;
    cfg.data_dir = toad::service::resolve_data_dir(data_dir ? std::optional<fs::path>(*data_dir) : std::nullopt);
    if (!ui_dir.empty()) cfg.ui_dir = ui_dir;
    cfg.sync_cell_limit = cell_limit;
    cfg.http_threads = threads;
    toad::service::Service service(cfg);
    const int bound = service.bind(host, port);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "toad serving " << cfg.data_dir << " on http://" << host << ":" << bound << "\n";
    service.listen();
    service.stop();
    g_service = nullptr;
    return 0;
}

struct TrainArgs {
    std::string level, alphabet = "platformer", scales = "default", out, config;
    std::optional<int> steps, filters, layers;
    std::optional<std::uint64_t> seed;
    bool keep_alphabet = false;
};

int cmd_train(const TrainArgs& a) {
    json body{{"level", read_file(a.level)}, {"alphabet", alphabet_arg(a.alphabet)}, {"reduce_alphabet", !a.keep_alphabet}};
    if (!a.config.empty()) body.update(json::parse(read_file(a.config)));
    if (a.scales != "default") body["scales"] = a.scales == "automatic" ? json("automatic") : json(parse_list(a.scales));
    if (a.steps) body["train"]["steps_per_scale"] = *a.steps;
    if (a.seed) body["train"]["rng_seed"] = *a.seed;
    if (a.filters) body["net"]["filters"] = *a.filters;
    if (a.layers) body["net"]["conv_layers"] = *a.layers;
    const auto spec = toad::api::parse_train_request(body);

    const fs::path dir = a.out;
    fs::create_directories(dir);
    auto lock = toad::service::ModelLock::acquire(dir / ".lock");
    if (!lock) throw toad::Error(dir.string() + " is locked by a live training job");
    write_file(dir / "request.json", body.dump(2) + "\n");

    std::signal(SIGINT, on_signal);
    toad::TrainHooks hooks;
    hooks.cancel = &g_interrupted;
    hooks.on_step = [](int scale, int step, int steps) {
        if (step % 50 == 0 || step == steps) std::cerr << "\rscale " << scale << " step " << step << "/" << steps << std::flush;
    };
    hooks.on_scale_trained = [&](const toad::CascadeModel& model) {
        toad::save_checkpoint(model, dir);
        std::cerr << "\nscale " << model.scales.size() - 1 << " saved\n";
    };
    std::cerr << "schedule:";
    for (double f : spec.schedule.factors) std::cerr << " " << f;
    std::cerr << "\n";
    toad::train_cascade(spec.level, spec.alphabet, spec.schedule, spec.net, spec.train, hooks);
    std::cout << dir.string() << "\n";
    return 0;
}

struct GenerateArgs {
    std::string model, out, out_dir, injection, mask, token, blend = "replace_channel";
    std::optional<int> width, height, scale_index;
    std::optional<std::uint64_t> seed;
    double temperature = 1.0;
    int count = 1;
    bool as_json = false;
};

int cmd_generate(const GenerateArgs& a) {
    const auto model = toad::load_checkpoint(a.model);
    json body{{"temperature", a.temperature}};
    if (a.width) body["width"] = *a.width;
    if (a.height) body["height"] = *a.height;
    if (a.seed) body["seed"] = *a.seed;
    if (!a.injection.empty()) body["injection"] = json::parse(read_file(a.injection));
    if (!a.mask.empty()) {
        json inj{{"blend", a.blend}, {"scale_index", a.scale_index.value_or(0)}};
        if (a.blend == "replace_all") inj["grid"] = read_file(a.mask);
        else inj["mask"] = read_file(a.mask), inj["token"] = a.token;
        body["injection"] = inj;
    }
    auto parsed = toad::api::parse_generation(body, model);
    if (!parsed.seed_given) std::cerr << "seed " << parsed.request.rng_seed << "\n";

    for (int i = 0; i < a.count; ++i) {
        auto req = parsed.request;
        req.rng_seed += static_cast<std::uint64_t>(i);
        const auto result = req.injection ? toad::generate_with_injection(model, req) : toad::generate(model, req);
        const auto out = toad::api::generation_json(model, req, result);
        const std::string text = a.as_json ? out.dump(2) + "\n" : out["level"].get<std::string>();
        if (!a.out_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "level_%04d.txt", i);
            write_file(fs::path(a.out_dir) / name, out["level"].get<std::string>());
        } else if (!a.out.empty()) {
            write_file(a.out, text);
        } else {
            std::cout << text;
        }
    }
    return 0;
}

int cmd_metrics(const std::string& model_dir, const json& query, const std::string& out) {
    const auto model = toad::load_checkpoint(model_dir);
    const auto report = toad::api::metrics_report(model, toad::api::parse_metrics_params(query));
    if (out.empty()) std::cout << report.dump(2) << "\n";
    else write_file(out, report.dump(2) + "\n");
    return 0;
}

struct EmbedArgs {
    std::string levels = "data/levels", generated, alphabet = "platformer", out = "embedding", classifier;
    int slices = 100, steps = 1500;
    std::uint64_t seed = 0;
    bool columns = false;
};

int cmd_embed(const EmbedArgs& a) {
    const auto alphabet = load_alphabet(a.alphabet);
    const auto levels = load_levels(a.levels, alphabet);
    const fs::path out = a.out;
    fs::create_directories(out);

    toad::SliceClassifier clf;
    json report = json::object();
    if (!a.classifier.empty()) {
        clf = toad::SliceClassifier::load(a.classifier);
    } else {
        toad::ClassifierConfig cfg;
        cfg.steps = a.steps;
        cfg.rng_seed = a.seed;
        if (a.columns) cfg.holdout = toad::ClassifierConfig::Holdout::columns;
        toad::ClassifierReport r;
        std::cerr << "training classifier on " << levels.size() << " levels\n";
        clf = toad::train_classifier(levels, alphabet, cfg, &r);
        clf.save(out / "classifier");
        report["train_accuracy"] = r.train_accuracy;
        report["heldout_accuracy"] = r.heldout_accuracy;
        report["train_slices"] = r.train_slices;
        report["heldout_slices"] = r.heldout_slices;
        report["holdout"] = a.columns ? "columns" : "offsets";
    }

    std::map<std::string, toad::FeatureMatrix> original, generated;
    std::ofstream csv(out / "features.csv");
    csv << "source,label,index";
    for (int d = 0; d < clf.feature_dim(); ++d) csv << ",f" << d;
    csv << "\n";
    auto emit = [&](const std::string& source, const std::string& label, const toad::FeatureMatrix& f) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            csv << source << "," << label << "," << i;
            for (double v : f[i]) csv << "," << v;
            csv << "\n";
        }
    };
    std::uint64_t k = 0;
    for (const auto& [id, level] : levels) {
        const auto slices = toad::extract_slices(level, clf.slice_h(), clf.slice_w(), a.slices, a.seed + k++);
        original[id] = clf.embed(slices);
        emit("original", id, original[id]);
    }
    if (!a.generated.empty()) {
        for (const auto& [id, grids] : load_generated(a.generated, alphabet)) {
            toad::FeatureMatrix f;
            const int per = std::max(1, a.slices / static_cast<int>(grids.size()));
            for (const auto& g : grids) {
                const auto part = clf.embed(toad::extract_slices(g, clf.slice_h(), clf.slice_w(), per, a.seed + k++));
                f.insert(f.end(), part.begin(), part.end());
            }
            generated[id] = f;
            emit("generated", id, f);
        }
    }

    toad::FeatureMatrix all;
    for (const auto& [id, f] : original) all.insert(all.end(), f.begin(), f.end());
    auto projector = toad::make_projector("pca");
    projector->fit(all);

    json points = json::array();
    std::vector<toad::svg::Point> plot;
    auto project = [&](const std::map<std::string, toad::FeatureMatrix>& group, bool gen) {
        for (const auto& [id, f] : group) {
            const auto xy = projector->transform(f);
            for (const auto& p : xy) {
                points.push_back({{"source", gen ? "generated" : "original"}, {"label", id}, {"x", p[0]}, {"y", p[1]}});
                plot.push_back({p[0], p[1], id, gen});
            }
        }
    };
    project(original, false);
    project(generated, true);
    write_file(out / "points.json", json{{"projector", projector->name()}, {"points", points}}.dump(1) + "\n");
    write_file(out / "scatter.svg", toad::svg::scatter(plot, "slice embeddings (" + projector->name() + ")"));

    if (!generated.empty()) {
        const auto nc = toad::nearest_centroid(original, generated);
        json nj = json::object();
        int hits = 0;
        for (const auto& [id, ok] : nc) nj[id] = ok, hits += ok ? 1 : 0;
        report["nearest_centroid"] = nj;
        report["nearest_centroid_hits"] = hits;
        report["nearest_centroid_total"] = nc.size();
    }
    write_file(out / "report.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_matrix(const std::string& levels_dir, const std::string& generated_dir, const std::string& alphabet_id,
               const std::string& out) {
    const auto alphabet = load_alphabet(alphabet_id);
    const auto m = toad::divergence_matrix(load_generated(generated_dir, alphabet), load_levels(levels_dir, alphabet));
    const fs::path dir = out;
    std::ostringstream csv;
    csv << "generated";
    for (const auto& id : m.ids) csv << "," << id;
    csv << "\n";
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
        csv << m.ids[i];
        for (double v : m.values[i]) csv << "," << v;
        csv << "\n";
    }
    write_file(dir / "matrix.csv", csv.str());
    write_file(dir / "heatmap.svg", toad::svg::heatmap(m.values, m.ids, m.ids, "mean TPKL-Div: generated (rows) vs original"));
    std::cout << csv.str();
    return 0;
}

int cmd_pyramid(const std::string& level, const std::string& alphabet_id, const std::string& scales, const std::string& out) {
    const auto alphabet = load_alphabet(alphabet_id);
    const auto grid = toad::load_level(level, alphabet);
    toad::ScalePolicy policy = scales == "automatic" ? toad::ScalePolicy::automatic()
                               : scales == "default"  ? toad::ScalePolicy::platformer_default()
                                                      : toad::ScalePolicy{toad::ScalePolicy::Kind::fixed, parse_list(scales), 0.75};
    const auto schedule = toad::compute_scales(grid, toad::NetConfig{}.receptive_field(), policy);
    toad::dump_pyramid(toad::build_pyramid(grid, alphabet, schedule), alphabet, out);
    std::cout << out << "\n";
    return 0;
}

int cmd_alphabet(const std::string& id, const std::string& out) {
    const auto a = toad::bundled_alphabet(id);
    if (!a) throw toad::Error("unknown alphabet '" + id + "'");
    const auto text = a->to_json().dump(2) + "\n";
    if (out.empty()) std::cout << text;
    else write_file(out, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toad: single-level GAN cascades for tile-based game levels"};
    app.require_subcommand(1);

    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    std::optional<std::string> data_dir;
    std::string host = "127.0.0.1", ui_dir;
    int port = 8080, threads = 4;
    long cell_limit = 64 * 1024;
    serve->add_option("--data-dir", data_dir, "data root (default: $TOAD_DATA_DIR or ./toad-data)");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port, 0 picks a free one");
    serve->add_option("--ui-dir", ui_dir, "static UI bundle served under /ui");
    serve->add_option("--sync-cell-limit", cell_limit, "larger generations run as jobs");
    serve->add_option("--threads", threads, "request handler threads");

    auto* train = app.add_subcommand("train", "train a cascade on one level");
    TrainArgs ta;
    train->add_option("--level", ta.level, "level text file")->required();
    train->add_option("--alphabet", ta.alphabet, "bundled alphabet id or JSON file");
    train->add_option("--scales", ta.scales, "default, automatic, or comma-separated factors");
    train->add_option("--steps", ta.steps, "steps per scale");
    train->add_option("--seed", ta.seed, "training seed");
    train->add_option("--filters", ta.filters, "filters per hidden layer");
    train->add_option("--layers", ta.layers, "convolutions per generator");
    train->add_option("--config", ta.config, "JSON with net/train/scales overrides");
    train->add_flag("--keep-alphabet", ta.keep_alphabet, "keep tokens absent from the level");
    train->add_option("--out", ta.out, "checkpoint directory")->required();

    auto* gen = app.add_subcommand("generate", "generate levels from a checkpoint");
    GenerateArgs ga;
    gen->add_option("--model", ga.model, "checkpoint directory")->required();
    gen->add_option("--width", ga.width, "output width");
    gen->add_option("--height", ga.height, "output height");
    gen->add_option("--seed", ga.seed, "noise seed (random when absent)");
    gen->add_option("--temperature", ga.temperature, "noise scale");
    gen->add_option("--count", ga.count, "levels to generate with seeds seed, seed + 1, ...");
    gen->add_option("--injection", ga.injection, "JSON injection object as accepted over HTTP");
    gen->add_option("--mask", ga.mask, "mask (or replace_all grid) text file at the injection scale");
    gen->add_option("--token", ga.token, "injected token character");
    gen->add_option("--scale-index", ga.scale_index, "injection scale");
    gen->add_option("--blend", ga.blend, "replace_channel or replace_all");
    gen->add_flag("--json", ga.as_json, "print the JSON response instead of level text");
    gen->add_option("--out", ga.out, "output file");
    gen->add_option("--out-dir", ga.out_dir, "write level_NNNN.txt files here");

    auto* metrics = app.add_subcommand("metrics", "pattern divergence and uniqueness report");
    std::string m_model, m_out, m_sizes = "2,3,4";
    int n_samples = 10, sample_w = 200, slices = 100;
    std::optional<int> sample_h;
    std::uint64_t m_seed = 0;
    double m_w = 1.0;
    metrics->add_option("--model", m_model, "checkpoint directory")->required();
    metrics->add_option("--sizes", m_sizes, "pattern sizes");
    metrics->add_option("--n-samples", n_samples, "generated levels");
    metrics->add_option("--sample-w", sample_w, "generated width");
    metrics->add_option("--sample-h", sample_h, "generated height");
    metrics->add_option("--slices-per-sample", slices, "16x16 slices per level for uniqueness");
    metrics->add_option("--seed", m_seed, "master seed");
    metrics->add_option("--w", m_w, "divergence weight");
    metrics->add_option("--out", m_out, "output file");

    auto* embed = app.add_subcommand("embed", "slice classifier features and 2-D projection");
    EmbedArgs ea;
    embed->add_option("--levels", ea.levels, "directory of original levels");
    embed->add_option("--generated", ea.generated, "directory of <id>/*.txt generated levels");
    embed->add_option("--alphabet", ea.alphabet, "bundled alphabet id or JSON file");
    embed->add_option("--classifier", ea.classifier, "reuse a saved classifier");
    embed->add_option("--slices", ea.slices, "slices per level");
    embed->add_option("--steps", ea.steps, "classifier training steps");
    embed->add_option("--seed", ea.seed, "seed");
    embed->add_flag("--columns-holdout", ea.columns, "hold out the rightmost columns instead of offsets");
    embed->add_option("--out", ea.out, "output directory");

    auto* matrix = app.add_subcommand("matrix", "divergence matrix of generated vs original levels");
    std::string mx_levels = "data/levels", mx_generated, mx_alphabet = "platformer", mx_out = "matrix";
    matrix->add_option("--levels", mx_levels, "directory of original levels");
    matrix->add_option("--generated", mx_generated, "directory of <id>/*.txt generated levels")->required();
    matrix->add_option("--alphabet", mx_alphabet, "bundled alphabet id or JSON file");
    matrix->add_option("--out", mx_out, "output directory");

    auto* pyramid = app.add_subcommand("pyramid", "dump the downsampled pyramid of a level");
    std::string p_level, p_alphabet = "platformer", p_scales = "default", p_out = "pyramid";
    pyramid->add_option("--level", p_level, "level text file")->required();
    pyramid->add_option("--alphabet", p_alphabet, "bundled alphabet id or JSON file");
    pyramid->add_option("--scales", p_scales, "default, automatic, or comma-separated factors");
    pyramid->add_option("--out", p_out, "output directory");

    auto* alphabet = app.add_subcommand("alphabet", "export a bundled alphabet as JSON");
    std::string a_id = "platformer", a_out;
    alphabet->add_option("id", a_id, "alphabet id");
    alphabet->add_option("--out", a_out, "output file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) return cmd_serve(data_dir, host, port, ui_dir, cell_limit, threads);
        if (*train) return cmd_train(ta);
        if (*gen) return cmd_generate(ga);
        if (*metrics) {
            json q{{"sizes", m_sizes}, {"n_samples", n_samples}, {"sample_w", sample_w}, {"slices_per_sample", slices},
                   {"seed", m_seed}, {"w", m_w}};
            if (sample_h) q["sample_h"] = *sample_h;
            return cmd_metrics(m_model, q, m_out);
        }
        if (*embed) return cmd_embed(ea);
        if (*matrix) return cmd_matrix(mx_levels, mx_generated, mx_alphabet, mx_out);
        if (*pyramid) return cmd_pyramid(p_level, p_alphabet, p_scales, p_out);
        if (*alphabet) return cmd_alphabet(a_id, a_out);
    } catch (const toad::UnknownToken& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

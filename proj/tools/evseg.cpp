#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "evseg/checkpoint.hpp"
#include "evseg/dataset.hpp"
#include "evseg/image.hpp"
#include "evseg/train.hpp"

// evseg: event-camera semantic segmentation with a spiking U-Net.
// Subcommands: convert, synth, train, eval, infer, stats.

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evseg;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string manifest;
    std::string outDir = ".";
    bool scoreAbsentAsZero = false;
};

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error("unknown config key \"" + key + "\" in " + where);
    }
}

void parse_model_config(const json& j, ModelConfig& c) {
    reject_unknown(j,
                   {"inChannels", "numClasses", "baseWidths", "inputH", "inputW", "timesteps",
                    "surrogateAlpha", "threshold", "leakInit", "upKernel", "additiveSkips"},
                   "model");
    c.inChannels = j.value("inChannels", c.inChannels);
    c.numClasses = j.value("numClasses", c.numClasses);
    c.baseWidths = j.value("baseWidths", c.baseWidths);
    c.inputH = j.value("inputH", c.inputH);
    c.inputW = j.value("inputW", c.inputW);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.surrogateAlpha = j.value("surrogateAlpha", c.surrogateAlpha);
    c.threshold = j.value("threshold", c.threshold);
    c.leakInit = j.value("leakInit", c.leakInit);
    c.upKernel = j.value("upKernel", c.upKernel);
    c.additiveSkips = j.value("additiveSkips", c.additiveSkips);
}

void parse_train_config(const json& j, TrainConfig& c) {
    reject_unknown(j,
                   {"learningRate", "milestones", "decayFactor", "batchSize", "epochs", "seed",
                    "gradClip", "initGain"},
                   "train");
    c.learningRate = j.value("learningRate", c.learningRate);
    c.milestones = j.value("milestones", c.milestones);
    c.decayFactor = j.value("decayFactor", c.decayFactor);
    c.batchSize = j.value("batchSize", c.batchSize);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("gradClip") && !j.at("gradClip").is_null())
        c.gradClip = j.at("gradClip").get<double>();
    c.initGain = j.value("initGain", c.initGain);
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed config " + path + ": " + e.what());
    }
    reject_unknown(j, {"model", "train", "manifest", "outDir", "scoreAbsentAsZero"}, path);
    if (j.contains("model")) parse_model_config(j.at("model"), cfg.model);
    if (j.contains("train")) parse_train_config(j.at("train"), cfg.train);
    cfg.manifest = j.value("manifest", cfg.manifest);
    cfg.outDir = j.value("outDir", cfg.outDir);
    cfg.scoreAbsentAsZero = j.value("scoreAbsentAsZero", cfg.scoreAbsentAsZero);
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json jm;
    to_json(jm, cfg.model);
    json jt{{"learningRate", cfg.train.learningRate}, {"milestones", cfg.train.milestones},
            {"decayFactor", cfg.train.decayFactor},   {"batchSize", cfg.train.batchSize},
            {"epochs", cfg.train.epochs},             {"seed", cfg.train.seed},
            {"initGain", cfg.train.initGain}};
    if (cfg.train.gradClip) jt["gradClip"] = *cfg.train.gradClip;
    return json{{"model", jm},
                {"train", jt},
                {"manifest", cfg.manifest},
                {"outDir", cfg.outDir},
                {"scoreAbsentAsZero", cfg.scoreAbsentAsZero}};
}

void apply_env_seed(RunConfig& cfg) {
    if (const char* s = std::getenv("EVSEG_SEED")) {
        try {
            cfg.train.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw std::runtime_error("EVSEG_SEED is not an integer: " + std::string(s));
        }
    }
}

void write_effective_config(const RunConfig& cfg) {
    fs::create_directories(cfg.outDir);
    std::ofstream os(fs::path(cfg.outDir) / "effective_config.json");
    if (!os) throw std::runtime_error("cannot write effective config in " + cfg.outDir);
    os << run_config_to_json(cfg).dump(2) << "\n";
}

std::vector<PseudoFrame> load_dataset(const RunConfig& cfg, DatasetManifest& manifestOut) {
    if (cfg.manifest.empty()) throw std::runtime_error("no dataset manifest configured");
    manifestOut = read_manifest(cfg.manifest);
    const std::string baseDir = fs::path(cfg.manifest).parent_path().string();
    std::vector<PseudoFrame> data;
    for (const auto& rec : manifestOut.records)
        data.push_back(load_sample(manifestOut, rec, baseDir, cfg.model.inputW, cfg.model.inputH,
                                   cfg.model.timesteps));
    return data;
}

void check_compat(const ModelConfig& model, const DatasetManifest& manifest) {
    if (!manifest.classNames.empty() && manifest.numClasses() != model.numClasses)
        throw std::runtime_error("incompatible checkpoint/dataset: model has " +
                                 std::to_string(model.numClasses) + " classes, manifest has " +
                                 std::to_string(manifest.numClasses()));
}

int cmd_convert(const std::string& inPath, const std::string& outPath) {
    auto events = parse_event_file(inPath);
    write_evt1(events, outPath);
    std::cout << json{{"events", events.size()}, {"output", outPath}}.dump() << "\n";
    return 0;
}

int cmd_synth(std::uint64_t seed, int count, const std::string& outDir, SynthConfig sc) {
    fs::create_directories(outDir);
    DatasetManifest man;
    for (int c = 0; c < sc.numClasses; ++c) man.classNames.push_back("class" + std::to_string(c));
    man.classNames[0] = "background";
    man.srcW = sc.width;
    man.srcH = sc.height;
    man.windowDurationUs = sc.durationUs;
    for (int i = 0; i < count; ++i) {
        auto scene = generate_synthetic_scene(seed + static_cast<std::uint64_t>(i), sc);
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d", i);
        const std::string evt = std::string(name) + ".evt1";
        const std::string pgm = std::string(name) + ".pgm";
        write_evt1(scene.events, (fs::path(outDir) / evt).string());
        write_pgm(scene.label, (fs::path(outDir) / pgm).string());
        man.records.push_back({evt, pgm, 0});
    }
    const auto manifestPath = (fs::path(outDir) / "manifest.json").string();
    write_manifest(man, manifestPath);
    std::cout << json{{"samples", count}, {"manifest", manifestPath}}.dump() << "\n";
    return 0;
}

int cmd_train(RunConfig cfg) {
    apply_env_seed(cfg);
    cfg.model.validate();
    cfg.train.validate();
    DatasetManifest man;
    auto data = load_dataset(cfg, man);
    check_compat(cfg.model, man);
    write_effective_config(cfg);

    auto net = build_model<float>(cfg.model);
    init_parameters(net, cfg.train.seed, static_cast<float>(cfg.train.initGain));
    int lastEpoch = -1;
    auto log = train_epochs(net, data, cfg.train, [&](const StepInfo& info) {
        if (info.epoch != lastEpoch) {
            lastEpoch = info.epoch;
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.evsg", info.epoch);
            save_checkpoint(net, (fs::path(cfg.outDir) / name).string());
        }
        return true;
    });
    save_checkpoint(net, (fs::path(cfg.outDir) / "model.evsg").string());
    log.write_jsonl((fs::path(cfg.outDir) / "train_log.jsonl").string());
    std::cout << json{{"steps", log.records.size()},
                      {"finalLoss", log.records.empty() ? 0.0 : log.records.back().loss},
                      {"checkpoint", (fs::path(cfg.outDir) / "model.evsg").string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_eval(RunConfig cfg, const std::string& ckptPath) {
    apply_env_seed(cfg);
    auto net = load_checkpoint<float>(ckptPath);
    cfg.model = net.cfg;  // the checkpoint defines the architecture
    DatasetManifest man;
    auto data = load_dataset(cfg, man);
    check_compat(net.cfg, man);
    write_effective_config(cfg);
    auto report = evaluate_split(net, data);
    if (cfg.scoreAbsentAsZero) report.iou = mean_iou(report.confusion, true);
    const auto jsonText = report.to_json(man.classNames);
    std::ofstream os(fs::path(cfg.outDir) / "report.json");
    os << jsonText << "\n";
    std::cout << jsonText << "\n";
    std::cerr << report.to_table(man.classNames);
    return 0;
}

int cmd_infer(RunConfig cfg, const std::string& ckptPath, const std::string& eventFile,
              std::uint64_t windowStart, std::uint64_t durationUs, int srcW, int srcH) {
    apply_env_seed(cfg);
    auto net = load_checkpoint<float>(ckptPath);
    auto events = parse_event_file(eventFile);
    auto window = window_events(events, windowStart, durationUs);
    auto frame = voxelize(window, windowStart, durationUs, srcW, srcH, net.cfg.inputW,
                          net.cfg.inputH, net.cfg.timesteps);
    auto logits = net.forward_sequence(frame);
    auto pred = argmax_map(logits);

    fs::create_directories(cfg.outDir);
    const auto stem = fs::path(eventFile).stem().string();
    const auto ppm = (fs::path(cfg.outDir) / (stem + "_pred.ppm")).string();
    const auto pgm = (fs::path(cfg.outDir) / (stem + "_pred.pgm")).string();
    write_ppm(render_class_map(pred, Palette::default_palette()), ppm);
    write_pgm(pred, pgm);
    std::cout << json{{"events", window.size()}, {"ppm", ppm}, {"pgm", pgm}}.dump() << "\n";
    return 0;
}

int cmd_stats(RunConfig cfg, const std::string& ckptPath) {
    apply_env_seed(cfg);
    auto net = load_checkpoint<float>(ckptPath);
    cfg.model = net.cfg;
    DatasetManifest man;
    auto data = load_dataset(cfg, man);
    check_compat(net.cfg, man);
    auto report = evaluate_split(net, data);
    json j;
    j["paramCount"] = report.paramCount;
    j["modelFiringRate"] = report.modelFiringRate;
    j["layers"] = json::array();
    for (const auto& l : report.layers)
        j["layers"].push_back(
            {{"name", l.name}, {"neurons", l.neurons}, {"firingRate", l.firingRate}});
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evseg: spiking U-Net semantic segmentation for event cameras"};
    app.require_subcommand(1);

    std::string configPath, manifestPath, outDir, ckptPath, inPath, outPath, eventFile;
    std::uint64_t seed = 0, windowStart = 0, durationUs = 50000;
    int count = 8, srcW = 64, srcH = 64;
    bool haveSeedFlag = false;

    SynthConfig sc;

    auto* convert = app.add_subcommand("convert", "convert CSV or EVT1 events to EVT1");
    convert->add_option("input", inPath, "input event file")->required();
    convert->add_option("output", outPath, "output EVT1 file")->required();

    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--count", count, "number of samples");
    synth->add_option("--out", outDir, "output directory")->required();
    synth->add_option("--size", sc.width, "square frame size");
    synth->add_option("--timesteps", sc.timesteps, "pseudo-frame timesteps");
    synth->add_option("--classes", sc.numClasses, "number of classes incl. background");

    // flags shared by the model-running subcommands; values read post-parse
    struct Overrides {
        double lr = -1;
        int epochs = -1, batch = -1, timesteps = -1, classes = -1, inputSize = -1, upKernel = -1;
        std::vector<int> widths;
        std::uint64_t seedVal = 0;
        bool seedSet = false, additive = false, additiveSet = false;
    } ov;
    auto add_run_flags = [&](CLI::App* cmd, bool trainFlags) {
        cmd->add_option("--config", configPath, "JSON run config");
        cmd->add_option("--manifest", manifestPath, "dataset manifest");
        cmd->add_option("--out", outDir, "output directory");
        if (trainFlags) {
            cmd->add_option("--lr", ov.lr, "learning rate");
            cmd->add_option("--epochs", ov.epochs, "training epochs");
            cmd->add_option("--batch-size", ov.batch, "minibatch size");
            cmd->add_option("--seed", ov.seedVal, "RNG seed")
                ->each([&](const std::string&) { ov.seedSet = true; });
        }
        cmd->add_option("--timesteps", ov.timesteps, "simulation timesteps");
        cmd->add_option("--num-classes", ov.classes, "output classes");
        cmd->add_option("--base-widths", ov.widths, "channel widths per level");
        cmd->add_option("--input-size", ov.inputSize, "square network input size");
        cmd->add_option("--up-kernel", ov.upKernel, "decoder up-conv kernel (2 or 3)");
        cmd->add_flag("--additive-skips", ov.additive, "sum skips instead of concatenating")
            ->each([&](const std::string&) { ov.additiveSet = true; });
    };

    auto* train = app.add_subcommand("train", "train a model on a manifest dataset");
    add_run_flags(train, true);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest dataset");
    add_run_flags(eval, false);
    eval->add_option("--checkpoint", ckptPath, "EVSG checkpoint")->required();

    auto* infer = app.add_subcommand("infer", "segment one event file");
    infer->add_option("--config", configPath, "JSON run config");
    infer->add_option("--out", outDir, "output directory");
    infer->add_option("--checkpoint", ckptPath, "EVSG checkpoint")->required();
    infer->add_option("--events", eventFile, "event file (EVT1 or CSV)")->required();
    infer->add_option("--window-start", windowStart, "window start, microseconds");
    infer->add_option("--duration", durationUs, "window duration, microseconds");
    infer->add_option("--src-width", srcW, "sensor width");
    infer->add_option("--src-height", srcH, "sensor height");

    auto* stats = app.add_subcommand("stats", "parameter count and firing rates");
    add_run_flags(stats, false);
    stats->add_option("--checkpoint", ckptPath, "EVSG checkpoint")->required();

    (void)haveSeedFlag;
    CLI11_PARSE(app, argc, argv);

    try {
        if (convert->parsed()) return cmd_convert(inPath, outPath);
        if (synth->parsed()) return cmd_synth(seed, count, outDir, [&] {
            sc.height = sc.width;
            return sc;
        }());

        RunConfig cfg = load_run_config(configPath);
        if (!manifestPath.empty()) cfg.manifest = manifestPath;
        if (!outDir.empty()) cfg.outDir = outDir;
        if (ov.lr > 0) cfg.train.learningRate = ov.lr;
        if (ov.epochs >= 0) cfg.train.epochs = ov.epochs;
        if (ov.batch > 0) cfg.train.batchSize = ov.batch;
        if (ov.seedSet) cfg.train.seed = ov.seedVal;
        if (ov.timesteps > 0) cfg.model.timesteps = ov.timesteps;
        if (ov.classes > 0) cfg.model.numClasses = ov.classes;
        if (!ov.widths.empty()) cfg.model.baseWidths = ov.widths;
        if (ov.inputSize > 0) cfg.model.inputH = cfg.model.inputW = ov.inputSize;
        if (ov.upKernel > 0) cfg.model.upKernel = ov.upKernel;
        if (ov.additiveSet) cfg.model.additiveSkips = ov.additive;

        if (train->parsed()) return cmd_train(std::move(cfg));
        if (eval->parsed()) return cmd_eval(std::move(cfg), ckptPath);
        if (infer->parsed())
            return cmd_infer(std::move(cfg), ckptPath, eventFile, windowStart, durationUs, srcW,
                             srcH);
        if (stats->parsed()) return cmd_stats(std::move(cfg), ckptPath);
        throw std::runtime_error("no subcommand");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#include "pcseg/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace pcseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ------------------------------------------------------------------

namespace {

ModelConfig model_from_partial_json(const json& j, ModelConfig cfg) {
    cfg.class_count = j.value("class_count", cfg.class_count);
    cfg.input_features = j.value("input_features", cfg.input_features);
    cfg.stage_channels = j.value("stage_channels", cfg.stage_channels);
    cfg.stage_heads = j.value("stage_heads", cfg.stage_heads);
    cfg.stage_target_areas = j.value("stage_target_areas", cfg.stage_target_areas);
    cfg.enc_dim = j.value("enc_dim", cfg.enc_dim);
    cfg.global_heads = j.value("global_heads", cfg.global_heads);
    cfg.partition.parts = j.value("parts", cfg.partition.parts);
    cfg.partition.dbscan_eps_factor = j.value("dbscan_eps_factor", cfg.partition.dbscan_eps_factor);
    cfg.partition.dbscan_min_pts = j.value("dbscan_min_pts", cfg.partition.dbscan_min_pts);
    cfg.partition.density_weight = j.value("density_weight", cfg.partition.density_weight);
    cfg.partition.base_window_edge = j.value("base_window_edge", cfg.partition.base_window_edge);
    cfg.partition.window_ratio = j.value("window_ratio", cfg.partition.window_ratio);
    cfg.partition.min_window_edge = j.value("min_window_edge", cfg.partition.min_window_edge);
    cfg.neighbor_rate = j.value("neighbor_rate", cfg.neighbor_rate);
    cfg.same_part_rate = j.value("same_part_rate", cfg.same_part_rate);
    cfg.same_part_windows = j.value("same_part_windows", cfg.same_part_windows);
    cfg.key_cap = j.value("key_cap", cfg.key_cap);
    cfg.attn_scale = j.value("attn_scale", cfg.attn_scale);
    cfg.local_pos_enc = j.value("local_pos_enc", cfg.local_pos_enc);
    cfg.global_centroid_bias = j.value("global_centroid_bias", cfg.global_centroid_bias);
    cfg.density_feature = j.value("density_feature", cfg.density_feature);
    cfg.pool_ratio = j.value("pool_ratio", cfg.pool_ratio);
    cfg.lambda = j.value("lambda", cfg.lambda);
    if (j.contains("presence_mode")) {
        cfg.presence_mode = j.at("presence_mode").get<std::string>() == "per_point"
                                ? PresenceLabelMode::per_point
                                : PresenceLabelMode::scene_broadcast;
    }
    cfg.presence_stage = j.value("presence_stage", cfg.stage_channels.size() - 1);
    cfg.presence_per_point = j.value("presence_per_point", cfg.presence_per_point);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

const std::vector<std::string> kKnownTopKeys = {
    "inputs",        "output_dir",     "checkpoint",   "output_format", "scene_family",
    "scene_count",   "val_scene_count", "seed",         "partition_target_areas",
    "model",         "train",          "sweep_lambdas", "sweep_parts",  "sweep_seeds"};

}  // namespace

std::string RunConfig::to_json(int indent) const {
    json j;
    j["inputs"] = inputs;
    j["output_dir"] = output_dir;
    j["checkpoint"] = checkpoint;
    j["output_format"] = output_format;
    j["scene_family"] = scene_family;
    j["scene_count"] = scene_count;
    j["val_scene_count"] = val_scene_count;
    j["seed"] = seed;
    j["partition_target_areas"] = partition_target_areas;
    j["model"] = json::parse(model.to_json());
    j["train"] = {{"iterations", train.iterations},
                  {"learning_rate", train.learning_rate},
                  {"batch_scenes", train.batch_scenes},
                  {"seed", train.seed},
                  {"weight_smoothing", train.weight_smoothing},
                  {"eval_every", train.eval_every}};
    j["sweep_lambdas"] = sweep_lambdas;
    j["sweep_parts"] = sweep_parts;
    j["sweep_seeds"] = sweep_seeds;
    return j.dump(indent);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config json: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const std::string& k : kKnownTopKeys) known = known || k == key;
        if (!known) throw ConfigError("unknown config key: " + key);
    }
    RunConfig cfg;
    try {
        cfg.inputs = j.value("inputs", cfg.inputs);
        cfg.output_dir = j.value("output_dir", cfg.output_dir);
        cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
        cfg.output_format = j.value("output_format", cfg.output_format);
        cfg.scene_family = j.value("scene_family", cfg.scene_family);
        cfg.scene_count = j.value("scene_count", cfg.scene_count);
        cfg.val_scene_count = j.value("val_scene_count", cfg.val_scene_count);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.partition_target_areas = j.value("partition_target_areas", cfg.partition_target_areas);
        if (j.contains("model")) cfg.model = model_from_partial_json(j.at("model"), cfg.model);
        if (j.contains("train")) {
            const json& t = j.at("train");
            cfg.train.iterations = t.value("iterations", cfg.train.iterations);
            cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
            cfg.train.batch_scenes = t.value("batch_scenes", cfg.train.batch_scenes);
            cfg.train.seed = t.value("seed", cfg.train.seed);
            cfg.train.weight_smoothing = t.value("weight_smoothing", cfg.train.weight_smoothing);
            cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
        }
        cfg.sweep_lambdas = j.value("sweep_lambdas", cfg.sweep_lambdas);
        cfg.sweep_parts = j.value("sweep_parts", cfg.sweep_parts);
        cfg.sweep_seeds = j.value("sweep_seeds", cfg.sweep_seeds);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config value: ") + e.what());
    }
    return cfg;
}

// ---- shared helpers ------------------------------------------------------------

SceneSpec scene_spec_for(const std::string& family, std::uint64_t seed) {
    if (family == "imbalanced") return imbalanced_scene_spec(seed);
    if (family == "overfit") return overfit_scene_spec(seed);
    throw ConfigError("unknown scene family: " + family);
}

std::vector<PointCloud> generate_scenes(const std::string& family, std::size_t count,
                                        std::uint64_t base_seed) {
    std::vector<PointCloud> scenes;
    for (std::size_t i = 0; i < count; ++i) {
        scenes.push_back(generate_scene(scene_spec_for(family, base_seed + i)));
    }
    return scenes;
}

std::array<std::uint8_t, 3> class_color(std::size_t index) {
    static const std::array<std::array<std::uint8_t, 3>, 12> palette{{{230, 25, 75},
                                                                      {60, 180, 75},
                                                                      {255, 225, 25},
                                                                      {0, 130, 200},
                                                                      {245, 130, 48},
                                                                      {145, 30, 180},
                                                                      {70, 240, 240},
                                                                      {240, 50, 230},
                                                                      {210, 245, 60},
                                                                      {170, 110, 40},
                                                                      {128, 128, 128},
                                                                      {255, 250, 200}}};
    return palette[index % palette.size()];
}

namespace {

void ensure_output_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output dir " + cfg.output_dir + ": " + ec.message());
}

void echo_config(const RunConfig& cfg) {
    const std::string path = (fs::path(cfg.output_dir) / "config.json").string();
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << cfg.to_json() << "\n";
}

PointCloud load_input(const std::string& path) {
    if (!fs::exists(path)) throw IoError("input not found: " + path);
    return load_cloud(path, format_from_path(path));
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << text;
    if (!text.empty() && text.back() != '\n') os << "\n";
}

std::vector<PointCloud> training_scenes(const RunConfig& cfg) {
    if (!cfg.inputs.empty()) {
        std::vector<PointCloud> scenes;
        for (const std::string& path : cfg.inputs) {
            PointCloud pc = load_input(path);
            if (!pc.labeled()) throw DataError("training input lacks labels: " + path);
            scenes.push_back(std::move(pc));
        }
        return scenes;
    }
    return generate_scenes(cfg.scene_family, cfg.scene_count, cfg.seed * 1000);
}

std::vector<PointCloud> validation_scenes(const RunConfig& cfg) {
    if (!cfg.inputs.empty() || cfg.val_scene_count == 0) return {};  // validate on train
    return generate_scenes(cfg.scene_family, cfg.val_scene_count, cfg.seed * 1000 + 500);
}

}  // namespace

// ---- commands --------------------------------------------------------------------

int cmd_partition(const RunConfig& cfg) {
    if (cfg.inputs.empty()) throw ConfigError("partition needs an input cloud");
    ensure_output_dir(cfg);
    echo_config(cfg);
    PointCloud pc = load_input(cfg.inputs[0]);
    AreaGrid grid = build_grid(pc, cfg.partition_target_areas);
    DensityPartition parts = make_partition(grid, cfg.model.partition);

    std::vector<std::array<std::uint8_t, 3>> colors(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        colors[i] = class_color(
            static_cast<std::size_t>(parts.part_of_area.at(grid.area_of_point[i])));
    }
    const std::string ply_path = (fs::path(cfg.output_dir) / "partition.ply").string();
    save_ply_colored(ply_path, pc, colors);

    std::vector<std::size_t> per_part(parts.part_count, 0);
    for (const auto& [area, part] : parts.part_of_area) per_part[static_cast<std::size_t>(part)]++;
    json j;
    j["area_count"] = grid.nonempty_areas.size();
    j["area_edge"] = grid.area_edge;
    j["part_count"] = parts.part_count;
    j["per_part_area_counts"] = per_part;
    j["window_edges"] = parts.window_edge_of_part;
    j["warning"] = parts.warning;
    const std::string json_path = (fs::path(cfg.output_dir) / "partition.json").string();
    write_text(json_path, j.dump(2));
    std::cout << "partition: " << grid.nonempty_areas.size() << " areas, " << parts.part_count
              << " parts -> " << ply_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    ensure_output_dir(cfg);
    echo_config(cfg);
    std::vector<PointCloud> train = training_scenes(cfg);
    std::vector<PointCloud> val = validation_scenes(cfg);

    ModelConfig mc = cfg.model;
    SegmentationModel model(mc);

    const std::string curve_path = (fs::path(cfg.output_dir) / "loss_curve.csv").string();
    std::ofstream curve(curve_path);
    if (!curve) throw IoError("cannot write " + curve_path);
    curve << "iteration,total,wce,cr,lambda,learning_rate\n";
    char row[256];
    TrainResult result = train_model(model, train, val, cfg.train, [&](const IterationLog& log) {
        std::snprintf(row, sizeof(row), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", log.iteration,
                      log.loss.total, log.loss.wce, log.loss.cr, log.loss.lambda,
                      log.learning_rate);
        curve << row;
    });
    curve.close();

    const std::string ckpt_path = (fs::path(cfg.output_dir) / "model.ckpt").string();
    model.save(ckpt_path);

    ConfusionMatrix cm = evaluate_confusion(model, val.empty() ? train : val);
    MetricSummary summary = summarize(cm);
    write_text((fs::path(cfg.output_dir) / "metrics.json").string(), summary.to_json());

    std::printf("trained %zu iterations on %zu scene(s); best val OA %.4f at iteration %zu\n",
                cfg.train.iterations, train.size(), result.best_val_oa, result.best_iteration);
    std::printf("checkpoint: %s\n", ckpt_path.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    ensure_output_dir(cfg);
    echo_config(cfg);
    SegmentationModel model = SegmentationModel::load(cfg.checkpoint);

    std::vector<PointCloud> scenes;
    if (!cfg.inputs.empty()) {
        for (const std::string& path : cfg.inputs) {
            PointCloud pc = load_input(path);
            if (!pc.labeled()) throw DataError("eval input lacks labels: " + path);
            if (pc.class_count > model.config().class_count) {
                throw DataError("input classes (" + std::to_string(pc.class_count) +
                                ") exceed model classes (" +
                                std::to_string(model.config().class_count) + "): " + path);
            }
            scenes.push_back(std::move(pc));
        }
    } else {
        scenes = generate_scenes(cfg.scene_family, std::max<std::size_t>(1, cfg.val_scene_count),
                                 cfg.seed * 1000 + 500);
    }

    ConfusionMatrix cm = evaluate_confusion(model, scenes);
    MetricSummary summary = summarize(cm);
    write_text((fs::path(cfg.output_dir) / "metrics.json").string(), summary.to_json());
    std::printf("eval over %zu scene(s): OA %.4f mAcc %.4f mIoU %.4f\n", scenes.size(), summary.oa,
                summary.macc, summary.miou);
    return 0;
}

int cmd_segment(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("segment needs --checkpoint");
    if (cfg.inputs.empty()) throw ConfigError("segment needs an input cloud");
    ensure_output_dir(cfg);
    echo_config(cfg);
    SegmentationModel model = SegmentationModel::load(cfg.checkpoint);

    for (const std::string& input : cfg.inputs) {
        PointCloud pc = load_input(input);
        std::vector<int> labels = model.predict(pc, 0);
        PointCloud out = pc;
        out.labels = labels;
        out.class_count = model.config().class_count;

        const std::string stem = fs::path(input).stem().string();
        if (cfg.output_format == "ply") {
            std::vector<std::array<std::uint8_t, 3>> colors(out.size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                colors[i] = class_color(static_cast<std::size_t>(labels[i]));
            }
            const std::string path =
                (fs::path(cfg.output_dir) / (stem + "_segmented.ply")).string();
            save_ply_colored(path, out, colors);
            std::cout << "wrote " << path << "\n";
        } else if (cfg.output_format == "xyzl") {
            const std::string path =
                (fs::path(cfg.output_dir) / (stem + "_segmented.xyzl")).string();
            save_cloud(path, CloudFormat::xyzl, out);
            std::cout << "wrote " << path << "\n";
        } else {
            throw ConfigError("unknown segment output format: " + cfg.output_format);
        }
    }
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    if (cfg.sweep_lambdas.empty() || cfg.sweep_parts.empty()) {
        throw ConfigError("sweep needs nonempty lambda and parts lists");
    }
    ensure_output_dir(cfg);
    echo_config(cfg);
    const std::string csv_path = (fs::path(cfg.output_dir) / "sweep.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path);
    csv << "seed,lambda,parts,oa,macc,miou,status\n";

    std::size_t cell = 0;
    for (double lambda : cfg.sweep_lambdas) {
        for (std::size_t parts : cfg.sweep_parts) {
            for (std::size_t s = 0; s < std::max<std::size_t>(1, cfg.sweep_seeds); ++s) {
                const std::uint64_t cell_seed = cfg.seed + cell;
                ++cell;
                char row[256];
                try {
                    RunConfig run = cfg;
                    run.seed = cell_seed;
                    run.model.lambda = lambda;
                    run.model.partition.parts = parts;
                    run.model.seed = cell_seed;
                    run.train.seed = cell_seed;
                    std::vector<PointCloud> train =
                        generate_scenes(run.scene_family, run.scene_count, cell_seed * 1000);
                    std::vector<PointCloud> val = generate_scenes(
                        run.scene_family, std::max<std::size_t>(1, run.val_scene_count),
                        cell_seed * 1000 + 500);
                    SegmentationModel model(run.model);
                    train_model(model, train, val, run.train);
                    MetricSummary summary = summarize(evaluate_confusion(model, val));
                    std::snprintf(row, sizeof(row), "%llu,%g,%zu,%.6f,%.6f,%.6f,ok\n",
                                  static_cast<unsigned long long>(cell_seed), lambda, parts,
                                  summary.oa, summary.macc, summary.miou);
                } catch (const std::exception& e) {
                    // record the failure and keep sweeping
                    std::string msg = e.what();
                    for (char& c : msg) {
                        if (c == ',' || c == '\n') c = ';';
                    }
                    std::snprintf(row, sizeof(row), "%llu,%g,%zu,,,,error:%s\n",
                                  static_cast<unsigned long long>(cell_seed), lambda, parts,
                                  msg.c_str());
                }
                csv << row;
                csv.flush();
            }
        }
    }
    std::cout << "sweep results: " << csv_path << "\n";
    return 0;
}

}  // namespace pcseg

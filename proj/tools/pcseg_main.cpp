#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pcseg/commands.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw pcseg::IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"density-aware global-local attention point cloud segmentation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_dir, checkpoint, format, family;
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    std::size_t iterations = 0, parts = 0, target_areas = 0, scenes = 0, val_scenes = 0,
                sweep_seeds = 0;
    double lr = 0.0, lambda = -1.0;
    std::vector<double> sweep_lambdas;
    std::vector<std::size_t> sweep_parts;

    auto add_common = [&](CLI::App* cmd, bool with_inputs) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its keys");
        cmd->add_option("--output", output_dir, "output directory");
        cmd->add_option("--seed", seed, "master seed");
        if (with_inputs) cmd->add_option("inputs", inputs, "input cloud files (xyz/xyzl/ply)");
    };

    CLI::App* partition = app.add_subcommand("partition", "density partition visualization");
    add_common(partition, true);
    partition->add_option("--target-areas", target_areas, "local area count target");
    partition->add_option("--parts", parts, "number of density parts (K)");

    CLI::App* train = app.add_subcommand("train", "train on files or synthetic scenes");
    add_common(train, true);
    train->add_option("--iterations", iterations, "training iterations");
    train->add_option("--lr", lr, "initial learning rate");
    train->add_option("--lambda", lambda, "loss mix: lambda*wce + (1-lambda)*cr");
    train->add_option("--parts", parts, "number of density parts (K)");
    train->add_option("--scenes", scenes, "synthetic training scene count");
    train->add_option("--val-scenes", val_scenes, "synthetic validation scene count");
    train->add_option("--family", family, "scene family: imbalanced | overfit");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint, "model checkpoint");
    eval->add_option("--val-scenes", val_scenes, "synthetic scenes when no inputs given");
    eval->add_option("--family", family, "scene family for synthetic eval");

    CLI::App* segment = app.add_subcommand("segment", "label a cloud with a checkpoint");
    add_common(segment, true);
    segment->add_option("--checkpoint", checkpoint, "model checkpoint");
    segment->add_option("--format", format, "output format: xyzl | ply");

    CLI::App* sweep = app.add_subcommand("sweep", "hyperparameter grid: lambda x parts");
    add_common(sweep, false);
    sweep->add_option("--sweep-lambdas", sweep_lambdas, "lambda values");
    sweep->add_option("--sweep-parts", sweep_parts, "density part counts");
    sweep->add_option("--sweep-seeds", sweep_seeds, "seeds per grid cell");
    sweep->add_option("--iterations", iterations, "training iterations per cell");
    sweep->add_option("--scenes", scenes, "training scenes per cell");
    sweep->add_option("--val-scenes", val_scenes, "validation scenes per cell");

    CLI11_PARSE(app, argc, argv);

    try {
        pcseg::RunConfig cfg;
        if (!config_path.empty()) cfg = pcseg::RunConfig::from_json(read_file(config_path));

        if (!inputs.empty()) cfg.inputs = inputs;
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (!format.empty()) cfg.output_format = format;
        if (!family.empty()) cfg.scene_family = family;
        for (CLI::App* sub : app.get_subcommands()) {
            if (sub->count("--seed")) {
                cfg.seed = seed;
                cfg.model.seed = seed;
                cfg.train.seed = seed;
            }
        }
        if (iterations) cfg.train.iterations = iterations;
        if (lr > 0.0) cfg.train.learning_rate = lr;
        if (lambda >= 0.0) cfg.model.lambda = lambda;
        if (parts) cfg.model.partition.parts = parts;
        if (target_areas) cfg.partition_target_areas = target_areas;
        if (scenes) cfg.scene_count = scenes;
        if (val_scenes) cfg.val_scene_count = val_scenes;
        if (sweep_seeds) cfg.sweep_seeds = sweep_seeds;
        if (!sweep_lambdas.empty()) cfg.sweep_lambdas = sweep_lambdas;
        if (!sweep_parts.empty()) cfg.sweep_parts = sweep_parts;

        if (partition->parsed()) return pcseg::cmd_partition(cfg);
        if (train->parsed()) return pcseg::cmd_train(cfg);
        if (eval->parsed()) return pcseg::cmd_eval(cfg);
        if (segment->parsed()) return pcseg::cmd_segment(cfg);
        if (sweep->parsed()) return pcseg::cmd_sweep(cfg);
        std::fprintf(stderr, "no subcommand\n");
        return 2;
    } catch (const pcseg::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

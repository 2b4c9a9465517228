#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcseg/trainer.hpp"

namespace pcseg {

// Effective settings for one CLI run. Flags override config-file keys; the
// resolved config is echoed into the output directory.
struct RunConfig {
    std::vector<std::string> inputs;
    std::string output_dir = "out";
    std::string checkpoint;
    std::string output_format = "xyzl";  // segment output: xyzl | ply

    // synthetic training source, used when no input files are given
    std::string scene_family = "imbalanced";  // imbalanced | overfit
    std::size_t scene_count = 3;
    std::size_t val_scene_count = 1;

    std::uint64_t seed = 1;
    std::size_t partition_target_areas = 100;

    ModelConfig model;
    TrainConfig train;

    std::vector<double> sweep_lambdas{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<std::size_t> sweep_parts{5};
    std::size_t sweep_seeds = 1;

    std::string to_json(int indent = 2) const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const std::string& text);
};

SceneSpec scene_spec_for(const std::string& family, std::uint64_t seed);
std::vector<PointCloud> generate_scenes(const std::string& family, std::size_t count,
                                        std::uint64_t base_seed);

std::array<std::uint8_t, 3> class_color(std::size_t index);

int cmd_partition(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_segment(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

}  // namespace pcseg

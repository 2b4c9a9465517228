#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcseg/global_attention.hpp"
#include "pcseg/losses.hpp"

namespace pcseg {

struct ModelConfig {
    int version = 1;
    std::size_t class_count = 4;
    std::size_t input_features = 0;  // feature channels beyond xyz

    std::vector<std::size_t> stage_channels{48, 96, 192, 384};
    std::vector<std::size_t> stage_heads{3, 6, 12, 24};
    std::vector<std::size_t> stage_target_areas{100, 50, 25, 12};

    std::size_t enc_dim = 32;      // global-path relative-position encoding width
    std::size_t global_heads = 4;  // heads for token attention (channels = width + enc_dim)

    PartitionConfig partition;  // parts=5 default; 7 fits outdoor-like scenes

    double neighbor_rate = 0.25;
    double same_part_rate = 0.1;
    std::size_t same_part_windows = 2;
    std::size_t key_cap = 256;
    bool attn_scale = true;
    bool local_pos_enc = true;
    bool global_centroid_bias = true;
    bool density_feature = false;  // feed per-point area density into each stage

    double pool_ratio = 4.0;  // coarse cell target = points / pool_ratio

    double lambda = 0.5;
    PresenceLabelMode presence_mode = PresenceLabelMode::scene_broadcast;
    std::size_t presence_stage = 3;  // encoder stage feeding the presence head
    bool presence_per_point = false;

    std::uint64_t seed = 1;

    std::size_t stage_count() const { return stage_channels.size(); }
    void validate() const;
    std::string to_json() const;  // single line
    static ModelConfig from_json(const std::string& text);

    MhsaConfig local_mhsa(std::size_t stage) const;
    MhsaConfig global_mhsa_cfg(std::size_t stage) const;
};

struct ForwardOutput {
    Tensor logits;               // [N x C]
    Tensor presence_logits;      // [C], pre-sigmoid scene scores
    Tensor per_point_presence;   // [N x C], pre-sigmoid
};

// Grid max-pooling between stages: one representative per occupied cell
// (centroid position, per-channel max feature), with the fine->coarse
// assignment retained so upsampling is its exact inverse.
struct PoolMap {
    PointCloud coarse;
    std::vector<std::size_t> cell_of_point;
};

PoolMap build_pool_map(const PointCloud& pc, std::size_t target_cells);
Tensor downsample(const Tensor& features, const PoolMap& map);
Tensor upsample(const Tensor& coarse_features, const PoolMap& map);

class SegmentationModel {
public:
    explicit SegmentationModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t presence_param_count() const;

    // sample_seed drives cross-window key sampling; fixed seed + fixed
    // parameters give bit-identical outputs.
    ForwardOutput forward(const PointCloud& pc, std::uint64_t sample_seed = 0) const;

    // argmax over per-point logits; ties break toward the lower class id
    std::vector<int> predict(const PointCloud& pc, std::uint64_t sample_seed = 0) const;

    void save(const std::string& path) const;
    static SegmentationModel load(const std::string& path);

private:
    struct Stage {
        LocalStageParams local;
        GlobalPathParams global;
        LinearLayer fusion;                 // [2w -> w]
        std::optional<LinearLayer> down;    // [w_s -> w_{s+1}]
        std::optional<LinearLayer> up;      // [(w_{s+1} + w_s) -> w_s]
        std::optional<LinearLayer> density; // [1 -> w], when density_feature
    };

    ModelConfig cfg_;
    ParamStore params_;
    LinearLayer embed_;
    std::vector<Stage> stages_;
    LinearLayer head_;
    LinearLayer presence_;
};

std::vector<int> argmax_labels(const Tensor& logits);

}  // namespace pcseg

#pragma once

#include <cstdint>
#include <vector>

#include "pcseg/partition.hpp"
#include "pcseg/tensor.hpp"

namespace pcseg {

// One attention window: a sub-cube of a local area. Queries are the member
// points; keys are the members plus sampled external points. key_points
// always starts with member_points in the same order.
struct AttentionWindow {
    std::size_t id = 0;
    std::size_t area_id = 0;
    std::array<std::int64_t, 3> cell{0, 0, 0};  // tiling coordinates inside the area
    int density_part = 0;
    Vec3 center{0, 0, 0};
    std::vector<std::size_t> member_points;
    std::vector<std::size_t> key_points;
};

struct MhsaConfig {
    std::size_t heads = 2;
    std::size_t head_dim = 8;
    double neighbor_rate = 0.25;         // key fraction drawn from face-adjacent windows
    double same_part_rate = 0.1;         // key fraction drawn from same-density-part windows
    std::size_t same_part_windows = 2;   // how many same-part windows to sample from
    std::size_t key_cap = 256;           // externals dropped first, members never
    bool scale_logits = true;            // 1/sqrt(head_dim) on the dot products
    bool position_encoding = true;       // add encoded (p - window center) before QKV

    std::size_t channels() const { return heads * head_dim; }
};

// Tiles every area with cubic windows of its part's edge. Each point of the
// area lands in exactly one window; empty windows do not exist. The shifted
// variant offsets the tiling origin by half a window edge per axis (the
// second block of a stage pair).
std::vector<AttentionWindow> tile_windows(const PointCloud& pc, const AreaGrid& grid,
                                          const DensityPartition& partition, bool shifted);

// Fills key_points: all members, then sampled fractions of face-adjacent
// windows and of up to `same_part_windows` same-density-part windows.
// Deterministic given the seed; duplicates removed; capped at key_cap with
// members always kept.
std::vector<AttentionWindow> select_keys(std::vector<AttentionWindow> windows,
                                         const MhsaConfig& cfg, std::uint64_t seed);

struct AttentionParams {
    LinearLayer query, key, value, out;
};

// Per-head attention maps: softmax over keys of the scaled per-head dot
// products, optionally with an additive per-head logit bias. q: [ch x n_q],
// k: [ch x n_k]; result[h]: [n_q x n_k] rows summing to 1.
std::vector<Tensor> attention_maps(const Tensor& q, const Tensor& k, const MhsaConfig& cfg,
                                   const std::vector<Tensor>* head_logit_bias = nullptr);

// Multi-head attention of queries over keys: per-head scaled dot-product
// softmax, values aggregated per head, heads concatenated and projected.
Tensor multi_head_attention(const Tensor& queries_x, const Tensor& keys_x, const MhsaConfig& cfg,
                            const AttentionParams& params,
                            const std::vector<Tensor>* head_logit_bias = nullptr);

// x: [ch x n_keys] with the first n_queries columns being the window's
// members; returns [ch x n_queries].
Tensor window_mhsa(const Tensor& x, std::size_t n_queries, const MhsaConfig& cfg,
                   const AttentionParams& params);

// One pre-norm transformer block over a tiled cloud:
//   y = x + MHSA(norm(x)) per window, z = y + FFN(norm(y)).
struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    AttentionParams attn;
    LinearLayer pos_enc;  // [3 -> ch], used when cfg.position_encoding
    Tensor ln2_gain, ln2_bias;
    LinearLayer ffn_in, ffn_out;  // ch -> 4ch -> ch

    static BlockParams init(ParamStore& store, const std::string& prefix, std::size_t channels,
                            Rng& rng);
};

Tensor local_block(const Tensor& features, const PointCloud& pc,
                   const std::vector<AttentionWindow>& windows, const MhsaConfig& cfg,
                   const BlockParams& params);

// A full local stage: unshifted block then shifted block (Fig. 4 pairing).
struct LocalStageParams {
    BlockParams unshifted;
    BlockParams shifted;

    static LocalStageParams init(ParamStore& store, const std::string& prefix,
                                 std::size_t channels, Rng& rng);
};

Tensor local_stage(const Tensor& features, const PointCloud& pc, const AreaGrid& grid,
                   const DensityPartition& partition, const MhsaConfig& cfg,
                   const LocalStageParams& params, std::uint64_t key_seed);

}  // namespace pcseg

#pragma once

#include <map>

#include "pcseg/local_attention.hpp"

namespace pcseg {

// One token per nonempty area: the arithmetic mean of member positions and
// the sum over members of concat(point feature, encoded offset to the
// centroid). Token features keep the raw fea+enc dimension through global
// attention and are projected back to fea on redistribution.
struct AreaTokens {
    std::vector<std::size_t> area_ids;  // ascending area id, one per token
    std::vector<Vec3> centroids;
    Tensor features;  // [(fea+enc) x token_count]

    std::size_t count() const { return area_ids.size(); }
};

// features: [fea x N]; enc_layer: [3 -> enc].
AreaTokens aggregate_areas(const PointCloud& pc, const AreaGrid& grid, const Tensor& features,
                           const LinearLayer& enc_layer);

struct GlobalBlockParams {
    Tensor ln1_gain, ln1_bias;
    AttentionParams attn;
    LinearLayer rel_bias;  // [3 -> heads]: logit bias from centroid differences
    Tensor ln2_gain, ln2_bias;
    LinearLayer ffn_in, ffn_out;

    static GlobalBlockParams init(ParamStore& store, const std::string& prefix,
                                  std::size_t channels, std::size_t heads, Rng& rng);
};

// Pre-norm attention across all tokens (every token attends to every token),
// with a learned linear bias of centroid differences added per head when
// cfg_use_bias is set.
AreaTokens global_mhsa(AreaTokens tokens, const MhsaConfig& cfg, const GlobalBlockParams& params,
                       bool use_centroid_bias = true);

// Every point receives proj(token of its area); positions untouched.
// proj: [(fea+enc) -> fea].
Tensor redistribute(const AreaTokens& tokens, const AreaGrid& grid, const LinearLayer& proj);

// concat(local, global) -> linear back to fea, plus the local-branch residual.
Tensor fuse(const Tensor& local_features, const Tensor& global_features,
            const LinearLayer& fusion);

struct GlobalPathParams {
    LinearLayer enc;  // [3 -> enc]
    GlobalBlockParams block;
    LinearLayer proj;  // [(fea+enc) -> fea]

    static GlobalPathParams init(ParamStore& store, const std::string& prefix, std::size_t fea,
                                 std::size_t enc, std::size_t heads, Rng& rng);
};

// aggregate -> token attention -> redistribute; returns [fea x N].
Tensor global_path(const PointCloud& pc, const AreaGrid& grid, const Tensor& features,
                   const MhsaConfig& cfg, const GlobalPathParams& params,
                   bool use_centroid_bias = true);

}  // namespace pcseg

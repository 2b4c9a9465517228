#include "pcseg/global_attention.hpp"

namespace pcseg {

AreaTokens aggregate_areas(const PointCloud& pc, const AreaGrid& grid, const Tensor& features,
                           const LinearLayer& enc_layer) {
    const std::size_t n = pc.size();
    if (features.cols() != n) throw ShapeError("aggregate_areas: feature columns != point count");

    AreaTokens tokens;
    tokens.area_ids = grid.nonempty_areas;
    std::map<std::size_t, std::size_t> token_of_area;
    for (std::size_t t = 0; t < tokens.area_ids.size(); ++t) {
        token_of_area[tokens.area_ids[t]] = t;
        tokens.centroids.push_back(grid.centroid_of_area[tokens.area_ids[t]]);
    }

    // offsets to the owning area's centroid, encoded and concatenated under
    // each point's feature column, then summed per area
    std::vector<double> rel(3 * n);
    std::vector<std::size_t> token_of_point(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = token_of_area.at(grid.area_of_point[i]);
        token_of_point[i] = t;
        const Vec3 d = pc.positions[i] - tokens.centroids[t];
        rel[i] = d[0];
        rel[n + i] = d[1];
        rel[2 * n + i] = d[2];
    }
    Tensor encoded = linear_apply(enc_layer, Tensor::from({3, n}, std::move(rel)));
    tokens.features = col_segment_sum(concat_rows(features, encoded), token_of_point, tokens.count());
    return tokens;
}

GlobalBlockParams GlobalBlockParams::init(ParamStore& store, const std::string& prefix,
                                          std::size_t channels, std::size_t heads, Rng& rng) {
    GlobalBlockParams p;
    p.ln1_gain = store.add(prefix + ".ln1.gain", Tensor::full({channels}, 1.0, true));
    p.ln1_bias = store.add(prefix + ".ln1.bias", Tensor::zeros({channels}, true));
    p.attn.query = store.add_linear(prefix + ".attn.q", channels, channels, rng);
    p.attn.key = store.add_linear(prefix + ".attn.k", channels, channels, rng);
    p.attn.value = store.add_linear(prefix + ".attn.v", channels, channels, rng);
    p.attn.out = store.add_linear(prefix + ".attn.out", channels, channels, rng);
    p.rel_bias = store.add_linear(prefix + ".rel_bias", heads, 3, rng);
    p.ln2_gain = store.add(prefix + ".ln2.gain", Tensor::full({channels}, 1.0, true));
    p.ln2_bias = store.add(prefix + ".ln2.bias", Tensor::zeros({channels}, true));
    p.ffn_in = store.add_linear(prefix + ".ffn.in", channels * 4, channels, rng);
    p.ffn_out = store.add_linear(prefix + ".ffn.out", channels, channels * 4, rng);
    return p;
}

AreaTokens global_mhsa(AreaTokens tokens, const MhsaConfig& cfg, const GlobalBlockParams& params,
                       bool use_centroid_bias) {
    const std::size_t t = tokens.count();
    Tensor x = tokens.features;
    Tensor normed = layer_norm(x, params.ln1_gain, params.ln1_bias);

    Tensor attn_out;
    if (use_centroid_bias) {
        std::vector<double> deltas(3 * t * t);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < t; ++j) {
                const Vec3 d = tokens.centroids[i] - tokens.centroids[j];
                deltas[i * t + j] = d[0];
                deltas[t * t + i * t + j] = d[1];
                deltas[2 * t * t + i * t + j] = d[2];
            }
        }
        Tensor bias_flat = linear_apply(params.rel_bias, Tensor::from({3, t * t}, std::move(deltas)));
        std::vector<Tensor> head_bias;
        head_bias.reserve(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            head_bias.push_back(reshape(slice_rows(bias_flat, h, h + 1), {t, t}));
        }
        attn_out = multi_head_attention(normed, normed, cfg, params.attn, &head_bias);
    } else {
        attn_out = multi_head_attention(normed, normed, cfg, params.attn);
    }

    Tensor y = add(x, attn_out);
    Tensor normed2 = layer_norm(y, params.ln2_gain, params.ln2_bias);
    Tensor ff = linear_apply(params.ffn_out, gelu(linear_apply(params.ffn_in, normed2)));
    tokens.features = add(y, ff);
    return tokens;
}

Tensor redistribute(const AreaTokens& tokens, const AreaGrid& grid, const LinearLayer& proj) {
    std::map<std::size_t, std::size_t> token_of_area;
    for (std::size_t t = 0; t < tokens.count(); ++t) token_of_area[tokens.area_ids[t]] = t;
    std::vector<std::size_t> token_of_point(grid.area_of_point.size());
    for (std::size_t i = 0; i < grid.area_of_point.size(); ++i) {
        auto it = token_of_area.find(grid.area_of_point[i]);
        if (it == token_of_area.end()) {
            throw NumericError("redistribute: no token for area " +
                               std::to_string(grid.area_of_point[i]));
        }
        token_of_point[i] = it->second;
    }
    return select_cols(linear_apply(proj, tokens.features), token_of_point);
}

Tensor fuse(const Tensor& local_features, const Tensor& global_features,
            const LinearLayer& fusion) {
    if (local_features.shape() != global_features.shape()) {
        throw ShapeError("fuse: branch shapes " + shape_str(local_features.shape()) + " and " +
                         shape_str(global_features.shape()) + " differ");
    }
    Tensor cat = concat_rows(local_features, global_features);
    return add(local_features, linear_apply(fusion, cat));
}

GlobalPathParams GlobalPathParams::init(ParamStore& store, const std::string& prefix,
                                        std::size_t fea, std::size_t enc, std::size_t heads,
                                        Rng& rng) {
    GlobalPathParams p;
    p.enc = store.add_linear(prefix + ".enc", enc, 3, rng);
    p.block = GlobalBlockParams::init(store, prefix + ".block", fea + enc, heads, rng);
    p.proj = store.add_linear(prefix + ".proj", fea, fea + enc, rng);
    return p;
}

Tensor global_path(const PointCloud& pc, const AreaGrid& grid, const Tensor& features,
                   const MhsaConfig& cfg, const GlobalPathParams& params, bool use_centroid_bias) {
    AreaTokens tokens = aggregate_areas(pc, grid, features, params.enc);
    tokens = global_mhsa(std::move(tokens), cfg, params.block, use_centroid_bias);
    return redistribute(tokens, grid, params.proj);
}

}  // namespace pcseg

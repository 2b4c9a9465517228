#include "pcseg/network.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace pcseg {

void ModelConfig::validate() const {
    if (stage_channels.empty()) throw ConfigError("model needs at least one stage");
    if (stage_heads.size() != stage_count() || stage_target_areas.size() != stage_count()) {
        throw ConfigError("stage_channels, stage_heads and stage_target_areas must align");
    }
    for (std::size_t s = 0; s < stage_count(); ++s) {
        if (stage_heads[s] == 0 || stage_channels[s] % stage_heads[s] != 0) {
            throw ConfigError("stage " + std::to_string(s) + " width " +
                              std::to_string(stage_channels[s]) + " not divisible by " +
                              std::to_string(stage_heads[s]) + " heads");
        }
        if ((stage_channels[s] + enc_dim) % global_heads != 0) {
            throw ConfigError("stage " + std::to_string(s) + " width+enc " +
                              std::to_string(stage_channels[s] + enc_dim) +
                              " not divisible by " + std::to_string(global_heads) +
                              " global heads");
        }
    }
    if (class_count < 1) throw ConfigError("class_count must be >= 1");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda outside [0, 1]");
    if (presence_stage >= stage_count()) throw ConfigError("presence_stage out of range");
    if (pool_ratio <= 1.0) throw ConfigError("pool_ratio must exceed 1");
}

MhsaConfig ModelConfig::local_mhsa(std::size_t stage) const {
    MhsaConfig cfg;
    cfg.heads = stage_heads[stage];
    cfg.head_dim = stage_channels[stage] / stage_heads[stage];
    cfg.neighbor_rate = neighbor_rate;
    cfg.same_part_rate = same_part_rate;
    cfg.same_part_windows = same_part_windows;
    cfg.key_cap = key_cap;
    cfg.scale_logits = attn_scale;
    cfg.position_encoding = local_pos_enc;
    return cfg;
}

MhsaConfig ModelConfig::global_mhsa_cfg(std::size_t stage) const {
    MhsaConfig cfg;
    cfg.heads = global_heads;
    cfg.head_dim = (stage_channels[stage] + enc_dim) / global_heads;
    cfg.scale_logits = attn_scale;
    return cfg;
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["class_count"] = class_count;
    j["input_features"] = input_features;
    j["stage_channels"] = stage_channels;
    j["stage_heads"] = stage_heads;
    j["stage_target_areas"] = stage_target_areas;
    j["enc_dim"] = enc_dim;
    j["global_heads"] = global_heads;
    j["parts"] = partition.parts;
    j["dbscan_eps_factor"] = partition.dbscan_eps_factor;
    j["dbscan_min_pts"] = partition.dbscan_min_pts;
    j["density_weight"] = partition.density_weight;
    j["base_window_edge"] = partition.base_window_edge;
    j["window_ratio"] = partition.window_ratio;
    j["min_window_edge"] = partition.min_window_edge;
    j["neighbor_rate"] = neighbor_rate;
    j["same_part_rate"] = same_part_rate;
    j["same_part_windows"] = same_part_windows;
    j["key_cap"] = key_cap;
    j["attn_scale"] = attn_scale;
    j["local_pos_enc"] = local_pos_enc;
    j["global_centroid_bias"] = global_centroid_bias;
    j["density_feature"] = density_feature;
    j["pool_ratio"] = pool_ratio;
    j["lambda"] = lambda;
    j["presence_mode"] = presence_mode_name(presence_mode);
    j["presence_stage"] = presence_stage;
    j["presence_per_point"] = presence_per_point;
    j["seed"] = seed;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad model config json: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.version = j.at("version").get<int>();
        if (cfg.version != 1) {
            throw DataError("unsupported model config version " + std::to_string(cfg.version));
        }
        cfg.class_count = j.at("class_count").get<std::size_t>();
        cfg.input_features = j.at("input_features").get<std::size_t>();
        cfg.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
        cfg.stage_heads = j.at("stage_heads").get<std::vector<std::size_t>>();
        cfg.stage_target_areas = j.at("stage_target_areas").get<std::vector<std::size_t>>();
        cfg.enc_dim = j.at("enc_dim").get<std::size_t>();
        cfg.global_heads = j.at("global_heads").get<std::size_t>();
        cfg.partition.parts = j.at("parts").get<std::size_t>();
        cfg.partition.dbscan_eps_factor = j.at("dbscan_eps_factor").get<double>();
        cfg.partition.dbscan_min_pts = j.at("dbscan_min_pts").get<std::size_t>();
        cfg.partition.density_weight = j.at("density_weight").get<double>();
        cfg.partition.base_window_edge = j.at("base_window_edge").get<double>();
        cfg.partition.window_ratio = j.at("window_ratio").get<double>();
        cfg.partition.min_window_edge = j.at("min_window_edge").get<double>();
        cfg.neighbor_rate = j.at("neighbor_rate").get<double>();
        cfg.same_part_rate = j.at("same_part_rate").get<double>();
        cfg.same_part_windows = j.at("same_part_windows").get<std::size_t>();
        cfg.key_cap = j.at("key_cap").get<std::size_t>();
        cfg.attn_scale = j.at("attn_scale").get<bool>();
        cfg.local_pos_enc = j.at("local_pos_enc").get<bool>();
        cfg.global_centroid_bias = j.at("global_centroid_bias").get<bool>();
        cfg.density_feature = j.at("density_feature").get<bool>();
        cfg.pool_ratio = j.at("pool_ratio").get<double>();
        cfg.lambda = j.at("lambda").get<double>();
        cfg.presence_mode = j.at("presence_mode").get<std::string>() == "per_point"
                                ? PresenceLabelMode::per_point
                                : PresenceLabelMode::scene_broadcast;
        cfg.presence_stage = j.at("presence_stage").get<std::size_t>();
        cfg.presence_per_point = j.at("presence_per_point").get<bool>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model config missing field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---- pooling ---------------------------------------------------------------

PoolMap build_pool_map(const PointCloud& pc, std::size_t target_cells) {
    AreaGrid grid = build_grid(pc, std::max<std::size_t>(1, target_cells));
    PoolMap map;
    map.cell_of_point.resize(pc.size());
    std::map<std::size_t, std::size_t> dense;
    for (std::size_t area : grid.nonempty_areas) {
        dense[area] = map.coarse.positions.size();
        map.coarse.positions.push_back(grid.centroid_of_area[area]);
    }
    for (std::size_t i = 0; i < pc.size(); ++i) {
        map.cell_of_point[i] = dense.at(grid.area_of_point[i]);
    }
    return map;
}

Tensor downsample(const Tensor& features, const PoolMap& map) {
    return col_segment_max(features, map.cell_of_point, map.coarse.size());
}

Tensor upsample(const Tensor& coarse_features, const PoolMap& map) {
    if (coarse_features.cols() != map.coarse.size()) {
        throw NumericError("upsample: coarse feature count does not match the pool map");
    }
    return select_cols(coarse_features, map.cell_of_point);
}

// ---- model -----------------------------------------------------------------

SegmentationModel::SegmentationModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t in_dim = 3 + cfg_.input_features;
    embed_ = params_.add_linear("embed", cfg_.stage_channels[0], in_dim, rng);
    for (std::size_t s = 0; s < cfg_.stage_count(); ++s) {
        const std::string prefix = "stage" + std::to_string(s);
        const std::size_t w = cfg_.stage_channels[s];
        Stage stage;
        stage.local = LocalStageParams::init(params_, prefix + ".local", w, rng);
        stage.global =
            GlobalPathParams::init(params_, prefix + ".global", w, cfg_.enc_dim, cfg_.global_heads, rng);
        stage.fusion = params_.add_linear(prefix + ".fusion", w, 2 * w, rng);
        if (s + 1 < cfg_.stage_count()) {
            stage.down = params_.add_linear(prefix + ".down", cfg_.stage_channels[s + 1], w, rng);
            stage.up = params_.add_linear(prefix + ".up", w, cfg_.stage_channels[s + 1] + w, rng);
        }
        if (cfg_.density_feature) {
            stage.density = params_.add_linear(prefix + ".density", w, 1, rng);
        }
        stages_.push_back(std::move(stage));
    }
    head_ = params_.add_linear("head", cfg_.class_count, cfg_.stage_channels[0], rng);
    presence_ = params_.add_linear("presence", cfg_.class_count,
                                   cfg_.stage_channels[cfg_.presence_stage], rng);
}

std::size_t SegmentationModel::presence_param_count() const {
    return presence_.weight.size() + presence_.bias.size();
}

ForwardOutput SegmentationModel::forward(const PointCloud& pc, std::uint64_t sample_seed) const {
    pc.validate();
    if (pc.feature_dim != cfg_.input_features) {
        throw ConfigError("cloud has " + std::to_string(pc.feature_dim) +
                          " extra feature channels, model expects " +
                          std::to_string(cfg_.input_features));
    }
    const std::size_t n0 = pc.size();
    const std::size_t in_dim = 3 + cfg_.input_features;

    std::vector<double> raw(in_dim * n0);
    for (std::size_t i = 0; i < n0; ++i) {
        for (int a = 0; a < 3; ++a) raw[a * n0 + i] = pc.positions[i][a];
        for (std::size_t f = 0; f < cfg_.input_features; ++f) {
            raw[(3 + f) * n0 + i] = pc.features[i * cfg_.input_features + f];
        }
    }
    Tensor x = linear_apply(embed_, Tensor::from({in_dim, n0}, std::move(raw)));

    const Rng seeder(sample_seed);
    const std::size_t s_count = cfg_.stage_count();
    std::vector<PointCloud> clouds(s_count);
    std::vector<Tensor> locals(s_count), globals(s_count);
    std::vector<PoolMap> pools;  // pools[s] maps stage s points to stage s+1 cells
    clouds[0] = pc;
    clouds[0].labels.clear();

    for (std::size_t s = 0; s < s_count; ++s) {
        const PointCloud& cloud = clouds[s];
        AreaGrid grid = build_grid(cloud, cfg_.stage_target_areas[s]);
        DensityPartition parts = make_partition(grid, cfg_.partition);

        if (cfg_.density_feature) {
            std::vector<double> dens(cloud.size());
            for (std::size_t i = 0; i < cloud.size(); ++i) {
                dens[i] = parts.density_of_area.at(grid.area_of_point[i]);
            }
            x = add(x, linear_apply(*stages_[s].density, Tensor::from({1, cloud.size()}, std::move(dens))));
        }

        locals[s] = local_stage(x, cloud, grid, parts, cfg_.local_mhsa(s), stages_[s].local,
                                seeder.split(s * 2 + 1).raw());
        globals[s] = global_path(cloud, grid, x, cfg_.global_mhsa_cfg(s), stages_[s].global,
                                 cfg_.global_centroid_bias);

        if (s + 1 < s_count) {
            const std::size_t target =
                std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                             static_cast<double>(cloud.size()) / cfg_.pool_ratio)));
            PoolMap pool = build_pool_map(cloud, target);
            x = linear_apply(*stages_[s].down, downsample(locals[s], pool));
            clouds[s + 1] = pool.coarse;
            pools.push_back(std::move(pool));
        }
    }

    // decoder: deepest stage fuses in place, then walk up
    Tensor d = fuse(locals[s_count - 1], globals[s_count - 1], stages_[s_count - 1].fusion);
    for (std::size_t s = s_count - 1; s-- > 0;) {
        Tensor u = upsample(d, pools[s]);
        Tensor cat = concat_rows(u, locals[s]);
        d = linear_apply(*stages_[s].up, cat);
        d = fuse(d, globals[s], stages_[s].fusion);
    }

    ForwardOutput out;
    out.logits = transpose(linear_apply(head_, d));

    const std::size_t ps = cfg_.presence_stage;
    Tensor pooled =
        col_segment_max(locals[ps], std::vector<std::size_t>(clouds[ps].size(), 0), 1);
    Tensor scene_logits = linear_apply(presence_, pooled);  // [C x 1]
    out.presence_logits = reshape(scene_logits, {cfg_.class_count});

    if (cfg_.presence_per_point) {
        // per-point head at the presence stage, mapped back down the pooling chain
        Tensor per_point = linear_apply(presence_, locals[ps]);  // [C x N_ps]
        for (std::size_t s = ps; s-- > 0;) per_point = upsample(per_point, pools[s]);
        out.per_point_presence = transpose(per_point);
    } else {
        out.per_point_presence =
            transpose(select_cols(scene_logits, std::vector<std::size_t>(n0, 0)));
    }
    return out;
}

std::vector<int> argmax_labels(const Tensor& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k) {
            if (logits.at(i, k) > logits.at(i, best)) best = k;
        }
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

std::vector<int> SegmentationModel::predict(const PointCloud& pc, std::uint64_t sample_seed) const {
    return argmax_labels(forward(pc, sample_seed).logits);
}

void SegmentationModel::save(const std::string& path) const {
    save_checkpoint(path, params_, cfg_.to_json());
}

SegmentationModel SegmentationModel::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    SegmentationModel model(ModelConfig::from_json(ckpt.meta));
    restore_params(model.params_, ckpt);
    return model;
}

}  // namespace pcseg

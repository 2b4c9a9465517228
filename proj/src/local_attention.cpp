#include "pcseg/local_attention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace pcseg {

std::vector<AttentionWindow> tile_windows(const PointCloud& pc, const AreaGrid& grid,
                                          const DensityPartition& partition, bool shifted) {
    std::vector<AttentionWindow> windows;
    for (std::size_t area : grid.nonempty_areas) {
        const int part = partition.part_of_area.at(area);
        const double edge = partition.window_edge_of_part.at(static_cast<std::size_t>(part));
        Vec3 origin = grid.area_min_corner(area);
        double span = grid.area_edge;
        if (shifted) {
            const double half = edge * 0.5;
            origin = origin - Vec3{half, half, half};
            span += half;
        }
        // points on the area's far face clamp into the last cell, matching
        // the grid's own boundary rule
        const std::int64_t max_cell =
            std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(span / edge - 1e-12)) - 1);
        std::map<std::array<std::int64_t, 3>, std::size_t> cell_to_window;
        for (std::size_t i : grid.points_of_area[area]) {
            std::array<std::int64_t, 3> cell;
            for (int a = 0; a < 3; ++a) {
                cell[a] = static_cast<std::int64_t>(std::floor((pc.positions[i][a] - origin[a]) / edge));
                cell[a] = std::clamp<std::int64_t>(cell[a], 0, max_cell);
            }
            auto it = cell_to_window.find(cell);
            if (it == cell_to_window.end()) {
                AttentionWindow w;
                w.area_id = area;
                w.cell = cell;
                w.density_part = part;
                w.center = {origin[0] + (static_cast<double>(cell[0]) + 0.5) * edge,
                            origin[1] + (static_cast<double>(cell[1]) + 0.5) * edge,
                            origin[2] + (static_cast<double>(cell[2]) + 0.5) * edge};
                it = cell_to_window.emplace(cell, windows.size()).first;
                windows.push_back(std::move(w));
            }
            windows[it->second].member_points.push_back(i);
        }
    }
    for (std::size_t i = 0; i < windows.size(); ++i) windows[i].id = i;
    return windows;
}

namespace {

// deterministic sample of k member points from a source window
void sample_from(const AttentionWindow& source, double rate, Rng& rng,
                 std::vector<std::size_t>& into) {
    const std::size_t n = source.member_points.size();
    const std::size_t k = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::llround(rate * static_cast<double>(n))));
    if (k == 0) return;
    std::vector<std::size_t> pool = source.member_points;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
        into.push_back(pool[i]);
    }
}

}  // namespace

std::vector<AttentionWindow> select_keys(std::vector<AttentionWindow> windows,
                                         const MhsaConfig& cfg, std::uint64_t seed) {
    // window lookup by (area, cell) for face adjacency, and by part for
    // same-density sampling
    std::map<std::pair<std::size_t, std::array<std::int64_t, 3>>, std::size_t> by_cell;
    std::map<int, std::vector<std::size_t>> by_part;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        by_cell[{windows[w].area_id, windows[w].cell}] = w;
        by_part[windows[w].density_part].push_back(w);
    }
    const Rng base(seed);

    for (std::size_t w = 0; w < windows.size(); ++w) {
        AttentionWindow& win = windows[w];
        win.key_points = win.member_points;
        Rng rng = base.split(win.id * 2654435761ULL + 1);

        std::vector<std::size_t> external;
        std::set<std::size_t> neighbor_ids;
        for (int axis = 0; axis < 3; ++axis) {
            for (int dir : {-1, 1}) {
                auto cell = win.cell;
                cell[axis] += dir;
                auto it = by_cell.find({win.area_id, cell});
                if (it == by_cell.end()) continue;
                neighbor_ids.insert(it->second);
                sample_from(windows[it->second], cfg.neighbor_rate, rng, external);
            }
        }
        if (cfg.same_part_windows > 0 && cfg.same_part_rate > 0.0) {
            std::vector<std::size_t> candidates;
            for (std::size_t other : by_part[win.density_part]) {
                if (other != w && !neighbor_ids.count(other)) candidates.push_back(other);
            }
            rng.shuffle(candidates);
            const std::size_t m = std::min(cfg.same_part_windows, candidates.size());
            for (std::size_t i = 0; i < m; ++i) {
                sample_from(windows[candidates[i]], cfg.same_part_rate, rng, external);
            }
        }

        std::set<std::size_t> seen(win.member_points.begin(), win.member_points.end());
        for (std::size_t p : external) {
            if (win.key_points.size() >= std::max(cfg.key_cap, win.member_points.size())) break;
            if (seen.insert(p).second) win.key_points.push_back(p);
        }
    }
    return windows;
}

std::vector<Tensor> attention_maps(const Tensor& q, const Tensor& k, const MhsaConfig& cfg,
                                   const std::vector<Tensor>* head_logit_bias) {
    if (q.rows() != cfg.channels() || k.rows() != cfg.channels()) {
        throw ConfigError("attention input channels " + std::to_string(q.rows()) +
                          " != heads*head_dim " + std::to_string(cfg.channels()));
    }
    const double scale = cfg.scale_logits ? 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)) : 1.0;
    std::vector<Tensor> maps;
    maps.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t r0 = h * cfg.head_dim, r1 = (h + 1) * cfg.head_dim;
        Tensor logits = matmul(transpose(slice_rows(q, r0, r1)), slice_rows(k, r0, r1));
        if (scale != 1.0) logits = pcseg::scale(logits, scale);
        if (head_logit_bias) logits = add(logits, (*head_logit_bias)[h]);
        maps.push_back(softmax(logits, 1));
    }
    return maps;
}

Tensor multi_head_attention(const Tensor& queries_x, const Tensor& keys_x, const MhsaConfig& cfg,
                            const AttentionParams& params,
                            const std::vector<Tensor>* head_logit_bias) {
    Tensor q = linear_apply(params.query, queries_x);
    Tensor k = linear_apply(params.key, keys_x);
    Tensor v = linear_apply(params.value, keys_x);
    const std::vector<Tensor> maps = attention_maps(q, k, cfg, head_logit_bias);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t r0 = h * cfg.head_dim, r1 = (h + 1) * cfg.head_dim;
        head_outputs.push_back(matmul(slice_rows(v, r0, r1), transpose(maps[h])));
    }
    Tensor merged = head_outputs[0];
    for (std::size_t h = 1; h < cfg.heads; ++h) merged = concat_rows(merged, head_outputs[h]);
    return linear_apply(params.out, merged);
}

Tensor window_mhsa(const Tensor& x, std::size_t n_queries, const MhsaConfig& cfg,
                   const AttentionParams& params) {
    if (n_queries == 0 || n_queries > x.cols()) {
        throw ConfigError("window_mhsa: query count " + std::to_string(n_queries) +
                          " invalid for " + std::to_string(x.cols()) + " keys");
    }
    std::vector<std::size_t> member_cols(n_queries);
    for (std::size_t i = 0; i < n_queries; ++i) member_cols[i] = i;
    return multi_head_attention(select_cols(x, member_cols), x, cfg, params);
}

BlockParams BlockParams::init(ParamStore& store, const std::string& prefix, std::size_t channels,
                              Rng& rng) {
    BlockParams p;
    p.ln1_gain = store.add(prefix + ".ln1.gain", Tensor::full({channels}, 1.0, true));
    p.ln1_bias = store.add(prefix + ".ln1.bias", Tensor::zeros({channels}, true));
    p.attn.query = store.add_linear(prefix + ".attn.q", channels, channels, rng);
    p.attn.key = store.add_linear(prefix + ".attn.k", channels, channels, rng);
    p.attn.value = store.add_linear(prefix + ".attn.v", channels, channels, rng);
    p.attn.out = store.add_linear(prefix + ".attn.out", channels, channels, rng);
    p.pos_enc = store.add_linear(prefix + ".pos_enc", channels, 3, rng);
    p.ln2_gain = store.add(prefix + ".ln2.gain", Tensor::full({channels}, 1.0, true));
    p.ln2_bias = store.add(prefix + ".ln2.bias", Tensor::zeros({channels}, true));
    p.ffn_in = store.add_linear(prefix + ".ffn.in", channels * 4, channels, rng);
    p.ffn_out = store.add_linear(prefix + ".ffn.out", channels, channels * 4, rng);
    return p;
}

Tensor local_block(const Tensor& features, const PointCloud& pc,
                   const std::vector<AttentionWindow>& windows, const MhsaConfig& cfg,
                   const BlockParams& params) {
    const std::size_t n = features.cols();
    Tensor normed = layer_norm(features, params.ln1_gain, params.ln1_bias);

    std::vector<Tensor> window_outputs;
    window_outputs.reserve(windows.size());
    std::vector<std::size_t> order;
    order.reserve(n);
    for (const AttentionWindow& w : windows) {
        Tensor keys_x = select_cols(normed, w.key_points);
        if (cfg.position_encoding) {
            std::vector<double> rel(3 * w.key_points.size());
            for (std::size_t j = 0; j < w.key_points.size(); ++j) {
                const Vec3 d = pc.positions[w.key_points[j]] - w.center;
                rel[j] = d[0];
                rel[w.key_points.size() + j] = d[1];
                rel[2 * w.key_points.size() + j] = d[2];
            }
            Tensor rel_t = Tensor::from({3, w.key_points.size()}, std::move(rel));
            keys_x = add(keys_x, linear_apply(params.pos_enc, rel_t));
        }
        std::vector<std::size_t> member_cols(w.member_points.size());
        for (std::size_t i = 0; i < member_cols.size(); ++i) member_cols[i] = i;
        Tensor queries_x = select_cols(keys_x, member_cols);
        window_outputs.push_back(multi_head_attention(queries_x, keys_x, cfg, params.attn));
        order.insert(order.end(), w.member_points.begin(), w.member_points.end());
    }
    // windows partition the points: scatter outputs back to input order
    std::vector<std::size_t> inverse(n);
    for (std::size_t j = 0; j < n; ++j) inverse[order[j]] = j;
    Tensor attn_out = select_cols(concat_cols(window_outputs), inverse);

    Tensor y = add(features, attn_out);
    Tensor normed2 = layer_norm(y, params.ln2_gain, params.ln2_bias);
    Tensor ff = linear_apply(params.ffn_out, gelu(linear_apply(params.ffn_in, normed2)));
    return add(y, ff);
}

LocalStageParams LocalStageParams::init(ParamStore& store, const std::string& prefix,
                                        std::size_t channels, Rng& rng) {
    LocalStageParams p;
    p.unshifted = BlockParams::init(store, prefix + ".block0", channels, rng);
    p.shifted = BlockParams::init(store, prefix + ".block1", channels, rng);
    return p;
}

Tensor local_stage(const Tensor& features, const PointCloud& pc, const AreaGrid& grid,
                   const DensityPartition& partition, const MhsaConfig& cfg,
                   const LocalStageParams& params, std::uint64_t key_seed) {
    auto unshifted = select_keys(tile_windows(pc, grid, partition, false), cfg, key_seed);
    Tensor mid = local_block(features, pc, unshifted, cfg, params.unshifted);
    auto shifted = select_keys(tile_windows(pc, grid, partition, true), cfg, key_seed + 1);
    return local_block(mid, pc, shifted, cfg, params.shifted);
}

}  // namespace pcseg

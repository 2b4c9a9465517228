#include "pcseg/partition.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_map>

namespace pcseg {

std::array<std::size_t, 3> AreaGrid::area_coords(std::size_t area_id) const {
    const std::size_t nx = grid_dims[0], ny = grid_dims[1];
    return {area_id % nx, (area_id / nx) % ny, area_id / (nx * ny)};
}

Vec3 AreaGrid::area_min_corner(std::size_t area_id) const {
    const auto c = area_coords(area_id);
    return {origin[0] + static_cast<double>(c[0]) * area_edge,
            origin[1] + static_cast<double>(c[1]) * area_edge,
            origin[2] + static_cast<double>(c[2]) * area_edge};
}

AreaGrid build_grid(const PointCloud& pc, std::size_t target_area_count, const GridConfig& cfg) {
    if (target_area_count < 1) throw ConfigError("target_area_count must be >= 1");
    pc.validate();

    AreaGrid grid;
    grid.target_area_count = target_area_count;

    Vec3 lo = pc.positions[0], hi = pc.positions[0];
    for (const Vec3& p : pc.positions) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    grid.origin = lo;
    grid.extent = hi - lo;

    // Adaptive edge: volume / target for a full box; for degenerate boxes the
    // product runs over nonzero extents only (d of them), falling back to a
    // single area when every extent is zero.
    int d = 0;
    double measure = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (grid.extent[a] > 0.0) {
            ++d;
            measure *= grid.extent[a];
        }
    }
    double edge;
    if (d == 0) {
        edge = 1.0;  // all points identical: one area
    } else {
        edge = std::pow(measure / static_cast<double>(target_area_count), 1.0 / d);
        if (edge <= 0.0 || !std::isfinite(edge)) edge = 1.0;
    }
    edge = std::clamp(edge, cfg.min_edge, cfg.max_edge);
    grid.area_edge = edge;

    for (int a = 0; a < 3; ++a) {
        grid.grid_dims[a] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(grid.extent[a] / edge - 1e-12)));
    }

    const std::size_t cells = grid.cell_count();
    grid.points_of_area.assign(cells, {});
    grid.area_of_point.resize(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        std::size_t idx[3];
        for (int a = 0; a < 3; ++a) {
            double t = (pc.positions[i][a] - grid.origin[a]) / edge;
            std::size_t c = static_cast<std::size_t>(std::max(0.0, std::floor(t)));
            idx[a] = std::min(c, grid.grid_dims[a] - 1);
        }
        const std::size_t area = idx[0] + grid.grid_dims[0] * (idx[1] + grid.grid_dims[1] * idx[2]);
        grid.area_of_point[i] = area;
        grid.points_of_area[area].push_back(i);
    }
    grid.centroid_of_area.assign(cells, {0, 0, 0});
    for (std::size_t area = 0; area < cells; ++area) {
        const auto& pts = grid.points_of_area[area];
        if (pts.empty()) continue;
        grid.nonempty_areas.push_back(area);
        Vec3 c{0, 0, 0};
        for (std::size_t i : pts) c = c + pc.positions[i];
        grid.centroid_of_area[area] = c * (1.0 / static_cast<double>(pts.size()));
    }
    return grid;
}

std::map<std::size_t, double> compute_densities(const AreaGrid& grid) {
    std::size_t max_count = 0;
    for (std::size_t area : grid.nonempty_areas) {
        max_count = std::max(max_count, grid.points_of_area[area].size());
    }
    std::map<std::size_t, double> densities;
    for (std::size_t area : grid.nonempty_areas) {
        densities[area] = static_cast<double>(grid.points_of_area[area].size()) /
                          static_cast<double>(max_count);
    }
    return densities;
}

// ---- DBSCAN -------------------------------------------------------------------

namespace {

struct CellKeyHash {
    std::size_t operator()(const std::vector<std::int64_t>& key) const {
        std::size_t h = 0xcbf29ce484222325ULL;
        for (std::int64_t v : key) {
            h ^= static_cast<std::size_t>(v);
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::vector<int> dbscan(const std::vector<std::vector<double>>& points, double eps,
                        std::size_t min_pts) {
    if (eps <= 0.0) throw ConfigError("dbscan eps must be positive");
    if (min_pts < 1) throw ConfigError("dbscan min_pts must be >= 1");
    const std::size_t m = points.size();
    std::vector<int> labels(m, kNoise);
    if (m == 0) return labels;
    const std::size_t dim = points[0].size();
    for (const auto& p : points) {
        if (p.size() != dim) throw ShapeError("dbscan points must share one dimension");
    }

    // Spatial hash with cell size eps: all neighbors of a point lie in the
    // 3^D adjacent cells.
    std::unordered_map<std::vector<std::int64_t>, std::vector<std::size_t>, CellKeyHash> cells;
    auto cell_key = [&](const std::vector<double>& p) {
        std::vector<std::int64_t> key(dim);
        for (std::size_t a = 0; a < dim; ++a) {
            key[a] = static_cast<std::int64_t>(std::floor(p[a] / eps));
        }
        return key;
    };
    for (std::size_t i = 0; i < m; ++i) cells[cell_key(points[i])].push_back(i);

    const double eps_sq = eps * eps;
    std::vector<std::vector<std::size_t>> neighbors(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto base = cell_key(points[i]);
        std::vector<std::int64_t> probe(dim);
        // odometer over the 3^D adjacent cells
        std::vector<int> offset(dim, -1);
        while (true) {
            for (std::size_t a = 0; a < dim; ++a) probe[a] = base[a] + offset[a];
            auto it = cells.find(probe);
            if (it != cells.end()) {
                for (std::size_t j : it->second) {
                    if (sq_dist(points[i], points[j]) <= eps_sq) neighbors[i].push_back(j);
                }
            }
            std::size_t a = 0;
            while (a < dim && offset[a] == 1) offset[a++] = -1;
            if (a == dim) break;
            ++offset[a];
        }
        std::sort(neighbors[i].begin(), neighbors[i].end());
    }

    std::vector<char> core(m, 0);
    for (std::size_t i = 0; i < m; ++i) core[i] = neighbors[i].size() >= min_pts;

    // Clusters are connected components of the core points.
    std::vector<int> comp(m, -1);
    int next_comp = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!core[i] || comp[i] >= 0) continue;
        const int c = next_comp++;
        std::deque<std::size_t> queue{i};
        comp[i] = c;
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (std::size_t v : neighbors[u]) {
                if (core[v] && comp[v] < 0) {
                    comp[v] = c;
                    queue.push_back(v);
                }
            }
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (core[i]) {
            labels[i] = comp[i];
        } else {
            // border point: lowest-indexed core neighbor decides the cluster
            for (std::size_t v : neighbors[i]) {
                if (core[v]) {
                    labels[i] = comp[v];
                    break;
                }
            }
        }
    }

    // canonical ids: clusters numbered by their lowest member index
    std::vector<int> first_seen(next_comp, -1);
    int canon = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= 0 && first_seen[labels[i]] < 0) first_seen[labels[i]] = canon++;
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= 0) labels[i] = first_seen[labels[i]];
    }
    return labels;
}

// ---- density parts --------------------------------------------------------------

std::vector<std::vector<double>> partition_embedding(const AreaGrid& grid,
                                                     const std::map<std::size_t, double>& densities,
                                                     double density_weight) {
    double span = std::max({grid.extent[0], grid.extent[1], grid.extent[2]});
    if (span <= 0.0) span = 1.0;
    std::vector<std::vector<double>> embedded;
    embedded.reserve(grid.nonempty_areas.size());
    for (std::size_t area : grid.nonempty_areas) {
        const Vec3& c = grid.centroid_of_area[area];
        const double density = densities.at(area);
        embedded.push_back({(c[0] - grid.origin[0]) / span, (c[1] - grid.origin[1]) / span,
                            (c[2] - grid.origin[2]) / span, density * density_weight});
    }
    return embedded;
}

double embedding_eps(const AreaGrid& grid, double eps_meters) {
    double span = std::max({grid.extent[0], grid.extent[1], grid.extent[2]});
    if (span <= 0.0) span = 1.0;
    return eps_meters / span;
}

DensityPartition cluster_density_parts(const AreaGrid& grid,
                                       const std::map<std::size_t, double>& densities,
                                       std::size_t k, double eps_meters, std::size_t min_pts,
                                       double density_weight) {
    if (k < 1) throw ConfigError("part count must be >= 1");
    if (eps_meters <= 0.0) throw ConfigError("eps must be positive");
    if (min_pts < 1) throw ConfigError("min_pts must be >= 1");

    DensityPartition result;
    result.density_of_area = densities;

    const std::vector<std::size_t>& areas = grid.nonempty_areas;
    const std::size_t a_total = areas.size();
    if (a_total == 0) throw DataError("grid has no nonempty areas");

    if (k > a_total) {
        result.warning = "part count clamped from " + std::to_string(k) + " to " +
                         std::to_string(a_total) + " (nonempty areas)";
        k = a_total;
    }

    const auto embedded = partition_embedding(grid, densities, density_weight);
    const std::vector<int> cluster = dbscan(embedded, embedding_eps(grid, eps_meters), min_pts);

    // order non-noise areas by density; all-noise degenerates to cutting over
    // every area
    std::vector<std::size_t> order;  // indices into `areas`
    for (std::size_t i = 0; i < a_total; ++i) {
        if (cluster[i] != kNoise) order.push_back(i);
    }
    const bool all_noise = order.empty();
    if (all_noise) {
        for (std::size_t i = 0; i < a_total; ++i) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
        const double dl = densities.at(areas[lhs]), dr = densities.at(areas[rhs]);
        if (dl != dr) return dl < dr;
        return areas[lhs] < areas[rhs];
    });

    // K-quantile cuts, snapped right so runs of equal density never split;
    // strict mean-density monotonicity across parts takes precedence over
    // balanced part sizes
    const std::size_t n = order.size();
    std::vector<std::size_t> cuts;  // part k covers [cuts[k], cuts[k+1])
    cuts.push_back(0);
    for (std::size_t part = 1; part < k; ++part) {
        std::size_t c = (n * part) / k;
        while (c < n && c > 0 &&
               densities.at(areas[order[c]]) == densities.at(areas[order[c - 1]])) {
            ++c;
        }
        if (c >= n || c <= cuts.back()) continue;  // run swallowed this cut
        cuts.push_back(c);
    }
    cuts.push_back(n);
    const std::size_t effective_parts = cuts.size() - 1;
    if (effective_parts < k && result.warning.empty()) {
        result.warning = "part count clamped from " + std::to_string(k) + " to " +
                         std::to_string(effective_parts) +
                         " (density ties or too few non-noise areas)";
    }
    result.part_count = effective_parts;

    for (std::size_t part = 0; part + 1 < cuts.size(); ++part) {
        for (std::size_t i = cuts[part]; i < cuts[part + 1]; ++i) {
            result.part_of_area[areas[order[i]]] = static_cast<int>(part);
        }
    }

    // Noise areas join the part of the non-noise area with the nearest
    // density (ties: nearest centroid, then lowest area id). Nearest-density
    // snapping keeps per-part density intervals disjoint, which guarantees
    // the strict mean-density ordering across parts; snapping by centroid
    // alone can drop a density outlier (the dense small-object case) into a
    // sparse part and break that ordering.
    if (!all_noise) {
        for (std::size_t i = 0; i < a_total; ++i) {
            if (cluster[i] != kNoise) continue;
            const double di = densities.at(areas[i]);
            const Vec3& ci = grid.centroid_of_area[areas[i]];
            double best_dd = std::numeric_limits<double>::infinity();
            double best_cd = std::numeric_limits<double>::infinity();
            std::size_t best_area = areas[order[0]];
            for (std::size_t j : order) {
                const std::size_t ja = areas[j];
                const double dd = std::fabs(densities.at(ja) - di);
                const double cd = norm(grid.centroid_of_area[ja] - ci);
                if (dd < best_dd || (dd == best_dd && cd < best_cd) ||
                    (dd == best_dd && cd == best_cd && ja < best_area)) {
                    best_dd = dd;
                    best_cd = cd;
                    best_area = ja;
                }
            }
            result.part_of_area[areas[i]] = result.part_of_area.at(best_area);
        }
    }
    return result;
}

DensityPartition assign_window_sizes(DensityPartition partition, double base_window_edge,
                                     double ratio, double area_edge, double min_window_edge) {
    if (ratio <= 1.0) throw ConfigError("window ratio must exceed 1");
    const std::size_t k = partition.part_count;
    partition.window_edge_of_part.resize(k);
    for (std::size_t part = 0; part < k; ++part) {
        const double raw = base_window_edge * std::pow(ratio, static_cast<double>(k - 1 - part));
        partition.window_edge_of_part[part] =
            std::clamp(raw, std::min(min_window_edge, area_edge), area_edge);
    }
    return partition;
}

DensityPartition make_partition(const AreaGrid& grid, const PartitionConfig& cfg) {
    auto densities = compute_densities(grid);
    DensityPartition parts =
        cluster_density_parts(grid, densities, cfg.parts, cfg.dbscan_eps_factor * grid.area_edge,
                              cfg.dbscan_min_pts, cfg.density_weight);
    return assign_window_sizes(std::move(parts), cfg.base_window_edge, cfg.window_ratio,
                               grid.area_edge, cfg.min_window_edge);
}

}  // namespace pcseg

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcseg/pointcloud.hpp"

namespace pcseg {

// Axis-aligned cubic partition of the cloud's bounding box. The edge length
// is computed adaptively so the nonempty-area count lands near a target,
// keeping the follow-up global attention over area tokens similarly sized
// across inputs.
struct AreaGrid {
    double area_edge = 1.0;
    std::array<std::size_t, 3> grid_dims{1, 1, 1};
    Vec3 origin{0, 0, 0};  // bounding-box minimum
    Vec3 extent{0, 0, 0};  // bounding-box size
    std::size_t target_area_count = 1;

    std::vector<std::size_t> area_of_point;
    std::vector<std::vector<std::size_t>> points_of_area;  // indexed by area id
    std::vector<std::size_t> nonempty_areas;               // ascending area ids
    std::vector<Vec3> centroid_of_area;                    // point centroid, nonempty areas only

    std::size_t cell_count() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
    std::array<std::size_t, 3> area_coords(std::size_t area_id) const;
    Vec3 area_min_corner(std::size_t area_id) const;
};

struct GridConfig {
    double min_edge = 1e-6;
    double max_edge = 1e12;
};

AreaGrid build_grid(const PointCloud& pc, std::size_t target_area_count, const GridConfig& cfg = {});

// density_i = N_i / max_j N_j over nonempty areas, in (0, 1].
std::map<std::size_t, double> compute_densities(const AreaGrid& grid);

// ---- DBSCAN -----------------------------------------------------------------

constexpr int kNoise = -1;

// Exact DBSCAN over M points of dimension D (closed eps-ball, neighborhood
// includes the point itself). Clusters are the connected components of core
// points; border points attach to the cluster of their lowest-indexed core
// neighbor, which makes the labeling order-independent. Cluster ids are
// canonicalized by each cluster's lowest member index.
std::vector<int> dbscan(const std::vector<std::vector<double>>& points, double eps,
                        std::size_t min_pts);

// ---- density parts ----------------------------------------------------------

struct DensityPartition {
    std::map<std::size_t, double> density_of_area;
    std::map<std::size_t, int> part_of_area;  // values in [0, part_count)
    std::size_t part_count = 0;
    std::vector<double> window_edge_of_part;  // decreasing in part index
    std::string warning;                      // nonempty when K was clamped
};

// The 4-D embedding clustered by DBSCAN: area point-centroid scaled by the
// largest bounding-box extent, plus the density value times density_weight.
// Exposed so tests can drive reference implementations over the same space.
std::vector<std::vector<double>> partition_embedding(const AreaGrid& grid,
                                                     const std::map<std::size_t, double>& densities,
                                                     double density_weight);
// Converts an eps given in meters into the scaled embedding space.
double embedding_eps(const AreaGrid& grid, double eps_meters);

// Two-stage density division. DBSCAN over the 4-D embedding marks noise
// areas; the authoritative K parts come from ordering areas by density and
// cutting at K-quantiles. Cuts never split a run of equal densities (they
// snap right), so mean density increases strictly across parts; when fewer
// distinct densities than K exist the part count shrinks and a warning is
// recorded. Noise areas join the part of the non-noise area with the nearest
// density value (ties resolved by centroid distance, then area id), which
// keeps the per-part density intervals disjoint.
DensityPartition cluster_density_parts(const AreaGrid& grid,
                                       const std::map<std::size_t, double>& densities,
                                       std::size_t k, double eps_meters, std::size_t min_pts,
                                       double density_weight = 1.0);

// window_edge_of_part[k] = base * ratio^(K-1-k), clamped into
// [min_window_edge, area_edge]; the sparsest part gets the largest window.
DensityPartition assign_window_sizes(DensityPartition partition, double base_window_edge,
                                     double ratio, double area_edge, double min_window_edge);

struct PartitionConfig {
    std::size_t parts = 5;  // 5 fits indoor-scale scenes, 7 outdoor-scale
    double dbscan_eps_factor = 1.5;  // eps = factor * area_edge
    std::size_t dbscan_min_pts = 4;
    double density_weight = 1.0;
    double base_window_edge = 0.5;
    double window_ratio = 2.0;
    double min_window_edge = 0.05;
};

// densities + parts + window sizes in one call.
DensityPartition make_partition(const AreaGrid& grid, const PartitionConfig& cfg);

}  // namespace pcseg

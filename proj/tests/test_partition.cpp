#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "oracle_dbscan.hpp"
#include "pcseg/partition.hpp"

using namespace pcseg;

namespace {

PointCloud uniform_cloud(std::size_t n, std::uint64_t seed, Vec3 extent = {10, 10, 10}) {
    Rng rng(seed);
    PointCloud pc;
    for (std::size_t i = 0; i < n; ++i) {
        pc.positions.push_back({rng.uniform(0, extent[0]), rng.uniform(0, extent[1]),
                                rng.uniform(0, extent[2])});
    }
    return pc;
}

PointCloud clustered_cloud(std::uint64_t seed) {
    SceneSpec spec = imbalanced_scene_spec(seed);
    return generate_scene(spec);
}

}  // namespace

TEST_CASE("grid edge forced by cube corners") {
    PointCloud pc;
    for (double x : {0.0, 2.0})
        for (double y : {0.0, 2.0})
            for (double z : {0.0, 2.0}) pc.positions.push_back({x, y, z});
    AreaGrid grid = build_grid(pc, 8);
    CHECK(grid.area_edge == doctest::Approx(1.0));
    CHECK(grid.nonempty_areas.size() == 8);
    // every corner in its own area
    std::set<std::size_t> areas(grid.area_of_point.begin(), grid.area_of_point.end());
    CHECK(areas.size() == 8);
}

TEST_CASE("single point gives a single area") {
    PointCloud pc;
    pc.positions.push_back({1, 2, 3});
    AreaGrid grid = build_grid(pc, 64);
    CHECK(grid.nonempty_areas.size() == 1);
    CHECK(grid.cell_count() == 1);
}

TEST_CASE("identical points collapse to one area") {
    PointCloud pc;
    for (int i = 0; i < 10; ++i) pc.positions.push_back({5, 5, 5});
    AreaGrid grid = build_grid(pc, 16);
    CHECK(grid.nonempty_areas.size() == 1);
}

TEST_CASE("planar cloud falls back to nonzero extents") {
    Rng rng(8);
    PointCloud pc;
    for (int i = 0; i < 500; ++i) pc.positions.push_back({rng.uniform(0, 8), rng.uniform(0, 8), 1.5});
    AreaGrid grid = build_grid(pc, 16);
    CHECK(grid.grid_dims[2] == 1);
    const std::size_t count = grid.nonempty_areas.size();
    CHECK(count >= 4);
    CHECK(count <= 64);
}

TEST_CASE("uniform cloud hits the target area count within a factor of four") {
    PointCloud pc = uniform_cloud(10000, 17);
    AreaGrid grid = build_grid(pc, 100);
    CHECK(grid.nonempty_areas.size() >= 25);
    CHECK(grid.nonempty_areas.size() <= 400);
}

TEST_CASE("every point maps to exactly one area") {
    PointCloud pc = clustered_cloud(3);
    AreaGrid grid = build_grid(pc, 80);
    std::vector<std::size_t> seen(pc.size(), 0);
    for (std::size_t area : grid.nonempty_areas) {
        for (std::size_t i : grid.points_of_area[area]) seen[i]++;
    }
    for (std::size_t i = 0; i < pc.size(); ++i) {
        CHECK(seen[i] == 1);
        CHECK(grid.points_of_area[grid.area_of_point[i]].size() > 0);
    }
}

TEST_CASE("density definition and argmax") {
    PointCloud pc;
    // area 0: 10 points, area 1: 5 points along x
    for (int i = 0; i < 10; ++i) pc.positions.push_back({0.25, 0.5, 0.5});
    for (int i = 0; i < 5; ++i) pc.positions.push_back({1.75, 0.5, 0.5});
    AreaGrid grid = build_grid(pc, 2);
    auto densities = compute_densities(grid);
    REQUIRE(densities.size() == 2);
    std::vector<double> vals;
    for (auto& [area, d] : densities) vals.push_back(d);
    std::sort(vals.begin(), vals.end());
    CHECK(vals[0] == doctest::Approx(0.5));
    CHECK(vals[1] == doctest::Approx(1.0));

    PointCloud rc = clustered_cloud(5);
    AreaGrid rgrid = build_grid(rc, 60);
    auto rdens = compute_densities(rgrid);
    std::size_t argmax_density = 0, argmax_count = 0;
    double best_d = -1;
    std::size_t best_c = 0;
    for (auto& [area, d] : rdens) {
        if (d > best_d) {
            best_d = d;
            argmax_density = area;
        }
        if (rgrid.points_of_area[area].size() > best_c) {
            best_c = rgrid.points_of_area[area].size();
            argmax_count = area;
        }
    }
    CHECK(argmax_density == argmax_count);
    for (auto& [area, d] : rdens) {
        CHECK(d > 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("dbscan identical points with min_pts one") {
    std::vector<std::vector<double>> pts(5, {1.0, 1.0});
    auto labels = dbscan(pts, 0.5, 1);
    for (int l : labels) CHECK(l == 0);
}

TEST_CASE("dbscan separates far groups without noise") {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 6; ++i) pts.push_back({0.01 * i, 0.0});
    for (int i = 0; i < 6; ++i) pts.push_back({100.0 + 0.01 * i, 0.0});
    auto labels = dbscan(pts, 1.0, 4);
    for (int i = 0; i < 6; ++i) CHECK(labels[i] == 0);
    for (int i = 6; i < 12; ++i) CHECK(labels[i] == 1);
}

TEST_CASE("dbscan matches the brute-force oracle on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t m = 20 + rng.uniform_int(180);
        const std::size_t dim = 2 + rng.uniform_int(3);  // 2..4 dims
        std::vector<std::vector<double>> pts(m, std::vector<double>(dim));
        for (auto& p : pts)
            for (double& v : p) v = rng.uniform(0, 4);
        const double eps = rng.uniform(0.2, 1.0);
        const std::size_t min_pts = 1 + rng.uniform_int(6);
        CHECK(dbscan(pts, eps, min_pts) == dbscan_bruteforce(pts, eps, min_pts));
    }
}

TEST_CASE("K=1 puts every area in part zero with one window size") {
    PointCloud pc = clustered_cloud(9);
    AreaGrid grid = build_grid(pc, 64);
    PartitionConfig cfg;
    cfg.parts = 1;
    DensityPartition parts = make_partition(grid, cfg);
    CHECK(parts.part_count == 1);
    for (auto& [area, part] : parts.part_of_area) CHECK(part == 0);
    REQUIRE(parts.window_edge_of_part.size() == 1);
}

TEST_CASE("two separated density levels split at the level boundary") {
    PointCloud pc;
    // 4 dense areas (20 points) and 4 sparse areas (5 points) along x
    Rng rng(4);
    for (int cell = 0; cell < 8; ++cell) {
        const int count = cell < 4 ? 20 : 5;
        for (int i = 0; i < count; ++i) {
            pc.positions.push_back({cell + 0.1 + 0.8 * rng.uniform(), 0.5, 0.5});
        }
    }
    AreaGrid grid = build_grid(pc, 8);
    REQUIRE(grid.nonempty_areas.size() == 8);
    auto densities = compute_densities(grid);
    DensityPartition parts = cluster_density_parts(grid, densities, 2, 1.5 * grid.area_edge, 1);
    REQUIRE(parts.part_count == 2);
    for (std::size_t area : grid.nonempty_areas) {
        const int expected = grid.points_of_area[area].size() == 20 ? 1 : 0;
        CHECK(parts.part_of_area.at(area) == expected);
    }
}

TEST_CASE("parts match an independent sort-and-cut oracle after noise snapping") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL, 14ULL}) {
        PointCloud pc = clustered_cloud(seed);
        AreaGrid grid = build_grid(pc, 70);
        auto densities = compute_densities(grid);
        const std::size_t k = 5;
        const double eps = 1.5 * grid.area_edge;
        const std::size_t min_pts = 4;
        DensityPartition parts = cluster_density_parts(grid, densities, k, eps, min_pts);

        // oracle route: brute-force DBSCAN for the noise set, then an
        // independent sort over (density, area id) and quantile cuts with
        // right-snapped ties
        auto embedded = partition_embedding(grid, densities, 1.0);
        auto noise_labels = dbscan_bruteforce(embedded, embedding_eps(grid, eps), min_pts);

        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < grid.nonempty_areas.size(); ++i) {
            if (noise_labels[i] != -1) keep.push_back(i);
        }
        REQUIRE(!keep.empty());
        std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
            const double da = densities.at(grid.nonempty_areas[a]);
            const double db = densities.at(grid.nonempty_areas[b]);
            if (da != db) return da < db;
            return grid.nonempty_areas[a] < grid.nonempty_areas[b];
        });
        std::map<std::size_t, int> expected;
        const std::size_t n = keep.size();
        std::vector<std::size_t> cuts{0};
        for (std::size_t part = 1; part < k; ++part) {
            std::size_t c = (n * part) / k;
            while (c > 0 && c < n &&
                   densities.at(grid.nonempty_areas[keep[c]]) ==
                       densities.at(grid.nonempty_areas[keep[c - 1]]))
                ++c;
            if (c >= n || c <= cuts.back()) continue;
            cuts.push_back(c);
        }
        cuts.push_back(n);
        for (std::size_t part = 0; part + 1 < cuts.size(); ++part) {
            for (std::size_t i = cuts[part]; i < cuts[part + 1]; ++i) {
                expected[grid.nonempty_areas[keep[i]]] = static_cast<int>(part);
            }
        }
        for (std::size_t i = 0; i < grid.nonempty_areas.size(); ++i) {
            if (noise_labels[i] != -1) continue;
            const std::size_t ia = grid.nonempty_areas[i];
            double best_dd = 1e300, best_cd = 1e300;
            std::size_t best_area = 0;
            for (std::size_t j : keep) {
                const std::size_t ja = grid.nonempty_areas[j];
                const double dd = std::fabs(densities.at(ja) - densities.at(ia));
                const double cd = norm(grid.centroid_of_area[ja] - grid.centroid_of_area[ia]);
                if (dd < best_dd || (dd == best_dd && cd < best_cd) ||
                    (dd == best_dd && cd == best_cd && ja < best_area)) {
                    best_dd = dd;
                    best_cd = cd;
                    best_area = ja;
                }
            }
            expected[ia] = expected.at(best_area);
        }

        CHECK(parts.part_count == cuts.size() - 1);
        for (std::size_t area : grid.nonempty_areas) {
            CHECK(parts.part_of_area.at(area) == expected.at(area));
        }
    }
}

TEST_CASE("K larger than the area count is clamped with a warning") {
    PointCloud pc;
    pc.positions = {{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}};
    AreaGrid grid = build_grid(pc, 2);
    auto densities = compute_densities(grid);
    DensityPartition parts = cluster_density_parts(grid, densities, 50, grid.area_edge, 1);
    CHECK(parts.part_count <= grid.nonempty_areas.size());
    CHECK(!parts.warning.empty());
}

TEST_CASE("window size formula and clamping") {
    DensityPartition parts;
    parts.part_count = 1;
    parts = assign_window_sizes(parts, 0.5, 2.0, 10.0, 0.01);
    CHECK(parts.window_edge_of_part == std::vector<double>{0.5});

    parts.part_count = 3;
    parts = assign_window_sizes(parts, 0.5, 2.0, 10.0, 0.01);
    REQUIRE(parts.window_edge_of_part.size() == 3);
    CHECK(parts.window_edge_of_part[0] == doctest::Approx(2.0));
    CHECK(parts.window_edge_of_part[1] == doctest::Approx(1.0));
    CHECK(parts.window_edge_of_part[2] == doctest::Approx(0.5));
}

TEST_CASE("window sizes decrease, with equality only at clamp bounds") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        DensityPartition parts;
        parts.part_count = 1 + rng.uniform_int(8);
        const double base = rng.uniform(0.05, 2.0);
        const double ratio = 1.1 + rng.uniform() * 2.0;
        const double area_edge = rng.uniform(0.5, 4.0);
        const double min_edge = rng.uniform(0.01, 0.2);
        parts = assign_window_sizes(parts, base, ratio, area_edge, min_edge);
        for (std::size_t p = 1; p < parts.part_count; ++p) {
            const double prev = parts.window_edge_of_part[p - 1];
            const double cur = parts.window_edge_of_part[p];
            CHECK(prev >= cur);
            if (prev == cur) {
                const double lo = std::min(min_edge, area_edge);
                CHECK((prev == area_edge || prev == lo));
            }
        }
    }
}

TEST_CASE("partition invariants hold on random clouds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PointCloud pc = seed % 2 ? uniform_cloud(2000, seed) : clustered_cloud(seed);
        AreaGrid grid = build_grid(pc, 60);
        PartitionConfig cfg;
        DensityPartition parts = make_partition(grid, cfg);

        // coverage: every point -> area -> part
        for (std::size_t i = 0; i < pc.size(); ++i) {
            const std::size_t area = grid.area_of_point[i];
            CHECK(parts.part_of_area.count(area) == 1);
        }
        // strict mean-density monotonicity
        std::vector<double> sums(parts.part_count, 0.0);
        std::vector<std::size_t> counts(parts.part_count, 0);
        for (auto& [area, part] : parts.part_of_area) {
            sums[static_cast<std::size_t>(part)] += parts.density_of_area.at(area);
            counts[static_cast<std::size_t>(part)]++;
        }
        for (std::size_t p = 0; p < parts.part_count; ++p) CHECK(counts[p] > 0);
        for (std::size_t p = 1; p < parts.part_count; ++p) {
            CHECK(sums[p] / counts[p] > sums[p - 1] / counts[p - 1]);
        }
    }
}

TEST_CASE("partition is deterministic") {
    PointCloud pc = clustered_cloud(70);
    AreaGrid g1 = build_grid(pc, 64);
    AreaGrid g2 = build_grid(pc, 64);
    CHECK(g1.area_of_point == g2.area_of_point);
    PartitionConfig cfg;
    DensityPartition p1 = make_partition(g1, cfg);
    DensityPartition p2 = make_partition(g2, cfg);
    CHECK(p1.part_of_area == p2.part_of_area);
    CHECK(p1.window_edge_of_part == p2.window_edge_of_part);
}

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcseg/errors.hpp"
#include "pcseg/rng.hpp"

namespace pcseg {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double norm(const Vec3& v);

struct PointCloud {
    std::vector<Vec3> positions;
    std::size_t feature_dim = 0;
    std::vector<double> features;  // row-major, positions.size() x feature_dim
    std::vector<int> labels;       // empty when unlabeled
    std::size_t class_count = 0;   // 0 when unlabeled
    std::vector<std::string> class_names;

    std::size_t size() const { return positions.size(); }
    bool labeled() const { return !labels.empty(); }

    // Throws DataError when an invariant is broken (empty cloud, non-finite
    // position, label out of range).
    void validate() const;

    std::vector<std::size_t> label_histogram() const;
};

enum class CloudFormat { xyz, xyzl, ply_ascii };

CloudFormat format_from_path(const std::string& path);

PointCloud load_cloud(const std::string& path, CloudFormat format);
void save_cloud(const std::string& path, CloudFormat format, const PointCloud& pc);

// Fig-3-style visualization output: one uchar rgb per point.
void save_ply_colored(const std::string& path, const PointCloud& pc,
                      const std::vector<std::array<std::uint8_t, 3>>& colors);

// ---- synthetic scenes ------------------------------------------------------

enum class Primitive { sphere, box, slab };

struct ObjectSpec {
    int class_id = 0;
    Primitive primitive = Primitive::sphere;
    Vec3 center{0, 0, 0};
    // sphere: size[0] is the radius; box/slab: half extents per axis
    Vec3 size{0, 0, 0};
    std::size_t count = 0;
};

struct SceneSpec {
    Vec3 extent{1, 1, 1};              // scene box is [0, extent] per axis
    double background_density = 0.0;   // points per cubic meter, class 0
    std::vector<ObjectSpec> objects;
    std::uint64_t seed = 0;
    std::size_t class_count = 0;       // inferred from objects when 0

    std::size_t background_count() const;
};

// Deterministic in spec (including seed). Per-class counts match the spec
// exactly: background_count() points of class 0 plus each object's count.
PointCloud generate_scene(const SceneSpec& spec);

// Built-in scene family: imbalanced classes with a small dense cluster and a
// tiny class (<2% of points) placed at the cluster center.
SceneSpec overfit_scene_spec(std::uint64_t seed);     // 500 points, 4 classes
SceneSpec imbalanced_scene_spec(std::uint64_t seed);  // ~1200 points, 4 classes

}  // namespace pcseg

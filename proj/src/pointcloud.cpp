#include "pcseg/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pcseg {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

void PointCloud::validate() const {
    if (positions.empty()) throw DataError("point cloud is empty");
    for (const Vec3& p : positions) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
            throw DataError("non-finite position in point cloud");
        }
    }
    if (features.size() != positions.size() * feature_dim) {
        throw DataError("feature buffer size does not match point count");
    }
    if (!labels.empty()) {
        if (labels.size() != positions.size()) throw DataError("label count does not match point count");
        for (int l : labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
                throw DataError("label " + std::to_string(l) + " outside [0, " +
                                std::to_string(class_count) + ")");
            }
        }
    }
}

std::vector<std::size_t> PointCloud::label_histogram() const {
    std::vector<std::size_t> hist(class_count, 0);
    for (int l : labels) hist[static_cast<std::size_t>(l)]++;
    return hist;
}

CloudFormat format_from_path(const std::string& path) {
    auto ends_with = [&](const char* suffix) {
        const std::size_t n = std::string(suffix).size();
        return path.size() >= n && path.compare(path.size() - n, n, suffix) == 0;
    };
    if (ends_with(".xyzl")) return CloudFormat::xyzl;
    if (ends_with(".xyz")) return CloudFormat::xyz;
    if (ends_with(".ply")) return CloudFormat::ply_ascii;
    throw ConfigError("cannot infer cloud format from path: " + path);
}

// ---- loading ----------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no, const std::string& what) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

void finish_labels(PointCloud& pc, const std::string& path) {
    if (pc.labels.empty()) return;
    int max_label = 0;
    for (int l : pc.labels) {
        if (l < 0) throw DataError(path + ": negative label " + std::to_string(l));
        max_label = std::max(max_label, l);
    }
    pc.class_count = static_cast<std::size_t>(max_label) + 1;
}

PointCloud load_xyz_like(const std::string& path, bool with_labels) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    PointCloud pc;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p[0] >> p[1] >> p[2])) parse_fail(path, line_no, "expected 3 coordinates");
        pc.positions.push_back(p);
        if (with_labels) {
            int label = 0;
            if (!(ls >> label)) parse_fail(path, line_no, "expected integer label");
            pc.labels.push_back(label);
        }
    }
    finish_labels(pc, path);
    pc.validate();
    return pc;
}

struct PlyProperty {
    std::string name;
    bool is_list = false;
};

PointCloud load_ply(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;

    auto next_line = [&]() {
        if (!std::getline(is, line)) parse_fail(path, line_no, "unexpected end of file");
        ++line_no;
        return line;
    };

    if (next_line() != "ply") parse_fail(path, line_no, "missing ply magic");
    std::size_t vertex_count = 0;
    std::vector<PlyProperty> vertex_props;
    bool in_vertex_element = false;
    bool saw_format = false;
    while (true) {
        std::istringstream ls(next_line());
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string kind;
            ls >> kind;
            if (kind != "ascii") parse_fail(path, line_no, "only ascii PLY is supported");
            saw_format = true;
        } else if (tag == "comment" || tag == "obj_info") {
            continue;
        } else if (tag == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) {
                vertex_count = count;
            } else if (count != 0) {
                parse_fail(path, line_no, "unsupported element '" + name + "' with nonzero count");
            }
        } else if (tag == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            ls >> type;
            if (type == "list") {
                parse_fail(path, line_no, "list properties are not supported");
            }
            ls >> name;
            vertex_props.push_back({name, false});
        } else if (tag == "end_header") {
            break;
        } else {
            parse_fail(path, line_no, "unknown header line: " + line);
        }
    }
    if (!saw_format) parse_fail(path, line_no, "missing format line");

    auto has_prop = [&](const char* n) {
        return std::any_of(vertex_props.begin(), vertex_props.end(),
                           [&](const PlyProperty& p) { return p.name == n; });
    };
    if (!has_prop("x") || !has_prop("y") || !has_prop("z")) {
        parse_fail(path, line_no, "vertex element lacks x/y/z properties");
    }
    const bool has_rgb = has_prop("red") && has_prop("green") && has_prop("blue");
    const bool has_label = has_prop("label");

    PointCloud pc;
    pc.feature_dim = has_rgb ? 3 : 0;
    pc.positions.reserve(vertex_count);
    for (std::size_t v = 0; v < vertex_count; ++v) {
        std::istringstream ls(next_line());
        Vec3 p{0, 0, 0};
        double r = 0, g = 0, b = 0;
        int label = 0;
        for (const PlyProperty& prop : vertex_props) {
            double value;
            if (!(ls >> value)) parse_fail(path, line_no, "missing value for " + prop.name);
            if (prop.name == "x") p[0] = value;
            else if (prop.name == "y") p[1] = value;
            else if (prop.name == "z") p[2] = value;
            else if (prop.name == "red") r = value;
            else if (prop.name == "green") g = value;
            else if (prop.name == "blue") b = value;
            else if (prop.name == "label") label = static_cast<int>(value);
        }
        pc.positions.push_back(p);
        if (has_rgb) {
            pc.features.push_back(r);
            pc.features.push_back(g);
            pc.features.push_back(b);
        }
        if (has_label) pc.labels.push_back(label);
    }
    finish_labels(pc, path);
    pc.validate();
    return pc;
}

}  // namespace

PointCloud load_cloud(const std::string& path, CloudFormat format) {
    switch (format) {
        case CloudFormat::xyz: return load_xyz_like(path, false);
        case CloudFormat::xyzl: return load_xyz_like(path, true);
        case CloudFormat::ply_ascii: return load_ply(path);
    }
    throw ConfigError("unknown cloud format");
}

// ---- saving -----------------------------------------------------------------

namespace {

void write_positions(std::ofstream& os, const PointCloud& pc, bool with_labels) {
    char buf[128];
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Vec3& p = pc.positions[i];
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", p[0], p[1], p[2]);
        os << buf;
        if (with_labels) os << " " << pc.labels[i];
        os << "\n";
    }
}

}  // namespace

void save_cloud(const std::string& path, CloudFormat format, const PointCloud& pc) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    switch (format) {
        case CloudFormat::xyz:
            write_positions(os, pc, false);
            break;
        case CloudFormat::xyzl:
            if (!pc.labeled()) throw DataError("xyzl output requires labels");
            write_positions(os, pc, true);
            break;
        case CloudFormat::ply_ascii: {
            os << "ply\nformat ascii 1.0\n";
            os << "element vertex " << pc.size() << "\n";
            os << "property double x\nproperty double y\nproperty double z\n";
            if (pc.labeled()) os << "property int label\n";
            os << "end_header\n";
            write_positions(os, pc, pc.labeled());
            break;
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

void save_ply_colored(const std::string& path, const PointCloud& pc,
                      const std::vector<std::array<std::uint8_t, 3>>& colors) {
    if (colors.size() != pc.size()) throw DataError("color count does not match point count");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << pc.size() << "\n";
    os << "property double x\nproperty double y\nproperty double z\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (pc.labeled()) os << "property int label\n";
    os << "end_header\n";
    char buf[128];
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Vec3& p = pc.positions[i];
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", p[0], p[1], p[2]);
        os << buf << " " << int(colors[i][0]) << " " << int(colors[i][1]) << " " << int(colors[i][2]);
        if (pc.labeled()) os << " " << pc.labels[i];
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

// ---- synthetic scenes ---------------------------------------------------------

std::size_t SceneSpec::background_count() const {
    const double volume = extent[0] * extent[1] * extent[2];
    return static_cast<std::size_t>(std::llround(background_density * volume));
}

namespace {

void check_inside(const ObjectSpec& obj, const Vec3& extent) {
    Vec3 half = obj.size;
    if (obj.primitive == Primitive::sphere) half = {obj.size[0], obj.size[0], obj.size[0]};
    for (int a = 0; a < 3; ++a) {
        if (obj.center[a] - half[a] < 0.0 || obj.center[a] + half[a] > extent[a]) {
            throw DataError("object of class " + std::to_string(obj.class_id) +
                            " does not fit inside the scene extent");
        }
    }
}

Vec3 sample_in_object(const ObjectSpec& obj, Rng& rng) {
    switch (obj.primitive) {
        case Primitive::sphere: {
            const double r = obj.size[0];
            while (true) {
                Vec3 d{rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)};
                if (norm(d) <= r) return obj.center + d;
            }
        }
        case Primitive::box:
        case Primitive::slab: {
            return {obj.center[0] + rng.uniform(-obj.size[0], obj.size[0]),
                    obj.center[1] + rng.uniform(-obj.size[1], obj.size[1]),
                    obj.center[2] + rng.uniform(-obj.size[2], obj.size[2])};
        }
    }
    throw ConfigError("unknown primitive");
}

}  // namespace

PointCloud generate_scene(const SceneSpec& spec) {
    if (spec.extent[0] <= 0 || spec.extent[1] <= 0 || spec.extent[2] <= 0) {
        throw DataError("scene extent must be positive");
    }
    int max_class = 0;
    for (const ObjectSpec& obj : spec.objects) {
        if (obj.count == 0) throw DataError("object point count must be positive");
        check_inside(obj, spec.extent);
        max_class = std::max(max_class, obj.class_id);
    }
    PointCloud pc;
    pc.class_count = spec.class_count ? spec.class_count : static_cast<std::size_t>(max_class) + 1;

    Rng rng(spec.seed);
    const std::size_t bg = spec.background_count();
    for (std::size_t i = 0; i < bg; ++i) {
        pc.positions.push_back({rng.uniform(0.0, spec.extent[0]), rng.uniform(0.0, spec.extent[1]),
                                rng.uniform(0.0, spec.extent[2])});
        pc.labels.push_back(0);
    }
    for (const ObjectSpec& obj : spec.objects) {
        for (std::size_t i = 0; i < obj.count; ++i) {
            pc.positions.push_back(sample_in_object(obj, rng));
            pc.labels.push_back(obj.class_id);
        }
    }
    pc.validate();
    return pc;
}

SceneSpec overfit_scene_spec(std::uint64_t seed) {
    // 500 points, 4 classes, class 3 at exactly 2% and centered in the
    // dense class-2 cluster.
    SceneSpec spec;
    spec.extent = {4.0, 4.0, 2.0};
    spec.background_density = 7.5;  // 240 points over 32 m^3
    spec.seed = seed;
    spec.class_count = 4;

    Rng placer = Rng(seed).split(0xc1u);
    const Vec3 cluster{placer.uniform(0.8, 3.2), placer.uniform(0.8, 3.2), placer.uniform(0.6, 1.4)};

    ObjectSpec floor;
    floor.class_id = 1;
    floor.primitive = Primitive::slab;
    floor.center = {2.0, 2.0, 0.1};
    floor.size = {1.8, 1.8, 0.08};
    floor.count = 150;

    ObjectSpec dense;
    dense.class_id = 2;
    dense.primitive = Primitive::sphere;
    dense.center = cluster;
    dense.size = {0.35, 0, 0};
    dense.count = 100;

    ObjectSpec tiny;
    tiny.class_id = 3;
    tiny.primitive = Primitive::sphere;
    tiny.center = cluster;
    tiny.size = {0.08, 0, 0};
    tiny.count = 10;

    spec.objects = {floor, dense, tiny};
    return spec;
}

SceneSpec imbalanced_scene_spec(std::uint64_t seed) {
    SceneSpec spec;
    spec.extent = {4.0, 4.0, 2.0};
    spec.background_density = 20.0;  // 640 points over 32 m^3
    spec.seed = seed;
    spec.class_count = 4;

    Rng placer = Rng(seed).split(0xc2u);
    const Vec3 cluster{placer.uniform(0.8, 3.2), placer.uniform(0.8, 3.2), placer.uniform(0.6, 1.4)};

    ObjectSpec floor;
    floor.class_id = 1;
    floor.primitive = Primitive::slab;
    floor.center = {2.0, 2.0, 0.1};
    floor.size = {1.8, 1.8, 0.08};
    floor.count = 320;

    ObjectSpec dense;
    dense.class_id = 2;
    dense.primitive = Primitive::sphere;
    dense.center = cluster;
    dense.size = {0.35, 0, 0};
    dense.count = 220;

    ObjectSpec tiny;
    tiny.class_id = 3;
    tiny.primitive = Primitive::sphere;
    tiny.center = cluster;
    tiny.size = {0.08, 0, 0};
    tiny.count = 20;  // 1.7% of 1200

    spec.objects = {floor, dense, tiny};
    return spec;
}

}  // namespace pcseg

#include "wpcl/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wpcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const fs::path& path, const std::string& where,
                             const std::string& reason) {
    throw IoError("parse error in " + path.string() + " at " + where + ": " + reason);
}

template <typename T>
void write_le(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const fs::path& path) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is)
        parse_fail(path, "byte offset " + std::to_string(static_cast<long>(is.tellg())),
                   "unexpected end of file");
    return value;
}

} // namespace

void DatasetManifest::validate() const {
    if (class_names.empty()) throw IoError("manifest: empty class list");
    for (std::size_t i = 0; i < class_names.size(); ++i)
        for (std::size_t j = i + 1; j < class_names.size(); ++j)
            if (class_names[i] == class_names[j])
                throw IoError("manifest: duplicate class name " + class_names[i]);
    for (const auto& s : scenes) {
        if (!fs::exists(root / s.points_file))
            throw IoError("manifest: missing points file " + (root / s.points_file).string());
        for (const auto& v : s.views)
            if (!fs::exists(root / v.color_file) || !fs::exists(root / v.depth_file) ||
                !fs::exists(root / v.camera_file))
                throw IoError("manifest: missing view files for scene " + s.id);
    }
}

void save_points_text(const fs::path& path, const SceneSample& scene) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    const bool has_labels = !scene.gt_labels.empty();
    os << "WPCL v1 points " << scene.points.size() << " " << (has_labels ? 1 : 0) << "\n";
    char buf[256];
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        const Vec3& p = scene.points[i];
        const Vec3& c = scene.colors[i];
        int len = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g", p.x(),
                                p.y(), p.z(), c.x(), c.y(), c.z());
        os.write(buf, len);
        if (has_labels) os << " " << scene.gt_labels[i];
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path.string());
}

void save_points_binary(const fs::path& path, const SceneSample& scene) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write("WPCLB", 5);
    const std::uint8_t has_labels = scene.gt_labels.empty() ? 0 : 1;
    write_le(os, has_labels);
    write_le<std::uint64_t>(os, scene.points.size());
    auto column = [&](auto getter) {
        for (std::size_t i = 0; i < scene.points.size(); ++i)
            write_le<float>(os, static_cast<float>(getter(i)));
    };
    column([&](std::size_t i) { return scene.points[i].x(); });
    column([&](std::size_t i) { return scene.points[i].y(); });
    column([&](std::size_t i) { return scene.points[i].z(); });
    column([&](std::size_t i) { return scene.colors[i].x(); });
    column([&](std::size_t i) { return scene.colors[i].y(); });
    column([&](std::size_t i) { return scene.colors[i].z(); });
    if (has_labels)
        for (std::size_t i = 0; i < scene.points.size(); ++i)
            write_le<std::int32_t>(os, static_cast<std::int32_t>(scene.gt_labels[i]));
    if (!os) throw IoError("write failed: " + path.string());
}

namespace {

void load_points_text(const fs::path& path, std::ifstream& is, SceneSample& scene) {
    std::string line;
    if (!std::getline(is, line)) parse_fail(path, "line 1", "empty file");
    std::istringstream header(line);
    std::string magic, version, kind;
    std::size_t n = 0;
    int has_labels = 0;
    header >> magic >> version >> kind >> n >> has_labels;
    if (magic != "WPCL" || version != "v1" || kind != "points" || header.fail())
        parse_fail(path, "line 1", "bad header '" + line + "'");
    scene.points.clear();
    scene.colors.clear();
    scene.gt_labels.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line))
            parse_fail(path, "line " + std::to_string(i + 2), "truncated: expected " +
                                                                  std::to_string(n) + " rows");
        std::istringstream row(line);
        double x, y, z, r, g, b;
        row >> x >> y >> z >> r >> g >> b;
        if (row.fail())
            parse_fail(path, "line " + std::to_string(i + 2), "bad point row '" + line + "'");
        scene.points.emplace_back(x, y, z);
        scene.colors.emplace_back(r, g, b);
        if (has_labels) {
            long lab;
            row >> lab;
            if (row.fail())
                parse_fail(path, "line " + std::to_string(i + 2), "missing label");
            scene.gt_labels.push_back(static_cast<std::size_t>(lab));
        }
    }
}

void load_points_binary(const fs::path& path, std::ifstream& is, SceneSample& scene) {
    const std::uint8_t has_labels = read_le<std::uint8_t>(is, path);
    const std::uint64_t n = read_le<std::uint64_t>(is, path);
    std::vector<float> cols(6 * n);
    for (auto& v : cols) v = read_le<float>(is, path);
    scene.points.resize(n);
    scene.colors.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        scene.points[i] = Vec3(cols[i], cols[n + i], cols[2 * n + i]);
        scene.colors[i] = Vec3(cols[3 * n + i], cols[4 * n + i], cols[5 * n + i]);
    }
    scene.gt_labels.clear();
    if (has_labels) {
        scene.gt_labels.resize(n);
        for (std::uint64_t i = 0; i < n; ++i)
            scene.gt_labels[i] = static_cast<std::size_t>(read_le<std::int32_t>(is, path));
    }
}

} // namespace

void load_points(const fs::path& path, SceneSample& scene) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[5] = {};
    is.read(magic, 5);
    if (!is) parse_fail(path, "byte offset 0", "file shorter than magic");
    if (std::memcmp(magic, "WPCLB", 5) == 0) {
        load_points_binary(path, is, scene);
    } else {
        is.seekg(0);
        load_points_text(path, is, scene);
    }
}

void save_ppm(const fs::path& path, const std::vector<float>& rgb, int width, int height) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw IoError("save_ppm: buffer size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P6\n" << width << " " << height << "\n255\n";
    for (float v : rgb) {
        const int q = std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255);
        os.put(static_cast<char>(q));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<float> load_ppm(const fs::path& path, int& width, int& height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string magic;
    int maxval = 0;
    is >> magic >> width >> height >> maxval;
    if (magic != "P6" || maxval != 255 || width <= 0 || height <= 0)
        parse_fail(path, "header", "expected P6 with maxval 255");
    is.get(); // single whitespace after maxval
    std::vector<float> rgb(static_cast<std::size_t>(width) * height * 3);
    for (auto& v : rgb) {
        const int ch = is.get();
        if (ch == EOF)
            parse_fail(path, "byte offset " + std::to_string(static_cast<long>(is.tellg())),
                       "truncated pixel data");
        v = static_cast<float>(ch) / 255.0f;
    }
    return rgb;
}

void save_depth(const fs::path& path, const std::vector<float>& depth, int width, int height) {
    if (depth.size() != static_cast<std::size_t>(width) * height)
        throw IoError("save_depth: buffer size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write("WDEP", 4);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(height));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(width));
    write_le<std::uint32_t>(os, 0); // pad to a 16-byte header
    os.write(reinterpret_cast<const char*>(depth.data()), depth.size() * sizeof(float));
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<float> load_depth(const fs::path& path, int& width, int& height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "WDEP", 4) != 0) parse_fail(path, "header", "bad magic");
    height = static_cast<int>(read_le<std::uint32_t>(is, path));
    width = static_cast<int>(read_le<std::uint32_t>(is, path));
    read_le<std::uint32_t>(is, path); // pad
    std::vector<float> depth(static_cast<std::size_t>(width) * height);
    is.read(reinterpret_cast<char*>(depth.data()), depth.size() * sizeof(float));
    if (!is)
        parse_fail(path, "byte offset " + std::to_string(static_cast<long>(is.tellg())),
                   "truncated depth data");
    return depth;
}

void save_camera(const fs::path& path, const CameraView& cam) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os.precision(17);
    os << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy << "\n";
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) os << cam.world_to_camera(r, c) << (c < 3 ? " " : "\n");
    }
    if (!os) throw IoError("write failed: " + path.string());
}

void load_camera(const fs::path& path, CameraView& cam) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    is >> cam.fx >> cam.fy >> cam.cx >> cam.cy;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) is >> cam.world_to_camera(r, c);
    if (is.fail()) parse_fail(path, "camera matrix", "malformed numeric data");
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& err) {
        parse_fail(path, "byte offset " + std::to_string(err.byte), err.what());
    }
    DatasetManifest m;
    m.root = path.parent_path();
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& js : j.at("scenes")) {
        SceneFileRefs refs;
        refs.id = js.at("id").get<std::string>();
        refs.points_file = js.at("points").get<std::string>();
        if (js.contains("views"))
            for (const auto& jv : js.at("views"))
                refs.views.push_back({jv.at("color").get<std::string>(),
                                      jv.at("depth").get<std::string>(),
                                      jv.at("camera").get<std::string>()});
        m.scenes.push_back(std::move(refs));
    }
    m.validate();
    return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    json j;
    j["classes"] = manifest.class_names;
    j["scenes"] = json::array();
    for (const auto& s : manifest.scenes) {
        json js;
        js["id"] = s.id;
        js["points"] = s.points_file;
        js["views"] = json::array();
        for (const auto& v : s.views)
            js["views"].push_back(
                {{"color", v.color_file}, {"depth", v.depth_file}, {"camera", v.camera_file}});
        j["scenes"].push_back(std::move(js));
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << j.dump(2) << "\n";
}

SceneSample load_scene(const DatasetManifest& manifest, const std::string& id) {
    const auto it = std::find_if(manifest.scenes.begin(), manifest.scenes.end(),
                                 [&](const SceneFileRefs& s) { return s.id == id; });
    if (it == manifest.scenes.end()) throw IoError("manifest has no scene '" + id + "'");
    SceneSample scene;
    scene.id = id;
    load_points(manifest.root / it->points_file, scene);
    for (const auto& vr : it->views) {
        CameraView cam;
        load_camera(manifest.root / vr.camera_file, cam);
        int w = 0, h = 0;
        cam.color = load_ppm(manifest.root / vr.color_file, w, h);
        cam.width = w;
        cam.height = h;
        int dw = 0, dh = 0;
        cam.depth_map = load_depth(manifest.root / vr.depth_file, dw, dh);
        if (dw != w || dh != h)
            throw IoError("scene " + id + ": depth/color resolution mismatch");
        scene.views.push_back(std::move(cam));
    }
    // Scene tag from present classes.
    scene.scene_label.y.assign(manifest.class_count(), 0);
    if (!scene.gt_labels.empty()) {
        for (std::size_t lab : scene.gt_labels)
            if (lab < manifest.class_count()) scene.scene_label.y[lab] = 1;
    }
    scene.validate();
    return scene;
}

std::vector<SceneSample> load_dataset(const DatasetManifest& manifest, bool strip_gt) {
    std::vector<SceneSample> out;
    for (const auto& s : manifest.scenes) {
        SceneSample scene = load_scene(manifest, s.id);
        if (strip_gt) scene.gt_labels.clear();
        out.push_back(std::move(scene));
    }
    return out;
}

SceneFileRefs save_scene(const fs::path& root, const SceneSample& scene, bool binary_points) {
    const fs::path dir = root / scene.id;
    fs::create_directories(dir);
    SceneFileRefs refs;
    refs.id = scene.id;
    refs.points_file = scene.id + (binary_points ? "/points.wpclb" : "/points.txt");
    if (binary_points)
        save_points_binary(root / refs.points_file, scene);
    else
        save_points_text(root / refs.points_file, scene);
    for (std::size_t v = 0; v < scene.views.size(); ++v) {
        char tag[32];
        std::snprintf(tag, sizeof(tag), "view_%03zu", v);
        SceneFileRefs::ViewRefs vr;
        vr.color_file = scene.id + "/" + tag + ".ppm";
        vr.depth_file = scene.id + "/" + tag + ".wdep";
        vr.camera_file = scene.id + "/" + tag + ".cam";
        const CameraView& cam = scene.views[v];
        save_ppm(root / vr.color_file, cam.color, cam.width, cam.height);
        save_depth(root / vr.depth_file, cam.depth_map, cam.width, cam.height);
        save_camera(root / vr.camera_file, cam);
        refs.views.push_back(std::move(vr));
    }
    return refs;
}

void save_labels(const fs::path& path, const std::vector<std::size_t>& labels) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "WPCL v1 labels " << labels.size() << "\n";
    for (std::size_t lab : labels) os << lab << "\n";
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<std::size_t> load_labels(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string magic, version, kind;
    std::size_t n = 0;
    is >> magic >> version >> kind >> n;
    if (magic != "WPCL" || version != "v1" || kind != "labels" || is.fail())
        parse_fail(path, "line 1", "bad header");
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        is >> labels[i];
        if (is.fail()) parse_fail(path, "row " + std::to_string(i + 2), "truncated label file");
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SyntheticSceneSpec::validate() const {
    if (room_x <= 0 || room_y <= 0 || room_z <= 0) throw IoError("synthetic: bad room extents");
    if (points_per_surface == 0) throw IoError("synthetic: zero points per surface");
    if (image_width <= 1 || image_height <= 1) throw IoError("synthetic: bad image size");
    if (object_class_count == 0) throw IoError("synthetic: need at least one object class");
    if (density_hotspot < 0.0 || density_hotspot > 1.0)
        throw IoError("synthetic: density_hotspot must be in [0, 1]");
}

std::vector<std::string> synthetic_class_names(const SyntheticSceneSpec& spec) {
    static const char* kObjects[] = {"table", "chair", "cabinet", "column", "sofa",
                                     "shelf", "desk", "lamp"};
    std::vector<std::string> names = {"floor", "ceiling", "wall"};
    for (std::size_t i = 0; i < spec.object_class_count; ++i)
        names.push_back(i < 8 ? kObjects[i] : "object" + std::to_string(i));
    return names;
}

SlabClasses synthetic_slab_classes() {
    SlabClasses sc;
    sc.floor = 0;
    sc.ceiling = 1;
    sc.wall = 2;
    return sc;
}

namespace {

Vec3 class_base_color(std::size_t cls, std::size_t class_count) {
    // Well-separated fixed palette; hue by class index.
    const double h = static_cast<double>(cls) / static_cast<double>(class_count) * 6.0;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double v = 0.85, s = 0.75;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

struct Surface {
    // p(u, v) = origin + u * edge_u + v * edge_v, u,v in [0,1]
    Vec3 origin, edge_u, edge_v;
};

// hotspot_frac concentrates that share of the points into one small patch of
// the surface, imitating the uneven density of real scans.
void sample_surface(const Surface& s, std::size_t count, std::size_t cls, double jitter,
                    double color_noise, std::size_t class_count, Rng& rng,
                    SceneSample& scene, double hotspot_frac = 0.0) {
    const Vec3 base = class_base_color(cls, class_count);
    const double su = std::max(s.edge_u.norm(), 1e-9), sv = std::max(s.edge_v.norm(), 1e-9);
    const double pu = std::min(1.0, 0.3 / su), pv = std::min(1.0, 0.3 / sv);
    const double cu = rng.uniform(0.0, 1.0 - pu), cv = rng.uniform(0.0, 1.0 - pv);
    for (std::size_t i = 0; i < count; ++i) {
        double u = rng.uniform(), v = rng.uniform();
        if (hotspot_frac > 0.0 && rng.bernoulli(hotspot_frac)) {
            u = cu + u * pu;
            v = cv + v * pv;
        }
        Vec3 p = s.origin + u * s.edge_u + v * s.edge_v;
        p += Vec3(rng.normal(0, jitter), rng.normal(0, jitter), rng.normal(0, jitter));
        Vec3 c = base + Vec3(rng.normal(0, color_noise), rng.normal(0, color_noise),
                             rng.normal(0, color_noise));
        c = c.cwiseMax(0.0).cwiseMin(1.0);
        scene.points.push_back(p);
        scene.colors.push_back(c);
        scene.gt_labels.push_back(cls);
    }
}

CameraView make_ring_camera(const SyntheticSceneSpec& spec, std::size_t index,
                            std::size_t count) {
    CameraView cam;
    cam.width = spec.image_width;
    cam.height = spec.image_height;
    const double fov = spec.fov_deg * M_PI / 180.0;
    cam.fx = (spec.image_width / 2.0) / std::tan(fov / 2.0);
    cam.fy = cam.fx;
    cam.cx = (spec.image_width - 1) / 2.0;
    cam.cy = (spec.image_height - 1) / 2.0;

    const double angle = 2.0 * M_PI * static_cast<double>(index) / static_cast<double>(count);
    const double radius = 0.38 * std::min(spec.room_x, spec.room_y);
    const Vec3 center(spec.room_x / 2.0, spec.room_y / 2.0, 0.0);
    const Vec3 eye = center + Vec3(radius * std::cos(angle), radius * std::sin(angle),
                                   spec.camera_height);
    const Vec3 target = center + Vec3(0, 0, 0.8);

    // Camera frame: +z forward, +x right, +y down (pixel rows grow downward).
    Vec3 forward = (target - eye).normalized();
    Vec3 world_up(0, 0, 1);
    Vec3 right = forward.cross(world_up).normalized();
    Vec3 down = forward.cross(right).normalized();
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    cam.world_to_camera = Mat4::Identity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    return cam;
}

void render_views(SceneSample& scene, const SyntheticSceneSpec& spec) {
    for (std::size_t v = 0; v < spec.camera_count; ++v) {
        CameraView cam = make_ring_camera(spec, v, spec.camera_count);
        const std::size_t px = static_cast<std::size_t>(cam.width) * cam.height;
        cam.depth_map.assign(px, 0.0f);
        cam.color.assign(px * 3, 0.0f);
        for (std::size_t i = 0; i < scene.points.size(); ++i) {
            const auto hit = project_point(scene.points[i], cam);
            if (!hit) continue;
            const std::size_t flat = static_cast<std::size_t>(hit->h) * cam.width + hit->w;
            if (cam.depth_map[flat] > 0.0f && cam.depth_map[flat] <= hit->depth) continue;
            cam.depth_map[flat] = static_cast<float>(hit->depth);
            cam.color[flat * 3] = static_cast<float>(scene.colors[i].x());
            cam.color[flat * 3 + 1] = static_cast<float>(scene.colors[i].y());
            cam.color[flat * 3 + 2] = static_cast<float>(scene.colors[i].z());
        }
        scene.views.push_back(std::move(cam));
    }
}

} // namespace

SceneSample generate_synthetic(const SyntheticSceneSpec& spec, const std::string& id) {
    spec.validate();
    Rng rng(spec.seed);
    SceneSample scene;
    scene.id = id;
    const std::size_t class_count = 3 + spec.object_class_count;

    const double lx = spec.room_x, ly = spec.room_y, lz = spec.room_z;
    std::size_t floor_points = spec.points_per_surface * 2;
    if (spec.imbalanced) floor_points *= 3;

    sample_surface({{0, 0, 0}, {lx, 0, 0}, {0, ly, 0}}, floor_points, 0, spec.position_jitter,
                   spec.color_noise, class_count, rng, scene, spec.density_hotspot);
    sample_surface({{0, 0, lz}, {lx, 0, 0}, {0, ly, 0}}, spec.points_per_surface, 1,
                   spec.position_jitter, spec.color_noise, class_count, rng, scene,
                   spec.density_hotspot);
    const Surface walls[4] = {
        {{0, 0, 0}, {lx, 0, 0}, {0, 0, lz}},
        {{0, ly, 0}, {lx, 0, 0}, {0, 0, lz}},
        {{0, 0, 0}, {0, ly, 0}, {0, 0, lz}},
        {{lx, 0, 0}, {0, ly, 0}, {0, 0, lz}},
    };
    for (const auto& w : walls)
        sample_surface(w, spec.points_per_surface / 2, 2, spec.position_jitter,
                       spec.color_noise, class_count, rng, scene, spec.density_hotspot);

    // Objects: boxes on the floor, one instance per present class.
    for (std::size_t oc = 0; oc < spec.object_class_count; ++oc) {
        const std::size_t cls = 3 + oc;
        if (!rng.bernoulli(spec.object_presence_prob)) continue;
        std::size_t budget = spec.points_per_surface;
        if (spec.imbalanced && oc + 1 == spec.object_class_count)
            budget = std::max<std::size_t>(1, budget / 10);
        const double sx = rng.uniform(0.5, 1.2), sy = rng.uniform(0.5, 1.2),
                     sz = rng.uniform(0.5, 1.4);
        const double ox = rng.uniform(0.8, lx - 0.8 - sx), oy = rng.uniform(0.8, ly - 0.8 - sy);
        const Surface faces[5] = {
            {{ox, oy, sz}, {sx, 0, 0}, {0, sy, 0}},          // top
            {{ox, oy, 0}, {sx, 0, 0}, {0, 0, sz}},           // front
            {{ox, oy + sy, 0}, {sx, 0, 0}, {0, 0, sz}},      // back
            {{ox, oy, 0}, {0, sy, 0}, {0, 0, sz}},           // left
            {{ox + sx, oy, 0}, {0, sy, 0}, {0, 0, sz}},      // right
        };
        for (const auto& f : faces)
            sample_surface(f, budget / 5 + 1, cls, spec.position_jitter, spec.color_noise,
                           class_count, rng, scene);
    }

    scene.scene_label.y.assign(class_count, 0);
    for (std::size_t lab : scene.gt_labels) scene.scene_label.y[lab] = 1;

    if (spec.camera_count > 0) render_views(scene, spec);
    scene.validate();
    return scene;
}

std::vector<SceneSample> generate_synthetic_dataset(const SyntheticSceneSpec& spec,
                                                    std::size_t scene_count) {
    std::vector<SceneSample> out;
    Rng seeder(spec.seed);
    for (std::size_t s = 0; s < scene_count; ++s) {
        SyntheticSceneSpec per_scene = spec;
        per_scene.seed = seeder.fork();
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%03zu", s);
        out.push_back(generate_synthetic(per_scene, id));
    }
    return out;
}

} // namespace wpcl

// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// Posed-image datasets on disk and procedural desk-scale scenes.
//
// Dataset directory:
//   cameras.json   {"format": "mixrt-dataset/1", "mesh": "mesh.glb", "views": [
//                     {"split", "image", "width", "height", "focal",
//                      "principal": [cx, cy], "world_from_camera": 4x4 row-major}]}
//   mesh.glb       source mesh with per-vertex UVs
//   <split>_NNN.png

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/geometry.hpp"
#include "mixrt/image.hpp"
#include "mixrt/mesh_io.hpp"
#include "mixrt/renderer.hpp"
#include "mixrt/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace mixrt {

inline constexpr const char* kDatasetFormat = "mixrt-dataset/1";

struct Dataset {
    TriMesh mesh;
    std::vector<View> train;
    std::vector<View> test;
};

namespace dataset_detail {

inline nlohmann::json camera_json(const Camera& cam) {
    nlohmann::json pose = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < 4; ++c) {
            if (r == 3)
                row.push_back(c == 3 ? 1.0 : 0.0);
            else
                row.push_back(c == 3 ? cam.position[r] : cam.rotation(r, c));
        }
        pose.push_back(row);
    }
    return {{"width", cam.width},
            {"height", cam.height},
            {"focal", cam.focal},
            {"principal", {cam.principal.x(), cam.principal.y()}},
            {"world_from_camera", pose}};
}

inline Camera camera_from(const nlohmann::json& j) {
    Camera cam;
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.focal = j.at("focal").get<double>();
    cam.principal = Vec2(j.at("principal").at(0).get<double>(), j.at("principal").at(1).get<double>());
    const auto& pose = j.at("world_from_camera");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.rotation(r, c) = pose.at(r).at(c).get<double>();
        cam.position[r] = pose.at(r).at(3).get<double>();
    }
    cam.validate();
    return cam;
}

}  // namespace dataset_detail

inline void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    write_glb(dir / "mesh.glb", data.mesh);
    nlohmann::json views = nlohmann::json::array();
    auto emit = [&](const std::vector<View>& list, const std::string& split) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03zu.png", split.c_str(), i);
            write_image_png(dir / name, list[i].image);
            auto j = dataset_detail::camera_json(list[i].camera);
            j["split"] = split;
            j["image"] = name;
            views.push_back(j);
        }
    };
    emit(data.train, "train");
    emit(data.test, "test");
    const nlohmann::json doc = {{"format", kDatasetFormat}, {"mesh", "mesh.glb"}, {"views", views}};
    std::ofstream out(dir / "cameras.json");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write cameras.json");
    out << doc.dump(2) << '\n';
}

/// Reads cameras and images. The mesh is loaded only when `load_mesh` is set.
inline Dataset read_dataset(const std::filesystem::path& dir, bool load_mesh = true) {
    const auto manifest = dir / "cameras.json";
    require(std::filesystem::exists(manifest), ErrorKind::MissingFile, "missing file " + manifest.string());
    std::ifstream in(manifest);
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    require(!doc.is_discarded(), ErrorKind::Format, "cameras.json is not valid JSON");
    require(doc.value("format", "") == kDatasetFormat, ErrorKind::Version, "unsupported dataset format");
    Dataset data;
    try {
        if (load_mesh) data.mesh = read_mesh(dir / doc.at("mesh").get<std::string>());
        for (const auto& v : doc.at("views")) {
            View view{dataset_detail::camera_from(v), read_image_png(dir / v.at("image").get<std::string>())};
            require(view.image.width == view.camera.width && view.image.height == view.camera.height,
                    ErrorKind::DimensionMismatch, "image size disagrees with camera for " + v.at("image").get<std::string>());
            (v.at("split").get<std::string>() == "test" ? data.test : data.train).push_back(std::move(view));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("cameras.json: ") + e.what());
    }
    return data;
}

// ---------------------------------------------------------------------------
// Procedural scenes
// ---------------------------------------------------------------------------

/// Smooth 3D color pattern, every channel within [0.1, 0.9].
inline Rgb procedural_color(const Vec3& q) {
    constexpr double tau = 2.0 * std::numbers::pi;
    const double x = q.x(), y = q.y(), z = q.z();
    return Rgb(0.5 + 0.25 * std::sin(tau * (1.3 * x + 0.7 * y + 0.4 * z)) + 0.15 * std::sin(tau * (2.1 * z - 0.9 * y)),
               0.5 + 0.25 * std::sin(tau * (-0.8 * x + 1.5 * y + 0.6 * z) + 1.0) +
                   0.15 * std::cos(tau * (1.7 * x + 1.1 * z)),
               0.5 + 0.25 * std::cos(tau * (0.5 * x - 0.6 * y + 1.4 * z) + 0.5) +
                   0.15 * std::sin(tau * (2.3 * y + 0.8 * x)));
}

struct SyntheticOptions {
    std::uint64_t seed = 0;
    int width = 128;
    int height = 128;
    int train_views = -1;  // -1: scene default
    int test_views = -1;
    /// Ground truth is shaded at hit + view_offset * d: a view-dependent
    /// apparent shift of the texture relative to the mesh.
    double view_offset = 0.0;
    int box_segments = 200;  // per wall edge
};

namespace synth_detail {

/// Box [-h, h]^3, each wall an n x n quad grid, walls packed in a 3 x 2 UV atlas.
inline TriMesh box_mesh(double h, int n) {
    TriMesh mesh;
    constexpr double margin = 0.02;
    for (int wall = 0; wall < 6; ++wall) {
        const int axis = wall / 2;
        const double side = (wall % 2) ? h : -h;
        const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
        const auto first = static_cast<std::uint32_t>(mesh.positions.size());
        const int col = wall % 3, row = wall / 3;
        for (int j = 0; j <= n; ++j)
            for (int i = 0; i <= n; ++i) {
                const double a = static_cast<double>(i) / n, b = static_cast<double>(j) / n;
                Vec3 p;
                p[axis] = side;
                p[ua] = -h + 2 * h * a;
                p[va] = -h + 2 * h * b;
                mesh.positions.push_back(p);
                mesh.uvs.emplace_back((col + margin + a * (1 - 2 * margin)) / 3.0,
                                      (row + margin + b * (1 - 2 * margin)) / 2.0);
            }
        const auto at = [&](int i, int j) { return first + static_cast<std::uint32_t>(j * (n + 1) + i); };
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                mesh.indices.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
                mesh.indices.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
            }
    }
    return mesh;
}

inline TriMesh sphere_mesh(double radius, int rings, int sectors) {
    TriMesh mesh;
    for (int r = 0; r <= rings; ++r)
        for (int s = 0; s <= sectors; ++s) {
            const double v = static_cast<double>(r) / rings, u = static_cast<double>(s) / sectors;
            const double theta = v * std::numbers::pi, phi = u * 2.0 * std::numbers::pi;
            mesh.positions.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::cos(theta),
                                        radius * std::sin(theta) * std::sin(phi));
            mesh.uvs.emplace_back(u, v);
        }
    const auto at = [&](int r, int s) { return static_cast<std::uint32_t>(r * (sectors + 1) + s); };
    for (int r = 0; r < rings; ++r)
        for (int s = 0; s < sectors; ++s) {
            if (r != 0) mesh.indices.push_back({at(r, s), at(r + 1, s), at(r, s + 1)});
            if (r + 1 != rings) mesh.indices.push_back({at(r, s + 1), at(r + 1, s), at(r + 1, s + 1)});
        }
    return mesh;
}

inline Vec3 fibonacci_direction(int i, int n) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    return Vec3(r * std::cos(golden * i), y, r * std::sin(golden * i));
}

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v(n(rng), n(rng), n(rng));
    return v.normalized();
}

/// Renders ground truth with an analytic first-hit function.
template <typename HitFn>
Image shade_ground_truth(const Camera& cam, HitFn&& hit_fn, double view_offset, const Rgb& background) {
    Image img(cam.width, cam.height, background);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Ray ray = generate_ray(cam, x, y);
            if (const auto p = hit_fn(ray)) img.at(x, y) = procedural_color(*p + view_offset * ray.dir);
        }
    return quantize_8bit(img);
}

}  // namespace synth_detail

inline const std::vector<std::string>& synthetic_scene_names() {
    static const std::vector<std::string> names = {"tri", "box-room", "sphere"};
    return names;
}

/// Procedural dataset: mesh with UVs, training and held-out views rendered
/// from procedural_color. Fully determined by the options.
inline Dataset make_synthetic(const std::string& name, const SyntheticOptions& opts = {}) {
    using namespace synth_detail;
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Dataset data;
    const Rgb background = Rgb::Ones();
    std::vector<Camera> train_cams, test_cams;
    std::function<std::optional<Vec3>(const Ray&)> hit_fn;

    if (name == "box-room") {
        constexpr double h = 0.5;
        data.mesh = box_mesh(h, opts.box_segments);
        const int n_train = opts.train_views < 0 ? 32 : opts.train_views;
        const int n_test = opts.test_views < 0 ? 8 : opts.test_views;
        const double focal = 0.5 * opts.width / std::tan(35.0 * std::numbers::pi / 180.0);
        for (int i = 0; i < n_train; ++i) {
            const Vec3 eye(0.25 * unit(rng), 0.25 * unit(rng), 0.25 * unit(rng));
            const Vec3 dir = (fibonacci_direction(i, n_train) + 0.2 * random_unit(rng)).normalized();
            train_cams.push_back(Camera::look_at(eye, eye + dir, Vec3::UnitY(), focal, opts.width, opts.height));
        }
        for (int i = 0; i < n_test; ++i) {
            const Vec3 eye(0.2 * unit(rng), 0.2 * unit(rng), 0.2 * unit(rng));
            const Vec3 dir = random_unit(rng);
            test_cams.push_back(Camera::look_at(eye, eye + dir, Vec3::UnitY(), focal, opts.width, opts.height));
        }
        hit_fn = [h](const Ray& ray) -> std::optional<Vec3> {
            double t = std::numeric_limits<double>::infinity();
            for (int a = 0; a < 3; ++a)
                if (ray.dir[a] != 0.0) t = std::min(t, ((ray.dir[a] > 0 ? h : -h) - ray.origin[a]) / ray.dir[a]);
            return ray.origin + t * ray.dir;
        };
    } else if (name == "sphere") {
        constexpr double radius = 0.5;
        data.mesh = sphere_mesh(radius, 96, 192);
        const int n_train = opts.train_views < 0 ? 32 : opts.train_views;
        const int n_test = opts.test_views < 0 ? 8 : opts.test_views;
        const double focal = 0.5 * opts.width / std::tan(25.0 * std::numbers::pi / 180.0);
        for (int i = 0; i < n_train; ++i) {
            const Vec3 eye = 1.6 * fibonacci_direction(i, n_train);
            train_cams.push_back(Camera::look_at(eye, 0.05 * random_unit(rng), Vec3::UnitY(), focal, opts.width, opts.height));
        }
        for (int i = 0; i < n_test; ++i) {
            const Vec3 eye = 1.6 * random_unit(rng);
            test_cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), focal, opts.width, opts.height));
        }
        hit_fn = [radius](const Ray& ray) -> std::optional<Vec3> {
            const double b = ray.origin.dot(ray.dir);
            const double c = ray.origin.squaredNorm() - radius * radius;
            const double disc = b * b - c;
            if (disc < 0) return std::nullopt;
            const double t = -b - std::sqrt(disc);
            if (t <= kMinHitT) return std::nullopt;
            return ray.origin + t * ray.dir;
        };
    } else if (name == "tri") {
        data.mesh.positions = {Vec3(-0.5, -0.4, 0.0), Vec3(0.5, -0.4, 0.0), Vec3(0.0, 0.5, 0.0)};
        data.mesh.uvs = {Vec2(0.0, 1.0), Vec2(1.0, 1.0), Vec2(0.5, 0.0)};
        data.mesh.indices = {{0, 1, 2}};
        const int n_train = opts.train_views < 0 ? 3 : opts.train_views;
        const int n_test = opts.test_views < 0 ? 1 : opts.test_views;
        const double focal = 0.5 * opts.width / std::tan(30.0 * std::numbers::pi / 180.0);
        for (int i = 0; i < n_train + n_test; ++i) {
            const Vec3 eye(0.4 * unit(rng), 0.4 * unit(rng), 1.2 + 0.2 * unit(rng));
            auto cam = Camera::look_at(eye, Vec3(0, 0.05, 0), Vec3::UnitY(), focal, opts.width, opts.height);
            (i < n_train ? train_cams : test_cams).push_back(cam);
        }
        const TriMesh tri = data.mesh;
        hit_fn = [tri](const Ray& ray) -> std::optional<Vec3> {
            if (auto h = intersect_brute_force(tri, ray.origin, ray.dir)) return h->point;
            return std::nullopt;
        };
    } else {
        fail(ErrorKind::Domain, "unknown synthetic scene '" + name + "' (expected tri, box-room or sphere)");
    }
    for (const auto& cam : train_cams)
        data.train.push_back({cam, shade_ground_truth(cam, hit_fn, opts.view_offset, background)});
    for (const auto& cam : test_cams)
        data.test.push_back({cam, shade_ground_truth(cam, hit_fn, opts.view_offset, background)});
    return data;
}

}  // namespace mixrt

// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// CPU renderers: the surface pipeline (intersect -> calibrate -> contract ->
// encode -> decode) and a uniformly sampled volumetric reference.

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/displacement.hpp"
#include "mixrt/fields.hpp"
#include "mixrt/geometry.hpp"
#include "mixrt/image.hpp"
#include "mixrt/scene.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ostream>
#include <thread>
#include <vector>

namespace mixrt {

/// Pinhole camera. Camera space looks down -z with +y up; pixel (0,0) is top-left.
struct Camera {
    Vec3 position = Vec3::Zero();
    Mat3 rotation = Mat3::Identity();  // world-from-camera
    double focal = 1.0;                // pixels
    Vec2 principal = Vec2::Zero();     // pixels
    int width = 1;
    int height = 1;

    void validate() const {
        require(focal > 0.0 && std::isfinite(focal), ErrorKind::Domain, "camera focal must be positive");
        require(width > 0 && height > 0, ErrorKind::Domain, "camera image size must be positive");
        require(position.allFinite(), ErrorKind::Domain, "camera position must be finite");
        require((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6,
                ErrorKind::Domain, "camera rotation must be orthonormal");
    }

    /// Camera at `eye` looking at `target`, centered principal point.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                          int height) {
        Camera cam;
        cam.position = eye;
        const Vec3 back = (eye - target).normalized();
        Vec3 right = up.cross(back);
        if (right.norm() < 1e-9) right = Vec3::UnitX().cross(back);
        if (right.norm() < 1e-9) right = Vec3::UnitY().cross(back);
        right.normalize();
        const Vec3 true_up = back.cross(right);
        cam.rotation.col(0) = right;
        cam.rotation.col(1) = true_up;
        cam.rotation.col(2) = back;
        cam.focal = focal;
        cam.principal = Vec2(width * 0.5, height * 0.5);
        cam.width = width;
        cam.height = height;
        return cam;
    }
};

struct Ray {
    Vec3 origin;
    Vec3 dir;
};

/// Ray through the center of pixel (px, py).
inline Ray generate_ray(const Camera& cam, int px, int py) {
    require(px >= 0 && py >= 0 && px < cam.width && py < cam.height, ErrorKind::Domain,
            "generate_ray: pixel out of bounds");
    const Vec3 local((px + 0.5 - cam.principal.x()) / cam.focal, -(py + 0.5 - cam.principal.y()) / cam.focal, -1.0);
    return {cam.position, (cam.rotation * local).normalized()};
}

enum class RenderMode { Mixrt, VolumetricReference };

struct RenderSettings {
    Rgb background = Rgb::Ones();
    RenderMode mode = RenderMode::Mixrt;
    int samples_per_ray = 128;
    double near = 0.05;
    double far = 4.0;
    bool calibration = true;  // false disables the displacement maps
    int threads = 1;          // 0 = hardware concurrency

    void validate() const {
        require(background.allFinite(), ErrorKind::Domain, "background must be finite");
        if (mode == RenderMode::VolumetricReference) {
            require(near > 0.0 && far > near, ErrorKind::Domain, "volumetric rendering needs 0 < near < far");
            require(samples_per_ray >= 2, ErrorKind::Domain, "volumetric rendering needs >= 2 samples per ray");
        }
    }
};

inline int resolve_threads(int threads) {
    if (threads > 0) return threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(y) for every row, spreading rows over `threads` workers. Rows are
/// independent so the result does not depend on scheduling.
template <typename Fn>
void parallel_rows(int height, int threads, Fn&& fn) {
    threads = std::min(resolve_threads(threads), std::max(height, 1));
    if (threads <= 1) {
        for (int y = 0; y < height; ++y) fn(y);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int y = next++; y < height; y = next++) fn(y);
        });
    for (auto& th : pool) th.join();
}

/// Scratch buffers reused across the pixels of one worker.
struct ShadeWorkspace {
    std::vector<double> embedding;
    std::vector<double> coeffs;
    std::vector<double> basis;
    DecoderWorkspace decoder;
};

/// Read-only view of the parts the surface pipeline touches.
template <typename Real>
struct SurfaceSceneView {
    const TriMesh& mesh;
    const BvhAccel* accel;
    const DisplacementMaps& maps;
    const HashGridField<Real>& field;
};

/// Calibrated query point for a hit seen along `dir`.
inline Vec3 calibrate_hit(const DisplacementMaps& maps, const RayHit& hit, const Vec3& dir, ShadeWorkspace& ws) {
    const TexelStencil st = bilinear_stencil(maps.resolution, hit.uv);
    const int C = maps.channels();
    double scale = 0.0;
    for (int k = 0; k < 4; ++k) scale += st.weight[k] * maps.scale_map[st.texel[k]];
    if (scale == 0.0) return hit.point;
    ws.coeffs.assign(static_cast<std::size_t>(C), 0.0);
    for (int k = 0; k < 4; ++k) {
        const double w = st.weight[k];
        const double* src = maps.sh_map.data() + static_cast<std::size_t>(st.texel[k]) * C;
        for (int c = 0; c < C; ++c) ws.coeffs[c] += w * src[c];
    }
    const ShBasis basis(maps.sh_degree);
    ws.basis.resize(static_cast<std::size_t>(basis.basis_count()));
    sh_eval(basis, dir, ws.basis);
    return hit.point + sh_displacement(ws.basis, ws.coeffs) * scale;
}

template <typename Real>
Rgb shade_mixrt(const SurfaceSceneView<Real>& scene, const Ray& ray, const RenderSettings& settings,
                ShadeWorkspace& ws) {
    if (scene.accel == nullptr) return settings.background;
    const auto hit = scene.accel->intersect(scene.mesh, ray.origin, ray.dir);
    if (!hit) return settings.background;
    const Vec3 p = settings.calibration ? calibrate_hit(scene.maps, *hit, ray.dir, ws) : hit->point;
    ws.embedding.resize(static_cast<std::size_t>(scene.field.config.embedding_dim()));
    encode(scene.field, contract(p), std::span<double>(ws.embedding));
    return decode(scene.field.decoder, std::span<const double>(ws.embedding), false, ws.decoder).rgb;
}

template <typename Real>
void check_surface_scene(const SurfaceSceneView<Real>& scene) {
    scene.maps.validate();
    require(scene.field.decoder.input_dim() == scene.field.config.embedding_dim(), ErrorKind::DimensionMismatch,
            "decoder input does not match the hash-grid embedding");
    require(scene.mesh.empty() || scene.accel != nullptr, ErrorKind::DimensionMismatch, "mesh has no BVH");
}

template <typename Real>
Image render_mixrt(const SurfaceSceneView<Real>& scene, const Camera& camera, const RenderSettings& settings) {
    camera.validate();
    settings.validate();
    check_surface_scene(scene);
    Image img(camera.width, camera.height, settings.background);
    parallel_rows(camera.height, settings.threads, [&](int y) {
        ShadeWorkspace ws;
        for (int x = 0; x < camera.width; ++x) img.at(x, y) = shade_mixrt(scene, generate_ray(camera, x, y), settings, ws);
    });
    return img;
}

inline Image render_mixrt(const Scene& scene, const Camera& camera, const RenderSettings& settings) {
    return render_mixrt(SurfaceSceneView<double>{scene.mesh, scene.accel.get(), scene.maps, scene.field}, camera,
                        settings);
}

/// Uniform samples t_k = near + (far - near) k / (n - 1).
inline std::vector<double> uniform_samples(double near, double far, int n) {
    std::vector<double> t(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) t[k] = near + (far - near) * k / (n - 1);
    return t;
}

template <typename Real>
Rgb shade_volumetric(const HashGridField<Real>& field, const Ray& ray, const RenderSettings& settings,
                     std::span<const double> ts, std::vector<RaySample>& samples, ShadeWorkspace& ws) {
    ws.embedding.resize(static_cast<std::size_t>(field.config.embedding_dim()));
    samples.resize(ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
        encode(field, contract(ray.origin + ts[k] * ray.dir), std::span<double>(ws.embedding));
        const DecodeResult r = decode(field.decoder, std::span<const double>(ws.embedding), true, ws.decoder);
        samples[k] = {ts[k], *r.sigma, r.rgb};
    }
    return composite(samples, settings.background);
}

template <typename Real>
Image render_volumetric_reference(const HashGridField<Real>& field, const Camera& camera,
                                  const RenderSettings& settings) {
    camera.validate();
    settings.validate();
    require(settings.near > 0.0 && settings.far > settings.near, ErrorKind::Domain,
            "volumetric rendering needs 0 < near < far");
    require(settings.samples_per_ray >= 2, ErrorKind::Domain, "volumetric rendering needs >= 2 samples per ray");
    require(field.decoder.has_density(), ErrorKind::DimensionMismatch,
            "volumetric rendering needs a decoder with a density output");
    const std::vector<double> ts = uniform_samples(settings.near, settings.far, settings.samples_per_ray);
    Image img(camera.width, camera.height, settings.background);
    parallel_rows(camera.height, settings.threads, [&](int y) {
        ShadeWorkspace ws;
        std::vector<RaySample> samples;
        for (int x = 0; x < camera.width; ++x)
            img.at(x, y) = shade_volumetric(field, generate_ray(camera, x, y), settings, ts, samples, ws);
    });
    return img;
}

inline Image render(const Scene& scene, const Camera& camera, const RenderSettings& settings) {
    if (settings.mode == RenderMode::VolumetricReference)
        return render_volumetric_reference(scene.field, camera, settings);
    return render_mixrt(scene, camera, settings);
}

// ---------------------------------------------------------------------------
// Profiling
// ---------------------------------------------------------------------------

struct BenchRow {
    int levels = 0;
    std::uint32_t table_size = 0;
    double ms_median = 0.0;
    double ms_p10 = 0.0;
    double ms_p90 = 0.0;
};

struct BenchOptions {
    int frames = 5;            // timed frames per configuration (>= 5)
    std::vector<int> hidden;   // decoder hidden widths; empty = linear decoder
    std::uint64_t seed = 0;
};

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// Times single-threaded surface renders for each hash-grid configuration.
/// Fields are built up front (single-precision tables) and frames are timed
/// round-robin across configurations, so machine-load drift hits all alike.
inline std::vector<BenchRow> bench_configs(const TriMesh& mesh, const BvhAccel* accel, const DisplacementMaps& maps,
                                           const Camera& camera, const std::vector<HashGridConfig>& configs,
                                           const BenchOptions& opts) {
    require(opts.frames >= 5, ErrorKind::Domain, "bench needs at least 5 frames per configuration");
    RenderSettings settings;
    settings.threads = 1;
    std::vector<HashGridField<float>> fields;
    fields.reserve(configs.size());
    for (const auto& cfg : configs) {
        require(cfg.num_levels >= 1, ErrorKind::Domain, "bench: fewer than 1 level");
        std::mt19937_64 rng(opts.seed);
        fields.emplace_back(cfg, make_decoder<float>(cfg.embedding_dim(), opts.hidden, 3));
        init_field(fields.back(), rng, 0.5);
        render_mixrt(SurfaceSceneView<float>{mesh, accel, maps, fields.back()}, camera, settings);  // warm-up
    }
    std::vector<std::vector<double>> ms(configs.size());
    for (int f = 0; f < opts.frames; ++f)
        for (std::size_t c = 0; c < configs.size(); ++c) {
            const SurfaceSceneView<float> view{mesh, accel, maps, fields[c]};
            const auto t0 = std::chrono::steady_clock::now();
            const Image img = render_mixrt(view, camera, settings);
            const auto t1 = std::chrono::steady_clock::now();
            ms[c].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    std::vector<BenchRow> rows;
    for (std::size_t c = 0; c < configs.size(); ++c)
        rows.push_back({configs[c].num_levels, configs[c].table_size, percentile(ms[c], 0.5), percentile(ms[c], 0.1),
                        percentile(ms[c], 0.9)});
    return rows;
}

/// Level sweep at a fixed table size. A single level uses min_resolution.
inline std::vector<BenchRow> bench_levels(const TriMesh& mesh, const BvhAccel* accel, const DisplacementMaps& maps,
                                          const Camera& camera, const HashGridConfig& base,
                                          const std::vector<int>& level_counts, const BenchOptions& opts) {
    std::vector<HashGridConfig> configs;
    for (int levels : level_counts) {
        require(levels >= 1, ErrorKind::Domain, "bench: fewer than 1 level");
        HashGridConfig cfg = base;
        cfg.num_levels = levels;
        if (levels == 1) cfg.max_resolution = cfg.min_resolution;
        configs.push_back(cfg);
    }
    return bench_configs(mesh, accel, maps, camera, configs, opts);
}

inline std::vector<BenchRow> bench_table_sizes(const TriMesh& mesh, const BvhAccel* accel,
                                               const DisplacementMaps& maps, const Camera& camera,
                                               const HashGridConfig& base,
                                               const std::vector<std::uint32_t>& table_sizes,
                                               const BenchOptions& opts) {
    std::vector<HashGridConfig> configs;
    for (auto ts : table_sizes) {
        HashGridConfig cfg = base;
        cfg.table_size = ts;
        configs.push_back(cfg);
    }
    return bench_configs(mesh, accel, maps, camera, configs, opts);
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "levels,table_size,ms_median,ms_p10,ms_p90\n";
    for (const auto& r : rows)
        os << r.levels << ',' << r.table_size << ',' << r.ms_median << ',' << r.ms_p10 << ',' << r.ms_p90 << '\n';
}

}  // namespace mixrt

// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// Joint optimization of hash tables, decoder and displacement maps against
// posed images. The mesh is frozen, so ray-mesh hits are cached up front.

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/displacement.hpp"
#include "mixrt/fields.hpp"
#include "mixrt/geometry.hpp"
#include "mixrt/image.hpp"
#include "mixrt/renderer.hpp"
#include "mixrt/scene.hpp"

#include <atomic>
#include <functional>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

namespace mixrt {

struct TrainConfig {
    int iterations = 2000;
    int batch_size = 4096;
    double lr_tables = 1e-2;
    double lr_decoder = 1e-3;
    double lr_sh = 1e-3;
    double lr_scale = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-15;
    /// Learning rates decay exponentially to this fraction of their initial value.
    double lr_final_fraction = 1.0;
    std::uint64_t seed = 0;
    int log_interval = 10;
    bool use_displacement = true;  // false trains (and renders) without the maps
    int threads = 1;

    void validate() const {
        require(iterations >= 0, ErrorKind::Domain, "iterations must be non-negative");
        require(batch_size >= 1, ErrorKind::Domain, "batch size must be >= 1");
        require(lr_tables > 0 && lr_decoder > 0 && lr_sh > 0 && lr_scale > 0, ErrorKind::Domain,
                "learning rates must be positive");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0, ErrorKind::Domain,
                "invalid optimizer moments");
        require(lr_final_fraction > 0 && lr_final_fraction <= 1, ErrorKind::Domain,
                "lr_final_fraction must be in (0, 1]");
        require(log_interval >= 1, ErrorKind::Domain, "log interval must be >= 1");
    }
};

struct TrainRay {
    Vec3 origin;
    Vec3 dir;
    Rgb target;
    RayHit hit;
};

struct TrainBatch {
    std::vector<TrainRay> rays;
};

struct View {
    Camera camera;
    Image image;
};

/// Mean squared error over all channels of all rays.
inline double loss(std::span<const Rgb> predicted, std::span<const Rgb> target) {
    require(predicted.size() == target.size(), ErrorKind::DimensionMismatch, "loss: length mismatch");
    if (predicted.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - target[i]).squaredNorm();
    return sum / (3.0 * static_cast<double>(predicted.size()));
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

enum class ParamGroup { Tables = 0, Decoder = 1, ShMap = 2, ScaleMap = 3 };
inline constexpr int kParamGroupCount = 4;

struct Gradients {
    std::vector<std::vector<double>> tables;
    DecoderWeights<double> decoder;
    std::vector<double> sh_map;
    std::vector<double> scale_map;

    static Gradients zeros_like(const Scene& scene) {
        Gradients g;
        g.tables.reserve(scene.field.tables.size());
        for (const auto& t : scene.field.tables) g.tables.emplace_back(t.size(), 0.0);
        g.decoder = scene.field.decoder;
        zero_decoder(g.decoder);
        g.sh_map.assign(scene.maps.sh_map.size(), 0.0);
        g.scale_map.assign(scene.maps.scale_map.size(), 0.0);
        return g;
    }

    void zero() {
        for (auto& t : tables) std::fill(t.begin(), t.end(), 0.0);
        zero_decoder(decoder);
        std::fill(sh_map.begin(), sh_map.end(), 0.0);
        std::fill(scale_map.begin(), scale_map.end(), 0.0);
    }

    static void zero_decoder(DecoderWeights<double>& d) {
        for (auto& l : d.layers) {
            std::fill(l.weight.begin(), l.weight.end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }
    }
};

/// Flat views over every parameter of one group, in a fixed order.
inline std::vector<std::span<double>> param_spans(Scene& scene, ParamGroup group) {
    std::vector<std::span<double>> out;
    switch (group) {
        case ParamGroup::Tables:
            for (auto& t : scene.field.tables) out.emplace_back(t);
            break;
        case ParamGroup::Decoder:
            for (auto& l : scene.field.decoder.layers) {
                out.emplace_back(l.weight);
                out.emplace_back(l.bias);
            }
            break;
        case ParamGroup::ShMap: out.emplace_back(scene.maps.sh_map); break;
        case ParamGroup::ScaleMap: out.emplace_back(scene.maps.scale_map); break;
    }
    return out;
}

inline std::vector<std::span<double>> grad_spans(Gradients& g, ParamGroup group) {
    std::vector<std::span<double>> out;
    switch (group) {
        case ParamGroup::Tables:
            for (auto& t : g.tables) out.emplace_back(t);
            break;
        case ParamGroup::Decoder:
            for (auto& l : g.decoder.layers) {
                out.emplace_back(l.weight);
                out.emplace_back(l.bias);
            }
            break;
        case ParamGroup::ShMap: out.emplace_back(g.sh_map); break;
        case ParamGroup::ScaleMap: out.emplace_back(g.scale_map); break;
    }
    return out;
}

namespace train_detail {

struct TableRecord {
    std::uint32_t offset;  // index * feature_dim + feature
    std::uint16_t level;
    double value;
};

struct MapRecord {
    std::uint32_t offset;  // into sh_map, or into scale_map when is_scale
    bool is_scale;
    double value;
};

/// Gradient contribution of a contiguous chunk of rays.
struct ChunkGrad {
    DecoderWeights<double> decoder;
    std::vector<TableRecord> tables;
    std::vector<MapRecord> maps;
    double loss_sum = 0.0;
};

struct RayWorkspace {
    std::vector<double> coeffs, basis, embedding, d_embedding;
    std::vector<LevelStencil> stencils;
    DecoderTape tape;
};

/// Forward + backward for one ray. `loss_scale` multiplies the squared error.
inline Rgb ray_backward(const Scene& scene, const TrainRay& ray, bool use_displacement, double loss_scale,
                        ChunkGrad& out, RayWorkspace& ws) {
    const auto& field = scene.field;
    const auto& cfg = field.config;
    const auto& maps = scene.maps;
    const int F = cfg.feature_dim;

    // Displacement.
    Vec3 p = ray.hit.point;
    TexelStencil tex{};
    double scale = 0.0;
    Vec3 shv = Vec3::Zero();
    const int C = maps.channels();
    const int B = maps.basis_count();
    if (use_displacement) {
        tex = bilinear_stencil(maps.resolution, ray.hit.uv);
        ws.coeffs.assign(static_cast<std::size_t>(C), 0.0);
        for (int k = 0; k < 4; ++k) {
            const double w = tex.weight[k];
            const double* src = maps.sh_map.data() + static_cast<std::size_t>(tex.texel[k]) * C;
            for (int c = 0; c < C; ++c) ws.coeffs[c] += w * src[c];
            scale += w * maps.scale_map[tex.texel[k]];
        }
        ws.basis.resize(static_cast<std::size_t>(B));
        sh_eval(ShBasis(maps.sh_degree), ray.dir, ws.basis);
        shv = sh_displacement(ws.basis, ws.coeffs);
        p += shv * scale;
    }

    // Contraction and encoding.
    const Vec3 c = contract(p);
    require_in_grid_domain(c);
    const Vec3 g = contracted_to_grid(c).cwiseMax(0.0).cwiseMin(1.0);
    ws.stencils.resize(static_cast<std::size_t>(cfg.num_levels));
    ws.embedding.assign(static_cast<std::size_t>(cfg.embedding_dim()), 0.0);
    for (int l = 0; l < cfg.num_levels; ++l) {
        ws.stencils[l] = level_stencil(g, field.resolutions[l], cfg.table_size);
        const auto& st = ws.stencils[l];
        for (int k = 0; k < 8; ++k) {
            const double* e = field.tables[l].data() + static_cast<std::size_t>(st.index[k]) * F;
            for (int f = 0; f < F; ++f) ws.embedding[l * F + f] += st.weight[k] * e[f];
        }
    }

    // Decoder and loss.
    const DecodeResult r = decode_forward(field.decoder, ws.embedding, ws.tape);
    const Rgb diff = r.rgb - ray.target;
    out.loss_sum += diff.squaredNorm();
    const Rgb d_rgb = 2.0 * loss_scale * diff;
    decode_backward(field.decoder, ws.tape, d_rgb, out.decoder, ws.d_embedding);

    // Tables, and the spatial gradient of the encoding.
    Vec3 d_grid = Vec3::Zero();
    for (int l = 0; l < cfg.num_levels; ++l) {
        const auto& st = ws.stencils[l];
        const double* de = ws.d_embedding.data() + l * F;
        const double res = field.resolutions[l];
        for (int k = 0; k < 8; ++k) {
            const std::uint32_t base = st.index[k] * static_cast<std::uint32_t>(F);
            for (int f = 0; f < F; ++f)
                if (de[f] != 0.0 && st.weight[k] != 0.0)
                    out.tables.push_back({base + static_cast<std::uint32_t>(f), static_cast<std::uint16_t>(l),
                                          st.weight[k] * de[f]});
            if (!use_displacement) continue;
            const double* e = field.tables[l].data() + static_cast<std::size_t>(st.index[k]) * F;
            double de_dot = 0.0;
            for (int f = 0; f < F; ++f) de_dot += de[f] * e[f];
            for (int a = 0; a < 3; ++a) d_grid[a] += de_dot * stencil_weight_derivative(st, k, a) * res;
        }
    }
    if (!use_displacement) return r.rgb;

    // Back through grid mapping, contraction and calibration (p + S * s).
    const Vec3 d_c = d_grid / 4.0;
    const Vec3 d_p = contract_jacobian(p).transpose() * d_c;
    const double d_scale = d_p.dot(shv);
    for (int k = 0; k < 4; ++k) {
        const double w = tex.weight[k];
        if (w == 0.0) continue;
        out.maps.push_back({tex.texel[k], true, w * d_scale});
        const std::uint32_t base = tex.texel[k] * static_cast<std::uint32_t>(C);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < B; ++b)
                out.maps.push_back({base + static_cast<std::uint32_t>(a * B + b), false,
                                    w * d_p[a] * scale * ws.basis[b]});
    }
    return r.rgb;
}

inline constexpr std::size_t kChunkRays = 256;

}  // namespace train_detail

struct BackwardResult {
    double loss = 0.0;
    std::vector<Rgb> predicted;
};

/// Gradients of the batch L2 loss with respect to every parameter group.
/// Rays are processed in fixed-size chunks whose contributions are reduced in
/// chunk order, so the result does not depend on the thread count.
inline BackwardResult backward(const Scene& scene, const TrainBatch& batch, Gradients& grads,
                               bool use_displacement = true, int threads = 1) {
    const std::size_t n = batch.rays.size();
    grads.zero();
    BackwardResult result;
    result.predicted.resize(n);
    if (n == 0) return result;
    for (const auto& ray : batch.rays)
        require(ray.hit.face < scene.mesh.face_count(), ErrorKind::DimensionMismatch,
                "backward: cached hit references a face not in the mesh");
    const double loss_scale = 1.0 / (3.0 * static_cast<double>(n));
    const std::size_t chunks = (n + train_detail::kChunkRays - 1) / train_detail::kChunkRays;
    std::vector<train_detail::ChunkGrad> partial(chunks);
    auto run_chunk = [&](std::size_t ci, train_detail::RayWorkspace& ws) {
        auto& cg = partial[ci];
        cg.decoder = grads.decoder;  // zeroed shape
        const std::size_t begin = ci * train_detail::kChunkRays;
        const std::size_t end = std::min(n, begin + train_detail::kChunkRays);
        for (std::size_t i = begin; i < end; ++i)
            result.predicted[i] =
                train_detail::ray_backward(scene, batch.rays[i], use_displacement, loss_scale, cg, ws);
    };
    const int workers = std::min<int>(resolve_threads(threads), static_cast<int>(chunks));
    if (workers <= 1) {
        train_detail::RayWorkspace ws;
        for (std::size_t ci = 0; ci < chunks; ++ci) run_chunk(ci, ws);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                train_detail::RayWorkspace ws;
                for (std::size_t ci = next++; ci < chunks; ci = next++) run_chunk(ci, ws);
            });
        for (auto& th : pool) th.join();
    }
    double loss_sum = 0.0;
    for (auto& cg : partial) {
        loss_sum += cg.loss_sum;
        for (std::size_t li = 0; li < grads.decoder.layers.size(); ++li) {
            auto& dst = grads.decoder.layers[li];
            const auto& src = cg.decoder.layers[li];
            for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] += src.weight[i];
            for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
        }
        for (const auto& rec : cg.tables) grads.tables[rec.level][rec.offset] += rec.value;
        for (const auto& rec : cg.maps) (rec.is_scale ? grads.scale_map : grads.sh_map)[rec.offset] += rec.value;
    }
    result.loss = loss_sum * loss_scale;
    return result;
}

/// Batch loss through the renderer's shading path (used as an independent
/// forward for finite-difference checks).
inline double batch_loss(const Scene& scene, const TrainBatch& batch, bool use_displacement = true) {
    std::vector<Rgb> pred, target;
    ShadeWorkspace ws;
    for (const auto& ray : batch.rays) {
        const Vec3 p = use_displacement ? calibrate_hit(scene.maps, ray.hit, ray.dir, ws) : ray.hit.point;
        ws.embedding.resize(static_cast<std::size_t>(scene.field.config.embedding_dim()));
        encode(scene.field, contract(p), std::span<double>(ws.embedding));
        pred.push_back(decode(scene.field.decoder, std::span<const double>(ws.embedding), false, ws.decoder).rgb);
        target.push_back(ray.target);
    }
    return loss(pred, target);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamMoments {
    std::vector<std::vector<double>> m, v;  // one vector per parameter span
};

struct OptimizerState {
    long step = 0;
    std::array<AdamMoments, kParamGroupCount> groups;
};

inline OptimizerState make_optimizer_state(Scene& scene) {
    OptimizerState s;
    for (int g = 0; g < kParamGroupCount; ++g) {
        for (auto sp : param_spans(scene, static_cast<ParamGroup>(g))) {
            s.groups[g].m.emplace_back(sp.size(), 0.0);
            s.groups[g].v.emplace_back(sp.size(), 0.0);
        }
    }
    return s;
}

/// Adam update of one parameter span. Entries whose gradient is exactly zero
/// keep their value; their moments still decay.
inline void adam_update(std::span<double> params, std::span<const double> grads, std::vector<double>& m,
                        std::vector<double>& v, double lr, double beta1, double beta2, double eps, long step) {
    require(params.size() == grads.size() && params.size() == m.size() && params.size() == v.size(),
            ErrorKind::DimensionMismatch, "adam: shape mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        if (g == 0.0) continue;
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

struct GroupRates {
    std::array<double, kParamGroupCount> lr{};
    std::array<bool, kParamGroupCount> enabled{true, true, true, true};
};

inline GroupRates rates_from(const TrainConfig& cfg, double factor = 1.0) {
    GroupRates r;
    r.lr = {cfg.lr_tables * factor, cfg.lr_decoder * factor, cfg.lr_sh * factor, cfg.lr_scale * factor};
    r.enabled = {true, true, cfg.use_displacement, cfg.use_displacement};
    return r;
}

/// One optimizer step over every enabled parameter group.
inline void step(OptimizerState& state, Scene& scene, Gradients& grads, const TrainConfig& cfg,
                 const GroupRates& rates) {
    ++state.step;
    for (int g = 0; g < kParamGroupCount; ++g) {
        if (!rates.enabled[g]) continue;
        auto ps = param_spans(scene, static_cast<ParamGroup>(g));
        auto gs = grad_spans(grads, static_cast<ParamGroup>(g));
        require(ps.size() == gs.size() && ps.size() == state.groups[g].m.size(), ErrorKind::DimensionMismatch,
                "optimizer step: parameter group shape mismatch");
        for (std::size_t i = 0; i < ps.size(); ++i)
            adam_update(ps[i], gs[i], state.groups[g].m[i], state.groups[g].v[i], rates.lr[g], cfg.beta1, cfg.beta2,
                        cfg.epsilon, state.step);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One ray per pixel that hits the mesh; misses are dropped.
inline std::vector<TrainRay> cache_training_rays(const Scene& scene, std::span<const View> views, int threads = 1) {
    std::vector<TrainRay> rays;
    if (!scene.accel) return rays;
    for (const auto& view : views) {
        view.camera.validate();
        require(view.image.width == view.camera.width && view.image.height == view.camera.height,
                ErrorKind::DimensionMismatch, "training view image does not match its camera");
        std::vector<std::vector<TrainRay>> rows(static_cast<std::size_t>(view.camera.height));
        parallel_rows(view.camera.height, threads, [&](int y) {
            for (int x = 0; x < view.camera.width; ++x) {
                const Ray ray = generate_ray(view.camera, x, y);
                if (auto hit = scene.accel->intersect(scene.mesh, ray.origin, ray.dir))
                    rows[y].push_back({ray.origin, ray.dir, view.image.at(x, y), *hit});
            }
        });
        for (auto& r : rows) rays.insert(rays.end(), r.begin(), r.end());
    }
    return rays;
}

struct LossRecord {
    int iteration = 0;  // last iteration of the interval
    double loss = 0.0;  // mean batch loss over the interval
};

struct TrainResult {
    std::vector<LossRecord> history;
    std::size_t training_rays = 0;
};

using TrainCallback = std::function<void(const LossRecord&)>;

inline TrainResult train(Scene& scene, std::span<const View> dataset, const TrainConfig& cfg,
                         const TrainCallback& on_log = {}) {
    cfg.validate();
    require(!dataset.empty(), ErrorKind::Domain, "train: empty dataset");
    scene.validate();
    TrainResult result;
    if (cfg.iterations == 0) return result;
    const std::vector<TrainRay> rays = cache_training_rays(scene, dataset, cfg.threads);
    require(!rays.empty(), ErrorKind::Domain, "train: no training ray hits the mesh");
    result.training_rays = rays.size();

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, rays.size() - 1);
    Gradients grads = Gradients::zeros_like(scene);
    OptimizerState opt = make_optimizer_state(scene);
    TrainBatch batch;
    batch.rays.resize(static_cast<std::size_t>(cfg.batch_size));
    double interval_sum = 0.0;
    int interval_count = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        for (auto& r : batch.rays) r = rays[pick(rng)];
        const BackwardResult br = backward(scene, batch, grads, cfg.use_displacement, cfg.threads);
        if (!std::isfinite(br.loss)) {
            std::ostringstream os;
            os << "train: non-finite loss at iteration " << it << " (last logged loss "
               << (result.history.empty() ? 0.0 : result.history.back().loss) << ")";
            fail(ErrorKind::Numeric, os.str());
        }
        const double progress = cfg.iterations > 1 ? static_cast<double>(it) / (cfg.iterations - 1) : 0.0;
        step(opt, scene, grads, cfg, rates_from(cfg, std::pow(cfg.lr_final_fraction, progress)));
        interval_sum += br.loss;
        ++interval_count;
        if (interval_count == cfg.log_interval || it + 1 == cfg.iterations) {
            LossRecord rec{it, interval_sum / interval_count};
            result.history.push_back(rec);
            if (on_log) on_log(rec);
            interval_sum = 0.0;
            interval_count = 0;
        }
    }
    require(scene.field.all_finite() && scene.maps.all_finite(), ErrorKind::Numeric,
            "train: parameters became non-finite");
    return result;
}

/// Fresh trainable scene around a frozen mesh: random tables and decoder,
/// zero SH map and a constant scale map. A nonzero scale keeps the SH
/// coefficients trainable; the initial displacement is still zero.
struct SceneInit {
    HashGridConfig grid;
    std::vector<int> decoder_hidden = {16, 16};
    int map_resolution = 1536;
    int sh_degree = 2;
    double scale_init = 0.05;
    Rgb background = Rgb::Ones();
    std::uint64_t seed = 0;
};

inline Scene make_scene(TriMesh mesh, const SceneInit& init) {
    Scene scene;
    scene.mesh = std::move(mesh);
    scene.rebuild_accel();
    scene.field = HashGridField<double>(init.grid, make_decoder<double>(init.grid.embedding_dim(), init.decoder_hidden));
    std::mt19937_64 rng(init.seed);
    init_field(scene.field, rng);
    scene.maps = DisplacementMaps(init.map_resolution, init.sh_degree);
    std::fill(scene.maps.scale_map.begin(), scene.maps.scale_map.end(), init.scale_init);
    scene.background = init.background;
    return scene;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& history) {
    os << "iteration,loss\n";
    os.precision(10);
    for (const auto& r : history) os << r.iteration << ',' << r.loss << '\n';
}

}  // namespace mixrt

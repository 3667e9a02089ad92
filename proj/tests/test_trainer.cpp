// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace mixrt;

namespace {

TriMesh big_triangle() {
    TriMesh m;
    m.positions = {Vec3(-1, -1, 0), Vec3(1, -1, 0), Vec3(0, 1, 0)};
    m.uvs = {Vec2(0, 0), Vec2(1, 0), Vec2(0.5, 1)};
    m.indices = {{0, 1, 2}};
    return m;
}

SceneInit tiny_init(std::uint64_t seed) {
    SceneInit init;
    init.grid.num_levels = 2;
    init.grid.table_size = 1u << 10;
    init.grid.feature_dim = 2;
    init.grid.min_resolution = 8;
    init.grid.max_resolution = 16;
    init.decoder_hidden = {8};
    init.map_resolution = 8;
    init.sh_degree = 1;
    init.seed = seed;
    return init;
}

std::vector<View> constant_views(const Rgb& color) {
    std::vector<View> views;
    for (int i = 0; i < 3; ++i) {
        const Vec3 eye(0.3 * (i - 1), 0.1 * i, 1.5);
        const Camera cam = Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), 24, 16, 16);
        views.push_back({cam, Image(16, 16, color)});
    }
    return views;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST(Loss, Examples) {
    const std::vector<Rgb> a = {Rgb(0.1, 0.2, 0.3), Rgb(0.9, 0.8, 0.7)};
    EXPECT_EQ(loss(a, a), 0.0);
    const std::vector<Rgb> p = {Rgb(0.5, 0.2, 0.2)}, t = {Rgb(0.0, 0.2, 0.2)};
    EXPECT_NEAR(loss(p, t), 0.25 / 3, 1e-15);
    const std::vector<Rgb> b = {Rgb(0.0, 1.0, 0.3), Rgb(0.2, 0.1, 0.0)};
    EXPECT_EQ(loss(a, b), loss(b, a));
    EXPECT_GT(loss(a, b), 0.0);
    EXPECT_THROW(loss(a, p), Error);
}

TEST(Backward, ZeroResidualGivesZeroGradients) {
    auto c = check::gradcheck_case(1, 16);
    std::fill(c.scene.maps.scale_map.begin(), c.scene.maps.scale_map.end(), 0.0);
    for (auto& r : c.batch.rays) {
        TrainBatch one;
        one.rays = {r};
        Gradients g = Gradients::zeros_like(c.scene);
        r.target = backward(c.scene, one, g).predicted[0];
    }
    Gradients g = Gradients::zeros_like(c.scene);
    const BackwardResult br = backward(c.scene, c.batch, g);
    EXPECT_EQ(br.loss, 0.0);
    for (int k = 0; k < kParamGroupCount; ++k)
        for (auto s : grad_spans(g, static_cast<ParamGroup>(k)))
            for (double v : s) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ForwardMatchesRenderer) {
    auto c = check::gradcheck_case(2, 32);
    Gradients g = Gradients::zeros_like(c.scene);
    const BackwardResult br = backward(c.scene, c.batch, g);
    EXPECT_NEAR(br.loss, batch_loss(c.scene, c.batch), 1e-14);
    const RenderSettings rs;
    for (std::size_t i = 0; i < c.batch.rays.size(); ++i) {
        const auto& r = c.batch.rays[i];
        ShadeWorkspace ws;
        const SurfaceSceneView<double> view{c.scene.mesh, c.scene.accel.get(), c.scene.maps, c.scene.field};
        EXPECT_LE((br.predicted[i] - shade_mixrt(view, Ray{r.origin, r.dir}, rs, ws)).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Backward, MatchesFiniteDifferences) {
    auto c = check::gradcheck_case(3);
    const auto report = check::gradient_check(c, 200, 1e-4, 1e-4, 4);
    for (int g = 0; g < kParamGroupCount; ++g) {
        EXPECT_EQ(report.groups[g].checked, 200) << "group " << g;
        EXPECT_EQ(report.groups[g].failed, 0) << "group " << g << " max rel " << report.groups[g].max_rel_error;
        EXPECT_LE(report.groups[g].kinks, 20) << "group " << g;
    }
    EXPECT_TRUE(report.ok());
}

TEST(Backward, UntouchedTableEntriesGetZero) {
    auto c = check::gradcheck_case(5, 8);
    Gradients g = Gradients::zeros_like(c.scene);
    backward(c.scene, c.batch, g);
    const auto& cfg = c.scene.field.config;
    for (int l = 0; l < cfg.num_levels; ++l) {
        std::set<std::uint32_t> touched;
        for (const auto& r : c.batch.rays) {
            const Vec3 p = calibrate(c.scene.maps, r.hit.point, r.hit.uv, r.dir);
            const LevelStencil st =
                level_stencil(contracted_to_grid(contract(p)), c.scene.field.resolutions[l], cfg.table_size);
            touched.insert(st.index.begin(), st.index.end());
        }
        for (std::uint32_t e = 0; e < cfg.table_size; ++e) {
            if (touched.count(e)) continue;
            for (int f = 0; f < cfg.feature_dim; ++f)
                ASSERT_EQ(g.tables[l][static_cast<std::size_t>(e) * cfg.feature_dim + f], 0.0);
        }
    }
}

TEST(Backward, ThreadCountDoesNotChangeResult) {
    auto c = check::gradcheck_case(6, 700);
    Gradients a = Gradients::zeros_like(c.scene), b = a;
    const double la = backward(c.scene, c.batch, a, true, 1).loss;
    const double lb = backward(c.scene, c.batch, b, true, 3).loss;
    EXPECT_EQ(la, lb);
    EXPECT_EQ(a.tables, b.tables);
    EXPECT_EQ(a.sh_map, b.sh_map);
    EXPECT_EQ(a.scale_map, b.scale_map);
    for (std::size_t l = 0; l < a.decoder.layers.size(); ++l) EXPECT_EQ(a.decoder.layers[l].weight, b.decoder.layers[l].weight);
}

TEST(Backward, RejectsStaleHitCache) {
    auto c = check::gradcheck_case(7, 4);
    c.batch.rays[2].hit.face = static_cast<std::uint32_t>(c.scene.mesh.face_count());
    Gradients g = Gradients::zeros_like(c.scene);
    EXPECT_THROW(backward(c.scene, c.batch, g), Error);
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
    std::vector<double> p = {1.0, -2.0}, g = {0.0, 0.0}, m = {0.4, -0.2}, v = {0.3, 0.1};
    adam_update(p, g, m, v, 0.1, 0.9, 0.99, 1e-15, 3);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
    EXPECT_NEAR(m[0], 0.36, 1e-15);
    EXPECT_NEAR(v[1], 0.099, 1e-15);
}

TEST(Adam, FirstStepIsLearningRate) {
    for (double grad : {3.0, -0.02, 1e-5}) {
        std::vector<double> p = {0.5}, g = {grad}, m = {0.0}, v = {0.0};
        adam_update(p, g, m, v, 0.01, 0.9, 0.99, 1e-15, 1);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        EXPECT_NEAR(p[0], 0.5 - 0.01 * grad / (std::abs(grad) + 1e-15), 1e-15);
        EXPECT_NEAR(p[0], 0.5 - 0.01 * (grad > 0 ? 1 : -1), 1e-9);
    }
}

TEST(Adam, GroupsUpdateIndependently) {
    Scene s = make_scene(big_triangle(), tiny_init(8));
    Gradients g = Gradients::zeros_like(s);
    g.tables[0][0] = 1.0;
    g.decoder.layers[0].bias[0] = 1.0;
    g.sh_map[0] = 1.0;
    g.scale_map[0] = 1.0;
    TrainConfig cfg;
    GroupRates r = rates_from(cfg);
    r.lr = {0.1, 0.2, 0.3, 0.4};
    const Scene before = s;
    OptimizerState st = make_optimizer_state(s);
    step(st, s, g, cfg, r);
    EXPECT_NEAR(before.field.tables[0][0] - s.field.tables[0][0], 0.1, 1e-12);
    EXPECT_NEAR(before.field.decoder.layers[0].bias[0] - s.field.decoder.layers[0].bias[0], 0.2, 1e-12);
    EXPECT_NEAR(before.maps.sh_map[0] - s.maps.sh_map[0], 0.3, 1e-12);
    EXPECT_NEAR(before.maps.scale_map[0] - s.maps.scale_map[0], 0.4, 1e-12);
    EXPECT_EQ(before.field.tables[0][1], s.field.tables[0][1]);
    EXPECT_EQ(before.maps.sh_map[1], s.maps.sh_map[1]);
    r.enabled[2] = r.enabled[3] = false;
    const Scene mid = s;
    step(st, s, g, cfg, r);
    EXPECT_EQ(mid.maps.sh_map, s.maps.sh_map);
    EXPECT_EQ(mid.maps.scale_map, s.maps.scale_map);
    EXPECT_NE(mid.field.tables[0][0], s.field.tables[0][0]);
}

TEST(Train, ZeroIterationsLeavesSceneUnchanged) {
    Scene s = make_scene(big_triangle(), tiny_init(9));
    const Scene before = s;
    TrainConfig cfg;
    cfg.iterations = 0;
    const auto views = constant_views(Rgb(0.2, 0.4, 0.6));
    const TrainResult r = train(s, views, cfg);
    EXPECT_TRUE(r.history.empty());
    EXPECT_EQ(s.field.tables, before.field.tables);
    EXPECT_EQ(s.maps.sh_map, before.maps.sh_map);
    EXPECT_EQ(s.maps.scale_map, before.maps.scale_map);
}

TEST(Train, ConstantTargetConverges) {
    Scene s = make_scene(big_triangle(), tiny_init(10));
    const auto views = constant_views(Rgb(0.2, 0.4, 0.6));
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.batch_size = 256;
    cfg.log_interval = 50;
    const TrainResult r = train(s, views, cfg);
    ASSERT_EQ(r.history.size(), 10u);
    EXPECT_LT(r.history.back().loss, 1e-4);
    EXPECT_GT(r.training_rays, 0u);
}

TEST(Train, GeometryIsImmutableAndRunIsSeeded) {
    Dataset data = make_synthetic("tri", SyntheticOptions{.seed = 3, .width = 32, .height = 32});
    auto views_of = [](const Dataset& d) { return d.train; };
    Scene a = make_scene(data.mesh, tiny_init(11)), b = a;
    const TriMesh mesh = a.mesh;
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.batch_size = 128;
    cfg.seed = 5;
    const auto ra = train(a, views_of(data), cfg);
    const auto rb = train(b, views_of(data), cfg);
    EXPECT_TRUE(a.mesh == mesh);
    ASSERT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].loss, rb.history[i].loss);
    EXPECT_EQ(a.field.tables, b.field.tables);
    EXPECT_EQ(a.maps.sh_map, b.maps.sh_map);
}

TEST(Train, LossTrendsDown) {
    Dataset data = make_synthetic("tri", SyntheticOptions{.seed = 4, .width = 32, .height = 32});
    Scene s = make_scene(data.mesh, tiny_init(12));
    TrainConfig cfg;
    cfg.iterations = 300;
    cfg.batch_size = 256;
    cfg.log_interval = 1;
    const auto r = train(s, data.train, cfg);
    std::vector<double> first, last;
    for (std::size_t i = 0; i < 30; ++i) first.push_back(r.history[i].loss);
    for (std::size_t i = r.history.size() - 30; i < r.history.size(); ++i) last.push_back(r.history[i].loss);
    EXPECT_LT(median(last), median(first));
}

TEST(Train, WithoutDisplacementLeavesMapsAlone) {
    Scene s = make_scene(big_triangle(), tiny_init(13));
    const Scene before = s;
    TrainConfig cfg;
    cfg.iterations = 20;
    cfg.batch_size = 64;
    cfg.use_displacement = false;
    train(s, constant_views(Rgb(0.9, 0.1, 0.1)), cfg);
    EXPECT_EQ(s.maps.sh_map, before.maps.sh_map);
    EXPECT_EQ(s.maps.scale_map, before.maps.scale_map);
    EXPECT_NE(s.field.tables, before.field.tables);
}

TEST(Train, Errors) {
    Scene s = make_scene(big_triangle(), tiny_init(14));
    TrainConfig cfg;
    EXPECT_THROW(train(s, std::vector<View>{}, cfg), Error);
    cfg.lr_tables = 0;
    EXPECT_THROW(train(s, constant_views(Rgb::Ones()), cfg), Error);
    cfg = TrainConfig{};
    cfg.iterations = 5;
    std::vector<View> away = constant_views(Rgb::Ones());
    for (auto& v : away) v.camera = Camera::look_at(Vec3(0, 0, 1.5), Vec3(0, 0, 3), Vec3::UnitY(), 24, 16, 16);
    EXPECT_THROW(train(s, away, cfg), Error);
}

TEST(Train, LossCsv) {
    std::ostringstream os;
    write_loss_csv(os, {{9, 0.5}, {19, 0.25}});
    EXPECT_EQ(os.str(), "iteration,loss\n9,0.5\n19,0.25\n");
}

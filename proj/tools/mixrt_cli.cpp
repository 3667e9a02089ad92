// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// mixrt command-line tool. Every command prints one JSON line on success.
// Exit codes: 0 ok, 2 usage/invalid argument, 3 I/O or file format, 4 numeric failure.

#include "mixrt/mixrt.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mixrt;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Domain: return kUsage;
        case ErrorKind::Numeric: return kNumeric;
        default: return kIo;
    }
}

struct Globals {
    std::uint64_t seed = 0;
    int threads = 0;
    std::string log_level = "info";
    bool verbose() const { return log_level == "debug" || log_level == "info"; }
};

void log(const Globals& g, const std::string& msg) {
    if (g.verbose()) std::cerr << "[mixrt] " << msg << '\n';
}

void emit(json summary) { std::cout << summary.dump() << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto dots = item.find("..");
        if (dots != std::string::npos) {
            const int a = std::stoi(item.substr(0, dots)), b = std::stoi(item.substr(dots + 2));
            for (int v = a; v <= b; ++v) out.push_back(v);
        } else {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

struct GridFlags {
    int levels = 4;
    int table_log2 = 21;
    int features = 4;
    int min_res = 256;
    int max_res = 4096;
    std::string hidden = "16,16";

    void add(CLI::App* app, bool with_levels = true) {
        if (with_levels) app->add_option("--levels", levels, "hash-grid levels")->capture_default_str();
        app->add_option("--table-log2", table_log2, "log2 of the per-level table size")->capture_default_str();
        app->add_option("--features", features, "features per table entry")->capture_default_str();
        app->add_option("--min-res", min_res, "coarsest level resolution")->capture_default_str();
        app->add_option("--max-res", max_res, "finest level resolution")->capture_default_str();
        app->add_option("--hidden", hidden, "decoder hidden widths, comma separated")->capture_default_str();
    }

    HashGridConfig config() const {
        require(table_log2 >= 0 && table_log2 <= 30, ErrorKind::Domain, "--table-log2 must be in [0, 30]");
        HashGridConfig cfg;
        cfg.num_levels = levels;
        cfg.table_size = 1u << table_log2;
        cfg.feature_dim = features;
        cfg.min_resolution = min_res;
        cfg.max_resolution = max_res;
        cfg.validate();
        return cfg;
    }
};

json mesh_json(const TriMesh& m) { return {{"vertices", m.vertex_count()}, {"faces", m.face_count()}}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixrt: low-poly mesh + displacement map + hash-grid radiance fields"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();
    app.add_option("--log-level", g.log_level, "quiet, info or debug")
        ->check(CLI::IsMember({"quiet", "info", "debug"}))
        ->capture_default_str();

    // make-synthetic
    auto* synth = app.add_subcommand("make-synthetic", "write a procedural dataset");
    std::string synth_name, synth_out;
    SyntheticOptions synth_opts;
    synth->add_option("name", synth_name, "tri, box-room or sphere")->required();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--width", synth_opts.width)->capture_default_str();
    synth->add_option("--height", synth_opts.height)->capture_default_str();
    synth->add_option("--train-views", synth_opts.train_views, "-1 = scene default")->capture_default_str();
    synth->add_option("--test-views", synth_opts.test_views, "-1 = scene default")->capture_default_str();
    synth->add_option("--view-offset", synth_opts.view_offset, "view-dependent texture shift")->capture_default_str();
    synth->add_option("--box-segments", synth_opts.box_segments, "box-room wall tessellation")->capture_default_str();

    // simplify
    auto* simp = app.add_subcommand("simplify", "vertex-clustering simplification");
    std::string simp_in, simp_out;
    double voxel = 0.01;
    bool contracted = true;
    simp->add_option("--in", simp_in, "input mesh (.glb, .gltf, .obj) or dataset directory")->required();
    simp->add_option("--out", simp_out, "output mesh")->required();
    simp->add_option("--voxel", voxel, "voxel size")->capture_default_str();
    simp->add_flag("--contracted,!--world", contracted, "cluster in contracted space")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "fit tables, decoder and displacement maps to a dataset");
    std::string tr_data, tr_out, tr_mesh, tr_loss_csv;
    GridFlags tr_grid;
    TrainConfig tcfg;
    SceneInit sinit;
    bool no_displacement = false;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "checkpoint directory")->required();
    tr->add_option("--mesh", tr_mesh, "training mesh (default: dataset mesh simplified at --voxel)");
    tr->add_option("--voxel", voxel, "voxel size used when --mesh is not given")->capture_default_str();
    tr_grid.add(tr);
    tr->add_option("--map-res", sinit.map_resolution, "displacement map resolution")->capture_default_str();
    tr->add_option("--sh-degree", sinit.sh_degree)->capture_default_str();
    tr->add_option("--scale-init", sinit.scale_init, "initial scale-map value")->capture_default_str();
    tr->add_option("--iterations", tcfg.iterations)->capture_default_str();
    tr->add_option("--batch", tcfg.batch_size, "rays per step")->capture_default_str();
    tr->add_option("--lr-tables", tcfg.lr_tables)->capture_default_str();
    tr->add_option("--lr-decoder", tcfg.lr_decoder)->capture_default_str();
    tr->add_option("--lr-sh", tcfg.lr_sh)->capture_default_str();
    tr->add_option("--lr-scale", tcfg.lr_scale)->capture_default_str();
    tr->add_option("--lr-final-fraction", tcfg.lr_final_fraction)->capture_default_str();
    tr->add_option("--log-interval", tcfg.log_interval)->capture_default_str();
    tr->add_flag("--no-displacement", no_displacement, "train without the displacement maps");
    tr->add_option("--loss-csv", tr_loss_csv, "write the loss history as CSV");

    // render
    auto* rd = app.add_subcommand("render", "render dataset cameras from a checkpoint or bundle");
    std::string rd_scene, rd_data, rd_out, rd_split = "test", rd_mode = "mixrt";
    RenderSettings rset;
    bool no_calibration = false;
    rd->add_option("--scene", rd_scene, "checkpoint or bundle directory")->required();
    rd->add_option("--data", rd_data, "dataset directory providing cameras")->required();
    rd->add_option("--out", rd_out, "output directory")->required();
    rd->add_option("--split", rd_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
    rd->add_option("--mode", rd_mode)->check(CLI::IsMember({"mixrt", "volumetric"}))->capture_default_str();
    rd->add_option("--samples", rset.samples_per_ray, "volumetric samples per ray")->capture_default_str();
    rd->add_option("--near", rset.near)->capture_default_str();
    rd->add_option("--far", rset.far)->capture_default_str();
    rd->add_flag("--no-calibration", no_calibration, "skip the displacement maps");

    // psnr
    auto* ps = app.add_subcommand("psnr", "PSNR between two PNG images");
    std::string ps_a, ps_b;
    ps->add_option("a", ps_a)->required();
    ps->add_option("b", ps_b)->required();

    // bench
    auto* bn = app.add_subcommand("bench", "ms-per-frame over level counts or table sizes");
    std::string bn_scene, bn_data, bn_csv, bn_levels = "1,2,4,8", bn_tables;
    GridFlags bn_grid;
    bn_grid.levels = 8;
    BenchOptions bopts;
    bopts.hidden = {16, 16};
    bn->add_option("--data", bn_data, "dataset directory (default: generated box-room)");
    bn->add_option("--levels", bn_levels, "level counts, e.g. 1,2,4,8")->capture_default_str();
    bn->add_option("--table-sweep", bn_tables, "table-size log2 list, e.g. 5..22 (replaces the level sweep)");
    bn->add_option("--frames", bopts.frames, "timed frames per configuration")->capture_default_str();
    bn->add_option("--csv", bn_csv, "CSV output path (default: stdout)");
    bn->add_option("--sweep-levels", bn_grid.levels, "level count used by --table-sweep")->capture_default_str();
    bn_grid.add(bn, false);

    // export
    auto* ex = app.add_subcommand("export", "quantize a checkpoint into a scene bundle");
    std::string ex_scene, ex_out;
    ex->add_option("--scene", ex_scene, "checkpoint or bundle directory")->required();
    ex->add_option("--out", ex_out, "bundle directory")->required();

    // info
    auto* in = app.add_subcommand("info", "describe a mesh, dataset, checkpoint or bundle");
    std::string in_path;
    in->add_option("path", in_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (*synth) {
            synth_opts.seed = g.seed;
            const Dataset data = make_synthetic(synth_name, synth_opts);
            write_dataset(synth_out, data);
            emit({{"command", "make-synthetic"},
                  {"scene", synth_name},
                  {"out", synth_out},
                  {"train_views", data.train.size()},
                  {"test_views", data.test.size()},
                  {"mesh", mesh_json(data.mesh)},
                  {"seconds", seconds_since(t0)}});
        } else if (*simp) {
            const TriMesh mesh = fs::is_directory(simp_in) ? read_dataset(simp_in).mesh : read_mesh(simp_in);
            const TriMesh out = cluster_simplify(mesh, voxel, contracted);
            write_mesh(simp_out, out);
            emit({{"command", "simplify"},
                  {"voxel", voxel},
                  {"contracted", contracted},
                  {"input", mesh_json(mesh)},
                  {"output", mesh_json(out)},
                  {"reduction", static_cast<double>(mesh.vertex_count()) / std::max<std::size_t>(out.vertex_count(), 1)},
                  {"seconds", seconds_since(t0)}});
        } else if (*tr) {
            const Dataset data = read_dataset(tr_data, tr_mesh.empty());
            const TriMesh mesh = tr_mesh.empty() ? cluster_simplify(data.mesh, voxel, true) : read_mesh(tr_mesh);
            log(g, "training mesh: " + std::to_string(mesh.vertex_count()) + " vertices, " +
                       std::to_string(mesh.face_count()) + " faces");
            sinit.grid = tr_grid.config();
            sinit.decoder_hidden = parse_int_list(tr_grid.hidden);
            sinit.seed = g.seed;
            Scene scene = make_scene(mesh, sinit);
            tcfg.seed = g.seed;
            tcfg.threads = g.threads;
            tcfg.use_displacement = !no_displacement;
            if (no_displacement) std::fill(scene.maps.scale_map.begin(), scene.maps.scale_map.end(), 0.0);
            const TrainResult res = train(scene, data.train, tcfg, [&](const LossRecord& r) {
                if (g.log_level == "debug") log(g, "iter " + std::to_string(r.iteration) + " loss " + std::to_string(r.loss));
            });
            save_checkpoint(scene, tr_out);
            if (!tr_loss_csv.empty()) {
                std::ofstream os(tr_loss_csv);
                require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + tr_loss_csv);
                write_loss_csv(os, res.history);
            }
            RenderSettings eval;
            eval.threads = g.threads;
            eval.calibration = !no_displacement;
            double mean_psnr = 0.0;
            for (const auto& v : data.test) mean_psnr += psnr(quantize_8bit(render(scene, v.camera, eval)), v.image);
            json summary = {{"command", "train"},
                            {"out", tr_out},
                            {"iterations", tcfg.iterations},
                            {"training_rays", res.training_rays},
                            {"final_loss", res.history.empty() ? 0.0 : res.history.back().loss},
                            {"mesh", mesh_json(mesh)},
                            {"seconds", seconds_since(t0)}};
            if (!data.test.empty()) summary["test_psnr"] = mean_psnr / data.test.size();
            emit(summary);
        } else if (*rd) {
            const Scene scene = load_scene(rd_scene);
            const Dataset data = read_dataset(rd_data, false);
            const auto& views = rd_split == "test" ? data.test : data.train;
            rset.mode = rd_mode == "mixrt" ? RenderMode::Mixrt : RenderMode::VolumetricReference;
            rset.background = scene.background;
            rset.calibration = !no_calibration;
            rset.threads = g.threads;
            fs::create_directories(rd_out);
            double total = 0.0;
            json per_view = json::array();
            for (std::size_t i = 0; i < views.size(); ++i) {
                const Image img = quantize_8bit(render(scene, views[i].camera, rset));
                char name[64];
                std::snprintf(name, sizeof(name), "%s_%03zu.png", rd_split.c_str(), i);
                write_image_png(fs::path(rd_out) / name, img);
                const double p = psnr(img, views[i].image);
                total += p;
                per_view.push_back(p);
            }
            emit({{"command", "render"},
                  {"views", views.size()},
                  {"psnr", per_view},
                  {"mean_psnr", views.empty() ? 0.0 : total / views.size()},
                  {"seconds", seconds_since(t0)}});
        } else if (*ps) {
            const double p = psnr(read_image_png(ps_a), read_image_png(ps_b));
            emit({{"command", "psnr"}, {"psnr", p}});
        } else if (*bn) {
            Dataset data;
            if (bn_data.empty()) {
                SyntheticOptions o;
                o.seed = g.seed;
                o.train_views = 0;
                o.test_views = 1;
                data = make_synthetic("box-room", o);
            } else {
                data = read_dataset(bn_data);
            }
            require(!data.test.empty() || !data.train.empty(), ErrorKind::Domain, "bench: dataset has no cameras");
            const Camera cam = data.test.empty() ? data.train.front().camera : data.test.front().camera;
            const TriMesh mesh = cluster_simplify(data.mesh, voxel, true);
            const BvhAccel accel(mesh);
            DisplacementMaps maps(64, 2);
            std::fill(maps.scale_map.begin(), maps.scale_map.end(), 0.05);
            bopts.hidden = parse_int_list(bn_grid.hidden);
            bopts.seed = g.seed;
            const HashGridConfig base = bn_grid.config();
            std::vector<BenchRow> rows;
            if (!bn_tables.empty()) {
                std::vector<std::uint32_t> sizes;
                for (int k : parse_int_list(bn_tables)) {
                    require(k >= 0 && k <= 30, ErrorKind::Domain, "table-size log2 must be in [0, 30]");
                    sizes.push_back(1u << k);
                }
                rows = bench_table_sizes(mesh, &accel, maps, cam, base, sizes, bopts);
            } else {
                rows = bench_levels(mesh, &accel, maps, cam, base, parse_int_list(bn_levels), bopts);
            }
            if (bn_csv.empty()) {
                write_bench_csv(std::cout, rows);
            } else {
                std::ofstream os(bn_csv);
                require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + bn_csv);
                write_bench_csv(os, rows);
            }
            json medians = json::array();
            for (const auto& r : rows) medians.push_back(r.ms_median);
            emit({{"command", "bench"}, {"rows", rows.size()}, {"ms_median", medians}, {"seconds", seconds_since(t0)}});
        } else if (*ex) {
            const ExportReport rep = export_bundle(load_scene(ex_scene), ex_out);
            json files = json::object();
            for (const auto& [name, size] : rep.files) files[name] = size;
            emit({{"command", "export"}, {"out", rep.path.string()}, {"bytes", rep.total_bytes}, {"files", files}});
        } else if (*in) {
            const fs::path p(in_path);
            json info = {{"command", "info"}, {"path", in_path}};
            if (fs::is_directory(p) && fs::exists(p / "cameras.json")) {
                const Dataset d = read_dataset(p);
                info["kind"] = "dataset";
                info["train_views"] = d.train.size();
                info["test_views"] = d.test.size();
                info["mesh"] = mesh_json(d.mesh);
            } else if (fs::is_directory(p)) {
                const bool bundle = !fs::exists(p / "checkpoint.json");
                const Scene s = load_scene(p);
                info["kind"] = bundle ? "bundle" : "checkpoint";
                info["mesh"] = mesh_json(s.mesh);
                info["level_resolutions"] = s.field.resolutions;
                info["table_size"] = s.field.config.table_size;
                info["decoder_parameters"] = s.field.decoder.parameter_count();
                info["map_resolution"] = s.maps.resolution;
                info["sh_degree"] = s.maps.sh_degree;
            } else {
                info["kind"] = "mesh";
                info["mesh"] = mesh_json(read_mesh(p));
            }
            emit(info);
        }
    } catch (const Error& e) {
        std::cerr << "mixrt: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::invalid_argument& e) {
        std::cerr << "mixrt: invalid argument: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "mixrt: " << e.what() << '\n';
        return kIo;
    }
    return kOk;
}

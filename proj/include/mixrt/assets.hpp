// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// Baked scene bundles. Directory layout:
//
//   manifest.json      format version, grid config, texture layouts,
//                      quantization params, decoder weights, map metadata
//   mesh.glb           positions + TEXCOORD_0 + indices
//   hash_L{l}.png      level l table, 8-bit RGBA, entry i at (i % W, i / W)
//                      (hash_L{l}_p{k}.png when feature_dim > 4)
//   disp_sh_{k}.png    SH map channels 4k..4k+3, 8-bit RGBA, zero-padded
//   disp_scale.png     scale map, 8-bit gray
//
// Training checkpoints keep full precision instead:
//
//   checkpoint.json    format, grid config, decoder weights, map metadata
//   mesh.glb
//   params.bin         little-endian float64: tables (level order), sh_map, scale_map

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/image.hpp"
#include "mixrt/mesh_io.hpp"
#include "mixrt/quantize.hpp"
#include "mixrt/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace mixrt {

inline constexpr const char* kBundleFormat = "mixrt-bundle/1";
inline constexpr int kBundleMajor = 1;
inline constexpr std::uint32_t kMaxTextureDim = 4096;

struct TableLayout {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    int planes = 0;
};

/// W = 2^ceil(log2(sqrt(T))) capped at 4096, H = T / W.
inline TableLayout table_layout(std::uint32_t table_size, int feature_dim) {
    require(is_pow2(table_size), ErrorKind::Domain, "table size must be a power of two");
    int log2t = 0;
    while ((1u << log2t) < table_size) ++log2t;
    std::uint32_t w = 1u << ((log2t + 1) / 2);
    w = std::min(w, kMaxTextureDim);
    w = std::min(w, table_size);
    TableLayout lay{w, table_size / w, (feature_dim + 3) / 4};
    require(lay.height <= kMaxTextureDim * 4, ErrorKind::Domain, "hash table too large for 2D texture export");
    return lay;
}

/// Row-major 1D -> 2D packing of a quantized table into RGBA planes.
inline std::vector<Raster8> reshape_table_2d(std::span<const double> table, int feature_dim,
                                             const QuantizationParams& quant) {
    require(feature_dim >= 1 && table.size() % feature_dim == 0, ErrorKind::DimensionMismatch,
            "table length is not a multiple of feature_dim");
    const auto table_size = static_cast<std::uint32_t>(table.size() / feature_dim);
    const TableLayout lay = table_layout(table_size, feature_dim);
    std::vector<Raster8> planes(static_cast<std::size_t>(lay.planes));
    for (auto& p : planes) {
        p.width = static_cast<int>(lay.width);
        p.height = static_cast<int>(lay.height);
        p.channels = 4;
        p.data.assign(static_cast<std::size_t>(lay.width) * lay.height * 4, 0);
    }
    for (std::uint32_t i = 0; i < table_size; ++i) {
        const std::size_t texel = static_cast<std::size_t>(i / lay.width) * lay.width + (i % lay.width);
        for (int f = 0; f < feature_dim; ++f)
            planes[f / 4].data[texel * 4 + (f % 4)] = quant.quantize(table[static_cast<std::size_t>(i) * feature_dim + f]);
    }
    return planes;
}

inline std::vector<double> unpack_table_2d(const std::vector<Raster8>& planes, std::uint32_t table_size,
                                           int feature_dim, const QuantizationParams& quant) {
    const TableLayout lay = table_layout(table_size, feature_dim);
    std::vector<double> table(static_cast<std::size_t>(table_size) * feature_dim);
    for (std::uint32_t i = 0; i < table_size; ++i) {
        const std::size_t texel = static_cast<std::size_t>(i / lay.width) * lay.width + (i % lay.width);
        for (int f = 0; f < feature_dim; ++f)
            table[static_cast<std::size_t>(i) * feature_dim + f] = quant.dequantize(planes[f / 4].data[texel * 4 + (f % 4)]);
    }
    return table;
}

inline std::string hash_texture_name(int level, int plane, int planes) {
    if (planes == 1) return "hash_L" + std::to_string(level) + ".png";
    return "hash_L" + std::to_string(level) + "_p" + std::to_string(plane) + ".png";
}

struct ExportReport {
    std::filesystem::path path;
    std::uintmax_t total_bytes = 0;
    std::vector<std::pair<std::string, std::uintmax_t>> files;
};

namespace assets_detail {

inline nlohmann::json quant_json(const QuantizationParams& q) { return {{"min", q.minimum}, {"step", q.step}}; }

inline QuantizationParams quant_from(const nlohmann::json& j) {
    return {j.at("min").get<double>(), j.at("step").get<double>()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

inline Raster8 read_texture(const std::filesystem::path& path, int width, int height, int channels) {
    const Raster8 r = read_png(path);
    require(r.width == width && r.height == height, ErrorKind::DimensionMismatch,
            path.filename().string() + ": texture is " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                ", manifest says " + std::to_string(width) + "x" + std::to_string(height));
    require(r.channels == channels, ErrorKind::DimensionMismatch,
            path.filename().string() + ": expected " + std::to_string(channels) + " channels");
    return r;
}

}  // namespace assets_detail

/// Builds the manifest for a quantized scene (no I/O).
inline nlohmann::json bundle_manifest(const Scene& scene) {
    using nlohmann::json;
    require(scene.quantization.has_value(), ErrorKind::Domain, "bundle manifest needs a quantized scene");
    const auto& q = *scene.quantization;
    const auto& cfg = scene.field.config;
    const TableLayout lay = table_layout(cfg.table_size, cfg.feature_dim);
    json m;
    m["format"] = kBundleFormat;
    m["background"] = {scene.background.x(), scene.background.y(), scene.background.z()};
    m["mesh"] = "mesh.glb";
    json dense = json::array();
    for (int r : scene.field.resolutions) dense.push_back(level_is_dense(r, cfg.table_size));
    m["grid"] = {{"num_levels", cfg.num_levels},
                 {"table_size", cfg.table_size},
                 {"feature_dim", cfg.feature_dim},
                 {"min_resolution", cfg.min_resolution},
                 {"max_resolution", cfg.max_resolution},
                 {"level_resolutions", scene.field.resolutions},
                 {"dense_levels", dense},
                 {"hash_primes", {kHashPrimes[0], kHashPrimes[1], kHashPrimes[2]}},
                 {"domain", "grid = (contract(p) + 2) / 4"}};
    json levels = json::array();
    for (int l = 0; l < cfg.num_levels; ++l) {
        json files = json::array();
        for (int k = 0; k < lay.planes; ++k) files.push_back(hash_texture_name(l, k, lay.planes));
        levels.push_back({{"level", l}, {"files", files}, {"quant", assets_detail::quant_json(q.tables.at(l))}});
    }
    m["hash_textures"] = {{"width", lay.width}, {"height", lay.height}, {"planes", lay.planes}, {"levels", levels}};
    json layers = json::array();
    const auto& dec = scene.field.decoder;
    for (std::size_t i = 0; i < dec.layers.size(); ++i) {
        const auto& l = dec.layers[i];
        layers.push_back({{"in", l.in},
                          {"out", l.out},
                          {"activation", i + 1 == dec.layers.size() ? "linear" : "relu"},
                          {"weight", l.weight},
                          {"bias", l.bias}});
    }
    m["decoder"] = {{"layers", layers}, {"rgb_activation", "sigmoid"}, {"density_activation", "exp"}};
    const auto& maps = scene.maps;
    const int sh_planes = (maps.channels() + 3) / 4;
    json sh_files = json::array();
    for (int k = 0; k < sh_planes; ++k) sh_files.push_back("disp_sh_" + std::to_string(k) + ".png");
    m["displacement"] = {{"resolution", maps.resolution},
                         {"sh_degree", maps.sh_degree},
                         {"channels", maps.channels()},
                         {"channel_layout", "axis-major: x coeffs, y coeffs, z coeffs"},
                         {"sh_files", sh_files},
                         {"scale_file", "disp_scale.png"},
                         {"sh_quant", assets_detail::quant_json(q.maps.sh)},
                         {"scale_quant", assets_detail::quant_json(q.maps.scale)}};
    return m;
}

/// Writes a bundle directory atomically (temp directory + rename). The scene
/// is quantized first if it is not already; existing params are reused.
inline ExportReport export_bundle(const Scene& scene, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    scene.validate();
    require(scene.field.all_finite() && scene.maps.all_finite(), ErrorKind::Numeric,
            "export: scene has non-finite parameters");
    const Scene qs = quantize_scene(scene);
    const auto& q = *qs.quantization;
    const auto& cfg = qs.field.config;

    fs::path target = fs::absolute(path);
    if (target.filename().empty()) target = target.parent_path();
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    std::random_device rd;
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp-" + std::to_string(rd()));
    fs::create_directories(tmp, ec);
    require(!ec, ErrorKind::Io, "cannot create " + tmp.string() + ": " + ec.message());
    try {
        write_glb(tmp / "mesh.glb", qs.mesh);
        const TableLayout lay = table_layout(cfg.table_size, cfg.feature_dim);
        for (int l = 0; l < cfg.num_levels; ++l) {
            const auto planes = reshape_table_2d(qs.field.tables[l], cfg.feature_dim, q.tables[l]);
            for (int k = 0; k < lay.planes; ++k) write_png(tmp / hash_texture_name(l, k, lay.planes), planes[k]);
        }
        const auto& maps = qs.maps;
        const int C = maps.channels(), R = maps.resolution;
        for (int k = 0; k < (C + 3) / 4; ++k) {
            Raster8 r{R, R, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(R) * R * 4, 0)};
            for (std::size_t t = 0; t < maps.texel_count(); ++t)
                for (int c = 0; c < 4 && 4 * k + c < C; ++c)
                    r.data[t * 4 + c] = q.maps.sh_codes[t * C + 4 * k + c];
            write_png(tmp / ("disp_sh_" + std::to_string(k) + ".png"), r);
        }
        write_png(tmp / "disp_scale.png", Raster8{R, R, 1, q.maps.scale_codes});
        assets_detail::write_text(tmp / "manifest.json", bundle_manifest(qs).dump(2) + "\n");
        if (fs::exists(target)) fs::remove_all(target);
        fs::rename(tmp, target);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(tmp, ec);
        fail(ErrorKind::Io, std::string("export failed: ") + e.what());
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
    ExportReport report;
    report.path = target;
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(target)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        const auto size = fs::file_size(p);
        report.files.emplace_back(p.filename().string(), size);
        report.total_bytes += size;
    }
    return report;
}

/// Loads a bundle. Tables and maps hold dequantized values and the scene keeps
/// the stored quantization params, so re-exporting reproduces the same bytes.
inline Scene import_bundle(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    using namespace assets_detail;
    const fs::path manifest_path = path / "manifest.json";
    require(fs::exists(manifest_path), ErrorKind::MissingFile, "missing file " + manifest_path.string());
    std::ifstream in(manifest_path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + manifest_path.string());
    const auto m = nlohmann::json::parse(in, nullptr, false);
    require(!m.is_discarded() && m.is_object(), ErrorKind::Format, "manifest.json is not valid JSON");
    const std::string format = m.value("format", "");
    const std::string prefix = "mixrt-bundle/";
    require(format.rfind(prefix, 0) == 0, ErrorKind::Format, "manifest.json has no mixrt-bundle format string");
    int major = -1;
    try {
        major = std::stoi(format.substr(prefix.size()));
    } catch (...) {
        fail(ErrorKind::Format, "unparseable format version '" + format + "'");
    }
    require(major == kBundleMajor, ErrorKind::Version, "unsupported bundle version '" + format + "'");

    try {
        Scene scene;
        const auto& bg = m.at("background");
        scene.background = Rgb(bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>());

        const auto& g = m.at("grid");
        HashGridConfig cfg;
        cfg.num_levels = g.at("num_levels").get<int>();
        cfg.table_size = g.at("table_size").get<std::uint32_t>();
        cfg.feature_dim = g.at("feature_dim").get<int>();
        cfg.min_resolution = g.at("min_resolution").get<int>();
        cfg.max_resolution = g.at("max_resolution").get<int>();
        cfg.validate();
        require(g.at("level_resolutions").get<std::vector<int>>() == level_resolutions(cfg),
                ErrorKind::DimensionMismatch, "manifest level resolutions disagree with its grid config");

        DecoderWeights<double> dec;
        for (const auto& lj : m.at("decoder").at("layers")) {
            DenseLayer<double> l(lj.at("in").get<int>(), lj.at("out").get<int>());
            l.weight = lj.at("weight").get<std::vector<double>>();
            l.bias = lj.at("bias").get<std::vector<double>>();
            dec.layers.push_back(std::move(l));
        }
        scene.field = HashGridField<double>(cfg, std::move(dec));

        SceneQuantization q;
        const auto& ht = m.at("hash_textures");
        const TableLayout lay = table_layout(cfg.table_size, cfg.feature_dim);
        require(ht.at("width").get<std::uint32_t>() == lay.width && ht.at("height").get<std::uint32_t>() == lay.height,
                ErrorKind::DimensionMismatch, "manifest hash texture layout disagrees with table size");
        const auto& levels = ht.at("levels");
        require(static_cast<int>(levels.size()) == cfg.num_levels, ErrorKind::DimensionMismatch,
                "manifest lists the wrong number of hash textures");
        for (int l = 0; l < cfg.num_levels; ++l) {
            const auto& lj = levels.at(l);
            const QuantizationParams qp = quant_from(lj.at("quant"));
            std::vector<Raster8> planes;
            for (const auto& f : lj.at("files"))
                planes.push_back(read_texture(path / f.get<std::string>(), static_cast<int>(lay.width),
                                              static_cast<int>(lay.height), 4));
            require(static_cast<int>(planes.size()) == lay.planes, ErrorKind::DimensionMismatch,
                    "hash level " + std::to_string(l) + " has the wrong number of planes");
            scene.field.tables[l] = unpack_table_2d(planes, cfg.table_size, cfg.feature_dim, qp);
            q.tables.push_back(qp);
        }

        const auto& dj = m.at("displacement");
        const int R = dj.at("resolution").get<int>();
        scene.maps = DisplacementMaps(R, dj.at("sh_degree").get<int>());
        const int C = scene.maps.channels();
        require(dj.at("channels").get<int>() == C, ErrorKind::DimensionMismatch,
                "displacement channel count disagrees with SH degree");
        q.maps.sh = quant_from(dj.at("sh_quant"));
        q.maps.scale = quant_from(dj.at("scale_quant"));
        q.maps.sh_codes.assign(scene.maps.sh_map.size(), 0);
        const auto& sh_files = dj.at("sh_files");
        require(static_cast<int>(sh_files.size()) == (C + 3) / 4, ErrorKind::DimensionMismatch,
                "manifest lists the wrong number of SH planes");
        for (int k = 0; k < static_cast<int>(sh_files.size()); ++k) {
            const Raster8 r = read_texture(path / sh_files.at(k).get<std::string>(), R, R, 4);
            for (std::size_t t = 0; t < scene.maps.texel_count(); ++t)
                for (int c = 0; c < 4 && 4 * k + c < C; ++c) {
                    const std::uint8_t code = r.data[t * 4 + c];
                    q.maps.sh_codes[t * C + 4 * k + c] = code;
                    scene.maps.sh_map[t * C + 4 * k + c] = q.maps.sh.dequantize(code);
                }
        }
        const Raster8 sr = read_texture(path / dj.at("scale_file").get<std::string>(), R, R, 1);
        q.maps.scale_codes = sr.data;
        for (std::size_t t = 0; t < scene.maps.texel_count(); ++t)
            scene.maps.scale_map[t] = q.maps.scale.dequantize(sr.data[t]);

        scene.mesh = read_gltf(path / m.at("mesh").get<std::string>());
        scene.rebuild_accel();
        scene.quantization = std::move(q);
        scene.validate();
        return scene;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("manifest.json: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Full-precision checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "mixrt-checkpoint/1";

inline void save_checkpoint(const Scene& scene, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    scene.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    const auto& cfg = scene.field.config;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : scene.field.decoder.layers)
        layers.push_back({{"in", l.in}, {"out", l.out}, {"weight", l.weight}, {"bias", l.bias}});
    const nlohmann::json doc = {
        {"format", kCheckpointFormat},
        {"background", {scene.background.x(), scene.background.y(), scene.background.z()}},
        {"mesh", "mesh.glb"},
        {"grid",
         {{"num_levels", cfg.num_levels},
          {"table_size", cfg.table_size},
          {"feature_dim", cfg.feature_dim},
          {"min_resolution", cfg.min_resolution},
          {"max_resolution", cfg.max_resolution}}},
        {"decoder", layers},
        {"displacement", {{"resolution", scene.maps.resolution}, {"sh_degree", scene.maps.sh_degree}}},
        {"params", "params.bin"}};
    write_glb(dir / "mesh.glb", scene.mesh);
    std::ofstream out(dir / "params.bin", std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write params.bin");
    const auto put = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    for (const auto& t : scene.field.tables) put(t);
    put(scene.maps.sh_map);
    put(scene.maps.scale_map);
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing params.bin");
    assets_detail::write_text(dir / "checkpoint.json", doc.dump(2) + "\n");
}

inline Scene load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = dir / "checkpoint.json";
    require(std::filesystem::exists(manifest), ErrorKind::MissingFile, "missing file " + manifest.string());
    std::ifstream in(manifest);
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    require(!doc.is_discarded(), ErrorKind::Format, "checkpoint.json is not valid JSON");
    require(doc.value("format", "") == kCheckpointFormat, ErrorKind::Version, "unsupported checkpoint format");
    try {
        Scene scene;
        const auto& bg = doc.at("background");
        scene.background = Rgb(bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>());
        const auto& g = doc.at("grid");
        HashGridConfig cfg;
        cfg.num_levels = g.at("num_levels").get<int>();
        cfg.table_size = g.at("table_size").get<std::uint32_t>();
        cfg.feature_dim = g.at("feature_dim").get<int>();
        cfg.min_resolution = g.at("min_resolution").get<int>();
        cfg.max_resolution = g.at("max_resolution").get<int>();
        cfg.validate();
        DecoderWeights<double> dec;
        for (const auto& lj : doc.at("decoder")) {
            DenseLayer<double> l(lj.at("in").get<int>(), lj.at("out").get<int>());
            l.weight = lj.at("weight").get<std::vector<double>>();
            l.bias = lj.at("bias").get<std::vector<double>>();
            dec.layers.push_back(std::move(l));
        }
        scene.field = HashGridField<double>(cfg, std::move(dec));
        const auto& dj = doc.at("displacement");
        scene.maps = DisplacementMaps(dj.at("resolution").get<int>(), dj.at("sh_degree").get<int>());

        const auto params = dir / doc.at("params").get<std::string>();
        require(std::filesystem::exists(params), ErrorKind::MissingFile, "missing file " + params.string());
        std::size_t expected = scene.maps.sh_map.size() + scene.maps.scale_map.size();
        for (const auto& t : scene.field.tables) expected += t.size();
        require(std::filesystem::file_size(params) == expected * sizeof(double), ErrorKind::DimensionMismatch,
                "params.bin size disagrees with checkpoint.json");
        std::ifstream pin(params, std::ios::binary);
        const auto get = [&](std::vector<double>& v) {
            pin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        };
        for (auto& t : scene.field.tables) get(t);
        get(scene.maps.sh_map);
        get(scene.maps.scale_map);
        require(static_cast<bool>(pin), ErrorKind::Io, "failed reading params.bin");

        scene.mesh = read_gltf(dir / doc.at("mesh").get<std::string>());
        scene.rebuild_accel();
        scene.validate();
        return scene;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("checkpoint.json: ") + e.what());
    }
}

/// Loads either a checkpoint or a bundle directory.
inline Scene load_scene(const std::filesystem::path& dir) {
    if (std::filesystem::exists(dir / "checkpoint.json")) return load_checkpoint(dir);
    return import_bundle(dir);
}

}  // namespace mixrt

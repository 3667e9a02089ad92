// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// glTF 2.0 (binary .glb, or .gltf with embedded/external buffers) and OBJ
// mesh I/O. Attributes: POSITION (float VEC3), TEXCOORD_0 (float VEC2) and
// triangle indices; node transforms are ignored.

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace mixrt {

namespace gltf_detail {

inline constexpr std::uint32_t kMagic = 0x46546C67;  // "glTF"
inline constexpr std::uint32_t kChunkJson = 0x4E4F534A;
inline constexpr std::uint32_t kChunkBin = 0x004E4942;
inline constexpr int kFloat = 5126, kUint32 = 5125, kUint16 = 5123, kUint8 = 5121;

template <typename T>
void append(std::vector<std::uint8_t>& buf, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
}

inline std::uint32_t read_u32(const std::vector<std::uint8_t>& buf, std::size_t at) {
    require(at + 4 <= buf.size(), ErrorKind::Format, "glb: truncated file");
    std::uint32_t v;
    std::memcpy(&v, buf.data() + at, 4);
    return v;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorKind::MissingFile, "missing file " + path.string());
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
    static const auto table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const char* chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(chars[i])] = i;
        return t;
    }();
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : s) {
        if (ch == '=') break;
        const int v = table[static_cast<unsigned char>(ch)];
        if (v < 0) continue;
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

/// Element `i` of an accessor as doubles (up to 4 components).
struct AccessorReader {
    const std::vector<std::vector<std::uint8_t>>& buffers;
    const nlohmann::json& doc;

    struct View {
        const std::uint8_t* base = nullptr;
        std::size_t stride = 0;
        std::size_t count = 0;
        int components = 0;
        int type = 0;
    };

    View view(int accessor_index) const {
        const auto& acc = doc.at("accessors").at(accessor_index);
        View v;
        v.count = acc.at("count").get<std::size_t>();
        v.type = acc.at("componentType").get<int>();
        static const std::map<std::string, int> kComponents = {{"SCALAR", 1}, {"VEC2", 2}, {"VEC3", 3}, {"VEC4", 4}};
        const auto it = kComponents.find(acc.at("type").get<std::string>());
        require(it != kComponents.end(), ErrorKind::Format, "gltf: unsupported accessor type");
        v.components = it->second;
        const int csize = v.type == kFloat || v.type == kUint32 ? 4 : v.type == kUint16 ? 2 : v.type == kUint8 ? 1 : 0;
        require(csize > 0, ErrorKind::Format, "gltf: unsupported component type");
        const auto& bv = doc.at("bufferViews").at(acc.at("bufferView").get<int>());
        const auto& buf = buffers.at(bv.at("buffer").get<std::size_t>());
        const std::size_t offset = bv.value("byteOffset", std::size_t{0}) + acc.value("byteOffset", std::size_t{0});
        v.stride = bv.value("byteStride", static_cast<std::size_t>(csize * v.components));
        require(v.count == 0 || offset + (v.count - 1) * v.stride + csize * v.components <= buf.size(),
                ErrorKind::Format, "gltf: accessor exceeds its buffer");
        v.base = buf.data() + offset;
        return v;
    }

    static double component(const View& v, std::size_t i, int c) {
        const std::uint8_t* p = v.base + i * v.stride;
        switch (v.type) {
            case kFloat: {
                float f;
                std::memcpy(&f, p + 4 * c, 4);
                return f;
            }
            case kUint32: {
                std::uint32_t u;
                std::memcpy(&u, p + 4 * c, 4);
                return u;
            }
            case kUint16: {
                std::uint16_t u;
                std::memcpy(&u, p + 2 * c, 2);
                return u;
            }
            default: return p[c];
        }
    }
};

inline TriMesh mesh_from_gltf(const nlohmann::json& doc, const std::vector<std::vector<std::uint8_t>>& buffers) {
    require(doc.contains("meshes") && !doc["meshes"].empty(), ErrorKind::Format, "gltf: no meshes");
    AccessorReader reader{buffers, doc};
    TriMesh mesh;
    for (const auto& prim : doc["meshes"][0].at("primitives")) {
        require(prim.value("mode", 4) == 4, ErrorKind::Format, "gltf: only triangle primitives are supported");
        const auto& attrs = prim.at("attributes");
        const auto pos = reader.view(attrs.at("POSITION").get<int>());
        require(pos.components == 3 && pos.type == kFloat, ErrorKind::Format, "gltf: POSITION must be float VEC3");
        const auto first = static_cast<std::uint32_t>(mesh.positions.size());
        for (std::size_t i = 0; i < pos.count; ++i)
            mesh.positions.emplace_back(AccessorReader::component(pos, i, 0), AccessorReader::component(pos, i, 1),
                                        AccessorReader::component(pos, i, 2));
        if (attrs.contains("TEXCOORD_0")) {
            const auto uv = reader.view(attrs["TEXCOORD_0"].get<int>());
            require(uv.components == 2 && uv.count == pos.count, ErrorKind::Format,
                    "gltf: TEXCOORD_0 must be VEC2 with one entry per vertex");
            for (std::size_t i = 0; i < uv.count; ++i)
                mesh.uvs.emplace_back(AccessorReader::component(uv, i, 0), AccessorReader::component(uv, i, 1));
        } else {
            mesh.uvs.resize(mesh.positions.size(), Vec2::Zero());
        }
        if (prim.contains("indices")) {
            const auto idx = reader.view(prim["indices"].get<int>());
            require(idx.components == 1 && idx.count % 3 == 0, ErrorKind::Format, "gltf: bad index accessor");
            for (std::size_t i = 0; i < idx.count; i += 3) {
                Face f;
                for (int k = 0; k < 3; ++k)
                    f[k] = first + static_cast<std::uint32_t>(AccessorReader::component(idx, i + k, 0));
                mesh.indices.push_back(f);
            }
        } else {
            for (std::uint32_t i = 0; i + 2 < pos.count; i += 3) mesh.indices.push_back({first + i, first + i + 1, first + i + 2});
        }
    }
    return mesh;
}

}  // namespace gltf_detail

/// Serializes a mesh as a self-contained binary glTF. Output is deterministic.
inline std::vector<std::uint8_t> encode_glb(const TriMesh& mesh) {
    using namespace gltf_detail;
    mesh.validate();
    std::vector<std::uint8_t> bin;
    Eigen::Vector3f lo = Eigen::Vector3f::Zero(), hi = Eigen::Vector3f::Zero();
    for (std::size_t i = 0; i < mesh.positions.size(); ++i) {
        const Eigen::Vector3f p = mesh.positions[i].cast<float>();
        if (i == 0) lo = hi = p;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        for (int c = 0; c < 3; ++c) append(bin, p[c]);
    }
    const std::size_t uv_offset = bin.size();
    for (const auto& uv : mesh.uvs)
        for (int c = 0; c < 2; ++c) append(bin, static_cast<float>(uv[c]));
    const std::size_t idx_offset = bin.size();
    for (const auto& f : mesh.indices)
        for (auto i : f) append(bin, i);
    while (bin.size() % 4) bin.push_back(0);

    using nlohmann::json;
    const std::size_t n = mesh.positions.size();
    json doc;
    doc["asset"] = {{"version", "2.0"}, {"generator", "mixrt"}};
    doc["scene"] = 0;
    doc["scenes"] = json::array({{{"nodes", {0}}}});
    doc["nodes"] = json::array({{{"mesh", 0}}});
    doc["meshes"] = json::array(
        {{{"primitives", json::array({{{"attributes", {{"POSITION", 0}, {"TEXCOORD_0", 1}}}, {"indices", 2}, {"mode", 4}}})}}});
    doc["buffers"] = json::array({{{"byteLength", bin.size()}}});
    doc["bufferViews"] = json::array({
        {{"buffer", 0}, {"byteOffset", 0}, {"byteLength", uv_offset}, {"target", 34962}},
        {{"buffer", 0}, {"byteOffset", uv_offset}, {"byteLength", idx_offset - uv_offset}, {"target", 34962}},
        {{"buffer", 0}, {"byteOffset", idx_offset}, {"byteLength", mesh.indices.size() * 12}, {"target", 34963}},
    });
    doc["accessors"] = json::array({
        {{"bufferView", 0}, {"componentType", kFloat}, {"count", n}, {"type", "VEC3"},
         {"min", {lo.x(), lo.y(), lo.z()}}, {"max", {hi.x(), hi.y(), hi.z()}}},
        {{"bufferView", 1}, {"componentType", kFloat}, {"count", n}, {"type", "VEC2"}},
        {{"bufferView", 2}, {"componentType", kUint32}, {"count", mesh.indices.size() * 3}, {"type", "SCALAR"}},
    });
    std::string text = doc.dump();
    while (text.size() % 4) text.push_back(' ');

    std::vector<std::uint8_t> out;
    const auto total = static_cast<std::uint32_t>(12 + 8 + text.size() + 8 + bin.size());
    append(out, kMagic);
    append(out, std::uint32_t{2});
    append(out, total);
    append(out, static_cast<std::uint32_t>(text.size()));
    append(out, kChunkJson);
    out.insert(out.end(), text.begin(), text.end());
    append(out, static_cast<std::uint32_t>(bin.size()));
    append(out, kChunkBin);
    out.insert(out.end(), bin.begin(), bin.end());
    return out;
}

inline TriMesh decode_glb(const std::vector<std::uint8_t>& bytes) {
    using namespace gltf_detail;
    require(read_u32(bytes, 0) == kMagic, ErrorKind::Format, "glb: bad magic");
    require(read_u32(bytes, 4) == 2, ErrorKind::Version, "glb: only glTF 2.0 is supported");
    std::size_t at = 12;
    nlohmann::json doc;
    std::vector<std::vector<std::uint8_t>> buffers;
    bool have_json = false;
    while (at + 8 <= bytes.size()) {
        const std::uint32_t len = read_u32(bytes, at), type = read_u32(bytes, at + 4);
        at += 8;
        require(at + len <= bytes.size(), ErrorKind::Format, "glb: chunk exceeds file");
        if (type == kChunkJson) {
            doc = nlohmann::json::parse(bytes.begin() + at, bytes.begin() + at + len, nullptr, false);
            require(!doc.is_discarded(), ErrorKind::Format, "glb: invalid JSON chunk");
            have_json = true;
        } else if (type == kChunkBin && buffers.empty()) {
            buffers.emplace_back(bytes.begin() + at, bytes.begin() + at + len);
        }
        at += len;
    }
    require(have_json, ErrorKind::Format, "glb: missing JSON chunk");
    return mesh_from_gltf(doc, buffers);
}

inline TriMesh read_gltf(const std::filesystem::path& path) {
    using namespace gltf_detail;
    const auto bytes = read_file(path);
    if (bytes.size() >= 4 && read_u32(bytes, 0) == kMagic) return decode_glb(bytes);
    const auto doc = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
    require(!doc.is_discarded(), ErrorKind::Format, path.string() + " is neither glb nor glTF JSON");
    std::vector<std::vector<std::uint8_t>> buffers;
    for (const auto& b : doc.value("buffers", nlohmann::json::array())) {
        const std::string uri = b.value("uri", "");
        const auto comma = uri.find(',');
        if (uri.rfind("data:", 0) == 0 && comma != std::string::npos)
            buffers.push_back(base64_decode(std::string_view(uri).substr(comma + 1)));
        else
            buffers.push_back(read_file(path.parent_path() / uri));
    }
    return mesh_from_gltf(doc, buffers);
}

inline void write_glb(const std::filesystem::path& path, const TriMesh& mesh) {
    const auto bytes = encode_glb(mesh);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

/// Reads v / vt / f records. Each distinct (position, uv) pair becomes one
/// vertex; polygons are fan-triangulated.
inline TriMesh read_obj(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorKind::MissingFile, "missing file " + path.string());
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    std::vector<Vec3> v;
    std::vector<Vec2> vt;
    std::map<std::pair<long, long>, std::uint32_t> remap;
    TriMesh mesh;
    std::string line;
    int line_no = 0;
    auto resolve = [](long i, std::size_t n) -> long { return i < 0 ? static_cast<long>(n) + i : i - 1; };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 p;
            ss >> p.x() >> p.y() >> p.z();
            require(!ss.fail(), ErrorKind::Format, "obj: bad vertex on line " + std::to_string(line_no));
            v.push_back(p);
        } else if (tag == "vt") {
            Vec2 t;
            ss >> t.x() >> t.y();
            require(!ss.fail(), ErrorKind::Format, "obj: bad uv on line " + std::to_string(line_no));
            vt.push_back(t);
        } else if (tag == "f") {
            std::vector<std::uint32_t> poly;
            std::string tok;
            while (ss >> tok) {
                long pi = 0, ti = 0;
                const auto slash = tok.find('/');
                pi = resolve(std::stol(tok.substr(0, slash)), v.size());
                if (slash != std::string::npos && slash + 1 < tok.size() && tok[slash + 1] != '/') {
                    const auto end = tok.find('/', slash + 1);
                    ti = resolve(std::stol(tok.substr(slash + 1, end - slash - 1)), vt.size());
                } else {
                    ti = -1;
                }
                require(pi >= 0 && pi < static_cast<long>(v.size()) && ti < static_cast<long>(vt.size()),
                        ErrorKind::Format, "obj: face index out of range on line " + std::to_string(line_no));
                auto [it, inserted] = remap.try_emplace({pi, ti}, static_cast<std::uint32_t>(mesh.positions.size()));
                if (inserted) {
                    mesh.positions.push_back(v[pi]);
                    mesh.uvs.push_back(ti >= 0 ? vt[ti] : Vec2::Zero());
                }
                poly.push_back(it->second);
            }
            require(poly.size() >= 3, ErrorKind::Format, "obj: face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.indices.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }
    return mesh;
}

inline void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
    mesh.validate();
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.precision(9);
    for (const auto& p : mesh.positions) out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    for (const auto& t : mesh.uvs) out << "vt " << t.x() << ' ' << t.y() << '\n';
    for (const auto& f : mesh.indices)
        out << "f " << f[0] + 1 << '/' << f[0] + 1 << ' ' << f[1] + 1 << '/' << f[1] + 1 << ' ' << f[2] + 1 << '/'
            << f[2] + 1 << '\n';
}

/// Dispatches on extension: .obj, otherwise glTF.
inline TriMesh read_mesh(const std::filesystem::path& path) {
    return path.extension() == ".obj" ? read_obj(path) : read_gltf(path);
}

inline void write_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
    if (path.extension() == ".obj")
        write_obj(path, mesh);
    else
        write_glb(path, mesh);
}

}  // namespace mixrt

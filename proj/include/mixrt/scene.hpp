// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mixrt/displacement.hpp"
#include "mixrt/fields.hpp"
#include "mixrt/geometry.hpp"
#include "mixrt/quantize.hpp"

#include <memory>
#include <optional>

namespace mixrt {

/// Quantization state of an exported (or export-ready) scene.
struct SceneQuantization {
    std::vector<QuantizationParams> tables;  // one per level
    MapQuantization maps;
};

/// Mesh + displacement maps + hash-grid field: everything the per-pixel pipeline reads.
struct Scene {
    TriMesh mesh;
    std::shared_ptr<const BvhAccel> accel;  // null for a mesh without faces
    DisplacementMaps maps;
    HashGridField<double> field;
    Rgb background = Rgb::Ones();
    std::optional<SceneQuantization> quantization;

    void rebuild_accel() {
        mesh.validate();
        accel = mesh.empty() ? nullptr : std::make_shared<const BvhAccel>(mesh);
    }

    void validate() const {
        mesh.validate();
        maps.validate();
        field.validate();
        require(mesh.empty() || accel != nullptr, ErrorKind::DimensionMismatch, "scene is missing its BVH");
    }
};

/// Per-level table quantization plus map quantization. Values are snapped to
/// their dequantized codes in place so the returned scene renders exactly as
/// the exported bundle will. Existing parameters are reused when present.
inline Scene quantize_scene(const Scene& scene) {
    scene.validate();
    Scene out = scene;
    SceneQuantization q;
    const SceneQuantization* prev = scene.quantization ? &*scene.quantization : nullptr;
    for (std::size_t l = 0; l < out.field.tables.size(); ++l) {
        auto& table = out.field.tables[l];
        const QuantizationParams p = prev ? prev->tables.at(l) : fit_quantization<double>(table);
        snap_to_codes<double>(table, p);
        q.tables.push_back(p);
    }
    auto [maps, mq] = quantize_maps(scene.maps, prev ? &prev->maps : nullptr);
    out.maps = std::move(maps);
    q.maps = std::move(mq);
    out.quantization = std::move(q);
    return out;
}

}  // namespace mixrt

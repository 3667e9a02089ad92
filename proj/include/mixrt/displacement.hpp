// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// View-dependent displacement maps: an SH-coefficient texture and a scale
// texture that shift a ray-mesh hit point as a function of view direction.

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/fields.hpp"
#include "mixrt/quantize.hpp"

#include <vector>

namespace mixrt {

struct DisplacementMaps {
    int resolution = 0;
    int sh_degree = 2;
    // Texel (row, col) lives at (row * resolution + col); channel c of the SH
    // map at that texel is sh_map[texel * channels + c]. Channels are grouped
    // by output axis: [x coefficients | y coefficients | z coefficients].
    std::vector<double> sh_map;
    std::vector<double> scale_map;

    DisplacementMaps() = default;
    DisplacementMaps(int res, int degree)
        : resolution(res), sh_degree(ShBasis(degree).degree),
          sh_map(static_cast<std::size_t>(res) * res * 3 * ShBasis(degree).basis_count(), 0.0),
          scale_map(static_cast<std::size_t>(res) * res, 0.0) {
        require(res >= 1, ErrorKind::Domain, "displacement map resolution must be positive");
    }

    int basis_count() const { return ShBasis(sh_degree).basis_count(); }
    int channels() const { return 3 * basis_count(); }
    std::size_t texel_count() const { return static_cast<std::size_t>(resolution) * resolution; }

    void validate() const {
        require(resolution >= 1, ErrorKind::Domain, "displacement map resolution must be positive");
        require(sh_map.size() == texel_count() * channels(), ErrorKind::DimensionMismatch,
                "SH map must hold 3*(D+1)^2 channels per texel");
        require(scale_map.size() == texel_count(), ErrorKind::DimensionMismatch,
                "scale map must hold one channel per texel");
    }

    bool all_finite() const {
        for (double v : sh_map)
            if (!std::isfinite(v)) return false;
        for (double v : scale_map)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Four bilinear taps with edge-clamp addressing.
struct TexelStencil {
    std::array<std::uint32_t, 4> texel{};
    std::array<double, 4> weight{};
};

/// Texel centers sit at ((col + 0.5) / R, (row + 0.5) / R). Coordinates
/// outside [0,1] are clamped.
inline TexelStencil bilinear_stencil(int resolution, const Vec2& p_t) {
    const double u = std::clamp(p_t.x(), 0.0, 1.0), v = std::clamp(p_t.y(), 0.0, 1.0);
    const double x = u * resolution - 0.5, y = v * resolution - 0.5;
    const double x0f = std::floor(x), y0f = std::floor(y);
    const double fx = x - x0f, fy = y - y0f;
    const auto clampi = [resolution](double i) {
        return static_cast<std::uint32_t>(std::clamp(static_cast<int>(i), 0, resolution - 1));
    };
    const std::uint32_t c0 = clampi(x0f), c1 = clampi(x0f + 1), r0 = clampi(y0f), r1 = clampi(y0f + 1);
    const auto R = static_cast<std::uint32_t>(resolution);
    TexelStencil st;
    st.texel = {r0 * R + c0, r0 * R + c1, r1 * R + c0, r1 * R + c1};
    st.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    return st;
}

struct MapSample {
    std::vector<double> sh_coeffs;  // 3 * (D+1)^2, axis-major
    double scale = 0.0;
};

inline MapSample sample_maps(const DisplacementMaps& maps, const Vec2& p_t) {
    require(p_t.allFinite(), ErrorKind::Domain, "sample_maps: non-finite texture coordinate");
    const TexelStencil st = bilinear_stencil(maps.resolution, p_t);
    const int C = maps.channels();
    MapSample s;
    s.sh_coeffs.assign(static_cast<std::size_t>(C), 0.0);
    for (int k = 0; k < 4; ++k) {
        const double w = st.weight[k];
        if (w == 0.0) continue;
        const double* src = maps.sh_map.data() + static_cast<std::size_t>(st.texel[k]) * C;
        for (int c = 0; c < C; ++c) s.sh_coeffs[c] += w * src[c];
        s.scale += w * maps.scale_map[st.texel[k]];
    }
    return s;
}

/// S(coeffs, d): dot the SH basis of d against each axis' coefficient group.
inline Vec3 sh_displacement(std::span<const double> sh_basis_values, std::span<const double> coeffs) {
    const std::size_t B = sh_basis_values.size();
    Vec3 out = Vec3::Zero();
    for (int a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) acc += sh_basis_values[b] * coeffs[a * B + b];
        out[a] = acc;
    }
    return out;
}

/// p_cali = p + S(m_SH(p_t), d) * m_s(p_t).
inline Vec3 calibrate(const DisplacementMaps& maps, const Vec3& p, const Vec2& p_t, const Vec3& d) {
    require_unit(d, "calibrate direction");
    const MapSample s = sample_maps(maps, p_t);
    if (s.scale == 0.0) return p;
    const std::vector<double> basis = sh_eval(ShBasis(maps.sh_degree), d);
    return p + sh_displacement(basis, s.sh_coeffs) * s.scale;
}

struct MapQuantization {
    QuantizationParams sh;
    QuantizationParams scale;
    std::vector<std::uint8_t> sh_codes;
    std::vector<std::uint8_t> scale_codes;
};

/// Quantizes the SH and scale textures independently to 8 bits. When `reuse`
/// is given its parameters are applied instead of refitting.
inline std::pair<DisplacementMaps, MapQuantization> quantize_maps(const DisplacementMaps& maps,
                                                                   const MapQuantization* reuse = nullptr) {
    maps.validate();
    require(maps.all_finite(), ErrorKind::Numeric, "quantize_maps: non-finite texel");
    DisplacementMaps out = maps;
    MapQuantization q;
    q.sh = reuse ? reuse->sh : fit_quantization<double>(maps.sh_map);
    q.scale = reuse ? reuse->scale : fit_quantization<double>(maps.scale_map);
    q.sh_codes = snap_to_codes<double>(out.sh_map, q.sh);
    q.scale_codes = snap_to_codes<double>(out.scale_map, q.scale);
    return {std::move(out), std::move(q)};
}

}  // namespace mixrt

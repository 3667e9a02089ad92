// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mixrt/common.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace mixrt {

/// 8-bit affine quantization: value = minimum + code * step.
struct QuantizationParams {
    double minimum = 0.0;
    double step = 1.0;

    double dequantize(std::uint8_t code) const { return minimum + step * static_cast<double>(code); }

    std::uint8_t quantize(double v) const {
        const double x = (v - minimum) / step;
        // std::round rounds half away from zero.
        return static_cast<std::uint8_t>(std::clamp(std::round(x), 0.0, 255.0));
    }

    friend bool operator==(const QuantizationParams&, const QuantizationParams&) = default;
};

/// Range-fitting parameters for a set of values. Constant input gets step 1.
template <typename Real>
QuantizationParams fit_quantization(std::span<const Real> values) {
    require(!values.empty(), ErrorKind::Domain, "cannot quantize an empty texture");
    double lo = static_cast<double>(values[0]), hi = lo;
    for (Real v : values) {
        const double d = static_cast<double>(v);
        require(std::isfinite(d), ErrorKind::Numeric, "cannot quantize non-finite values");
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    QuantizationParams q;
    q.minimum = lo;
    q.step = hi > lo ? (hi - lo) / 255.0 : 1.0;
    return q;
}

template <typename Real>
std::vector<std::uint8_t> quantize_values(std::span<const Real> values, const QuantizationParams& q) {
    std::vector<std::uint8_t> codes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) codes[i] = q.quantize(static_cast<double>(values[i]));
    return codes;
}

/// Replaces every value by its dequantized code in place; returns the codes.
template <typename Real>
std::vector<std::uint8_t> snap_to_codes(std::span<Real> values, const QuantizationParams& q) {
    std::vector<std::uint8_t> codes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        codes[i] = q.quantize(static_cast<double>(values[i]));
        values[i] = static_cast<Real>(q.dequantize(codes[i]));
    }
    return codes;
}

}  // namespace mixrt

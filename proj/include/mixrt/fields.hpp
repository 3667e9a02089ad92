// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// Scene contraction, multi-resolution hash-grid encoding, real spherical
// harmonics, the small decoder MLP and volume compositing.

#pragma once

#include "mixrt/common.hpp"

#include <algorithm>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mixrt {

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

/// Spherical contraction: identity inside the unit ball, (2 - 1/|p|) p/|p| outside.
inline Vec3 contract(const Vec3& p) {
    require(p.allFinite(), ErrorKind::Domain, "contract: non-finite point");
    const double r = p.norm();
    if (r <= 1.0) return p;
    return (2.0 - 1.0 / r) * (p / r);
}

/// Jacobian d contract / d p. Row i holds the gradient of output component i.
inline Mat3 contract_jacobian(const Vec3& p) {
    const double r = p.norm();
    if (r <= 1.0) return Mat3::Identity();
    const Vec3 u = p / r;
    const Mat3 uut = u * u.transpose();
    return (2.0 - 1.0 / r) / r * (Mat3::Identity() - uut) + uut / (r * r);
}

/// Inverse of contract on the open radius-2 ball.
inline Vec3 uncontract(const Vec3& c) {
    const double r = c.norm();
    if (r <= 1.0) return c;
    require(r < 2.0, ErrorKind::Domain, "uncontract: point outside the open radius-2 ball");
    const double world_r = 1.0 / (2.0 - r);
    return c * (world_r / r);
}

// ---------------------------------------------------------------------------
// Hash grid
// ---------------------------------------------------------------------------

struct HashGridConfig {
    int num_levels = 4;
    std::uint32_t table_size = 1u << 21;
    int feature_dim = 4;
    int min_resolution = 256;
    int max_resolution = 4096;

    int embedding_dim() const { return num_levels * feature_dim; }

    void validate() const {
        require(num_levels >= 1, ErrorKind::Domain, "hash grid needs at least one level");
        require(is_pow2(table_size), ErrorKind::Domain, "table_size must be a power of two");
        require(feature_dim >= 1, ErrorKind::Domain, "feature_dim must be positive");
        require(min_resolution >= 1, ErrorKind::Domain, "min_resolution must be positive");
        require(max_resolution >= min_resolution, ErrorKind::Domain,
                "max_resolution must be >= min_resolution");
        require(num_levels > 1 || min_resolution == max_resolution, ErrorKind::Domain,
                "a single level requires min_resolution == max_resolution");
    }

    friend bool operator==(const HashGridConfig&, const HashGridConfig&) = default;
};

/// Geometric progression of per-level grid resolutions, rounded to nearest.
inline std::vector<int> level_resolutions(const HashGridConfig& config) {
    config.validate();
    std::vector<int> res(static_cast<std::size_t>(config.num_levels));
    if (config.num_levels == 1) {
        res[0] = config.min_resolution;
        return res;
    }
    const double growth = std::pow(static_cast<double>(config.max_resolution) / config.min_resolution,
                                   1.0 / (config.num_levels - 1));
    for (int l = 0; l < config.num_levels; ++l)
        res[l] = static_cast<int>(std::lround(config.min_resolution * std::pow(growth, l)));
    res.front() = config.min_resolution;
    res.back() = config.max_resolution;
    for (std::size_t l = 1; l < res.size(); ++l) res[l] = std::max(res[l], res[l - 1]);
    return res;
}

inline constexpr std::uint32_t kHashPrimes[3] = {1u, 2654435761u, 805459861u};

/// XOR-of-primes spatial hash, masked to the table size (a power of two).
inline std::uint32_t hash_index(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size) {
    const std::uint32_t h = (static_cast<std::uint32_t>(x) * kHashPrimes[0]) ^
                            (static_cast<std::uint32_t>(y) * kHashPrimes[1]) ^
                            (static_cast<std::uint32_t>(z) * kHashPrimes[2]);
    return h & (table_size - 1u);
}

/// True when every vertex of a level with `resolution` cells per axis fits the table.
inline bool level_is_dense(int resolution, std::uint32_t table_size) {
    const std::uint64_t n = static_cast<std::uint64_t>(resolution) + 1;
    return n * n * n <= table_size;
}

inline std::uint32_t grid_vertex_index(std::int64_t x, std::int64_t y, std::int64_t z, int resolution,
                                       std::uint32_t table_size) {
    if (level_is_dense(resolution, table_size)) {
        const std::uint64_t n = static_cast<std::uint64_t>(resolution) + 1;
        return static_cast<std::uint32_t>(x + n * (y + n * z));
    }
    return hash_index(x, y, z, table_size);
}

/// Maps a contracted point (radius-2 ball) into the unit cube used by the grid.
inline Vec3 contracted_to_grid(const Vec3& c) { return (c.array() + 2.0) / 4.0; }

/// The eight interpolation corners of one level around a point.
struct LevelStencil {
    std::array<std::uint32_t, 8> index{};
    std::array<double, 8> weight{};
    std::array<double, 3> frac{};  // position within the cell, each in [0,1]
};

/// Corner c uses offset bit 0 for x, bit 1 for y, bit 2 for z.
inline LevelStencil level_stencil(const Vec3& grid_pos, int resolution, std::uint32_t table_size) {
    LevelStencil st;
    std::array<std::int64_t, 3> base{};
    for (int a = 0; a < 3; ++a) {
        const double s = grid_pos[a] * resolution;
        auto i0 = static_cast<std::int64_t>(std::floor(s));
        i0 = std::clamp<std::int64_t>(i0, 0, resolution - 1);
        base[a] = i0;
        st.frac[a] = std::clamp(s - static_cast<double>(i0), 0.0, 1.0);
    }
    const bool dense = level_is_dense(resolution, table_size);
    const std::uint64_t n = static_cast<std::uint64_t>(resolution) + 1;
    for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        const std::int64_t x = base[0] + bx, y = base[1] + by, z = base[2] + bz;
        st.index[c] = dense ? static_cast<std::uint32_t>(x + n * (y + n * z)) : hash_index(x, y, z, table_size);
        st.weight[c] = (bx ? st.frac[0] : 1.0 - st.frac[0]) * (by ? st.frac[1] : 1.0 - st.frac[1]) *
                       (bz ? st.frac[2] : 1.0 - st.frac[2]);
    }
    return st;
}

/// d weight[c] / d frac[axis].
inline double stencil_weight_derivative(const LevelStencil& st, int corner, int axis) {
    double out = 1.0;
    for (int a = 0; a < 3; ++a) {
        const int bit = (corner >> a) & 1;
        if (a == axis)
            out *= bit ? 1.0 : -1.0;
        else
            out *= bit ? st.frac[a] : 1.0 - st.frac[a];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

template <typename Real>
struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<Real> weight;  // row-major out x in
    std::vector<Real> bias;

    DenseLayer() = default;
    DenseLayer(int in_dim, int out_dim)
        : in(in_dim), out(out_dim), weight(static_cast<std::size_t>(in_dim) * out_dim, Real(0)),
          bias(static_cast<std::size_t>(out_dim), Real(0)) {}

    Real& w(int o, int i) { return weight[static_cast<std::size_t>(o) * in + i]; }
    Real w(int o, int i) const { return weight[static_cast<std::size_t>(o) * in + i]; }
};

/// Fully connected layers with ReLU between them. The last layer is linear:
/// outputs 0..2 are pre-sigmoid RGB, output 3 (if present) is pre-exp density.
template <typename Real>
struct DecoderWeights {
    std::vector<DenseLayer<Real>> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out; }
    bool has_density() const { return output_dim() >= 4; }
    int max_width() const {
        int m = input_dim();
        for (const auto& l : layers) m = std::max(m, l.out);
        return m;
    }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    void validate() const {
        require(!layers.empty(), ErrorKind::DimensionMismatch, "decoder has no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            require(l.in > 0 && l.out > 0 &&
                        l.weight.size() == static_cast<std::size_t>(l.in) * l.out &&
                        l.bias.size() == static_cast<std::size_t>(l.out),
                    ErrorKind::DimensionMismatch, "decoder layer " + std::to_string(i) + " is malformed");
            if (i + 1 < layers.size())
                require(l.out == layers[i + 1].in, ErrorKind::DimensionMismatch,
                        "decoder layer " + std::to_string(i) + " output does not chain into the next layer");
        }
        require(output_dim() == 3 || output_dim() == 4, ErrorKind::DimensionMismatch,
                "decoder must produce 3 (rgb) or 4 (rgb + density) outputs");
    }

    template <typename Other>
    DecoderWeights<Other> cast() const {
        DecoderWeights<Other> out;
        for (const auto& l : layers) {
            DenseLayer<Other> o(l.in, l.out);
            std::transform(l.weight.begin(), l.weight.end(), o.weight.begin(), [](Real v) { return Other(v); });
            std::transform(l.bias.begin(), l.bias.end(), o.bias.begin(), [](Real v) { return Other(v); });
            out.layers.push_back(std::move(o));
        }
        return out;
    }
};

/// Builds a zero-initialized decoder of the given shape.
template <typename Real = double>
DecoderWeights<Real> make_decoder(int input_dim, const std::vector<int>& hidden, int outputs = 4) {
    require(input_dim > 0 && (outputs == 3 || outputs == 4), ErrorKind::Domain, "bad decoder shape");
    DecoderWeights<Real> dec;
    int in = input_dim;
    for (int h : hidden) {
        require(h > 0, ErrorKind::Domain, "hidden width must be positive");
        dec.layers.emplace_back(in, h);
        in = h;
    }
    dec.layers.emplace_back(in, outputs);
    return dec;
}

/// Fan-in scaled uniform init: U(-1/sqrt(in), 1/sqrt(in)); biases zero.
template <typename Real, typename Rng>
void init_decoder(DecoderWeights<Real>& dec, Rng& rng) {
    for (auto& l : dec.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& w : l.weight) w = Real(dist(rng));
        std::fill(l.bias.begin(), l.bias.end(), Real(0));
    }
}

struct DecodeResult {
    Rgb rgb = Rgb::Zero();
    std::optional<double> sigma;
};

/// Scratch buffers for allocation-free decoding in hot loops.
struct DecoderWorkspace {
    std::vector<double> a, b;
    void reserve(int width) {
        if (static_cast<int>(a.size()) < width) {
            a.resize(static_cast<std::size_t>(width));
            b.resize(static_cast<std::size_t>(width));
        }
    }
};

template <typename Real, typename In>
DecodeResult decode(const DecoderWeights<Real>& weights, std::span<const In> embedding, bool want_density,
                    DecoderWorkspace& ws) {
    if (weights.layers.empty() || static_cast<int>(embedding.size()) != weights.input_dim())
        fail(ErrorKind::DimensionMismatch, "decode: embedding length " + std::to_string(embedding.size()) +
                                               " != decoder input " + std::to_string(weights.input_dim()));
    require(!want_density || weights.has_density(), ErrorKind::DimensionMismatch,
            "decode: density requested from a decoder without a density output");
    ws.reserve(weights.max_width());
    double* cur = ws.a.data();
    double* nxt = ws.b.data();
    for (std::size_t i = 0; i < embedding.size(); ++i) cur[i] = static_cast<double>(embedding[i]);
    const std::size_t last = weights.layers.size() - 1;
    for (std::size_t li = 0; li <= last; ++li) {
        const auto& l = weights.layers[li];
        for (int o = 0; o < l.out; ++o) {
            double acc = static_cast<double>(l.bias[o]);
            const Real* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
            for (int i = 0; i < l.in; ++i) acc += static_cast<double>(row[i]) * cur[i];
            nxt[o] = (li == last) ? acc : std::max(acc, 0.0);
        }
        std::swap(cur, nxt);
    }
    DecodeResult r;
    r.rgb = Rgb(sigmoid(cur[0]), sigmoid(cur[1]), sigmoid(cur[2]));
    if (want_density) r.sigma = std::exp(cur[3]);
    return r;
}

template <typename Real, typename In>
DecodeResult decode(const DecoderWeights<Real>& weights, std::span<const In> embedding, bool want_density) {
    DecoderWorkspace ws;
    return decode(weights, embedding, want_density, ws);
}

/// Activations recorded by a forward pass, consumed by decode_backward.
struct DecoderTape {
    std::vector<std::vector<double>> activations;  // [0] = input, [k] = output of layer k-1 (post ReLU)
    std::vector<double> output;                    // pre-activation outputs of the last layer
};

inline DecodeResult decode_forward(const DecoderWeights<double>& weights, std::span<const double> embedding,
                                   DecoderTape& tape) {
    require(static_cast<int>(embedding.size()) == weights.input_dim(), ErrorKind::DimensionMismatch,
            "decode: embedding length mismatch");
    tape.activations.resize(weights.layers.size());
    tape.activations[0].assign(embedding.begin(), embedding.end());
    const std::size_t last = weights.layers.size() - 1;
    for (std::size_t li = 0; li <= last; ++li) {
        const auto& l = weights.layers[li];
        const auto& x = tape.activations[li];
        std::vector<double>& y = (li == last) ? tape.output : tape.activations[li + 1];
        y.resize(static_cast<std::size_t>(l.out));
        for (int o = 0; o < l.out; ++o) {
            double acc = l.bias[o];
            const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
            for (int i = 0; i < l.in; ++i) acc += row[i] * x[i];
            y[o] = (li == last) ? acc : std::max(acc, 0.0);
        }
    }
    DecodeResult r;
    r.rgb = Rgb(sigmoid(tape.output[0]), sigmoid(tape.output[1]), sigmoid(tape.output[2]));
    if (weights.has_density()) r.sigma = std::exp(tape.output[3]);
    return r;
}

/// Backpropagates d loss / d rgb (post-sigmoid) through the decoder. Parameter
/// gradients are accumulated into `grad` (same shape as weights); the
/// embedding gradient overwrites `d_embedding`.
inline void decode_backward(const DecoderWeights<double>& weights, const DecoderTape& tape, const Rgb& d_rgb,
                            DecoderWeights<double>& grad, std::vector<double>& d_embedding) {
    std::vector<double> delta(tape.output.size(), 0.0);
    for (int c = 0; c < 3; ++c) {
        const double s = sigmoid(tape.output[c]);
        delta[c] = d_rgb[c] * s * (1.0 - s);
    }
    for (std::size_t li = weights.layers.size(); li-- > 0;) {
        const auto& l = weights.layers[li];
        auto& g = grad.layers[li];
        const auto& x = tape.activations[li];
        std::vector<double> dx(static_cast<std::size_t>(l.in), 0.0);
        for (int o = 0; o < l.out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            g.bias[o] += d;
            const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in;
            double* grow = g.weight.data() + static_cast<std::size_t>(o) * l.in;
            for (int i = 0; i < l.in; ++i) {
                grow[i] += d * x[i];
                dx[i] += d * row[i];
            }
        }
        if (li > 0) {
            // ReLU mask of the layer that produced x.
            for (int i = 0; i < l.in; ++i)
                if (x[i] <= 0.0) dx[i] = 0.0;
        }
        delta = std::move(dx);
    }
    d_embedding = std::move(delta);
}

// ---------------------------------------------------------------------------
// Hash-grid field
// ---------------------------------------------------------------------------

template <typename Real = double>
struct HashGridField {
    HashGridConfig config;
    std::vector<int> resolutions;
    std::vector<std::vector<Real>> tables;  // per level: table_size * feature_dim, entry-major
    DecoderWeights<Real> decoder;

    HashGridField() = default;

    HashGridField(const HashGridConfig& cfg, DecoderWeights<Real> dec)
        : config(cfg), resolutions(level_resolutions(cfg)), decoder(std::move(dec)) {
        tables.assign(static_cast<std::size_t>(cfg.num_levels),
                      std::vector<Real>(static_cast<std::size_t>(cfg.table_size) * cfg.feature_dim, Real(0)));
        validate();
    }

    void validate() const {
        config.validate();
        require(resolutions == level_resolutions(config), ErrorKind::DimensionMismatch,
                "field resolutions disagree with its config");
        require(static_cast<int>(tables.size()) == config.num_levels, ErrorKind::DimensionMismatch,
                "field has wrong number of tables");
        for (const auto& t : tables)
            require(t.size() == static_cast<std::size_t>(config.table_size) * config.feature_dim,
                    ErrorKind::DimensionMismatch, "hash table has wrong size");
        decoder.validate();
        require(decoder.input_dim() == config.embedding_dim(), ErrorKind::DimensionMismatch,
                "decoder input must equal num_levels * feature_dim");
    }

    bool all_finite() const {
        for (const auto& t : tables)
            for (Real v : t)
                if (!std::isfinite(static_cast<double>(v))) return false;
        for (const auto& l : decoder.layers) {
            for (Real v : l.weight)
                if (!std::isfinite(static_cast<double>(v))) return false;
            for (Real v : l.bias)
                if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::span<const Real> entry(int level, std::uint32_t index) const {
        return {tables[level].data() + static_cast<std::size_t>(index) * config.feature_dim,
                static_cast<std::size_t>(config.feature_dim)};
    }
    std::span<Real> entry(int level, std::uint32_t index) {
        return {tables[level].data() + static_cast<std::size_t>(index) * config.feature_dim,
                static_cast<std::size_t>(config.feature_dim)};
    }

    template <typename Other>
    HashGridField<Other> cast() const {
        HashGridField<Other> out;
        out.config = config;
        out.resolutions = resolutions;
        out.tables.resize(tables.size());
        for (std::size_t l = 0; l < tables.size(); ++l) {
            out.tables[l].resize(tables[l].size());
            std::transform(tables[l].begin(), tables[l].end(), out.tables[l].begin(),
                           [](Real v) { return Other(v); });
        }
        out.decoder = decoder.template cast<Other>();
        return out;
    }
};

/// Table entries uniform in [-1e-4, 1e-4]; decoder fan-in uniform.
template <typename Real, typename Rng>
void init_field(HashGridField<Real>& field, Rng& rng, double table_range = 1e-4) {
    std::uniform_real_distribution<double> dist(-table_range, table_range);
    for (auto& t : field.tables)
        for (auto& v : t) v = Real(dist(rng));
    init_decoder(field.decoder, rng);
}

inline void require_in_grid_domain(const Vec3& p_contracted) {
    constexpr double kSlack = 1e-9;
    require(p_contracted.allFinite() && (p_contracted.array().abs() <= 2.0 + kSlack).all(), ErrorKind::Domain,
            "encode: point outside the contracted domain");
}

/// Per-level trilinear interpolation of the hashed tables, concatenated.
/// `out` must hold num_levels * feature_dim values.
template <typename Real, typename Out>
void encode(const HashGridField<Real>& field, const Vec3& p_contracted, std::span<Out> out) {
    require_in_grid_domain(p_contracted);
    const auto& cfg = field.config;
    require(static_cast<int>(out.size()) == cfg.embedding_dim(), ErrorKind::DimensionMismatch,
            "encode: output span has wrong length");
    const Vec3 g = contracted_to_grid(p_contracted).cwiseMax(0.0).cwiseMin(1.0);
    const int F = cfg.feature_dim;
    for (int l = 0; l < cfg.num_levels; ++l) {
        const LevelStencil st = level_stencil(g, field.resolutions[l], cfg.table_size);
        Out* dst = out.data() + static_cast<std::size_t>(l) * F;
        for (int f = 0; f < F; ++f) dst[f] = Out(0);
        const Real* table = field.tables[l].data();
        for (int c = 0; c < 8; ++c) {
            const Real* e = table + static_cast<std::size_t>(st.index[c]) * F;
            const double w = st.weight[c];
            for (int f = 0; f < F; ++f) dst[f] += Out(w * static_cast<double>(e[f]));
        }
    }
}

template <typename Real>
std::vector<double> encode(const HashGridField<Real>& field, const Vec3& p_contracted) {
    std::vector<double> out(static_cast<std::size_t>(field.config.embedding_dim()));
    encode(field, p_contracted, std::span<double>(out));
    return out;
}

// ---------------------------------------------------------------------------
// Spherical harmonics
// ---------------------------------------------------------------------------

inline constexpr int kMaxShDegree = 4;

struct ShBasis {
    int degree = 2;

    explicit ShBasis(int d = 2) : degree(d) {
        if (d < 0 || d > kMaxShDegree)
            fail(ErrorKind::Domain, "SH degree must be in [0, " + std::to_string(kMaxShDegree) + "]");
    }
    int basis_count() const { return (degree + 1) * (degree + 1); }
};

namespace sh_detail {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};
inline constexpr double C4[] = {2.5033429417967046,  -1.7701307697799304, 0.9461746957575601,
                                -0.6690465435572892, 0.10578554691520431, -0.6690465435572892,
                                0.47308734787878004, -1.7701307697799304, 0.6258357354491761};
}  // namespace sh_detail

/// Real SH basis (the sign convention used by TensoRF / Plenoxels), written into `out`.
inline void sh_eval(const ShBasis& basis, const Vec3& d, std::span<double> out) {
    using namespace sh_detail;
    require_unit(d, "sh_eval direction");
    require(static_cast<int>(out.size()) == basis.basis_count(), ErrorKind::DimensionMismatch,
            "sh_eval: output span has wrong length");
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = C0;
    if (basis.degree < 1) return;
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if (basis.degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if (basis.degree < 3) return;
    out[9] = C3[0] * y * (3 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4 * zz - xx - yy);
    out[12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    out[13] = C3[4] * x * (4 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3 * yy);
    if (basis.degree < 4) return;
    out[16] = C4[0] * xy * (xx - yy);
    out[17] = C4[1] * yz * (3 * xx - yy);
    out[18] = C4[2] * xy * (7 * zz - 1);
    out[19] = C4[3] * yz * (7 * zz - 3);
    out[20] = C4[4] * (zz * (35 * zz - 30) + 3);
    out[21] = C4[5] * xz * (7 * zz - 3);
    out[22] = C4[6] * (xx - yy) * (7 * zz - 1);
    out[23] = C4[7] * xz * (xx - 3 * yy);
    out[24] = C4[8] * (xx * (xx - 3 * yy) - yy * (3 * xx - yy));
}

inline std::vector<double> sh_eval(const ShBasis& basis, const Vec3& d) {
    std::vector<double> out(static_cast<std::size_t>(basis.basis_count()));
    sh_eval(basis, d, std::span<double>(out));
    return out;
}

// ---------------------------------------------------------------------------
// Volume compositing
// ---------------------------------------------------------------------------

struct RaySample {
    double t = 0.0;
    double sigma = 0.0;
    Rgb rgb = Rgb::Zero();
};

struct CompositeOptions {
    /// Interval assigned to the last sample. Unset: replicate the previous interval.
    std::optional<double> final_interval;
};

struct CompositeResult {
    Rgb rgb = Rgb::Zero();
    double transmittance = 1.0;     // residual transmittance after the last sample
    std::vector<double> weights;    // T_k * alpha_k per sample
};

/// C = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k + T_final * background.
inline CompositeResult composite_detailed(std::span<const RaySample> samples, const Rgb& background,
                                          const CompositeOptions& opts = {}) {
    CompositeResult r;
    r.weights.resize(samples.size());
    const std::size_t n = samples.size();
    for (std::size_t k = 1; k < n; ++k)
        require(samples[k].t >= samples[k - 1].t, ErrorKind::Domain, "composite: samples not sorted by t");
    if (n == 1)
        require(opts.final_interval.has_value(), ErrorKind::Domain,
                "composite: a single sample needs an explicit final interval");
    double optical_depth = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& s = samples[k];
        require(s.sigma >= 0.0, ErrorKind::Domain, "composite: negative density");
        double delta = 0.0;
        if (k + 1 < n)
            delta = samples[k + 1].t - s.t;
        else
            delta = opts.final_interval.value_or(n >= 2 ? samples[n - 1].t - samples[n - 2].t : 0.0);
        const double trans = std::exp(-optical_depth);
        const double tau = s.sigma * delta;
        const double alpha = -std::expm1(-tau);
        r.weights[k] = trans * alpha;
        r.rgb += r.weights[k] * s.rgb;
        optical_depth += tau;
    }
    r.transmittance = std::exp(-optical_depth);
    r.rgb += r.transmittance * background;
    return r;
}

inline Rgb composite(std::span<const RaySample> samples, const Rgb& background,
                     const CompositeOptions& opts = {}) {
    return composite_detailed(samples, background, opts).rgb;
}

}  // namespace mixrt

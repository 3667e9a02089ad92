// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

// Indexed triangle meshes, vertex-clustering simplification and a BVH ray caster.

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/fields.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

namespace mixrt {

using Face = std::array<std::uint32_t, 3>;

struct TriMesh {
    std::vector<Vec3> positions;
    std::vector<Vec2> uvs;
    std::vector<Face> indices;

    std::size_t vertex_count() const { return positions.size(); }
    std::size_t face_count() const { return indices.size(); }
    bool empty() const { return indices.empty(); }

    void validate() const {
        require(positions.size() == uvs.size(), ErrorKind::DimensionMismatch,
                "mesh needs exactly one uv per vertex");
        for (const auto& p : positions) require(p.allFinite(), ErrorKind::Domain, "mesh has a non-finite position");
        for (const auto& f : indices) {
            for (auto i : f)
                require(i < positions.size(), ErrorKind::DimensionMismatch, "face index out of range");
            require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorKind::Domain, "degenerate face");
        }
    }

    Eigen::AlignedBox3d bounds() const {
        Eigen::AlignedBox3d box;
        for (const auto& p : positions) box.extend(p);
        return box;
    }

    friend bool operator==(const TriMesh& a, const TriMesh& b) {
        return a.positions == b.positions && a.uvs == b.uvs && a.indices == b.indices;
    }
};

struct RayHit {
    double t = 0.0;
    std::uint32_t face = 0;
    Vec3 barycentric = Vec3::Zero();  // weights of the face's vertices 0, 1, 2
    Vec3 point = Vec3::Zero();
    Vec2 uv = Vec2::Zero();
};

inline constexpr double kMinHitT = 1e-6;

/// Moller-Trumbore test against one face. Returns t and (u, v) weights of vertices 1 and 2.
inline bool intersect_face(const TriMesh& mesh, std::uint32_t face, const Vec3& origin, const Vec3& dir,
                           double& t_out, double& u_out, double& v_out) {
    const auto& f = mesh.indices[face];
    const Vec3& a = mesh.positions[f[0]];
    const Vec3 e1 = mesh.positions[f[1]] - a;
    const Vec3 e2 = mesh.positions[f[2]] - a;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < 1e-14 * (e1.squaredNorm() + e2.squaredNorm() + 1e-300)) return false;
    const double inv = 1.0 / det;
    const Vec3 tvec = origin - a;
    const double u = tvec.dot(pvec) * inv;
    constexpr double kEdge = 1e-12;
    if (u < -kEdge || u > 1.0 + kEdge) return false;
    const Vec3 qvec = tvec.cross(e1);
    const double v = dir.dot(qvec) * inv;
    if (v < -kEdge || u + v > 1.0 + kEdge) return false;
    const double t = e2.dot(qvec) * inv;
    if (!(t > kMinHitT)) return false;
    t_out = t;
    u_out = u;
    v_out = v;
    return true;
}

inline RayHit make_hit(const TriMesh& mesh, std::uint32_t face, double t, double u, double v) {
    u = std::max(u, 0.0);
    v = std::max(v, 0.0);
    double w = std::max(1.0 - u - v, 0.0);
    const double s = u + v + w;
    u /= s;
    v /= s;
    w /= s;
    const auto& f = mesh.indices[face];
    RayHit hit;
    hit.t = t;
    hit.face = face;
    hit.barycentric = Vec3(w, u, v);
    hit.point = w * mesh.positions[f[0]] + u * mesh.positions[f[1]] + v * mesh.positions[f[2]];
    hit.uv = w * mesh.uvs[f[0]] + u * mesh.uvs[f[1]] + v * mesh.uvs[f[2]];
    return hit;
}

/// Closer hit wins; equal t resolves to the lower face index.
inline bool closer(double t, std::uint32_t face, double best_t, std::uint32_t best_face) {
    return t < best_t || (t == best_t && face < best_face);
}

/// Linear scan over all faces. Reference for the BVH.
inline std::optional<RayHit> intersect_brute_force(const TriMesh& mesh, const Vec3& origin, const Vec3& dir) {
    require_unit(dir, "ray direction");
    double best_t = std::numeric_limits<double>::infinity(), best_u = 0, best_v = 0;
    std::uint32_t best_face = std::numeric_limits<std::uint32_t>::max();
    for (std::uint32_t f = 0; f < mesh.indices.size(); ++f) {
        double t, u, v;
        if (intersect_face(mesh, f, origin, dir, t, u, v) && closer(t, f, best_t, best_face)) {
            best_t = t;
            best_u = u;
            best_v = v;
            best_face = f;
        }
    }
    if (best_face == std::numeric_limits<std::uint32_t>::max()) return std::nullopt;
    return make_hit(mesh, best_face, best_t, best_u, best_v);
}

struct TraversalStats {
    std::size_t face_tests = 0;
    std::size_t node_visits = 0;
};

/// Binary BVH over faces, median split on the widest centroid axis.
class BvhAccel {
public:
    struct Node {
        Eigen::AlignedBox3d bounds;
        std::uint32_t first = 0;  // leaf: offset into face_order; inner: left child index
        std::uint32_t count = 0;  // leaf: face count; inner: 0
        std::uint32_t right = 0;
        bool is_leaf() const { return count > 0; }
    };

    static constexpr std::uint32_t kLeafSize = 4;

    BvhAccel() = default;

    explicit BvhAccel(const TriMesh& mesh) {
        require(!mesh.indices.empty(), ErrorKind::Domain, "build_bvh: mesh has no faces");
        const std::size_t n = mesh.indices.size();
        face_order_.resize(n);
        std::iota(face_order_.begin(), face_order_.end(), 0u);
        face_bounds_.resize(n);
        centroids_.resize(n);
        for (std::size_t f = 0; f < n; ++f) {
            Eigen::AlignedBox3d b;
            for (auto vi : mesh.indices[f]) b.extend(mesh.positions[vi]);
            face_bounds_[f] = b;
            centroids_[f] = b.center();
        }
        nodes_.reserve(2 * n / kLeafSize + 2);
        nodes_.emplace_back();
        build(0, 0, static_cast<std::uint32_t>(n));
        face_bounds_.clear();
        face_bounds_.shrink_to_fit();
        centroids_.clear();
        centroids_.shrink_to_fit();
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<std::uint32_t>& face_order() const { return face_order_; }

    std::optional<RayHit> intersect(const TriMesh& mesh, const Vec3& origin, const Vec3& dir,
                                    TraversalStats* stats = nullptr) const {
        require_unit(dir, "ray direction");
        if (nodes_.empty()) return std::nullopt;
        const Vec3 inv = dir.cwiseInverse();
        double best_t = std::numeric_limits<double>::infinity(), best_u = 0, best_v = 0;
        std::uint32_t best_face = std::numeric_limits<std::uint32_t>::max();
        std::uint32_t stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& node = nodes_[stack[--top]];
            if (stats) ++stats->node_visits;
            double tnear;
            if (!slab(node.bounds, origin, dir, inv, best_t, tnear)) continue;
            if (node.is_leaf()) {
                for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
                    const std::uint32_t f = face_order_[i];
                    if (stats) ++stats->face_tests;
                    double t, u, v;
                    if (intersect_face(mesh, f, origin, dir, t, u, v) && closer(t, f, best_t, best_face)) {
                        best_t = t;
                        best_u = u;
                        best_v = v;
                        best_face = f;
                    }
                }
                continue;
            }
            const std::uint32_t l = node.first, r = node.right;
            double tl, tr;
            const bool hl = slab(nodes_[l].bounds, origin, dir, inv, best_t, tl);
            const bool hr = slab(nodes_[r].bounds, origin, dir, inv, best_t, tr);
            // Push the farther child first so the nearer one is popped next.
            if (hl && hr) {
                if (tl <= tr) {
                    stack[top++] = r;
                    stack[top++] = l;
                } else {
                    stack[top++] = l;
                    stack[top++] = r;
                }
            } else if (hl) {
                stack[top++] = l;
            } else if (hr) {
                stack[top++] = r;
            }
        }
        if (best_face == std::numeric_limits<std::uint32_t>::max()) return std::nullopt;
        return make_hit(mesh, best_face, best_t, best_u, best_v);
    }

private:
    void build(std::uint32_t node_index, std::uint32_t begin, std::uint32_t end) {
        Eigen::AlignedBox3d bounds, cbounds;
        for (std::uint32_t i = begin; i < end; ++i) {
            bounds.extend(face_bounds_[face_order_[i]]);
            cbounds.extend(centroids_[face_order_[i]]);
        }
        // Pad so that boundary hits are never culled by rounding in the slab test.
        const double pad = 1e-9 * (1.0 + bounds.diagonal().norm());
        bounds.min().array() -= pad;
        bounds.max().array() += pad;
        nodes_[node_index].bounds = bounds;
        const std::uint32_t count = end - begin;
        Vec3 extent = cbounds.diagonal();
        int axis;
        extent.maxCoeff(&axis);
        if (count <= kLeafSize || extent[axis] <= 0.0) {
            nodes_[node_index].first = begin;
            nodes_[node_index].count = count;
            return;
        }
        const std::uint32_t mid = begin + count / 2;
        std::nth_element(face_order_.begin() + begin, face_order_.begin() + mid, face_order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        const auto left = static_cast<std::uint32_t>(nodes_.size());
        nodes_.emplace_back();
        nodes_.emplace_back();
        nodes_[node_index].first = left;
        nodes_[node_index].right = left + 1;
        nodes_[node_index].count = 0;
        build(left, begin, mid);
        build(left + 1, mid, end);
    }

    static bool slab(const Eigen::AlignedBox3d& box, const Vec3& o, const Vec3& d, const Vec3& inv,
                     double tmax_limit, double& tnear) {
        double t0 = 0.0, t1 = tmax_limit;
        for (int a = 0; a < 3; ++a) {
            if (d[a] == 0.0) {
                if (o[a] < box.min()[a] || o[a] > box.max()[a]) return false;
                continue;
            }
            double ta = (box.min()[a] - o[a]) * inv[a];
            double tb = (box.max()[a] - o[a]) * inv[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) return false;
        }
        tnear = t0;
        return true;
    }

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> face_order_;
    std::vector<Eigen::AlignedBox3d> face_bounds_;
    std::vector<Vec3> centroids_;
};

inline BvhAccel build_bvh(const TriMesh& mesh) { return BvhAccel(mesh); }

inline std::optional<RayHit> intersect(const BvhAccel& accel, const TriMesh& mesh, const Vec3& origin,
                                       const Vec3& dir) {
    return accel.intersect(mesh, origin, dir);
}

// ---------------------------------------------------------------------------
// Vertex clustering
// ---------------------------------------------------------------------------

struct ClusterResult {
    TriMesh mesh;
    std::vector<std::uint32_t> mapping;  // original vertex -> cluster (output vertex)
};

/// Each cluster takes the UV of the member nearest the cluster position
/// (lowest original index on ties).
inline TriMesh propagate_uvs(const TriMesh& original, const TriMesh& clustered,
                             std::span<const std::uint32_t> mapping) {
    require(mapping.size() == original.positions.size(), ErrorKind::DimensionMismatch,
            "propagate_uvs: mapping must cover every original vertex");
    TriMesh out = clustered;
    const std::size_t k = clustered.positions.size();
    out.uvs.assign(k, Vec2::Zero());
    std::vector<double> best(k, std::numeric_limits<double>::infinity());
    for (std::uint32_t i = 0; i < mapping.size(); ++i) {
        const std::uint32_t c = mapping[i];
        require(c < k, ErrorKind::DimensionMismatch, "propagate_uvs: cluster id out of range");
        const double d2 = (original.positions[i] - clustered.positions[c]).squaredNorm();
        if (d2 < best[c]) {  // strict: earlier (lower-index) member keeps ties
            best[c] = d2;
            out.uvs[c] = original.uvs[i];
        }
    }
    return out;
}

struct VoxelKeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (auto v : k) {
            h ^= static_cast<std::uint64_t>(v);
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

/// Merges all vertices falling into the same voxel (optionally measured in
/// contracted space) and drops faces that collapse.
inline ClusterResult cluster_simplify_detailed(const TriMesh& mesh, double voxel_size, bool in_contracted_space) {
    require(!mesh.positions.empty() && !mesh.indices.empty(), ErrorKind::Domain, "cluster_simplify: empty mesh");
    require(voxel_size > 0.0 && std::isfinite(voxel_size), ErrorKind::Domain,
            "cluster_simplify: voxel size must be positive");
    const std::size_t n = mesh.positions.size();
    std::unordered_map<std::array<std::int64_t, 3>, std::uint32_t, VoxelKeyHash> voxel_to_cluster;
    voxel_to_cluster.reserve(n);
    ClusterResult result;
    result.mapping.resize(n);
    std::vector<Vec3> sums;
    std::vector<std::uint32_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 q = in_contracted_space ? contract(mesh.positions[i]) : mesh.positions[i];
        const std::array<std::int64_t, 3> key = {static_cast<std::int64_t>(std::floor(q.x() / voxel_size)),
                                                 static_cast<std::int64_t>(std::floor(q.y() / voxel_size)),
                                                 static_cast<std::int64_t>(std::floor(q.z() / voxel_size))};
        auto [it, inserted] = voxel_to_cluster.try_emplace(key, static_cast<std::uint32_t>(sums.size()));
        if (inserted) {
            sums.push_back(Vec3::Zero());
            counts.push_back(0);
        }
        sums[it->second] += q;
        ++counts[it->second];
        result.mapping[i] = it->second;
    }
    TriMesh clustered;
    clustered.positions.resize(sums.size());
    for (std::size_t c = 0; c < sums.size(); ++c) {
        const Vec3 centroid = sums[c] / static_cast<double>(counts[c]);
        clustered.positions[c] = in_contracted_space ? uncontract(centroid) : centroid;
    }
    clustered.uvs.assign(sums.size(), Vec2::Zero());
    for (const auto& f : mesh.indices) {
        const Face g = {result.mapping[f[0]], result.mapping[f[1]], result.mapping[f[2]]};
        if (g[0] != g[1] && g[1] != g[2] && g[0] != g[2]) clustered.indices.push_back(g);
    }
    result.mesh = propagate_uvs(mesh, clustered, result.mapping);
    return result;
}

inline TriMesh cluster_simplify(const TriMesh& mesh, double voxel_size, bool in_contracted_space) {
    return cluster_simplify_detailed(mesh, voxel_size, in_contracted_space).mesh;
}

}  // namespace mixrt

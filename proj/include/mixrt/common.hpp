// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mixrt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rgb = Eigen::Vector3d;

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
    Domain,             // argument outside an operation's domain
    DimensionMismatch,  // shapes of cooperating objects disagree
    Io,                 // filesystem / encoder failure
    MissingFile,
    Format,             // malformed file content
    Version,            // unsupported format version
    Numeric,            // non-finite values during training or export
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Domain: return "domain";
        case ErrorKind::DimensionMismatch: return "dimension-mismatch";
        case ErrorKind::Io: return "io";
        case ErrorKind::MissingFile: return "missing-file";
        case ErrorKind::Format: return "format";
        case ErrorKind::Version: return "version";
        case ErrorKind::Numeric: return "numeric";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

inline void require(bool cond, ErrorKind kind, const char* what) {
    if (!cond) fail(kind, what);
}

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

inline bool is_unit(const Vec3& d, double tol = 1e-6) { return std::abs(d.norm() - 1.0) <= tol; }

inline void require_unit(const Vec3& d, const char* name) {
    if (!(d.allFinite() && is_unit(d)))
        fail(ErrorKind::Domain, std::string(name) + " must be a unit vector (|d| = " + std::to_string(d.norm()) + ")");
}

inline constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace mixrt

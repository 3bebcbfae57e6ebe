#pragma once
// Dense row-major tensor of doubles. Small, value-semantic, no views;
// everything downstream (autodiff, networks, serialization) builds on this.

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sam/rng.hpp"

namespace sam {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        v.assign(numel(shape), 0.0);
    }
    Tensor(std::vector<std::size_t> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != numel(shape)) throw std::invalid_argument("Tensor: data/shape mismatch");
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double value) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor randn(std::vector<std::size_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.v) x = stddev * rng.normal();
        return t;
    }

    std::size_t size() const { return v.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    double& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return v[(c * shape[1] + y) * shape[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return v[(c * shape[1] + y) * shape[2] + x];
    }

    double item() const {
        if (v.size() != 1) throw std::logic_error("Tensor::item: not a scalar");
        return v[0];
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool bit_equal(const Tensor& o) const {
        if (shape != o.shape) return false;
        return std::memcmp(v.data(), o.v.data(), v.size() * sizeof(double)) == 0;
    }
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("Tensor+: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("Tensor-: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

inline Tensor operator*(const Tensor& a, double c) {
    Tensor out = a;
    for (double& x : out.v) x *= c;
    return out;
}

/// FNV-1a over the raw bytes; used for the parameter-freeze checks.
inline std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.v.data());
    for (std::size_t i = 0; i < t.v.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t combine_checksum(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

}  // namespace sam

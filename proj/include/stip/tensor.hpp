// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stip/common.hpp"
#include "stip/rng.hpp"

namespace stip::nn {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

// Dense row-major tensor. Invariant: product(shape) == data.size() and every
// dimension is positive.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
    }
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor " + shape_str(shape) + " cannot hold " +
                             std::to_string(data.size()) + " values");
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor from(Shape s, std::initializer_list<T> vals) {
        return Tensor(std::move(s), std::vector<T>(vals));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::size_t rank() const { return shape.size(); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }

    T& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    T& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    const T& at(std::int64_t i, std::int64_t j) const {
        return data[static_cast<std::size_t>(i * shape[1] + j)];
    }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

private:
    void validate_shape() const {
        if (shape.empty()) throw ShapeError("rank-0 tensors are not supported");
        for (auto d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
    }
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* context) {
    for (const T& v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(context) + " produced a non-finite value");
}

template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
    Tensor<T> t(std::move(shape));
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, sigma));
    return t;
}

template <typename T>
Tensor<T> uniform_init(Rng& rng, Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> normal_init(Rng& rng, Shape shape, double mu, double sigma) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(mu, sigma));
    return t;
}

}  // namespace stip::nn

// Dense row-major tensor value type used by the autodiff engine.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "cpgait/common.hpp"

namespace cpgait::ad {

template <class T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(count(shape)), fill);
    }

    static Tensor scalar(T v) {
        Tensor t(std::vector<std::int64_t>{});
        t.data.assign(1, v);
        return t;
    }

    static Tensor from(std::vector<std::int64_t> s, std::vector<T> values) {
        require(count(s) == static_cast<std::int64_t>(values.size()),
                "tensor: data length does not match shape");
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(values);
        return t;
    }

    static std::int64_t count(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool is_scalar() const { return shape.empty() && data.size() == 1; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // 2-D and 4-D accessors; callers guarantee rank.
    T& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    const T& at2(std::int64_t i, std::int64_t j) const {
        return data[static_cast<std::size_t>(i * shape[1] + j)];
    }
    T& at4(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t v) {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + t) * shape[3] + v)];
    }
    const T& at4(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t v) const {
        return data[static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + t) * shape[3] + v)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

}  // namespace cpgait::ad

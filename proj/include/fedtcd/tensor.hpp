#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fedtcd {

// Dense row-major rank-3 array. Used for [T, D, D] graph trajectories,
// [n, T, D] panels and binary masks.
template <class T>
struct Array3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<T> data;

    Array3() = default;
    Array3(std::size_t a, std::size_t b, std::size_t c, T fill = T{})
        : d0(a), d1(b), d2(c), data(a * b * c, fill) {}

    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * d1 + j) * d2 + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * d1 + j) * d2 + k];
    }

    T* slice(std::size_t i) { return data.data() + i * d1 * d2; }
    const T* slice(std::size_t i) const { return data.data() + i * d1 * d2; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Array3& o) const { return d0 == o.d0 && d1 == o.d1 && d2 == o.d2; }

    friend bool operator==(const Array3&, const Array3&) = default;
};

using Tensor3 = Array3<double>;
using Mask3 = Array3<std::uint8_t>;

}  // namespace fedtcd

namespace fedtcd {

template <class T>
struct Array2 {
    std::size_t rows = 0, cols = 0;
    std::vector<T> data;

    Array2() = default;
    Array2(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    friend bool operator==(const Array2&, const Array2&) = default;
};

using BinaryMatrix = Array2<std::uint8_t>;

}  // namespace fedtcd

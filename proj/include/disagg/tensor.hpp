#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "disagg/errors.hpp"

namespace disagg {

/// Rank-3 feature map with shape (batch, channels, time), row-major in time.
template <typename T>
struct Tensor3 {
    int batch = 0;
    int channels = 0;
    int length = 0;
    std::vector<T> data;

    Tensor3() = default;
    Tensor3(int b, int c, int t)
        : batch(b), channels(c), length(t),
          data(static_cast<size_t>(b) * c * t, T(0)) {
        if (b < 1 || c < 1 || t < 1)
            throw ShapeError("Tensor3: all dimensions must be >= 1");
    }

    size_t size() const { return data.size(); }

    T* row(int b, int c) {
        return data.data() + (static_cast<size_t>(b) * channels + c) * length;
    }
    const T* row(int b, int c) const {
        return data.data() + (static_cast<size_t>(b) * channels + c) * length;
    }

    T& at(int b, int c, int t) { return row(b, c)[t]; }
    const T& at(int b, int c, int t) const { return row(b, c)[t]; }

    bool same_shape(const Tensor3& o) const {
        return batch == o.batch && channels == o.channels && length == o.length;
    }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
void require_same_shape(const Tensor3<T>& a, const Tensor3<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch");
}

}  // namespace disagg

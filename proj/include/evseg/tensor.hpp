#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evseg {

// Dense row-major tensor (last axis fastest). The universal value type of
// the engine; templated on the scalar so gradient checks can run in double
// while training runs in float.
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }
    TensorT(std::vector<int> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("tensor data length does not match shape");
    }

    static std::int64_t numel_of(const std::vector<int>& shp) {
        std::int64_t n = 1;
        for (int d : shp) {
            if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape.size()); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // [C,H,W] indexing
    S& at3(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    const S& at3(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
    }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << shape[i] << (i + 1 < shape.size() ? "," : "");
        os << ']';
        return os.str();
    }

    template <class T2>
    TensorT<T2> cast() const {
        TensorT<T2> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T2>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Argmax position (flat index 0-3) of each 2x2 max-pool window, saved by the
// forward pass so the backward pass can route gradients exactly.
struct PoolIndices {
    std::vector<int> shape;  // matches the pooled output
    std::vector<std::uint8_t> idx;
};

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace evseg

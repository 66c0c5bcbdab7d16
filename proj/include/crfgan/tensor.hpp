#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace crfgan {

// Dense row-major tensor of doubles. Shapes are small vectors of extents;
// a scalar is shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        assert(static_cast<std::int64_t>(v.size()) == numel(shape));
    }

    static std::int64_t numel(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) n *= e;
        return s.empty() ? 0 : n;
    }

    static Tensor scalar(double x) { return Tensor({1}, {x}); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    double& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

    double item() const {
        assert(size() == 1);
        return v[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace crfgan

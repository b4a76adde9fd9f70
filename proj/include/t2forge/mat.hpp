// Row-major dense f64 matrix used for batched network math.
#pragma once

#include <cassert>
#include <cstring>
#include <vector>

#include "t2forge/common.hpp"

namespace t2forge {

struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}

    double* row(int i) { return a.data() + size_t(i) * size_t(cols); }
    const double* row(int i) const { return a.data() + size_t(i) * size_t(cols); }
    double& operator()(int i, int j) { return a[size_t(i) * size_t(cols) + size_t(j)]; }
    double operator()(int i, int j) const { return a[size_t(i) * size_t(cols) + size_t(j)]; }

    // allocate-and-zero to a shape
    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(size_t(r) * size_t(c), 0.0);
    }
    // reuse storage when the shape already matches (contents stale)
    void ensure(int r, int c) {
        if (rows == r && cols == c && a.size() == size_t(r) * size_t(c)) return;
        resize(r, c);
    }
    void zero() { std::memset(a.data(), 0, a.size() * sizeof(double)); }
    bool finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

} // namespace t2forge

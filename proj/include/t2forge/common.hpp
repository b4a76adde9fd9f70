// Small shared vocabulary for t2forge: 3-vectors, 3x3 matrices, error types,
// seeded RNG helpers and a deterministic parallel-for.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace t2forge {

// ---------------------------------------------------------------- errors

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct MissingInputError : std::runtime_error {
    explicit MissingInputError(const std::string& what) : std::runtime_error(what) {}
};

// Broken caller contract (programmer error), distinct from bad data.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// ---------------------------------------------------------------- Vec3

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x; y += o.y; z += o.z;
        return *this;
    }
    // component-wise product
    Vec3 cmul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
    Vec3 cdiv(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    double max_abs() const { return std::max({std::abs(x), std::abs(y), std::abs(z)}); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// ---------------------------------------------------------------- Mat3
// Row-major 3x3. Used for grid orientations and rigid rotations.

struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }

    double& operator()(int r, int c) { return m[size_t(3 * r + c)]; }
    double operator()(int r, int c) const { return m[size_t(3 * r + c)]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    // max-norm of R^T R - I; 0 for an exactly orthonormal matrix
    double orthonormality_error() const {
        Mat3 g = transposed() * (*this);
        double e = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) e = std::max(e, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
        return e;
    }
};

// ---------------------------------------------------------------- RNG

// SplitMix64; used for seed derivation and cheap per-item hashing.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and stream tags.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
    uint64_t s = splitmix64(base);
    for (uint64_t t : tags) s = splitmix64(s ^ (t + 0x9e3779b97f4a7c15ULL));
    return s;
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline double gaussian(Rng& rng, double mean, double stdev) {
    std::normal_distribution<double> d(mean, stdev);
    return d(rng);
}

// ---------------------------------------------------------------- allocator

// Large training buffers churn every step; keep glibc from handing them
// straight back to the kernel (mmap/munmap + page faults per step).
inline void tune_allocator() {
#ifdef __GLIBC__
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
        return true;
    }();
    (void)done;
#endif
}

// ---------------------------------------------------------------- threads

// Worker budget: T2FORGE_THREADS caps it, default = hardware concurrency.
inline int thread_budget() {
    static const int budget = [] {
        int n = int(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("T2FORGE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        return n;
    }();
    return budget;
}

// Block-partitioned parallel for. fn(begin, end) is called on disjoint
// ranges; results must not depend on the partition, so any reduction
// inside a range runs in ascending index order and callers that need a
// global reduction combine per-range partials in fixed order themselves.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn, int max_threads = 0) {
    if (n <= 0) return;
    int workers = thread_budget();
    if (max_threads > 0) workers = std::min(workers, max_threads);
    if (workers <= 1 || n == 1) {
        fn(int64_t(0), n);
        return;
    }
    workers = int(std::min<int64_t>(workers, n));
    const int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers - 1));
    for (int w = 1; w < workers; ++w) {
        int64_t b = w * chunk, e = std::min<int64_t>(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(int64_t(0), std::min<int64_t>(chunk, n));
    for (auto& t : pool) t.join();
}

} // namespace t2forge

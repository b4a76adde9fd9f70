// Coordinate-network core: a sinusoidal-activation MLP with explicit
// reverse-mode gradients and an Adam optimizer.
//
// Hidden layers compute sin(omega0 * (x W + b)); the final layer is linear
// with an optional softplus. Weights W_l are stored input-major
// (d_l x d_{l+1}) so a batch forward is a plain row-major GEMM. The batch
// kernels below write each output row from exactly one thread and reduce
// over the batch in fixed chunk order, so results do not depend on the
// thread count.
#pragma once

#include <cstring>
#include <fstream>
#include <numeric>
#include <span>

#include "t2forge/mat.hpp"
#include "t2forge/simd.hpp"

namespace t2forge {

enum class OutputActivation : uint8_t { none = 0, softplus = 1 };

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

struct SirenSpec {
    int input_dim = 3;
    std::vector<int> hidden = {128, 128, 128};
    int output_dim = 1;
    double omega0 = 30.0;
    OutputActivation output_activation = OutputActivation::none;
};

struct SirenNetwork {
    SirenSpec spec;
    std::vector<int> dims;      // [in, hidden..., out]
    std::vector<double> omega0; // per sine layer
    std::vector<double> params; // per layer: W (d_l x d_{l+1}), then b
    std::vector<size_t> w_offset, b_offset;
    uint64_t version = 0; // bumped on every parameter change; tapes carry it

    int layer_count() const { return int(dims.size()) - 1; }
    int sine_layers() const { return layer_count() - 1; }

    std::span<double> weights(int l) {
        return {params.data() + w_offset[size_t(l)],
                size_t(dims[size_t(l)]) * size_t(dims[size_t(l) + 1])};
    }
    std::span<const double> weights(int l) const {
        return {params.data() + w_offset[size_t(l)],
                size_t(dims[size_t(l)]) * size_t(dims[size_t(l) + 1])};
    }
    std::span<double> biases(int l) {
        return {params.data() + b_offset[size_t(l)], size_t(dims[size_t(l) + 1])};
    }
    std::span<const double> biases(int l) const {
        return {params.data() + b_offset[size_t(l)], size_t(dims[size_t(l) + 1])};
    }

    void bump_version() { ++version; }

    bool finite() const {
        for (double p : params)
            if (!std::isfinite(p)) return false;
        return true;
    }
};

// Initialization: first layer U[-1/fan_in, 1/fan_in]; later layers
// U[-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0] (biases use the same
// range as their layer's weights).
inline SirenNetwork make_siren(const SirenSpec& spec, uint64_t seed) {
    if (spec.input_dim < 1 || spec.output_dim < 1 || spec.hidden.empty())
        throw ConfigError("make_siren: bad layer configuration");
    tune_allocator();
    SirenNetwork net;
    net.spec = spec;
    net.dims.push_back(spec.input_dim);
    for (int h : spec.hidden) net.dims.push_back(h);
    net.dims.push_back(spec.output_dim);
    net.omega0.assign(size_t(net.sine_layers()), spec.omega0);

    size_t total = 0;
    for (int l = 0; l < net.layer_count(); ++l) {
        net.w_offset.push_back(total);
        total += size_t(net.dims[size_t(l)]) * size_t(net.dims[size_t(l) + 1]);
        net.b_offset.push_back(total);
        total += size_t(net.dims[size_t(l) + 1]);
    }
    net.params.assign(total, 0.0);

    Rng rng(derive_seed(seed, {0x5152454eULL}));
    for (int l = 0; l < net.layer_count(); ++l) {
        const double fan_in = double(net.dims[size_t(l)]);
        const double bound = (l == 0) ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / spec.omega0;
        for (double& w : net.weights(l)) w = uniform(rng, -bound, bound);
        for (double& b : net.biases(l)) b = uniform(rng, -bound, bound);
    }
    net.bump_version();
    return net;
}

// ------------------------------------------------------------- kernels

namespace detail {

// Z = X W + b, A = sin(w0 Z) (A/Z may alias nullptr when not needed)
inline void affine_kernel(const Mat& X, const double* W, const double* b, int out, Mat& Z,
                          Mat* act, double w0) {
    const int B = X.rows, in = X.cols;
    Z.ensure(B, out);
    if (act) act->ensure(B, out);
    parallel_for(B, [&](int64_t r0, int64_t r1) {
        std::vector<double> scaled(size_t(out), 0.0);
        for (int64_t r = r0; r < r1; ++r) {
            const double* x = X.row(int(r));
            double* z = Z.row(int(r));
            std::memcpy(z, b, size_t(out) * sizeof(double));
            for (int k = 0; k < in; ++k) {
                const double xk = x[k];
                const double* wrow = W + size_t(k) * size_t(out);
                for (int j = 0; j < out; ++j) z[j] += xk * wrow[j];
            }
            if (act) {
                double* a = act->row(int(r));
                for (int j = 0; j < out; ++j) scaled[size_t(j)] = w0 * z[j];
                vsin(scaled.data(), a, out);
            }
        }
    });
}

// dW += X^T D and db += colsum(D), reduced over fixed batch chunks so the
// result is independent of the thread count.
inline void weight_grad_kernel(const Mat& X, const Mat& D, double* dW, double* db) {
    const int B = X.rows, in = X.cols, out = D.cols;
    constexpr int kChunks = 16;
    const int64_t chunk = (B + kChunks - 1) / kChunks;
    const size_t wsz = size_t(in) * size_t(out), bsz = size_t(out);
    std::vector<double> partial(size_t(kChunks) * (wsz + bsz), 0.0);
    parallel_for(kChunks, [&](int64_t c0, int64_t c1) {
        for (int64_t c = c0; c < c1; ++c) {
            double* pw = partial.data() + size_t(c) * (wsz + bsz);
            double* pb = pw + wsz;
            const int64_t k0 = c * chunk, k1 = std::min<int64_t>(B, k0 + chunk);
            for (int64_t k = k0; k < k1; ++k) {
                const double* x = X.row(int(k));
                const double* d = D.row(int(k));
                for (int i = 0; i < in; ++i) {
                    const double xi = x[i];
                    double* row = pw + size_t(i) * size_t(out);
                    for (int j = 0; j < out; ++j) row[j] += xi * d[j];
                }
                for (int j = 0; j < out; ++j) pb[j] += d[j];
            }
        }
    });
    for (int c = 0; c < kChunks; ++c) {
        const double* pw = partial.data() + size_t(c) * (wsz + bsz);
        for (size_t i = 0; i < wsz; ++i) dW[i] += pw[i];
        for (size_t j = 0; j < bsz; ++j) db[j] += pw[wsz + j];
    }
}

// dX = D W^T, optionally fused with the sine backward factor
// (dX *= w0 cos(w0 pre)).
inline void input_grad_kernel(const Mat& D, const double* W, int in, Mat& dX, const Mat* pre,
                              double w0) {
    const int B = D.rows, out = D.cols;
    // transpose W (in x out) into WT (out x in); small, rebuilt per call
    std::vector<double> WT(size_t(in) * size_t(out));
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j)
            WT[size_t(j) * size_t(in) + size_t(i)] = W[size_t(i) * size_t(out) + size_t(j)];
    dX.ensure(B, in);
    parallel_for(B, [&](int64_t r0, int64_t r1) {
        std::vector<double> scaled(size_t(in), 0.0), cosv(size_t(in), 0.0);
        for (int64_t r = r0; r < r1; ++r) {
            const double* d = D.row(int(r));
            double* g = dX.row(int(r));
            std::memset(g, 0, size_t(in) * sizeof(double));
            for (int j = 0; j < out; ++j) {
                const double dj = d[j];
                const double* wt = WT.data() + size_t(j) * size_t(in);
                for (int i = 0; i < in; ++i) g[i] += dj * wt[i];
            }
            if (pre) {
                const double* z = pre->row(int(r));
                for (int i = 0; i < in; ++i) scaled[size_t(i)] = w0 * z[i];
                vcos(scaled.data(), cosv.data(), in);
                for (int i = 0; i < in; ++i) g[i] *= w0 * cosv[size_t(i)];
            }
        }
    });
}

} // namespace detail

// ------------------------------------------------------------- forward

struct GradientTape {
    Mat input;
    std::vector<Mat> pre; // pre-activation per sine layer
    std::vector<Mat> act; // sin(omega0 * pre) per sine layer
    Mat out_pre;          // final linear output before activation
    uint64_t net_version = 0;
    int batch = 0;
};

// Forward pass over a batch (rows = samples). With a tape, primal
// activations are recorded for a later backward(); tape buffers are reused
// across calls.
inline Mat forward(const SirenNetwork& net, const Mat& X, GradientTape* tape = nullptr) {
    if (X.cols != net.spec.input_dim)
        throw ContractViolation("forward: input dimension mismatch");
    tune_allocator();
    const int S = net.sine_layers();
    GradientTape local; // scratch when the caller does not need a tape
    GradientTape& t = tape ? *tape : local;
    if (int(t.pre.size()) != S) {
        t.pre.assign(size_t(S), Mat());
        t.act.assign(size_t(S), Mat());
    }
    if (tape) {
        t.input = X;
        t.net_version = net.version;
        t.batch = X.rows;
    }
    const Mat* cur = &X;
    for (int l = 0; l < S; ++l) {
        detail::affine_kernel(*cur, net.weights(l).data(), net.biases(l).data(),
                              net.dims[size_t(l) + 1], t.pre[size_t(l)], &t.act[size_t(l)],
                              net.omega0[size_t(l)]);
        cur = &t.act[size_t(l)];
    }
    Mat out;
    const int L = net.layer_count() - 1;
    detail::affine_kernel(*cur, net.weights(L).data(), net.biases(L).data(),
                          net.dims[size_t(L) + 1], tape ? t.out_pre : out, nullptr, 0.0);
    if (!tape) {
        // out already holds the linear output
    } else {
        out = t.out_pre;
    }
    if (net.spec.output_activation == OutputActivation::softplus) {
        parallel_for(out.rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                double* p = out.row(int(r));
                for (int j = 0; j < out.cols; ++j) p[j] = softplus(p[j]);
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- backward

struct SirenGradients {
    std::vector<double> flat; // same layout as SirenNetwork::params

    void ensure(const SirenNetwork& net) {
        if (flat.size() != net.params.size()) flat.assign(net.params.size(), 0.0);
    }
    void zero() { std::fill(flat.begin(), flat.end(), 0.0); }
    bool finite() const {
        for (double g : flat)
            if (!std::isfinite(g)) return false;
        return true;
    }
};

// Accumulates parameter gradients for d(loss)/d(outputs) = cotangents;
// optionally also returns gradients w.r.t. the inputs.
inline void backward(const SirenNetwork& net, const GradientTape& tape, const Mat& cotangents,
                     SirenGradients& grads, Mat* input_grads = nullptr) {
    if (tape.net_version != net.version)
        throw ContractViolation("backward: stale tape (parameters changed since forward)");
    if (cotangents.rows != tape.batch || cotangents.cols != net.spec.output_dim)
        throw ContractViolation("backward: cotangent shape mismatch");
    grads.ensure(net);
    tune_allocator();

    const int L = net.layer_count();
    Mat delta = cotangents;
    if (net.spec.output_activation == OutputActivation::softplus) {
        parallel_for(delta.rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                double* d = delta.row(int(r));
                const double* zp = tape.out_pre.row(int(r));
                for (int j = 0; j < delta.cols; ++j) d[j] *= sigmoid(zp[j]);
            }
        });
    }

    Mat dA;
    for (int l = L - 1; l >= 0; --l) {
        const Mat& below = (l == 0) ? tape.input : tape.act[size_t(l) - 1];
        detail::weight_grad_kernel(below, delta, grads.flat.data() + net.w_offset[size_t(l)],
                                   grads.flat.data() + net.b_offset[size_t(l)]);
        const bool need_below_grad = (l > 0) || (input_grads != nullptr);
        if (!need_below_grad) break;
        // dA = delta W^T, fused with the sine derivative of layer l-1
        const Mat* pre = l > 0 ? &tape.pre[size_t(l) - 1] : nullptr;
        const double w0 = l > 0 ? net.omega0[size_t(l) - 1] : 0.0;
        detail::input_grad_kernel(delta, net.weights(l).data(), net.dims[size_t(l)], dA, pre, w0);
        if (l == 0) {
            if (input_grads) *input_grads = std::move(dA);
            break;
        }
        std::swap(delta, dA);
    }
}

// ------------------------------------------------------------- optimizer

// Adam with bias correction. Returns false (and leaves parameters and
// moments untouched) if any gradient is non-finite.
struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t rejected = 0;

    void ensure(size_t n) {
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
    }
};

inline bool adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
                      double lr) {
    if (params.size() != grads.size()) throw ContractViolation("adam_step: shape mismatch");
    st.ensure(params.size());
    for (double g : grads)
        if (!std::isfinite(g)) {
            ++st.rejected;
            return false;
        }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
    return true;
}

// ------------------------------------------------------------- checkpoints
// Binary format: magic "SIR1"; u32 layer count L; u32 dims[L+1];
// u8 output activation; f64 omega0 per sine layer; f64 params (flat).

inline void save_network(const SirenNetwork& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_network: cannot open " + path);
    os.write("SIR1", 4);
    uint32_t L = uint32_t(net.layer_count());
    os.write(reinterpret_cast<const char*>(&L), 4);
    for (int d : net.dims) {
        uint32_t u = uint32_t(d);
        os.write(reinterpret_cast<const char*>(&u), 4);
    }
    uint8_t act = uint8_t(net.spec.output_activation);
    os.write(reinterpret_cast<const char*>(&act), 1);
    os.write(reinterpret_cast<const char*>(net.omega0.data()),
             std::streamsize(net.omega0.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(net.params.data()),
             std::streamsize(net.params.size() * sizeof(double)));
    if (!os) throw DataError("save_network: write failed for " + path);
}

inline SirenNetwork load_network(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingInputError("load_network: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SIR1", 4) != 0)
        throw DataError("load_network: bad magic in " + path);
    uint32_t L = 0;
    is.read(reinterpret_cast<char*>(&L), 4);
    if (!is || L < 2 || L > 64) throw DataError("load_network: bad layer count in " + path);
    std::vector<int> dims(L + 1);
    for (auto& d : dims) {
        uint32_t u = 0;
        is.read(reinterpret_cast<char*>(&u), 4);
        if (!is || u == 0) throw DataError("load_network: bad dims in " + path);
        d = int(u);
    }
    uint8_t act = 0;
    is.read(reinterpret_cast<char*>(&act), 1);
    if (!is || act > 1) throw DataError("load_network: bad activation code in " + path);

    SirenSpec spec;
    spec.input_dim = dims.front();
    spec.output_dim = dims.back();
    spec.hidden.assign(dims.begin() + 1, dims.end() - 1);
    spec.output_activation = OutputActivation(act);
    SirenNetwork net = make_siren(spec, 0);
    net.dims = dims;
    is.read(reinterpret_cast<char*>(net.omega0.data()),
            std::streamsize(net.omega0.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(net.params.data()),
            std::streamsize(net.params.size() * sizeof(double)));
    if (!is) throw DataError("load_network: truncated parameters in " + path);
    if (!net.omega0.empty()) net.spec.omega0 = net.omega0.front();
    net.bump_version();
    return net;
}

} // namespace t2forge

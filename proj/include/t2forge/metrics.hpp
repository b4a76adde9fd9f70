// Validation metrics: masked 3D SSIM against ground truth and region-wise
// T2 mean absolute error.
#pragma once

#include "t2forge/phantom.hpp"
#include "t2forge/relaxometry.hpp"

namespace t2forge {

namespace detail {

// separable Gaussian filter, zero-padded at the borders with weight
// renormalization (weights of in-bounds taps are rescaled to sum to 1)
inline void gaussian_filter3(const std::vector<double>& in, std::vector<double>& out,
                             const std::array<int, 3>& dims, const std::vector<double>& kernel) {
    const int r = int(kernel.size()) / 2;
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    std::vector<double> tmp1(in.size()), tmp2(in.size());
    auto idx = [&](int i, int j, int k) {
        return size_t(i) + size_t(nx) * (size_t(j) + size_t(ny) * size_t(k));
    };
    auto pass = [&](const std::vector<double>& src, std::vector<double>& dst, int axis) {
        const int n[3] = {nx, ny, nz};
        parallel_for(nz, [&](int64_t k0, int64_t k1) {
            for (int64_t k = k0; k < k1; ++k)
                for (int j = 0; j < ny; ++j)
                    for (int i = 0; i < nx; ++i) {
                        int c[3] = {i, j, int(k)};
                        double acc = 0, wsum = 0;
                        for (int d = -r; d <= r; ++d) {
                            int cc = c[axis] + d;
                            if (cc < 0 || cc >= n[axis]) continue;
                            int p[3] = {i, j, int(k)};
                            p[axis] = cc;
                            double w = kernel[size_t(d + r)];
                            acc += w * src[idx(p[0], p[1], p[2])];
                            wsum += w;
                        }
                        dst[idx(i, j, int(k))] = wsum > 0 ? acc / wsum : 0.0;
                    }
        });
    };
    pass(in, tmp1, 0);
    pass(tmp1, tmp2, 1);
    pass(tmp2, out, 2);
}

inline std::vector<double> gaussian_kernel(int radius, double sigma) {
    std::vector<double> k(size_t(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        sum += k[size_t(i + radius)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

} // namespace detail

// Mean local SSIM over a Gaussian-weighted 7^3 window (sigma 1.5),
// K1 = 0.01, K2 = 0.03 on a unit dynamic range. Callers rescale both
// images to [0,1] by the ground-truth dynamic range first (see
// ssim3d_against_reference). When a mask is given, the mean runs over
// masked voxels only. Symmetric in its two image arguments.
inline double ssim3d(const Volume& img, const Volume& ref, const Volume* mask = nullptr) {
    if (!img.grid.same_geometry(ref.grid))
        throw DataError("ssim3d: images are not on a common grid");
    if (mask && !mask->grid.same_geometry(ref.grid))
        throw DataError("ssim3d: mask grid mismatch");
    const size_t n = ref.grid.voxel_count();
    const std::vector<double>&a = img.data, &b = ref.data;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    auto kernel = detail::gaussian_kernel(3, 1.5);

    std::vector<double> mu_a(n), mu_b(n), aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    std::vector<double> f_aa(n), f_bb(n), f_ab(n);
    detail::gaussian_filter3(a, mu_a, ref.grid.dims, kernel);
    detail::gaussian_filter3(b, mu_b, ref.grid.dims, kernel);
    detail::gaussian_filter3(aa, f_aa, ref.grid.dims, kernel);
    detail::gaussian_filter3(bb, f_bb, ref.grid.dims, kernel);
    detail::gaussian_filter3(ab, f_ab, ref.grid.dims, kernel);

    double acc = 0;
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
        if (mask && mask->data[i] == 0.0) continue;
        double va = f_aa[i] - mu_a[i] * mu_a[i];
        double vb = f_bb[i] - mu_b[i] * mu_b[i];
        double cov = f_ab[i] - mu_a[i] * mu_b[i];
        double s = ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        acc += s;
        ++count;
    }
    if (count == 0) throw DataError("ssim3d: empty mask");
    return acc / double(count);
}

// Rescale both images to [0,1] by the reference dynamic range, then ssim3d.
inline double ssim3d_against_reference(const Volume& img, const Volume& ref,
                                       const Volume* mask = nullptr) {
    double lo = ref.min_value(), hi = ref.max_value();
    double range = hi - lo;
    if (range <= 0) range = 1.0;
    Volume a = img, b = ref;
    for (auto& v : a.data) v = (v - lo) / range;
    for (auto& v : b.data) v = (v - lo) / range;
    a.semantics = Semantics::t2_map; // rescaled values may be negative
    b.semantics = Semantics::t2_map;
    return ssim3d(a, b, mask);
}

// Mean |pred_t2 - gt_t2| in ms over voxels carrying `tissue` in the label
// map AND marked valid in the fit mask.
inline double t2_mae(const ParameterMap& pred, const Volume& gt_t2, const Volume& labels,
                     Tissue tissue) {
    if (!pred.t2.grid.same_geometry(gt_t2.grid) || !pred.t2.grid.same_geometry(labels.grid))
        throw DataError("t2_mae: grids are not aligned");
    double acc = 0;
    size_t count = 0;
    for (size_t i = 0; i < labels.data.size(); ++i) {
        if (uint8_t(labels.data[i]) != uint8_t(tissue)) continue;
        if (pred.mask.data[i] == 0.0) continue;
        acc += std::abs(pred.t2.data[i] - gt_t2.data[i]);
        ++count;
    }
    if (count == 0) throw DataError("t2_mae: no valid voxels for tissue");
    return acc / double(count);
}

// brain mask = non-background labels
inline Volume brain_mask_from_labels(const Volume& labels) {
    Volume mask(labels.grid, Semantics::label_map);
    for (size_t i = 0; i < labels.data.size(); ++i)
        mask.data[i] = labels.data[i] != 0.0 ? 1.0 : 0.0;
    return mask;
}

struct MetricReport {
    std::vector<double> tes;
    std::vector<double> ssim;             // per TE
    std::map<std::string, double> mae;    // per tissue name, ms
    std::map<std::string, size_t> voxels; // per tissue name
    // config echo
    std::string variant;
    int stacks_per_te = 0;
    uint64_t seed = 0;
    double alpha = 0;
};

} // namespace t2forge

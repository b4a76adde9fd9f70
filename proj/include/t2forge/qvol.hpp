// QVOL volume file format.
//
// Layout (little-endian):
//   bytes 0-3   magic "QVL1"
//   u32 dims[3]
//   f32 spacing[3], f32 origin[3], f32 orientation[9] (row-major)
//   u8 dtype (0 = f32)
//   u8 semantics (0 intensity, 1 t2 map, 2 m0 map, 3 label map)
//   payload: f32 * dims[0]*dims[1]*dims[2], x-fastest
#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "t2forge/geometry.hpp"

namespace t2forge {

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
bool read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return bool(is);
}
} // namespace detail

inline void write_qvol(const Volume& vol, const std::string& path) {
    vol.grid.validate();
    if (vol.data.size() != vol.grid.voxel_count())
        throw DataError("write_qvol: data length does not match dims");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_qvol: cannot open " + path);
    os.write("QVL1", 4);
    for (int d : vol.grid.dims) detail::write_pod(os, uint32_t(d));
    for (int i = 0; i < 3; ++i) detail::write_pod(os, float(vol.grid.spacing[i]));
    for (int i = 0; i < 3; ++i) detail::write_pod(os, float(vol.grid.origin[i]));
    for (double m : vol.grid.orientation.m) detail::write_pod(os, float(m));
    detail::write_pod(os, uint8_t(0)); // dtype f32
    detail::write_pod(os, uint8_t(vol.semantics));
    std::vector<float> payload(vol.data.size());
    for (size_t i = 0; i < vol.data.size(); ++i) payload[i] = float(vol.data[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             std::streamsize(payload.size() * sizeof(float)));
    if (!os) throw DataError("write_qvol: write failed for " + path);
}

inline Volume read_qvol(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingInputError("read_qvol: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "QVL1", 4) != 0)
        throw DataError("read_qvol: bad magic in " + path);
    Grid g;
    for (int i = 0; i < 3; ++i) {
        uint32_t d = 0;
        if (!detail::read_pod(is, d)) throw DataError("read_qvol: truncated header in " + path);
        g.dims[size_t(i)] = int(d);
    }
    auto read_f32 = [&](double& out) {
        float f = 0;
        if (!detail::read_pod(is, f)) throw DataError("read_qvol: truncated header in " + path);
        out = double(f);
    };
    for (int i = 0; i < 3; ++i) read_f32(g.spacing[i]);
    for (int i = 0; i < 3; ++i) read_f32(g.origin[i]);
    for (auto& m : g.orientation.m) {
        float f = 0;
        if (!detail::read_pod(is, f)) throw DataError("read_qvol: truncated header in " + path);
        m = double(f);
    }
    uint8_t dtype = 0, sem = 0;
    if (!detail::read_pod(is, dtype) || !detail::read_pod(is, sem))
        throw DataError("read_qvol: truncated header in " + path);
    if (dtype != 0) throw DataError("read_qvol: unsupported dtype in " + path);
    if (sem > 3) throw DataError("read_qvol: unknown semantics code in " + path);
    Volume vol;
    vol.grid = g;
    vol.semantics = Semantics(sem);
    const size_t n = g.voxel_count();
    std::vector<float> payload(n);
    is.read(reinterpret_cast<char*>(payload.data()), std::streamsize(n * sizeof(float)));
    if (size_t(is.gcount()) != n * sizeof(float))
        throw DataError("read_qvol: truncated payload in " + path);
    vol.data.resize(n);
    for (size_t i = 0; i < n; ++i) vol.data[i] = double(payload[i]);
    return vol;
}

} // namespace t2forge

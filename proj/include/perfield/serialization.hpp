// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/background.hpp"
#include "perfield/common.hpp"
#include "perfield/grid.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <optional>

namespace perfield {

// ---------------------------------------------------------------------------
// Container layout (little-endian throughout)
//
//   "PRFX"                 4 bytes
//   version                u32 (= 1)
//   resolution             u32 x 3
//   bounds                 f32 x 6 (min xyz, max xyz)
//   voxel_count            u64
//   has_background         u8
//   sh quantisation        27 x (f32 scale, f32 offset)
//   coords                 voxel_count x u16 x 3, lexicographic (x, y, z)
//   density                voxel_count x f32
//   sh_q                   voxel_count x u8 x 27
//   [background block]
//     layers, height       u32 x 2
//     brightness           f32
//     center               f32 x 3
//     radii                layers x f32
//     colour quantisation  3 x (f32 scale, f32 offset)
//     colour_q             texels x u8 x 3
//     density              texels x f32
//   crc32                  u32 over every preceding byte

inline constexpr std::array<char, 4> kMagic = {'P', 'R', 'F', 'X'};
inline constexpr uint32_t kFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class BadMagic : public FormatError {
public:
    BadMagic() : FormatError("not a scene container (bad magic)") {}
};
class VersionMismatch : public FormatError {
public:
    explicit VersionMismatch(uint32_t v) : FormatError("unsupported container version " + std::to_string(v)) {}
};
class ChecksumMismatch : public FormatError {
public:
    ChecksumMismatch() : FormatError("container checksum mismatch") {}
};
class LengthMismatch : public FormatError {
public:
    explicit LengthMismatch(const std::string &what) : FormatError("container length mismatch: " + what) {}
};

/// Affine uint8 code: value = offset + scale * q.
struct QuantParams {
    float scale = 1.0f;
    float offset = 0.0f;
    bool operator==(const QuantParams &) const = default;
};

struct QuantizedBackground {
    uint32_t n_layers = 0;
    uint32_t height = 0;
    float brightness = 0.5f;
    std::array<float, 3> center{};
    std::vector<float> radii;
    std::array<QuantParams, 3> color_params{};
    std::vector<uint8_t> color_q; // texels x 3
    std::vector<float> density;   // texels

    std::size_t texel_count() const { return static_cast<std::size_t>(n_layers) * height * 2 * height; }
    bool operator==(const QuantizedBackground &) const = default;
};

struct QuantizedScene {
    std::array<uint32_t, 3> resolution{1, 1, 1};
    std::array<float, 6> bounds{0, 0, 0, 1, 1, 1};
    std::array<QuantParams, kShCoeffs> sh_params{};
    std::vector<std::array<uint16_t, 3>> coords;
    std::vector<float> density;
    std::vector<uint8_t> sh_q; // voxels x 27
    std::optional<QuantizedBackground> background;

    std::size_t voxel_count() const { return coords.size(); }
    bool operator==(const QuantizedScene &) const = default;
};

// ---------------------------------------------------------------------------
// Quantisation

/// Range code for values in [lo, hi]. The float offset is rounded down and
/// the scale rounded up so every value lies inside the representable span
/// and the reconstruction error is at most scale / 2.
inline QuantParams quant_params(double lo, double hi) {
    QuantParams p;
    if (!(hi > lo)) {
        p.scale = 1.0f;
        p.offset = static_cast<float>(lo);
        return p;
    }
    float off = static_cast<float>(lo);
    if (static_cast<double>(off) > lo) off = std::nextafter(off, -std::numeric_limits<float>::infinity());
    float scale = static_cast<float>((hi - static_cast<double>(off)) / 255.0);
    while (static_cast<double>(off) + 255.0 * static_cast<double>(scale) < hi)
        scale = std::nextafter(scale, std::numeric_limits<float>::infinity());
    p.offset = off;
    p.scale = scale;
    return p;
}

inline uint8_t quantize_value(double v, const QuantParams &p) {
    const double q = std::round((v - static_cast<double>(p.offset)) / static_cast<double>(p.scale));
    return static_cast<uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline double dequantize_value(uint8_t q, const QuantParams &p) {
    return static_cast<double>(p.offset) + static_cast<double>(p.scale) * q;
}

namespace detail {

template <typename Get>
QuantParams channel_params(std::size_t n, Get &&get) {
    if (n == 0) return {};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = get(i);
        if (!std::isfinite(v)) throw InvalidArgument("cannot quantise non-finite parameters");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return quant_params(lo, hi);
}

} // namespace detail

/// Packs a grid (and optional background) into the container form. Voxels
/// are emitted in lexicographic (x, y, z) order; densities are stored as
/// float32 without quantisation.
inline QuantizedScene quantize(const SparseVoxelGrid &g, const BackgroundModel *bg = nullptr) {
    for (int a = 0; a < 3; ++a)
        if (g.resolution[a] > 65535) throw InvalidArgument("resolution exceeds the container's u16 coordinates");
    QuantizedScene q;
    for (int a = 0; a < 3; ++a) {
        q.resolution[a] = static_cast<uint32_t>(g.resolution[a]);
        q.bounds[a] = static_cast<float>(g.world_min[a]);
        q.bounds[3 + a] = static_cast<float>(g.world_max[a]);
    }
    const std::size_t n = g.slot_count();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::array<uint16_t, 3>> cells(n);
    for (std::size_t s = 0; s < n; ++s) {
        const Vec3i c = g.cell_of(g.slot_cell[s]);
        cells[s] = {static_cast<uint16_t>(c.x()), static_cast<uint16_t>(c.y()), static_cast<uint16_t>(c.z())};
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cells[a] < cells[b]; });

    for (int k = 0; k < kShCoeffs; ++k)
        q.sh_params[k] = detail::channel_params(n, [&](std::size_t s) { return g.sh_of(s)[k]; });
    q.coords.resize(n);
    q.density.resize(n);
    q.sh_q.resize(n * kShCoeffs);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = order[i];
        q.coords[i] = cells[s];
        q.density[i] = static_cast<float>(g.density[s]);
        for (int k = 0; k < kShCoeffs; ++k) q.sh_q[i * kShCoeffs + k] = quantize_value(g.sh_of(s)[k], q.sh_params[k]);
    }

    if (bg) {
        QuantizedBackground b;
        b.n_layers = static_cast<uint32_t>(bg->n_layers);
        b.height = static_cast<uint32_t>(bg->height);
        b.brightness = static_cast<float>(bg->brightness);
        for (int a = 0; a < 3; ++a) b.center[a] = static_cast<float>(bg->center[a]);
        for (double r : bg->radii) b.radii.push_back(static_cast<float>(r));
        const std::size_t nt = bg->texel_count();
        for (int c = 0; c < 3; ++c)
            b.color_params[c] = detail::channel_params(nt, [&](std::size_t t) { return bg->texel(t)[c]; });
        b.color_q.resize(nt * 3);
        b.density.resize(nt);
        for (std::size_t t = 0; t < nt; ++t) {
            for (int c = 0; c < 3; ++c) b.color_q[t * 3 + c] = quantize_value(bg->texel(t)[c], b.color_params[c]);
            b.density[t] = static_cast<float>(bg->texel(t)[3]);
        }
        q.background = std::move(b);
    }
    return q;
}

/// Rebuilds the grid from its container form.
inline SparseVoxelGrid dequantize_grid(const QuantizedScene &q) {
    const Vec3i res(static_cast<int>(q.resolution[0]), static_cast<int>(q.resolution[1]),
                    static_cast<int>(q.resolution[2]));
    const Vec3 lo(q.bounds[0], q.bounds[1], q.bounds[2]), hi(q.bounds[3], q.bounds[4], q.bounds[5]);
    SparseVoxelGrid g = make_empty_grid(res, lo, hi);
    std::vector<int64_t> cells(q.voxel_count());
    for (std::size_t i = 0; i < q.voxel_count(); ++i) cells[i] = g.linear(q.coords[i][0], q.coords[i][1], q.coords[i][2]);
    // Slots follow the grid's linear order; map each back to its container row.
    std::vector<std::size_t> row(cells.size());
    std::iota(row.begin(), row.end(), std::size_t{0});
    std::sort(row.begin(), row.end(), [&](std::size_t a, std::size_t b) { return cells[a] < cells[b]; });
    std::vector<int64_t> sorted(cells.size());
    for (std::size_t s = 0; s < row.size(); ++s) sorted[s] = cells[row[s]];
    g = make_grid_from_cells(res, lo, hi, sorted, 0.0);
    for (std::size_t s = 0; s < row.size(); ++s) {
        const std::size_t i = row[s];
        g.density[s] = static_cast<double>(q.density[i]);
        for (int k = 0; k < kShCoeffs; ++k) g.sh_of(s)[k] = dequantize_value(q.sh_q[i * kShCoeffs + k], q.sh_params[k]);
    }
    return g;
}

inline std::optional<BackgroundModel> dequantize_background(const QuantizedScene &q) {
    if (!q.background) return std::nullopt;
    const QuantizedBackground &b = *q.background;
    BackgroundModel bg;
    bg.n_layers = static_cast<int>(b.n_layers);
    bg.height = static_cast<int>(b.height);
    bg.brightness = b.brightness;
    bg.center = Vec3(b.center[0], b.center[1], b.center[2]);
    for (float r : b.radii) bg.radii.push_back(r);
    bg.texels.assign(bg.texel_count() * kBgChannels, 0.0);
    for (std::size_t t = 0; t < bg.texel_count(); ++t) {
        double *p = bg.texel(t);
        for (int c = 0; c < 3; ++c) p[c] = dequantize_value(b.color_q[t * 3 + c], b.color_params[c]);
        p[3] = b.density[t];
    }
    return bg;
}

/// Binary search over the sorted coordinates; returns the container row of
/// voxel (x, y, z) or -1 when it is not stored.
inline int64_t find_voxel(const QuantizedScene &q, uint16_t x, uint16_t y, uint16_t z) {
    const std::array<uint16_t, 3> key{x, y, z};
    const auto it = std::lower_bound(q.coords.begin(), q.coords.end(), key);
    if (it == q.coords.end() || *it != key) return -1;
    return it - q.coords.begin();
}

// ---------------------------------------------------------------------------
// Encoding

namespace detail {

class ByteWriter {
public:
    void u8(uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) { le(v, 2); }
    void u32(uint32_t v) { le(v, 4); }
    void u64(uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(const void *p, std::size_t n) { out_.append(static_cast<const char *>(p), n); }
    std::string &str() { return out_; }

private:
    void le(uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

class ByteReader {
public:
    ByteReader(const std::string &bytes, std::size_t limit) : b_(bytes), limit_(limit) {}
    uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
    uint16_t u16() { return static_cast<uint16_t>(le(2)); }
    uint32_t u32() { return static_cast<uint32_t>(le(4)); }
    uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    void bytes(void *dst, std::size_t n) {
        const char *p = take(n);
        if (n) std::memcpy(dst, p, n);
    }
    void skip(std::size_t n) { take(n); }
    /// Fails before any allocation when `n` items of `size` bytes cannot fit.
    void require(uint64_t n, uint64_t size, const char *what) {
        if (size != 0 && n > (limit_ - pos_) / size) throw LengthMismatch(std::string(what) + " exceeds file size");
    }
    std::size_t pos() const { return pos_; }

private:
    const char *take(std::size_t n) {
        if (n > limit_ - pos_) throw LengthMismatch("unexpected end of data");
        const char *p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    uint64_t le(int n) {
        const char *p = take(static_cast<std::size_t>(n));
        uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
        return v;
    }
    const std::string &b_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

inline uint32_t crc32_of(const char *data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, reinterpret_cast<const Bytef *>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<uint32_t>(crc);
}

} // namespace detail

/// Checks the container invariants; throws InvalidArgument on violation.
inline void validate_scene(const QuantizedScene &q) {
    const std::size_t n = q.coords.size();
    if (q.density.size() != n || q.sh_q.size() != n * kShCoeffs)
        throw InvalidArgument("scene arrays disagree with the voxel count");
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a)
            if (q.coords[i][a] >= q.resolution[a]) throw InvalidArgument("voxel coordinate outside the resolution");
        if (i > 0 && !(q.coords[i - 1] < q.coords[i])) throw InvalidArgument("voxel coordinates not strictly sorted");
    }
    if (q.background) {
        const QuantizedBackground &b = *q.background;
        if (b.radii.size() != b.n_layers || b.color_q.size() != b.texel_count() * 3 || b.density.size() != b.texel_count())
            throw InvalidArgument("background arrays disagree with its shape");
    }
}

inline std::string encode_scene(const QuantizedScene &q) {
    validate_scene(q);
    detail::ByteWriter w;
    w.bytes(kMagic.data(), kMagic.size());
    w.u32(kFormatVersion);
    for (uint32_t r : q.resolution) w.u32(r);
    for (float b : q.bounds) w.f32(b);
    w.u64(q.voxel_count());
    w.u8(q.background ? 1 : 0);
    for (const QuantParams &p : q.sh_params) {
        w.f32(p.scale);
        w.f32(p.offset);
    }
    for (const auto &c : q.coords)
        for (uint16_t v : c) w.u16(v);
    for (float d : q.density) w.f32(d);
    w.bytes(q.sh_q.data(), q.sh_q.size());
    if (q.background) {
        const QuantizedBackground &b = *q.background;
        w.u32(b.n_layers);
        w.u32(b.height);
        w.f32(b.brightness);
        for (float c : b.center) w.f32(c);
        for (float r : b.radii) w.f32(r);
        for (const QuantParams &p : b.color_params) {
            w.f32(p.scale);
            w.f32(p.offset);
        }
        w.bytes(b.color_q.data(), b.color_q.size());
        for (float d : b.density) w.f32(d);
    }
    const uint32_t crc = detail::crc32_of(w.str().data(), w.str().size());
    w.u32(crc);
    return std::move(w.str());
}

/// Parses a container. Each failure mode raises its own FormatError subtype;
/// structural checks run before the checksum so a truncated file reports a
/// length error.
inline QuantizedScene decode_scene(const std::string &bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) throw BadMagic();
    if (bytes.size() < 8) throw LengthMismatch("missing version");
    detail::ByteReader r(bytes, bytes.size() < 12 ? bytes.size() : bytes.size() - 4);
    uint32_t version;
    {
        detail::ByteReader head(bytes, bytes.size());
        head.skip(4);
        version = head.u32();
    }
    if (version != kFormatVersion) throw VersionMismatch(version);
    if (bytes.size() < 12) throw LengthMismatch("file too short");

    QuantizedScene q;
    r.skip(8);
    for (auto &v : q.resolution) v = r.u32();
    for (auto &b : q.bounds) b = r.f32();
    const uint64_t n = r.u64();
    const uint8_t has_bg = r.u8();
    if (has_bg > 1) throw FormatError("invalid background flag");
    for (auto &p : q.sh_params) {
        p.scale = r.f32();
        p.offset = r.f32();
    }
    r.require(n, 6 + 4 + kShCoeffs, "voxel arrays");
    q.coords.resize(n);
    for (auto &c : q.coords)
        for (auto &v : c) v = r.u16();
    q.density.resize(n);
    for (auto &d : q.density) d = r.f32();
    q.sh_q.resize(n * kShCoeffs);
    r.bytes(q.sh_q.data(), q.sh_q.size());
    if (has_bg) {
        QuantizedBackground b;
        b.n_layers = r.u32();
        b.height = r.u32();
        b.brightness = r.f32();
        for (auto &c : b.center) c = r.f32();
        r.require(b.n_layers, 4, "background radii");
        b.radii.resize(b.n_layers);
        for (auto &x : b.radii) x = r.f32();
        for (auto &p : b.color_params) {
            p.scale = r.f32();
            p.offset = r.f32();
        }
        const uint64_t nt = static_cast<uint64_t>(b.n_layers) * b.height * 2ull * b.height;
        r.require(nt, 3 + 4, "background texels");
        b.color_q.resize(nt * 3);
        r.bytes(b.color_q.data(), b.color_q.size());
        b.density.resize(nt);
        for (auto &d : b.density) d = r.f32();
        q.background = std::move(b);
    }
    if (r.pos() + 4 != bytes.size()) throw LengthMismatch("trailing bytes or truncated payload");
    detail::ByteReader tail(bytes, bytes.size());
    tail.skip(r.pos());
    const uint32_t stored = tail.u32();
    if (stored != detail::crc32_of(bytes.data(), r.pos())) throw ChecksumMismatch();
    try {
        validate_scene(q);
    } catch (const InvalidArgument &e) {
        throw FormatError(e.what());
    }
    return q;
}

inline void write_scene(const std::filesystem::path &path, const QuantizedScene &q) {
    write_file_atomic(path, encode_scene(q));
}

inline QuantizedScene read_scene(const std::filesystem::path &path) { return decode_scene(read_file(path)); }

// ---------------------------------------------------------------------------
// Storage accounting

struct StorageReport {
    std::size_t header = 0;      // fixed header and SH quantisation parameters
    std::size_t coords = 0;
    std::size_t density = 0;
    std::size_t sh = 0;
    std::size_t background = 0;
    std::size_t checksum = 4;
    std::size_t total = 0;
    double dense_baseline = 0.0; // 28 float32 per cell of the full grid
    double ratio = 0.0;          // total / dense_baseline
};

inline constexpr std::size_t kHeaderBytes = 4 + 4 + 12 + 24 + 8 + 1 + kShCoeffs * 8;

inline StorageReport storage_report(const QuantizedScene &q) {
    StorageReport r;
    const std::size_t n = q.voxel_count();
    r.header = kHeaderBytes;
    r.coords = n * 6;
    r.density = n * 4;
    r.sh = n * kShCoeffs;
    if (q.background) {
        const QuantizedBackground &b = *q.background;
        r.background = 4 + 4 + 4 + 12 + 4 * b.radii.size() + 3 * 8 + b.color_q.size() + 4 * b.density.size();
    }
    r.total = r.header + r.coords + r.density + r.sh + r.background + r.checksum;
    const double cells = static_cast<double>(q.resolution[0]) * q.resolution[1] * q.resolution[2];
    r.dense_baseline = cells * kVoxelParams * 4.0;
    r.ratio = static_cast<double>(r.total) / r.dense_baseline;
    return r;
}

} // namespace perfield

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "limis/core.hpp"

namespace limis {

/// CT volume in HU, x-fastest voxel order (the NIfTI storage order).
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    Volume() = default;
    Volume(std::array<int, 3> d, std::array<double, 3> s, std::vector<float> voxels)
        : dims(d), spacing(s), data(std::move(voxels)) {
        for (int k = 0; k < 3; ++k) {
            if (dims[k] <= 0) throw Error(ErrorCode::InvalidArgument, "volume dims must be positive");
            if (!(spacing[k] > 0.0)) throw Error(ErrorCode::InvalidArgument, "volume spacing must be positive");
        }
        if (data.size() != voxel_count()) {
            throw Error(ErrorCode::DimensionMismatch, "voxel count does not match dims");
        }
    }

    std::size_t voxel_count() const noexcept {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    float& operator()(int x, int y, int z) { return data[index(x, y, z)]; }
    float operator()(int x, int y, int z) const { return data[index(x, y, z)]; }

    friend bool operator==(const Volume&, const Volume&) = default;

  private:
    std::size_t index(int x, int y, int z) const noexcept {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
};

/// Transversal plane z as a 2-D image; in-plane spacing is (row=sy, col=sx).
inline HuImage slice_transversal(const Volume& v, int z) {
    if (z < 0 || z >= v.dims[2]) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "slice " + std::to_string(z) + " outside [0," + std::to_string(v.dims[2]) + ")");
    }
    const std::size_t plane = static_cast<std::size_t>(v.dims[0]) * v.dims[1];
    std::vector<float> pixels(v.data.begin() + static_cast<std::ptrdiff_t>(plane * z),
                              v.data.begin() + static_cast<std::ptrdiff_t>(plane * (z + 1)));
    return HuImage(FloatGrid(v.dims[0], v.dims[1], std::move(pixels)), Spacing{v.spacing[1], v.spacing[0]});
}

// NIfTI-1 single-file subset. Header field offsets (bytes):
//   0 sizeof_hdr(int32=348)  40 dim[8](int16)  70 datatype(int16)  72 bitpix(int16)
//   76 pixdim[8](float32)   108 vox_offset(float32)  112 scl_slope  116 scl_inter
//   344 magic "n+1\0"
namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::int16_t kInt16 = 4;
inline constexpr std::int16_t kFloat32 = 16;

namespace detail {

class ByteReader {
  public:
    ByteReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <typename T>
    T read(std::size_t offset) const {
        if (offset + sizeof(T) > bytes_.size()) throw Error(ErrorCode::TruncatedFile, "header truncated");
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
        if (swap_) std::reverse(raw.begin(), raw.end());
        T value;
        std::memcpy(&value, raw.data(), sizeof(T));
        return value;
    }

  private:
    std::span<const std::uint8_t> bytes_;
    bool swap_;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, std::size_t offset, T value, bool big_endian) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if (big_endian != (std::endian::native == std::endian::big)) std::reverse(raw.begin(), raw.end());
    std::memcpy(out.data() + offset, raw.data(), sizeof(T));
}

} // namespace detail

/// Parses an uncompressed .nii image. Byte order is detected from sizeof_hdr.
inline Volume read(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) throw Error(ErrorCode::TruncatedFile, "file shorter than the 348-byte header");
    const bool native_ok = detail::ByteReader(bytes, false).read<std::int32_t>(0) == 348;
    const bool swapped_ok = detail::ByteReader(bytes, true).read<std::int32_t>(0) == 348;
    if (!native_ok && !swapped_ok) throw Error(ErrorCode::BadMagic, "sizeof_hdr is not 348 in either byte order");
    const detail::ByteReader hdr(bytes, !native_ok);

    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
        throw Error(ErrorCode::BadMagic, "magic is not \"n+1\"");
    }
    const auto ndim = hdr.read<std::int16_t>(40);
    if (ndim != 3) throw Error(ErrorCode::UnsupportedDims, "dim[0] = " + std::to_string(ndim) + ", expected 3");
    std::array<int, 3> dims{};
    std::array<double, 3> spacing{};
    for (int k = 0; k < 3; ++k) {
        dims[k] = hdr.read<std::int16_t>(42 + 2 * k);
        spacing[k] = hdr.read<float>(80 + 4 * k);
        if (dims[k] <= 0) throw Error(ErrorCode::UnsupportedDims, "non-positive dimension");
        if (!(spacing[k] > 0.0)) throw Error(ErrorCode::InvalidArgument, "non-positive pixdim");
    }
    const auto datatype = hdr.read<std::int16_t>(70);
    std::size_t bytes_per_voxel = 0;
    if (datatype == kInt16) bytes_per_voxel = 2;
    else if (datatype == kFloat32) bytes_per_voxel = 4;
    else throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(datatype));

    const float vox_offset_f = hdr.read<float>(108);
    if (!(vox_offset_f >= static_cast<float>(kHeaderSize))) {
        throw Error(ErrorCode::InvalidArgument, "vox_offset before end of header");
    }
    const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
    float slope = hdr.read<float>(112);
    float inter = hdr.read<float>(116);
    if (!std::isfinite(slope)) slope = 0.0f;
    if (!std::isfinite(inter)) inter = 0.0f;

    const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    if (bytes.size() < vox_offset + count * bytes_per_voxel) {
        throw Error(ErrorCode::TruncatedFile, "voxel data shorter than declared");
    }
    const detail::ByteReader body(bytes.subspan(vox_offset), !native_ok);
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        float v = datatype == kInt16 ? static_cast<float>(body.read<std::int16_t>(i * 2))
                                     : body.read<float>(i * 4);
        if (slope != 0.0f) v = v * slope + inter;
        data[i] = v;
    }
    return Volume(dims, spacing, std::move(data));
}

struct WriteOptions {
    std::int16_t datatype = kFloat32;
    bool big_endian = false;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
};

/// Writes header + 4 zero extension bytes + voxels (vox_offset 352). With
/// datatype int16 the voxel values are stored rounded; pass a slope to rescale.
inline std::vector<std::uint8_t> write(const Volume& v, const WriteOptions& opts = {}) {
    if (opts.datatype != kInt16 && opts.datatype != kFloat32) {
        throw Error(ErrorCode::UnsupportedDatatype, "writer supports int16 and float32");
    }
    for (int d : v.dims) {
        if (d > 32767) throw Error(ErrorCode::UnsupportedDims, "dimension exceeds int16 range");
    }
    const std::size_t bpv = opts.datatype == kInt16 ? 2 : 4;
    std::vector<std::uint8_t> out(352 + v.voxel_count() * bpv, 0);
    const bool be = opts.big_endian;
    detail::put<std::int32_t>(out, 0, 348, be);
    detail::put<std::int16_t>(out, 40, 3, be);
    for (int k = 0; k < 3; ++k) detail::put<std::int16_t>(out, 42 + 2 * k, static_cast<std::int16_t>(v.dims[k]), be);
    for (int k = 3; k < 7; ++k) detail::put<std::int16_t>(out, 42 + 2 * k, 1, be);
    detail::put<std::int16_t>(out, 70, opts.datatype, be);
    detail::put<std::int16_t>(out, 72, static_cast<std::int16_t>(bpv * 8), be);
    detail::put<float>(out, 76, 1.0f, be);
    for (int k = 0; k < 3; ++k) detail::put<float>(out, 80 + 4 * k, static_cast<float>(v.spacing[k]), be);
    detail::put<float>(out, 108, 352.0f, be);
    detail::put<float>(out, 112, opts.scl_slope, be);
    detail::put<float>(out, 116, opts.scl_inter, be);
    std::memcpy(out.data() + 344, "n+1\0", 4);
    for (std::size_t i = 0; i < v.voxel_count(); ++i) {
        if (opts.datatype == kInt16) {
            float stored = v.data[i];
            if (opts.scl_slope != 0.0f) stored = (stored - opts.scl_inter) / opts.scl_slope;
            detail::put<std::int16_t>(out, 352 + 2 * i, static_cast<std::int16_t>(std::lround(stored)), be);
        } else {
            detail::put<float>(out, 352 + 4 * i, v.data[i], be);
        }
    }
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Volume read_file(const std::string& path) { return read(read_file_bytes(path)); }

inline void write_file(const std::string& path, const Volume& v, const WriteOptions& opts = {}) {
    const auto bytes = write(v, opts);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace nifti

inline Volume read_nifti(std::span<const std::uint8_t> bytes) { return nifti::read(bytes); }

} // namespace limis

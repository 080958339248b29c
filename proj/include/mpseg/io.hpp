#pragma once
#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>
#include "json.hpp"

#include "mpseg/errors.hpp"
#include "mpseg/geometry.hpp"
#include "mpseg/stats.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

static_assert(std::endian::native == std::endian::little,
              "file I/O assumes a little-endian host");

namespace detail {

// ---------------------------------------------------------------------------
// Byte-level helpers
// ---------------------------------------------------------------------------

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    in.seekg(0, std::ios::end);
    auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(bytes.data(), size);
    if (!in) throw DataError("failed reading file: " + path.string());
    return bytes;
}

inline bool is_gzip(const std::vector<char>& bytes) noexcept {
    return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
           static_cast<unsigned char>(bytes[1]) == 0x8b;
}

inline std::vector<char> gunzip(const std::vector<char>& compressed) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK)
        throw DataError("zlib init failed");
    std::vector<char> out;
    out.reserve(compressed.size() * 4);
    std::vector<char> buffer(1 << 16);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
    strm.avail_in = static_cast<uInt>(compressed.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = reinterpret_cast<Bytef*>(buffer.data());
        strm.avail_out = static_cast<uInt>(buffer.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw FormatError("gzip stream corrupt");
        }
        out.insert(out.end(), buffer.data(),
                   buffer.data() + (buffer.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

template <class T>
T read_at(const std::vector<char>& bytes, std::size_t offset) {
    if (offset + sizeof(T) > bytes.size()) throw FormatError("file truncated");
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

template <class T>
void write_at(std::vector<char>& bytes, std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

// ---------------------------------------------------------------------------
// NIfTI-1 subset
// ---------------------------------------------------------------------------
// Single-file little-endian NIfTI-1: 348-byte header + data at vox_offset.
// Supported datatypes: 2 (uint8), 4 (int16), 16 (float32); dim[0] in {3,4};
// a valid sform (preferred) or qform is required.

inline constexpr std::int16_t kNiftiUint8 = 2;
inline constexpr std::int16_t kNiftiInt16 = 4;
inline constexpr std::int16_t kNiftiFloat32 = 16;

struct NiftiHeader {
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    std::array<float, 8> pixdim{};
    float vox_offset = 352.0f;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 3> quatern{};   // b, c, d
    std::array<float, 3> qoffset{};   // x, y, z
    std::array<float, 12> srow{};     // srow_x, srow_y, srow_z
};

inline NiftiHeader parse_nifti_header(const std::vector<char>& bytes) {
    if (bytes.size() < 348) throw FormatError("NIfTI header shorter than 348 bytes");
    auto sizeof_hdr = read_at<std::int32_t>(bytes, 0);
    if (sizeof_hdr != 348) {
        if (sizeof_hdr == 0x5c010000)  // 348 byte-swapped
            throw FormatError("big-endian NIfTI files are not supported");
        throw FormatError("not a NIfTI-1 file (sizeof_hdr != 348)");
    }
    char magic[4];
    std::memcpy(magic, bytes.data() + 344, 4);
    if (!(magic[0] == 'n' && magic[1] == '+' && magic[2] == '1' && magic[3] == '\0'))
        throw FormatError("unsupported NIfTI magic (only single-file 'n+1')");

    NiftiHeader h;
    for (std::size_t i = 0; i < 8; ++i) {
        h.dim[i] = read_at<std::int16_t>(bytes, 40 + 2 * i);
        h.pixdim[i] = read_at<float>(bytes, 76 + 4 * i);
    }
    h.datatype = read_at<std::int16_t>(bytes, 70);
    h.bitpix = read_at<std::int16_t>(bytes, 72);
    h.vox_offset = read_at<float>(bytes, 108);
    h.scl_slope = read_at<float>(bytes, 112);
    h.scl_inter = read_at<float>(bytes, 116);
    h.qform_code = read_at<std::int16_t>(bytes, 252);
    h.sform_code = read_at<std::int16_t>(bytes, 254);
    for (std::size_t i = 0; i < 3; ++i) {
        h.quatern[i] = read_at<float>(bytes, 256 + 4 * i);
        h.qoffset[i] = read_at<float>(bytes, 268 + 4 * i);
    }
    for (std::size_t i = 0; i < 12; ++i) h.srow[i] = read_at<float>(bytes, 280 + 4 * i);
    return h;
}

inline Affine4 affine_from_sform(const NiftiHeader& h) {
    Affine4 a;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) a.at(r, c) = h.srow[r * 4 + c];
    return a;
}

inline Affine4 affine_from_qform(const NiftiHeader& h) {
    double b = h.quatern[0], c = h.quatern[1], d = h.quatern[2];
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
    double qfac = h.pixdim[0] == -1.0f ? -1.0 : 1.0;
    double sx = h.pixdim[1], sy = h.pixdim[2], sz = h.pixdim[3] * qfac;

    Affine4 m;
    m.at(0, 0) = (a * a + b * b - c * c - d * d) * sx;
    m.at(0, 1) = (2 * b * c - 2 * a * d) * sy;
    m.at(0, 2) = (2 * b * d + 2 * a * c) * sz;
    m.at(1, 0) = (2 * b * c + 2 * a * d) * sx;
    m.at(1, 1) = (a * a + c * c - b * b - d * d) * sy;
    m.at(1, 2) = (2 * c * d - 2 * a * b) * sz;
    m.at(2, 0) = (2 * b * d - 2 * a * c) * sx;
    m.at(2, 1) = (2 * c * d + 2 * a * b) * sy;
    m.at(2, 2) = (a * a + d * d - b * b - c * c) * sz;
    m.at(0, 3) = h.qoffset[0];
    m.at(1, 3) = h.qoffset[1];
    m.at(2, 3) = h.qoffset[2];
    return m;
}

inline Affine4 nifti_affine(const NiftiHeader& h) {
    if (h.sform_code > 0) return affine_from_sform(h);
    if (h.qform_code > 0) return affine_from_qform(h);
    throw GeometryError("NIfTI file carries neither a valid sform nor qform");
}

/// Raw sample values in file (Fortran) order converted to double, with the
/// NIfTI scl slope/intercept applied when meaningful.
inline std::vector<double> nifti_read_samples(const std::vector<char>& bytes,
                                              const NiftiHeader& h, std::size_t count) {
    auto offset = static_cast<std::size_t>(h.vox_offset);
    if (offset < 348) throw FormatError("vox_offset below header size");
    std::vector<double> out(count);
    switch (h.datatype) {
        case kNiftiUint8:
            if (offset + count > bytes.size()) throw FormatError("NIfTI data truncated");
            for (std::size_t i = 0; i < count; ++i)
                out[i] = static_cast<double>(read_at<std::uint8_t>(bytes, offset + i));
            break;
        case kNiftiInt16:
            if (offset + 2 * count > bytes.size()) throw FormatError("NIfTI data truncated");
            for (std::size_t i = 0; i < count; ++i)
                out[i] = static_cast<double>(read_at<std::int16_t>(bytes, offset + 2 * i));
            break;
        case kNiftiFloat32:
            if (offset + 4 * count > bytes.size()) throw FormatError("NIfTI data truncated");
            for (std::size_t i = 0; i < count; ++i)
                out[i] = static_cast<double>(read_at<float>(bytes, offset + 4 * i));
            break;
        default:
            throw FormatError("unsupported NIfTI datatype " + std::to_string(h.datatype) +
                              " (supported: uint8, int16, float32)");
    }
    bool apply_scl = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    if (apply_scl)
        for (double& v : out) v = v * h.scl_slope + h.scl_inter;
    return out;
}

/// Builds a 352-byte single-file NIfTI-1 header.
inline std::vector<char> build_nifti_header(const std::array<std::int16_t, 4>& dims4,
                                            std::int16_t datatype, std::int16_t bitpix,
                                            const Affine4& affine) {
    std::vector<char> hdr(352, 0);
    write_at<std::int32_t>(hdr, 0, 348);
    hdr[38] = 'r';  // regular
    std::int16_t ndim = dims4[3] > 1 ? 4 : 3;
    write_at<std::int16_t>(hdr, 40, ndim);
    for (std::size_t i = 0; i < 4; ++i)
        write_at<std::int16_t>(hdr, 42 + 2 * i, dims4[i]);
    for (std::size_t i = 4; i < 7; ++i) write_at<std::int16_t>(hdr, 42 + 2 * i, 1);
    write_at<std::int16_t>(hdr, 70, datatype);
    write_at<std::int16_t>(hdr, 72, bitpix);
    // pixdim from the affine column norms; informational only, the sform is
    // authoritative.
    write_at<float>(hdr, 76, 1.0f);
    for (std::size_t c = 0; c < 3; ++c) {
        double n = std::sqrt(affine.at(0, c) * affine.at(0, c) +
                             affine.at(1, c) * affine.at(1, c) +
                             affine.at(2, c) * affine.at(2, c));
        write_at<float>(hdr, 80 + 4 * c, static_cast<float>(n));
    }
    write_at<float>(hdr, 92, 1.0f);  // pixdim[4]
    write_at<float>(hdr, 108, 352.0f);  // vox_offset
    write_at<float>(hdr, 112, 0.0f);    // scl_slope: no scaling
    write_at<float>(hdr, 116, 0.0f);
    write_at<std::int16_t>(hdr, 252, 0);  // qform_code
    write_at<std::int16_t>(hdr, 254, 1);  // sform_code = NIFTI_XFORM_SCANNER_ANAT
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            write_at<float>(hdr, 280 + 4 * (r * 4 + c),
                            static_cast<float>(affine.at(r, c)));
    hdr[344] = 'n';
    hdr[345] = '+';
    hdr[346] = '1';
    hdr[347] = '\0';
    return hdr;
}

// ---------------------------------------------------------------------------
// Raw + JSON sidecar format
// ---------------------------------------------------------------------------
// <name>.json: {shape:[X,Y,Z,C], dtype:"f32"|"i16", affine:[16 row-major],
// byte_order:"LE"}; <name>.raw holds the samples in C-order, channel fastest.

inline std::filesystem::path raw_path_for(const std::filesystem::path& json_path) {
    std::filesystem::path p = json_path;
    p.replace_extension(".raw");
    return p;
}

struct RawHeader {
    std::array<std::size_t, 4> shape{};
    std::string dtype;
    Affine4 affine;
};

inline RawHeader parse_raw_header(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open file: " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid JSON header: " + std::string(e.what()));
    }
    RawHeader h;
    try {
        auto shape = j.at("shape");
        if (!shape.is_array() || shape.size() != 4)
            throw FormatError("raw header shape must have 4 entries [X,Y,Z,C]");
        for (std::size_t i = 0; i < 4; ++i) h.shape[i] = shape[i].get<std::size_t>();
        h.dtype = j.at("dtype").get<std::string>();
        if (j.at("byte_order").get<std::string>() != "LE")
            throw FormatError("raw header byte_order must be \"LE\"");
        auto aff = j.at("affine");
        if (!aff.is_array() || aff.size() != 16)
            throw FormatError("raw header affine must have 16 entries");
        for (std::size_t i = 0; i < 16; ++i) h.affine.m[i] = aff[i].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("raw header missing field: " + std::string(e.what()));
    }
    return h;
}

inline void write_raw_header(const std::filesystem::path& json_path,
                             const std::array<std::size_t, 4>& shape,
                             const std::string& dtype, const Affine4& affine) {
    nlohmann::json j;
    j["shape"] = shape;
    j["dtype"] = dtype;
    j["byte_order"] = "LE";
    j["affine"] = affine.m;
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write file: " + json_path.string());
    out << j.dump(2) << "\n";
}

inline void write_bytes(const std::filesystem::path& path, const char* data,
                        std::size_t size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw DataError("write failed: " + path.string());
}

inline bool has_extension(const std::filesystem::path& p, const std::string& ext) {
    std::string s = p.extension().string();
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s == ext;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public load / save operations
// ---------------------------------------------------------------------------

/// Loads a Volume from a NIfTI-1 subset file (.nii / .nii.gz) or the
/// raw+JSON format (.json). The affine comes from the sform when present,
/// else the qform; background_fill is initialised to the volume's
/// 1st-percentile intensity.
inline Volume load_volume(const std::filesystem::path& path) {
    Volume vol;
    if (detail::has_extension(path, ".json")) {
        detail::RawHeader h = detail::parse_raw_header(path);
        auto [X, Y, Z, C] = h.shape;
        if (X < 2 || Y < 2 || Z < 2 || C < 1) throw FormatError("raw header shape invalid");
        vol = Volume(X, Y, Z, C, h.affine);
        std::vector<char> bytes = detail::read_file_bytes(detail::raw_path_for(path));
        std::size_t count = X * Y * Z * C;
        if (h.dtype == "f32") {
            if (bytes.size() != count * 4) throw FormatError("raw payload size mismatch");
            for (std::size_t i = 0; i < count; ++i)
                vol.data[i] = static_cast<double>(detail::read_at<float>(bytes, 4 * i));
        } else if (h.dtype == "i16") {
            if (bytes.size() != count * 2) throw FormatError("raw payload size mismatch");
            for (std::size_t i = 0; i < count; ++i)
                vol.data[i] = static_cast<double>(detail::read_at<std::int16_t>(bytes, 2 * i));
        } else {
            throw FormatError("unsupported raw dtype: " + h.dtype);
        }
    } else {
        std::vector<char> bytes = detail::read_file_bytes(path);
        if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
        detail::NiftiHeader h = detail::parse_nifti_header(bytes);
        if (h.dim[0] != 3 && h.dim[0] != 4)
            throw FormatError("NIfTI dim[0] must be 3 or 4, got " + std::to_string(h.dim[0]));
        std::size_t X = static_cast<std::size_t>(h.dim[1]);
        std::size_t Y = static_cast<std::size_t>(h.dim[2]);
        std::size_t Z = static_cast<std::size_t>(h.dim[3]);
        std::size_t C = h.dim[0] == 4 ? std::max<std::size_t>(1, h.dim[4]) : 1;
        if (X < 2 || Y < 2 || Z < 2) throw FormatError("NIfTI dims too small");
        vol = Volume(X, Y, Z, C, detail::nifti_affine(h));
        std::vector<double> samples = detail::nifti_read_samples(bytes, h, X * Y * Z * C);
        // NIfTI stores x fastest; convert to the internal channel-fastest order.
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t z = 0; z < Z; ++z)
                for (std::size_t y = 0; y < Y; ++y)
                    for (std::size_t x = 0; x < X; ++x)
                        vol.at(x, y, z, c) = samples[((c * Z + z) * Y + y) * X + x];
    }
    if (!vol.all_finite()) throw DataError("volume contains non-finite values");
    if (!vol.affine.valid()) throw GeometryError("volume affine is invalid");
    vol.background_fill = percentile(vol.data, 1.0);
    return vol;
}

/// Loads a LabelMap from an integer NIfTI file (uint8/int16) or raw+JSON
/// with dtype "i16". num_classes is max(label)+1 unless a larger value is
/// given.
inline LabelMap load_labelmap(const std::filesystem::path& path,
                              std::int32_t num_classes = 0) {
    LabelMap lm;
    if (detail::has_extension(path, ".json")) {
        detail::RawHeader h = detail::parse_raw_header(path);
        auto [X, Y, Z, C] = h.shape;
        if (C != 1) throw FormatError("label file must be single-channel");
        if (h.dtype != "i16") throw FormatError("label file must use dtype i16");
        lm = LabelMap(X, Y, Z, 1, h.affine);
        std::vector<char> bytes = detail::read_file_bytes(detail::raw_path_for(path));
        std::size_t count = X * Y * Z;
        if (bytes.size() != count * 2) throw FormatError("raw payload size mismatch");
        for (std::size_t i = 0; i < count; ++i)
            lm.labels[i] = detail::read_at<std::int16_t>(bytes, 2 * i);
    } else {
        std::vector<char> bytes = detail::read_file_bytes(path);
        if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
        detail::NiftiHeader h = detail::parse_nifti_header(bytes);
        if (h.datatype != detail::kNiftiUint8 && h.datatype != detail::kNiftiInt16)
            throw FormatError("label file must use an integer datatype");
        if (h.dim[0] != 3 && !(h.dim[0] == 4 && h.dim[4] <= 1))
            throw FormatError("label file must be 3D");
        std::size_t X = static_cast<std::size_t>(h.dim[1]);
        std::size_t Y = static_cast<std::size_t>(h.dim[2]);
        std::size_t Z = static_cast<std::size_t>(h.dim[3]);
        lm = LabelMap(X, Y, Z, 1, detail::nifti_affine(h));
        std::vector<double> samples = detail::nifti_read_samples(bytes, h, X * Y * Z);
        for (std::size_t z = 0; z < Z; ++z)
            for (std::size_t y = 0; y < Y; ++y)
                for (std::size_t x = 0; x < X; ++x)
                    lm.at(x, y, z) = static_cast<std::int32_t>(samples[(z * Y + y) * X + x]);
    }
    std::int32_t max_label = 0;
    for (std::int32_t v : lm.labels) {
        if (v < 0) throw DataError("negative label in file");
        max_label = std::max(max_label, v);
    }
    lm.num_classes = std::max(num_classes, max_label + 1);
    return lm;
}

/// Saves a Volume as NIfTI float32 (.nii) or raw+JSON (.json). Round trips
/// are bit-exact for float32-representable data; the affine survives to
/// 1e-6.
inline void save_volume(const Volume& vol, const std::filesystem::path& path) {
    std::size_t count = vol.data.size();
    if (detail::has_extension(path, ".json")) {
        detail::write_raw_header(path, {vol.dim_x, vol.dim_y, vol.dim_z, vol.channels},
                                 "f32", vol.affine);
        std::vector<char> bytes(count * 4);
        for (std::size_t i = 0; i < count; ++i)
            detail::write_at<float>(bytes, 4 * i, static_cast<float>(vol.data[i]));
        detail::write_bytes(detail::raw_path_for(path), bytes.data(), bytes.size());
    } else if (detail::has_extension(path, ".nii")) {
        std::array<std::int16_t, 4> dims4 = {
            static_cast<std::int16_t>(vol.dim_x), static_cast<std::int16_t>(vol.dim_y),
            static_cast<std::int16_t>(vol.dim_z), static_cast<std::int16_t>(vol.channels)};
        std::vector<char> bytes =
            detail::build_nifti_header(dims4, detail::kNiftiFloat32, 32, vol.affine);
        bytes.resize(352 + count * 4);
        std::size_t i = 0;
        for (std::size_t c = 0; c < vol.channels; ++c)
            for (std::size_t z = 0; z < vol.dim_z; ++z)
                for (std::size_t y = 0; y < vol.dim_y; ++y)
                    for (std::size_t x = 0; x < vol.dim_x; ++x, ++i)
                        detail::write_at<float>(bytes, 352 + 4 * i,
                                                static_cast<float>(vol.at(x, y, z, c)));
        detail::write_bytes(path, bytes.data(), bytes.size());
    } else {
        throw FormatError("unsupported output extension (use .nii or .json): " +
                          path.string());
    }
}

/// Saves a LabelMap with an integer datatype (int16 in both formats).
inline void save_labelmap(const LabelMap& lm, const std::filesystem::path& path) {
    for (std::int32_t v : lm.labels)
        if (v < 0 || v > 32767) throw DataError("label outside int16 range");
    std::size_t count = lm.labels.size();
    if (detail::has_extension(path, ".json")) {
        detail::write_raw_header(path, {lm.dim_x, lm.dim_y, lm.dim_z, 1}, "i16", lm.affine);
        std::vector<char> bytes(count * 2);
        for (std::size_t i = 0; i < count; ++i)
            detail::write_at<std::int16_t>(bytes, 2 * i,
                                           static_cast<std::int16_t>(lm.labels[i]));
        detail::write_bytes(detail::raw_path_for(path), bytes.data(), bytes.size());
    } else if (detail::has_extension(path, ".nii")) {
        std::array<std::int16_t, 4> dims4 = {
            static_cast<std::int16_t>(lm.dim_x), static_cast<std::int16_t>(lm.dim_y),
            static_cast<std::int16_t>(lm.dim_z), 1};
        std::vector<char> bytes =
            detail::build_nifti_header(dims4, detail::kNiftiInt16, 16, lm.affine);
        bytes.resize(352 + count * 2);
        std::size_t i = 0;
        for (std::size_t z = 0; z < lm.dim_z; ++z)
            for (std::size_t y = 0; y < lm.dim_y; ++y)
                for (std::size_t x = 0; x < lm.dim_x; ++x, ++i)
                    detail::write_at<std::int16_t>(
                        bytes, 352 + 2 * i, static_cast<std::int16_t>(lm.at(x, y, z)));
        detail::write_bytes(path, bytes.data(), bytes.size());
    } else {
        throw FormatError("unsupported output extension (use .nii or .json): " +
                          path.string());
    }
}

/// Saves a ProbVolume as a 4D float file whose 4th dimension is the class
/// count. Coverage is not persisted.
inline void save_probvolume(const ProbVolume& pv, const std::filesystem::path& path) {
    Volume as_volume(pv.dim_x, pv.dim_y, pv.dim_z,
                     static_cast<std::size_t>(pv.num_classes), pv.affine);
    as_volume.data = pv.probs;
    save_volume(as_volume, path);
}

}  // namespace mpseg

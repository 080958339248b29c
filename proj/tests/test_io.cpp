#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <zlib.h>
#include "json.hpp"

#include "mpseg/io.hpp"
#include "mpseg/rng.hpp"

using namespace mpseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path p = fs::temp_directory_path() / "mpseg_test_io";
    fs::create_directories(p);
    return p;
}

// Independent reference NIfTI-1 writer: pokes fields at their documented
// byte offsets without going through the library's writer.
void reference_write_nifti_int16(const fs::path& path, int nx, int ny, int nz,
                                 const std::vector<std::int16_t>& samples,
                                 const std::array<float, 12>& srow) {
    std::vector<char> bytes(352 + samples.size() * 2, 0);
    auto poke = [&bytes](std::size_t offset, auto value) {
        std::memcpy(bytes.data() + offset, &value, sizeof value);
    };
    poke(0, std::int32_t{348});                       // sizeof_hdr
    poke(40, std::int16_t{3});                        // dim[0]
    poke(42, static_cast<std::int16_t>(nx));          // dim[1]
    poke(44, static_cast<std::int16_t>(ny));
    poke(46, static_cast<std::int16_t>(nz));
    poke(48, std::int16_t{1});
    poke(70, std::int16_t{4});                        // datatype int16
    poke(72, std::int16_t{16});                       // bitpix
    poke(76, 1.0f);                                   // pixdim[0]
    poke(108, 352.0f);                                // vox_offset
    poke(254, std::int16_t{1});                       // sform_code
    for (std::size_t i = 0; i < 12; ++i) poke(280 + 4 * i, srow[i]);
    bytes[344] = 'n';
    bytes[345] = '+';
    bytes[346] = '1';
    for (std::size_t i = 0; i < samples.size(); ++i) poke(352 + 2 * i, samples[i]);

    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> gzip_bytes(const std::vector<char>& raw) {
    std::vector<char> out(compressBound(static_cast<uLong>(raw.size())) + 32);
    z_stream strm{};
    deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                 Z_DEFAULT_STRATEGY);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
    strm.avail_in = static_cast<uInt>(raw.size());
    strm.next_out = reinterpret_cast<Bytef*>(out.data());
    strm.avail_out = static_cast<uInt>(out.size());
    deflate(&strm, Z_FINISH);
    out.resize(out.size() - strm.avail_out);
    deflateEnd(&strm);
    return out;
}

}  // namespace

TEST_CASE("raw+JSON file written by hand loads as an all-zero volume") {
    fs::path dir = temp_dir();
    nlohmann::json header = {{"shape", {4, 4, 4, 1}},
                             {"dtype", "f32"},
                             {"byte_order", "LE"},
                             {"affine", {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}}};
    std::ofstream(dir / "zeros.json") << header.dump();
    std::vector<char> payload(4 * 4 * 4 * 4, 0);
    std::ofstream(dir / "zeros.raw", std::ios::binary)
        .write(payload.data(), static_cast<std::streamsize>(payload.size()));

    Volume v = load_volume(dir / "zeros.json");
    CHECK(v.dim_x == 4);
    CHECK(v.dim_y == 4);
    CHECK(v.dim_z == 4);
    CHECK(v.channels == 1);
    for (double value : v.data) CHECK(value == 0.0);
    CHECK(v.affine == Affine4::identity());
}

TEST_CASE("volume round trip is bit-exact for float32 data") {
    fs::path dir = temp_dir();
    Rng rng(99);
    Volume v(8, 8, 8, 2);
    for (double& value : v.data)
        value = static_cast<double>(static_cast<float>(rng.uniform(-50.0, 50.0)));
    v.affine = Affine4::diagonal(1.5, 0.8, 2.0);
    v.affine.set_translation({-4, 3, 7});

    for (const char* name : {"roundtrip.json", "roundtrip.nii"}) {
        fs::path path = dir / name;
        save_volume(v, path);
        Volume back = load_volume(path);
        REQUIRE(back.data.size() == v.data.size());
        for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == v.data[i]);
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(back.affine.m[i] == doctest::Approx(v.affine.m[i]).epsilon(1e-6));
    }
}

TEST_CASE("reference NIfTI int16 file with diagonal sform") {
    fs::path path = temp_dir() / "ref_int16.nii";
    std::vector<std::int16_t> samples(4 * 4 * 4);
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = static_cast<std::int16_t>(i);
    // sform rows for diag(2,2,2,1)
    reference_write_nifti_int16(path, 4, 4, 4, samples,
                                {2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2, 0});

    Volume v = load_volume(path);
    CHECK(v.affine.at(0, 0) == doctest::Approx(2.0));
    CHECK(v.affine.at(1, 1) == doctest::Approx(2.0));
    CHECK(v.affine.at(2, 2) == doctest::Approx(2.0));
    CHECK(v.affine.at(0, 1) == doctest::Approx(0.0));
    CHECK(v.affine.at(0, 3) == doctest::Approx(0.0));
    // file is x-fastest; sample index 1 is voxel (1,0,0)
    CHECK(v.at(1, 0, 0) == doctest::Approx(1.0));
    CHECK(v.at(0, 0, 1) == doctest::Approx(16.0));
}

TEST_CASE("gzipped NIfTI is detected by magic bytes and inflated") {
    fs::path dir = temp_dir();
    Volume v(4, 4, 4, 1);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
    save_volume(v, dir / "plain.nii");

    std::ifstream in(dir / "plain.nii", std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    std::vector<char> gz = gzip_bytes(raw);
    std::ofstream(dir / "packed.nii.gz", std::ios::binary)
        .write(gz.data(), static_cast<std::streamsize>(gz.size()));

    Volume back = load_volume(dir / "packed.nii.gz");
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == v.data[i]);
}

TEST_CASE("unsupported NIfTI datatype raises a format error") {
    fs::path path = temp_dir() / "complex.nii";
    std::vector<std::int16_t> samples(4 * 4 * 4, 0);
    reference_write_nifti_int16(path, 4, 4, 4, samples, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    // overwrite the datatype field with complex64 (code 32)
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    std::int16_t complex64 = 32;
    f.seekp(70);
    f.write(reinterpret_cast<const char*>(&complex64), 2);
    f.close();
    CHECK_THROWS_AS(load_volume(path), FormatError);
}

TEST_CASE("file without sform or qform raises a geometry error") {
    fs::path path = temp_dir() / "no_affine.nii";
    std::vector<std::int16_t> samples(4 * 4 * 4, 0);
    reference_write_nifti_int16(path, 4, 4, 4, samples, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    std::int16_t zero = 0;
    f.seekp(254);  // sform_code
    f.write(reinterpret_cast<const char*>(&zero), 2);
    f.close();
    CHECK_THROWS_AS(load_volume(path), GeometryError);
}

TEST_CASE("non-finite data raises a data error") {
    fs::path dir = temp_dir();
    nlohmann::json header = {{"shape", {2, 2, 2, 1}},
                             {"dtype", "f32"},
                             {"byte_order", "LE"},
                             {"affine", {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}}};
    std::ofstream(dir / "nan.json") << header.dump();
    std::vector<float> payload(8, 1.0f);
    payload[3] = std::numeric_limits<float>::quiet_NaN();
    std::ofstream(dir / "nan.raw", std::ios::binary)
        .write(reinterpret_cast<const char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * 4));
    CHECK_THROWS_AS(load_volume(dir / "nan.json"), DataError);
}

TEST_CASE("label maps round trip exactly and declare an integer datatype") {
    fs::path dir = temp_dir();
    LabelMap lm(6, 5, 4, 5);
    Rng rng(7);
    for (auto& v : lm.labels) v = static_cast<std::int32_t>(rng.uniform_int(5));

    save_labelmap(lm, dir / "labels.json");
    nlohmann::json header;
    std::ifstream(dir / "labels.json") >> header;
    CHECK(header.at("dtype").get<std::string>() == "i16");

    LabelMap back = load_labelmap(dir / "labels.json");
    CHECK(back.labels == lm.labels);
    CHECK(back.num_classes == 5);

    save_labelmap(lm, dir / "labels.nii");
    std::ifstream nii(dir / "labels.nii", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(nii)),
                            std::istreambuf_iterator<char>());
    std::int16_t datatype;
    std::memcpy(&datatype, bytes.data() + 70, 2);
    CHECK(datatype == 4);  // int16
    LabelMap back2 = load_labelmap(dir / "labels.nii");
    CHECK(back2.labels == lm.labels);
}

TEST_CASE("prob volumes save as 4D files with the class dimension last") {
    fs::path dir = temp_dir();
    ProbVolume pv(4, 4, 4, 3);
    for (std::size_t v = 0; v < pv.voxel_count(); ++v) {
        pv.row(v)[0] = 1.0;
        pv.coverage[v] = 1;
    }
    save_probvolume(pv, dir / "probs.json");
    nlohmann::json header;
    std::ifstream(dir / "probs.json") >> header;
    CHECK(header.at("shape").at(3).get<int>() == 3);

    Volume back = load_volume(dir / "probs.json");
    CHECK(back.channels == 3);
    CHECK(back.at(1, 1, 1, 0) == 1.0);
    CHECK(back.at(1, 1, 1, 1) == 0.0);
}

TEST_CASE("background fill initialises to the first percentile") {
    fs::path dir = temp_dir();
    Volume v(4, 4, 4, 1);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
    save_volume(v, dir / "fill.json");
    Volume back = load_volume(dir / "fill.json");
    // independent oracle: linear interpolation on sorted 0..63 at p=1
    double expected = 0.01 * 63.0;
    CHECK(back.background_fill == doctest::Approx(expected).epsilon(1e-9));
}

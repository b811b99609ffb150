#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsirt/errors.hpp"
#include "lsirt/io.hpp"
#include "lsirt/random.hpp"

using namespace lsirt;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "lsirt_io_test";
        fs::create_directories(d);
        return d;
    }();
    return (dir / name).string();
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Volume random_volume(const GridSpec& g, std::uint64_t seed) {
    Volume v = make_volume(g);
    RandomStream rs(seed, rng_stream::kTest);
    for (auto& x : v.v) x = (float)rs.normal();
    return v;
}

}  // namespace

TEST_CASE("volume files round-trip bit-exactly, including special floats") {
    Volume vol = random_volume(make_grid_2d(13, 9, 0.7), 11);
    vol.v[0] = std::numeric_limits<float>::quiet_NaN();
    vol.v[1] = -0.0f;
    vol.v[2] = std::numeric_limits<float>::infinity();

    const auto path = tmp_path("vol2d.tvol");
    io::write_volume(path, vol, io::ValueScale::hu_scaled);
    const auto rt = io::read_volume(path);
    CHECK(rt.scale == io::ValueScale::hu_scaled);
    CHECK(rt.vol.grid.ndim == 2);
    CHECK(rt.vol.grid.dims == vol.grid.dims);
    CHECK(rt.vol.grid.pitch == (double)(float)0.7);
    CHECK(same_bits(rt.vol.v, vol.v));

    const auto path2 = tmp_path("vol2d_rewrite.tvol");
    io::write_volume(path2, rt.vol, rt.scale);
    CHECK(io::read_file(path) == io::read_file(path2));

    Volume v3 = random_volume(make_grid_3d(5, 6, 7, 2.0), 12);
    const auto path3 = tmp_path("vol3d.tvol");
    io::write_volume(path3, v3);
    const auto rt3 = io::read_volume(path3);
    CHECK(rt3.scale == io::ValueScale::raw);
    CHECK(rt3.vol.grid.ndim == 3);
    CHECK(same_bits(rt3.vol.v, v3.v));
}

TEST_CASE("malformed volume files are rejected") {
    Volume vol = random_volume(make_grid_2d(4, 4, 1.0), 13);
    const auto good_path = tmp_path("vol_good.tvol");
    io::write_volume(good_path, vol);
    const std::string good = io::read_file(good_path);

    auto expect_bad = [&](std::string bytes, const std::string& name) {
        const auto p = tmp_path(name);
        io::write_file(p, bytes);
        CHECK_THROWS_AS((void)io::read_volume(p), IoError);
    };

    expect_bad(good.substr(0, good.size() - 5), "truncated.tvol");
    expect_bad(good + "xx", "trailing.tvol");
    {
        std::string b = good;
        b[0] = 'X';
        expect_bad(b, "magic.tvol");
    }
    {
        std::string b = good;
        b[4] = 9;  // version
        expect_bad(b, "version.tvol");
    }
    {
        std::string b = good;
        b[6] = 7;  // dimensionality
        expect_bad(b, "ndim.tvol");
    }
    {
        std::string b = good;
        b[15] = 2;  // nz = 2 on a 2D file
        expect_bad(b, "nz.tvol");
    }
    {
        std::string b = good;
        b[23] = 5;  // value-scale tag
        expect_bad(b, "scale.tvol");
    }
    CHECK_THROWS_AS((void)io::read_volume(tmp_path("does_not_exist.tvol")), IoError);
}

TEST_CASE("sinogram files round-trip with their embedded geometry") {
    SUBCASE("parallel beam") {
        Sinogram s = make_sinogram(make_parallel_geometry(7, 11, 1.25));
        RandomStream rs(21, rng_stream::kTest);
        for (auto& x : s.v) x = (float)rs.normal();

        const auto path = tmp_path("sino2d.tsin");
        io::write_sinogram(path, s);
        const Sinogram rt = io::read_sinogram(path);
        const auto& g = std::get<ParallelGeometry2D>(rt.geo);
        const auto& g0 = std::get<ParallelGeometry2D>(s.geo);
        CHECK(g.n_angles == g0.n_angles);
        CHECK(g.n_det == g0.n_det);
        CHECK(g.det_pitch == g0.det_pitch);
        CHECK(g.angles == g0.angles);
        CHECK(same_bits(rt.v, s.v));

        const auto path2 = tmp_path("sino2d_rewrite.tsin");
        io::write_sinogram(path2, rt);
        CHECK(io::read_file(path) == io::read_file(path2));
    }
    SUBCASE("cone beam") {
        Sinogram s = make_sinogram(make_cone_geometry(5, 4, 6, 2.0, 50.0, 100.0));
        RandomStream rs(22, rng_stream::kTest);
        for (auto& x : s.v) x = (float)rs.normal();

        const auto path = tmp_path("sino3d.tsin");
        io::write_sinogram(path, s);
        const Sinogram rt = io::read_sinogram(path);
        const auto& g = std::get<ConeBeamGeometry>(rt.geo);
        const auto& g0 = std::get<ConeBeamGeometry>(s.geo);
        CHECK(g.sad == g0.sad);
        CHECK(g.sdd == g0.sdd);
        CHECK(g.det_rows == g0.det_rows);
        CHECK(g.det_cols == g0.det_cols);
        CHECK(g.det_pitch == g0.det_pitch);
        CHECK(g.angles == g0.angles);
        CHECK(same_bits(rt.v, s.v));
    }
    SUBCASE("corrupt geometry block") {
        Sinogram s = make_sinogram(make_parallel_geometry(3, 5, 1.0));
        const auto path = tmp_path("sino_bad.tsin");
        io::write_sinogram(path, s);
        std::string b = io::read_file(path);
        const auto at = b.find("parallel2d");
        REQUIRE(at != std::string::npos);
        b[at] = 'q';
        io::write_file(path, b);
        CHECK_THROWS_AS((void)io::read_sinogram(path), IoError);
    }
}

TEST_CASE("geometry text round-trips doubles exactly and rejects bad documents") {
    ConeBeamGeometry c = make_cone_geometry(9, 4, 6, 1.0 / 3.0, 57.3, 111.7);
    const Geometry rt = io::geometry_from_text(io::geometry_to_text(c));
    const auto& g = std::get<ConeBeamGeometry>(rt);
    CHECK(g.sad == c.sad);
    CHECK(g.det_pitch == c.det_pitch);
    CHECK(g.angles == c.angles);

    CHECK_THROWS_AS((void)io::geometry_from_text("type = spiral\n"), ConfigError);
    CHECK_THROWS_AS((void)io::geometry_from_text("det_count = 4\n"), ConfigError);
    CHECK_THROWS_AS(
        (void)io::geometry_from_text("type = parallel2d\ndet_count = 4\ndet_pitch = 1\n"
                                     "angles = 0,1\nextra = 3\n"),
        ConfigError);
    CHECK_THROWS_AS(
        (void)io::geometry_from_text("type = parallel2d\ndet_count = 4\ndet_pitch = oops\n"
                                     "angles = 0,1\n"),
        ConfigError);
    CHECK_THROWS_AS(
        (void)io::geometry_from_text("type = parallel2d\ndet_count = 0\ndet_pitch = 1\n"
                                     "angles = 0,1\n"),
        ConfigError);
}

TEST_CASE("model checkpoints round-trip, with and without optimizer state") {
    auto m = nn::make_model<float>(2, 3, 2);
    nn::kaiming_init(m, 7);

    const auto path = tmp_path("model.tnet");
    io::write_model(path, m);
    auto rt = io::read_model(path);
    CHECK(rt.model.ndim == 2);
    CHECK(rt.model.c_in == 3);
    CHECK(rt.model.c_out == 2);
    CHECK_FALSE(rt.adam.has_value());
    bool params_equal = true;
    std::vector<std::span<const float>> pa, pb;
    nn::for_each_param(m, [&](std::span<const float> s) { pa.push_back(s); });
    nn::for_each_param(rt.model, [&](std::span<const float> s) { pb.push_back(s); });
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        params_equal = params_equal &&
                       std::memcmp(pa[i].data(), pb[i].data(), pa[i].size() * 4) == 0;
    CHECK(params_equal);

    auto adam = nn::make_adam(m);
    adam.step = 42;
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        adam.m[i] = (float)i * 0.25f;
        adam.v[i] = (float)i * 0.5f + 1.0f;
    }
    const auto path2 = tmp_path("model_adam.tnet");
    io::write_model(path2, m, &adam);
    auto rt2 = io::read_model(path2);
    REQUIRE(rt2.adam.has_value());
    CHECK(rt2.adam->step == 42);
    CHECK(same_bits(rt2.adam->m, adam.m));
    CHECK(same_bits(rt2.adam->v, adam.v));

    const auto path3 = tmp_path("model_rewrite.tnet");
    io::write_model(path3, rt2.model, &*rt2.adam);
    CHECK(io::read_file(path2) == io::read_file(path3));

    SUBCASE("corrupt checkpoints") {
        std::string good = io::read_file(path);
        auto expect_bad = [&](std::string bytes, const std::string& name) {
            const auto p = tmp_path(name);
            io::write_file(p, bytes);
            CHECK_THROWS_AS((void)io::read_model(p), IoError);
        };
        expect_bad(good.substr(0, 30), "model_trunc.tnet");
        expect_bad(good + "z", "model_trailing.tnet");
        {
            std::string b = good;
            b[0] = 'Z';
            expect_bad(b, "model_magic.tnet");
        }
        {
            std::string b = good;
            b[6] = 5;  // dimensionality
            expect_bad(b, "model_ndim.tnet");
        }
        {
            std::string b = good;
            b.back() = 2;  // optimizer flag
            expect_bad(b, "model_flag.tnet");
        }
    }
}

TEST_CASE("key-value documents: parsing, strictness, numeric helpers") {
    const io::KeyValueMap kv("# comment\n\n  alpha = 0.5 \nname = desk run\nn = 40\n");
    CHECK(kv.items().size() == 3);
    CHECK(kv.require("alpha") == "0.5");
    CHECK(kv.require("name") == "desk run");
    CHECK(kv.find("missing") == nullptr);
    CHECK_THROWS_AS((void)kv.require("missing"), ConfigError);
    CHECK_NOTHROW(kv.check_known({"alpha", "name", "n"}));
    CHECK_THROWS_AS(kv.check_known({"alpha", "name"}), ConfigError);

    CHECK_THROWS_AS(io::KeyValueMap("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(io::KeyValueMap("not a pair\n"), ConfigError);
    CHECK_THROWS_AS(io::KeyValueMap(" = 3\n"), ConfigError);

    CHECK(io::parse_double("k", "2.5e-3") == 2.5e-3);
    CHECK_THROWS_AS((void)io::parse_double("k", "1.5x"), ConfigError);
    CHECK_THROWS_AS((void)io::parse_double("k", ""), ConfigError);
    CHECK_THROWS_AS((void)io::parse_double("k", "inf"), ConfigError);
    CHECK(io::parse_int("k", "-12") == -12);
    CHECK_THROWS_AS((void)io::parse_int("k", "3.5"), ConfigError);
    const auto xs = io::parse_double_list("k", "1, 0.25 ,3e2");
    REQUIRE(xs.size() == 3);
    CHECK(xs[1] == 0.25);
    CHECK(xs[2] == 300.0);

    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.6789, -0.0}) {
        const double rt = io::parse_double("k", io::format_double(v));
        CHECK(std::bit_cast<std::uint64_t>(rt) == std::bit_cast<std::uint64_t>(v));
    }
}

TEST_CASE("pgm writer emits a valid binary header and exact payload") {
    const auto path = tmp_path("img.pgm");
    io::write_pgm(path, 3, 2, {0, 64, 127, 128, 200, 255});
    const std::string b = io::read_file(path);
    CHECK(b == std::string("P5\n3 2\n255\n") + '\0' + '\x40' + '\x7f' + '\x80' +
                   (char)200 + (char)255);
    CHECK_THROWS_AS(io::write_pgm(path, 2, 2, {1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(io::write_pgm(path, 0, 2, {}), ConfigError);
}

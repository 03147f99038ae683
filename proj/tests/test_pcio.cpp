#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lvac/pcio.hpp"
#include "support.hpp"

using namespace lvac;

namespace {

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("lvac_pcio_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p, std::ios::binary);
    out << s;
}

}  // namespace

TEST_CASE("morton keys interleave with x most significant")
{
    CHECK(morton_key({1, 0, 0}, 1) == 4);
    CHECK(morton_key({0, 1, 0}, 1) == 2);
    CHECK(morton_key({0, 0, 1}, 1) == 1);
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const Position p{static_cast<std::uint32_t>(rng.below(1024)), static_cast<std::uint32_t>(rng.below(1024)),
                         static_cast<std::uint32_t>(rng.below(1024))};
        CHECK(morton_decode(morton_key(p, 10), 10) == p);
    }
}

TEST_CASE("single point ascii PLY")
{
    const auto path = temp_path("one.ply");
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 255 255\n");
    const auto cloud = load_ply(path, 4);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.positions[0] == Position{0, 0, 0});
    CHECK(cloud.attributes.row(0).isApprox(Eigen::RowVector3d(1, 1, 1)));
}

TEST_CASE("duplicate voxels are averaged")
{
    const auto path = temp_path("dup.ply");
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 2\nproperty int x\nproperty int y\nproperty int z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n3 4 5 0 0 0\n3 4 5 255 255 255\n");
    const auto cloud = load_ply(path, 4);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.attributes.row(0).isApprox(Eigen::RowVector3d(0.5, 0.5, 0.5)));
}

TEST_CASE("malformed PLY inputs are data errors")
{
    const auto path = temp_path("bad.ply");
    write_text(path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n");
    CHECK_THROWS_AS(load_ply(path, 4), DataError);
    write_text(path, "not a ply\n");
    CHECK_THROWS_AS(load_ply(path, 4), DataError);
    write_text(path,
               "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n16 0 0 1 2 3\n");
    CHECK_THROWS_AS(load_ply(path, 4), DataError);
}

TEST_CASE("save and load round trip")
{
    Rng rng(11);
    auto cloud = testing::random_cloud(rng, 7, 1000);
    // Stored colors are 8-bit.
    for (Eigen::Index i = 0; i < cloud.attributes.size(); ++i)
        cloud.attributes.data()[i] = to_u8(cloud.attributes.data()[i]) / 255.0;
    for (bool binary : {true, false}) {
        const auto path = temp_path(binary ? "rt.bin.ply" : "rt.txt.ply");
        save_ply(cloud, path, binary);
        const auto back = load_ply(path);
        CHECK(back == cloud);
    }
}

TEST_CASE("empty cloud writes a valid PLY")
{
    VoxelizedPointCloud empty;
    empty.depth = 6;
    const auto path = temp_path("empty.ply");
    save_ply(empty, path);
    const auto back = load_ply(path);
    CHECK(back.size() == 0);
    CHECK(back.depth == 6);
}

TEST_CASE("8-bit storage rounds half away from zero for all levels")
{
    CHECK(to_u8(0.5) == 128);
    for (int v = 0; v < 256; ++v) {
        CHECK(to_u8(v / 255.0) == v);
        CHECK(to_u8((v + 0.49) / 255.0) == std::min(v, 255));
    }
}

TEST_CASE("synthetic generators")
{
    const auto cube = synthesize_cloud(CloudKind::CubeFaces, 4, 1);
    for (const auto& p : cube.positions) {
        const bool on_face = std::any_of(p.begin(), p.end(), [](std::uint32_t v) { return v == 0 || v == 15; });
        CHECK(on_face);
    }
    CHECK(cube.size() == 16 * 16 * 16 - 14 * 14 * 14);
    CHECK(synthesize_cloud(CloudKind::SphereShell, 6, 7) == synthesize_cloud(CloudKind::SphereShell, 6, 7));
    const auto noise = synthesize_cloud(CloudKind::NoiseSurface, 8, 3);
    CHECK(noise.size() >= 10000);
    CHECK(noise.size() <= 1000000);
    CHECK(noise.size() == 15346);
    validate(noise);
    CHECK_THROWS_AS(synthesize_cloud(CloudKind::NoiseSurface, 11, 0), UsageError);
    CHECK_FALSE(parse_cloud_kind("torus").has_value());
}

TEST_CASE("Morton order is strict and canonicalization idempotent")
{
    Rng rng(2);
    const auto cloud = testing::random_cloud(rng, 6, 500);
    for (std::size_t i = 1; i < cloud.size(); ++i)
        CHECK(morton_key(cloud.positions[i - 1], 6) < morton_key(cloud.positions[i], 6));
    std::vector<Position> shuffled = cloud.positions;
    std::reverse(shuffled.begin(), shuffled.end());
    MatrixXd colors = cloud.attributes.colwise().reverse();
    CHECK(canonicalize(6, shuffled, colors) == cloud);
}

TEST_CASE("BT.709 conversion")
{
    VoxelizedPointCloud c;
    c.depth = 4;
    c.positions = {{0, 0, 0}, {0, 0, 1}};
    c.attributes = MatrixXd(2, 3);
    c.attributes << 1, 1, 1, 0, 0, 0;
    const auto yuv = rgb_to_yuv_bt709(c);
    CHECK(yuv.attributes.row(0).isApprox(Eigen::RowVector3d(1, 0.5, 0.5), 1e-12));
    CHECK((yuv.attributes.row(1) - Eigen::RowVector3d(0, 0.5, 0.5)).norm() < 1e-12);

    Rng rng(3);
    const auto cloud = testing::random_cloud(rng, 6, 400);
    const auto back = yuv_to_rgb_bt709(rgb_to_yuv_bt709(cloud));
    CHECK((back.attributes - cloud.attributes).cwiseAbs().maxCoeff() < 1e-6);
}

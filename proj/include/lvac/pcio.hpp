#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "lvac/core.hpp"

namespace lvac {

using Position = std::array<std::uint32_t, 3>;

// Interleaves the coordinate bits with x as the most significant of each
// triple, so that the first binary split (level 0) is on the top x bit.
std::uint64_t morton_key(const Position& p, int depth);
Position morton_decode(std::uint64_t key, int depth);

// Voxel positions with per-point RGB attributes in [0,1], Morton sorted,
// one point per occupied voxel.
struct VoxelizedPointCloud {
    int depth = 10;
    std::vector<Position> positions;
    MatrixXd attributes;  // N x 3

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }

    bool operator==(const VoxelizedPointCloud& other) const;
};

// Sorts by Morton key and merges duplicate voxels by averaging their
// attributes. Throws DataError if a position lies outside the grid.
VoxelizedPointCloud canonicalize(int depth, std::vector<Position> positions, MatrixXd attributes);

// Throws DataError when an invariant does not hold.
void validate(const VoxelizedPointCloud& cloud);

// Reads ascii or binary_little_endian PLY. A "comment lvac depth D" header
// line overrides `depth`.
VoxelizedPointCloud load_ply(const std::filesystem::path& path, int depth = 10);
void save_ply(const VoxelizedPointCloud& cloud, const std::filesystem::path& path, bool binary = true);

enum class CloudKind { SphereShell, CubeFaces, NoiseSurface };

std::optional<CloudKind> parse_cloud_kind(std::string_view name);
std::string_view to_string(CloudKind kind);

VoxelizedPointCloud synthesize_cloud(CloudKind kind, int depth, std::uint64_t seed);

// Full-range BT.709 with offset-binary chroma.
VoxelizedPointCloud rgb_to_yuv_bt709(const VoxelizedPointCloud& cloud);
VoxelizedPointCloud yuv_to_rgb_bt709(const VoxelizedPointCloud& cloud);

// 8-bit quantization used by PLY storage.
inline std::uint8_t to_u8(double v)
{
    const double s = round_half_away(v * 255.0);
    return static_cast<std::uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

}  // namespace lvac

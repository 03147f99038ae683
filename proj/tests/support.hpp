#pragma once

#include <algorithm>
#include <functional>
#include <set>

#include "lvac/partition.hpp"

namespace lvac::testing {

// Up to `max_points` distinct random voxels with random colors.
inline VoxelizedPointCloud random_cloud(Rng& rng, int depth, std::size_t max_points)
{
    const std::uint64_t side = 1ULL << depth;
    std::set<std::uint64_t> keys;
    const std::size_t target = 1 + rng.below(max_points);
    for (std::size_t i = 0; i < 4 * target && keys.size() < target; ++i) {
        Position p{static_cast<std::uint32_t>(rng.below(side)), static_cast<std::uint32_t>(rng.below(side)),
                   static_cast<std::uint32_t>(rng.below(side))};
        keys.insert(morton_key(p, depth));
    }
    std::vector<Position> positions;
    for (auto k : keys)
        positions.push_back(morton_decode(k, depth));
    MatrixXd colors(static_cast<Eigen::Index>(positions.size()), 3);
    for (Eigen::Index i = 0; i < colors.size(); ++i)
        colors.data()[i] = rng.below(256) / 255.0;
    return canonicalize(depth, std::move(positions), std::move(colors));
}

// Clustered cloud so that coarse target levels still have several points per block.
inline VoxelizedPointCloud clustered_cloud(Rng& rng, int depth, std::size_t clusters, std::size_t per_cluster)
{
    const std::uint64_t side = 1ULL << depth;
    std::set<std::uint64_t> keys;
    for (std::size_t c = 0; c < clusters; ++c) {
        const Position centre{static_cast<std::uint32_t>(rng.below(side)), static_cast<std::uint32_t>(rng.below(side)),
                              static_cast<std::uint32_t>(rng.below(side))};
        for (std::size_t i = 0; i < per_cluster; ++i) {
            Position p = centre;
            for (auto& v : p)
                v = static_cast<std::uint32_t>(std::clamp<std::int64_t>(
                    static_cast<std::int64_t>(v) + static_cast<std::int64_t>(rng.below(5)) - 2, 0,
                    static_cast<std::int64_t>(side) - 1));
            keys.insert(morton_key(p, depth));
        }
    }
    std::vector<Position> positions;
    for (auto k : keys)
        positions.push_back(morton_decode(k, depth));
    MatrixXd colors(static_cast<Eigen::Index>(positions.size()), 3);
    for (Eigen::Index i = 0; i < colors.rows(); ++i) {
        const auto& p = positions[static_cast<std::size_t>(i)];
        for (int ch = 0; ch < 3; ++ch)
            colors(i, ch) = std::clamp(0.5 + 0.4 * std::sin(0.3 * p[static_cast<std::size_t>(ch)] + ch) +
                                           0.05 * (rng.uniform() - 0.5),
                                       0.0, 1.0);
    }
    return canonicalize(depth, std::move(positions), std::move(colors));
}

// Random tree with at most `max_blocks` target-level blocks and random weights.
struct RandomTree {
    VoxelizedPointCloud cloud;
    PartitionTree tree;
};

inline RandomTree random_tree(Rng& rng, std::size_t max_blocks)
{
    const int depth = 3 + static_cast<int>(rng.below(4));
    VoxelizedPointCloud cloud = random_cloud(rng, depth, 4 * max_blocks);
    for (int L = 3 * depth;; --L) {
        PartitionTree tree = PartitionTree::build(cloud, L);
        if (tree.block_count() <= max_blocks || L == 0) {
            const int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(L) + 1));
            if (pick < L) {
                PartitionTree coarser = PartitionTree::build(cloud, pick);
                return {std::move(cloud), std::move(coarser)};
            }
            return {std::move(cloud), std::move(tree)};
        }
    }
}

inline double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Central difference of f along coordinate `x`.
inline double central_difference(const std::function<double()>& f, double& x, double h)
{
    const double keep = x;
    x = keep + h;
    const double up = f();
    x = keep - h;
    const double down = f();
    x = keep;
    return (up - down) / (2.0 * h);
}

}  // namespace lvac::testing

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "lvac/pcio.hpp"

namespace lvac {

// One occupied block B_{l,n} of the binary space partition.
struct TreeNode {
    std::uint64_t prefix = 0;  // Morton prefix of length `level` bits
    std::uint32_t weight = 0;  // number of points
    std::uint32_t begin = 0;   // first point (Morton order) inside the block
    std::int32_t left = -1;    // child indices into the next level, -1 if unoccupied
    std::int32_t right = -1;
};

// A node with two occupied children. Its right-child difference is one
// transform coefficient. Slots index the compressed tree in which chains of
// single-child nodes are collapsed: slot 0 is the root, and every branch
// owns the slots of its two children.
struct Branch {
    int level = 0;             // level of the children (l+1)
    std::uint32_t node = 0;    // index of the branching node at level-1
    std::uint32_t parent_slot = 0;
    std::uint32_t left_slot = 0;
    std::uint32_t right_slot = 0;
    double left_weight = 0.0;
    double right_weight = 0.0;
};

struct PathStep {
    int level = 0;
    std::uint32_t node = 0;
    bool is_right_child = false;
    std::optional<std::uint32_t> sibling_weight;
};

class PartitionTree {
public:
    // Levels 0..target_level with per-level node arrays in Morton order.
    static PartitionTree build(const VoxelizedPointCloud& cloud, int target_level);

    int voxel_depth() const { return voxel_depth_; }
    int depth_binary() const { return 3 * voxel_depth_; }
    int target_level() const { return target_level_; }
    std::size_t point_count() const { return levels_.front().front().weight; }
    std::size_t block_count() const { return levels_.back().size(); }

    const std::vector<TreeNode>& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
    const std::vector<Branch>& branches() const { return branches_; }
    std::size_t branching_count() const { return branches_.size(); }

    // Split axis at level l: 0 = x, 1 = y, 2 = z.
    static int split_axis(int level) { return level % 3; }

    // [begin, end) of the points inside target-level block b.
    std::pair<std::uint32_t, std::uint32_t> leaf_range(std::size_t b) const
    {
        const TreeNode& n = levels_.back()[b];
        return {n.begin, n.begin + n.weight};
    }
    std::uint32_t block_weight(std::size_t b) const { return levels_.back()[b].weight; }
    std::uint32_t slot_of_block(std::size_t b) const { return block_slot_[b]; }
    std::size_t slot_count() const { return 2 * branches_.size() + 1; }

    // Block containing the point at `position`, if the descent stays in
    // occupied space.
    std::optional<std::size_t> block_of(const Position& position) const;

    std::vector<PathStep> path_to_root(std::size_t block) const;

    // log2 of the block side along x, y, z at the target level.
    std::array<int, 3> block_side_log2() const;

    // Corner-anchored coordinates of `position` in its target-level block,
    // mapped to [0,1]^3 by (offset + 0.5) / side.
    std::array<double, 3> local_coordinates(const Position& position) const;

    // Levels 1..L that carry at least one coefficient, ascending.
    std::vector<int> coded_levels() const;

private:
    int voxel_depth_ = 0;
    int target_level_ = 0;
    std::vector<std::vector<TreeNode>> levels_;
    std::vector<Branch> branches_;
    std::vector<std::uint32_t> block_slot_;
};

}  // namespace lvac

#include "lvac/partition.hpp"

#include <algorithm>

namespace lvac {

PartitionTree PartitionTree::build(const VoxelizedPointCloud& cloud, int target_level)
{
    if (cloud.empty())
        throw DataError("cannot build a partition tree over an empty cloud");
    const int bits = 3 * cloud.depth;
    if (target_level < 0 || target_level > bits)
        throw UsageError("target level must be in [0, 3*depth]");

    PartitionTree tree;
    tree.voxel_depth_ = cloud.depth;
    tree.target_level_ = target_level;
    tree.levels_.resize(static_cast<std::size_t>(target_level) + 1);

    std::vector<std::uint64_t> keys(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        keys[i] = morton_key(cloud.positions[i], cloud.depth);
        if (i > 0 && keys[i] <= keys[i - 1])
            throw DataError("cloud positions must be unique and Morton sorted");
    }

    // Target level: group points by their L-bit prefix.
    auto& leaves = tree.levels_.back();
    const int shift = bits - target_level;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const std::uint64_t prefix = shift >= 64 ? 0 : keys[i] >> shift;
        if (leaves.empty() || leaves.back().prefix != prefix) {
            TreeNode n;
            n.prefix = prefix;
            n.begin = static_cast<std::uint32_t>(i);
            leaves.push_back(n);
        }
        ++leaves.back().weight;
    }

    // Coarser levels: merge siblings.
    for (int l = target_level - 1; l >= 0; --l) {
        const auto& children = tree.levels_[static_cast<std::size_t>(l) + 1];
        auto& parents = tree.levels_[static_cast<std::size_t>(l)];
        for (std::size_t c = 0; c < children.size(); ++c) {
            const std::uint64_t prefix = children[c].prefix >> 1;
            if (parents.empty() || parents.back().prefix != prefix) {
                TreeNode n;
                n.prefix = prefix;
                n.begin = children[c].begin;
                parents.push_back(n);
            }
            TreeNode& p = parents.back();
            p.weight += children[c].weight;
            if (children[c].prefix & 1u)
                p.right = static_cast<std::int32_t>(c);
            else
                p.left = static_cast<std::int32_t>(c);
        }
    }

    // Compressed tree: follow each level-major branch and assign slots.
    // node_slot[l][k] is the slot carrying the DC value of node k at level l.
    std::vector<std::vector<std::uint32_t>> node_slot(tree.levels_.size());
    node_slot[0].assign(1, 0);
    std::uint32_t next_slot = 1;
    for (int l = 0; l < target_level; ++l) {
        const auto& nodes = tree.levels_[static_cast<std::size_t>(l)];
        auto& below = node_slot[static_cast<std::size_t>(l) + 1];
        below.assign(tree.levels_[static_cast<std::size_t>(l) + 1].size(), 0);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            const TreeNode& n = nodes[k];
            const std::uint32_t slot = node_slot[static_cast<std::size_t>(l)][k];
            if (n.left >= 0 && n.right >= 0) {
                Branch b;
                b.level = l + 1;
                b.node = static_cast<std::uint32_t>(k);
                b.parent_slot = slot;
                b.left_slot = next_slot++;
                b.right_slot = next_slot++;
                const auto& ch = tree.levels_[static_cast<std::size_t>(l) + 1];
                b.left_weight = ch[static_cast<std::size_t>(n.left)].weight;
                b.right_weight = ch[static_cast<std::size_t>(n.right)].weight;
                below[static_cast<std::size_t>(n.left)] = b.left_slot;
                below[static_cast<std::size_t>(n.right)] = b.right_slot;
                tree.branches_.push_back(b);
            } else {
                below[static_cast<std::size_t>(n.left >= 0 ? n.left : n.right)] = slot;
            }
        }
    }
    tree.block_slot_ = std::move(node_slot.back());
    return tree;
}

std::optional<std::size_t> PartitionTree::block_of(const Position& position) const
{
    const std::uint32_t limit = 1u << voxel_depth_;
    for (auto c : position)
        if (c >= limit)
            return std::nullopt;
    const int shift = depth_binary() - target_level_;
    const std::uint64_t key = morton_key(position, voxel_depth_);
    const std::uint64_t prefix = shift >= 64 ? 0 : key >> shift;
    const auto& leaves = levels_.back();
    const auto it = std::lower_bound(leaves.begin(), leaves.end(), prefix,
                                     [](const TreeNode& n, std::uint64_t p) { return n.prefix < p; });
    if (it == leaves.end() || it->prefix != prefix)
        return std::nullopt;
    return static_cast<std::size_t>(it - leaves.begin());
}

std::vector<PathStep> PartitionTree::path_to_root(std::size_t block) const
{
    if (block >= block_count())
        throw UsageError("block id out of range");
    std::vector<PathStep> path(static_cast<std::size_t>(target_level_) + 1);
    std::uint32_t index = static_cast<std::uint32_t>(block);
    for (int l = target_level_; l >= 0; --l) {
        const auto& nodes = levels_[static_cast<std::size_t>(l)];
        PathStep& step = path[static_cast<std::size_t>(l)];
        step.level = l;
        step.node = index;
        step.is_right_child = l > 0 && (nodes[index].prefix & 1u);
        if (l == 0)
            break;
        const std::uint64_t parent_prefix = nodes[index].prefix >> 1;
        const auto& parents = levels_[static_cast<std::size_t>(l) - 1];
        const auto it = std::lower_bound(parents.begin(), parents.end(), parent_prefix,
                                         [](const TreeNode& n, std::uint64_t p) { return n.prefix < p; });
        const TreeNode& parent = *it;
        const std::int32_t sibling = step.is_right_child ? parent.left : parent.right;
        if (sibling >= 0)
            step.sibling_weight = nodes[static_cast<std::size_t>(sibling)].weight;
        index = static_cast<std::uint32_t>(it - parents.begin());
    }
    return path;
}

std::array<int, 3> PartitionTree::block_side_log2() const
{
    std::array<int, 3> s{0, 0, 0};
    for (int l = target_level_; l < depth_binary(); ++l)
        ++s[static_cast<std::size_t>(split_axis(l))];
    return s;
}

std::array<double, 3> PartitionTree::local_coordinates(const Position& position) const
{
    const auto side = block_side_log2();
    std::array<double, 3> x{};
    for (int a = 0; a < 3; ++a) {
        const std::uint32_t mask = (1u << side[a]) - 1u;
        x[a] = ((position[a] & mask) + 0.5) / static_cast<double>(1u << side[a]);
    }
    return x;
}

std::vector<int> PartitionTree::coded_levels() const
{
    std::vector<int> out;
    for (const Branch& b : branches_)
        if (out.empty() || out.back() != b.level)
            out.push_back(b.level);
    return out;
}

}  // namespace lvac

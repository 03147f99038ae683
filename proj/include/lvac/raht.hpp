#pragma once

#include <utility>
#include <vector>

#include "lvac/core.hpp"
#include "lvac/partition.hpp"

namespace lvac {

// Transform coefficients in canonical order: row 0 is the root DC latent,
// rows 1..N-1 are right-child differences, level-major from the root,
// Morton order within a level (the order of PartitionTree::branches()).
template <typename Scalar>
struct CoefficientSet {
    Matrix<Scalar> rows;  // N x C

    Eigen::Index channels() const { return rows.cols(); }
    auto root_dc() const { return rows.row(0); }
    auto deltas() const { return rows.bottomRows(rows.rows() - 1); }
};

// Level of each coefficient row: 0 for the root DC, l+1 for a delta whose
// children live at level l+1.
inline std::vector<int> coefficient_levels(const PartitionTree& tree)
{
    std::vector<int> levels;
    levels.reserve(tree.block_count());
    levels.push_back(0);
    for (const Branch& b : tree.branches())
        levels.push_back(b.level);
    return levels;
}

// Bottom-up weighted averaging. Z rows are in target-level block order.
template <typename Derived>
CoefficientSet<typename Derived::Scalar> analyze(const PartitionTree& tree,
                                                 const Eigen::MatrixBase<Derived>& Z)
{
    using Scalar = typename Derived::Scalar;
    if (static_cast<std::size_t>(Z.rows()) != tree.block_count())
        throw DataError("latent row count does not match block count");

    Matrix<Scalar> slots(static_cast<Eigen::Index>(tree.slot_count()), Z.cols());
    for (std::size_t b = 0; b < tree.block_count(); ++b)
        slots.row(tree.slot_of_block(b)) = Z.row(static_cast<Eigen::Index>(b));

    CoefficientSet<Scalar> V;
    V.rows.resize(Z.rows(), Z.cols());
    const auto& branches = tree.branches();
    for (std::size_t i = branches.size(); i-- > 0;) {
        const Branch& br = branches[i];
        const Scalar wl = static_cast<Scalar>(br.left_weight);
        const Scalar wr = static_cast<Scalar>(br.right_weight);
        const Scalar total = wl + wr;
        slots.row(br.parent_slot) =
            (wl / total) * slots.row(br.left_slot) + (wr / total) * slots.row(br.right_slot);
        V.rows.row(static_cast<Eigen::Index>(i) + 1) = slots.row(br.right_slot) - slots.row(br.parent_slot);
    }
    V.rows.row(0) = slots.row(0);
    return V;
}

// Top-down accumulation root -> leaf. The left-child difference follows
// from the weighted-mean constraint: dz_L = -(w_R / w_L) dz_R.
template <typename Derived>
Matrix<typename Derived::Scalar> synthesize(const PartitionTree& tree, const Eigen::MatrixBase<Derived>& V)
{
    using Scalar = typename Derived::Scalar;
    if (static_cast<std::size_t>(V.rows()) != tree.block_count())
        throw DataError("coefficient count does not match the tree");

    Matrix<Scalar> slots(static_cast<Eigen::Index>(tree.slot_count()), V.cols());
    slots.row(0) = V.row(0);
    const auto& branches = tree.branches();
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const Branch& br = branches[i];
        const auto right = V.row(static_cast<Eigen::Index>(i) + 1);
        const Scalar ratio = static_cast<Scalar>(br.right_weight / br.left_weight);
        slots.row(br.left_slot) = slots.row(br.parent_slot) - ratio * right;
        slots.row(br.right_slot) = slots.row(br.parent_slot) + right;
    }
    Matrix<Scalar> Z(V.rows(), V.cols());
    for (std::size_t b = 0; b < tree.block_count(); ++b)
        Z.row(static_cast<Eigen::Index>(b)) = slots.row(tree.slot_of_block(b));
    return Z;
}

template <typename Scalar>
Matrix<Scalar> synthesize(const PartitionTree& tree, const CoefficientSet<Scalar>& V)
{
    return synthesize(tree, V.rows);
}

// Transpose of synthesize: maps dL/dZ to dL/dV.
template <typename Derived>
Matrix<typename Derived::Scalar> synthesize_adjoint(const PartitionTree& tree,
                                                     const Eigen::MatrixBase<Derived>& dZ)
{
    using Scalar = typename Derived::Scalar;
    if (static_cast<std::size_t>(dZ.rows()) != tree.block_count())
        throw DataError("gradient row count does not match block count");

    Matrix<Scalar> slots = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(tree.slot_count()), dZ.cols());
    for (std::size_t b = 0; b < tree.block_count(); ++b)
        slots.row(tree.slot_of_block(b)) = dZ.row(static_cast<Eigen::Index>(b));

    Matrix<Scalar> dV(dZ.rows(), dZ.cols());
    const auto& branches = tree.branches();
    for (std::size_t i = branches.size(); i-- > 0;) {
        const Branch& br = branches[i];
        const Scalar ratio = static_cast<Scalar>(br.right_weight / br.left_weight);
        dV.row(static_cast<Eigen::Index>(i) + 1) = slots.row(br.right_slot) - ratio * slots.row(br.left_slot);
        slots.row(br.parent_slot) = slots.row(br.left_slot) + slots.row(br.right_slot);
    }
    dV.row(0) = slots.row(0);
    return dV;
}

// Per-coefficient normalization: s_root = N^-1/2 and, for a right-child
// difference, s = (w_R (w_L + w_R) / w_L)^-1/2. With these, diag(1/s) T_a
// is orthonormal under the weight inner product.
template <typename Scalar = double>
Vector<Scalar> scale_factors(const PartitionTree& tree)
{
    Vector<Scalar> s(static_cast<Eigen::Index>(tree.block_count()));
    s[0] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(tree.point_count())));
    const auto& branches = tree.branches();
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const double wl = branches[i].left_weight, wr = branches[i].right_weight;
        s[static_cast<Eigen::Index>(i) + 1] = static_cast<Scalar>(1.0 / std::sqrt(wr * (wl + wr) / wl));
    }
    return s;
}

// Explicit N x N analysis and synthesis matrices, built column by column
// from unit vectors. For tests only.
template <typename Scalar = double>
std::pair<Matrix<Scalar>, Matrix<Scalar>> dense_oracle(const PartitionTree& tree)
{
    const auto n = static_cast<Eigen::Index>(tree.block_count());
    if (n > 512)
        throw UsageError("dense oracle limited to 512 blocks");
    Matrix<Scalar> Ta(n, n), Ts(n, n);
    Matrix<Scalar> e = Matrix<Scalar>::Zero(n, 1);
    for (Eigen::Index j = 0; j < n; ++j) {
        e.setZero();
        e(j, 0) = Scalar(1);
        Ta.col(j) = analyze(tree, e).rows.col(0);
        Ts.col(j) = synthesize(tree, e).col(0);
    }
    return {Ta, Ts};
}

}  // namespace lvac

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lvac/core.hpp"

namespace lvac {

enum class CbnFamily : std::uint8_t { Linear3x3 = 1, Mlp = 2, PositionAttention = 3 };

struct CbnSpec {
    CbnFamily family = CbnFamily::Linear3x3;
    int channels = 3;  // latent width C
    int hidden = 0;    // H, mlp only

    static CbnSpec linear() { return {CbnFamily::Linear3x3, 3, 0}; }
    static CbnSpec mlp(int hidden, int channels = 32) { return {CbnFamily::Mlp, channels, hidden}; }
    static CbnSpec pa(int channels = 32) { return {CbnFamily::PositionAttention, channels, 0}; }

    // "linear(3x3)", "mlp(35x64x3)", "pa(3x32x3)".
    std::string name() const;
    void validate() const;
    bool operator==(const CbnSpec&) const = default;
};

// Accepts "linear", "mlp", "pa" and the display names above.
std::optional<CbnSpec> parse_cbn(const std::string& family, int hidden = 64, int channels = 32);

std::size_t param_count(const CbnSpec& spec);

struct TensorShape {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

// Serialization order: linear {A}; mlp {b3, W_out, b_H, W_in};
// pa {b3, W_out, b_C, W_in}.
std::vector<TensorShape> tensor_shapes(const CbnSpec& spec);

// All parameters of one network in a flat vector; tensors are row-major
// views into it.
struct CbnParams {
    using ConstMap = Eigen::Map<const MatrixXd>;
    using MutMap = Eigen::Map<MatrixXd>;

    CbnSpec spec;
    VectorXd data;

    CbnParams() = default;
    explicit CbnParams(const CbnSpec& s) : spec(s), data(VectorXd::Zero(static_cast<Eigen::Index>(param_count(s)))) {}

    ConstMap tensor(std::size_t k) const;
    MutMap tensor(std::size_t k);
};

// Linear: A = I. Others: fan-in scaled uniform weights, zero biases; the
// position-attention input matrix is widened by 4x.
CbnParams init_params(const CbnSpec& spec, Rng& rng);

// Points grouped by target-level block: points of block b occupy rows
// [block_begin[b], block_begin[b+1]) of `local`.
struct CbnBatch {
    MatrixXd local;  // P x 3, block-local coordinates in [0,1]^3
    std::vector<std::uint32_t> block_begin;

    Eigen::Index points() const { return local.rows(); }
    std::size_t blocks() const { return block_begin.empty() ? 0 : block_begin.size() - 1; }
};

// Intermediate values kept by forward for backward.
struct CbnCache {
    MatrixXd hidden_pre;  // mlp: P x H, pa: P x C
    MatrixXd out_pre;     // mlp: P x 3
};

// Y (P x 3) for latents Zhat (M x C).
MatrixXd forward(const CbnParams& params, const CbnBatch& batch, const MatrixXd& latents, CbnCache* cache = nullptr);

struct CbnGradient {
    VectorXd params;   // same layout as CbnParams::data
    MatrixXd latents;  // M x C
};

// Exact gradients of sum(upstream .* Y); ReLU derivative at 0 is 0.
CbnGradient backward(const CbnParams& params, const CbnBatch& batch, const MatrixXd& latents,
                     const CbnCache& cache, const MatrixXd& upstream);

// Single-point conveniences.
Eigen::Vector3d forward(const CbnParams& params, const Eigen::Vector3d& x, const VectorXd& z);
CbnGradient backward(const CbnParams& params, const Eigen::Vector3d& x, const VectorXd& z,
                     const Eigen::Vector3d& upstream);

}  // namespace lvac

#pragma once

#include "lvac/core.hpp"

namespace lvac {

// One positive step per latent channel.
struct StepSizes {
    VectorXd delta;
    bool learnable = true;

    static StepSizes uniform(Eigen::Index channels, double step, bool learnable = true)
    {
        return {VectorXd::Constant(channels, step), learnable};
    }
    Eigen::Index channels() const { return delta.size(); }
};

inline void check_steps(const StepSizes& steps, Eigen::Index channels)
{
    if (steps.delta.size() != channels)
        throw DataError("step size count does not match channel count");
    if (!(steps.delta.array() > 0.0).all())
        throw DataError("step sizes must be positive");
}

// U[m,c] = round(Ubar[m,c] / delta_c), ties away from zero.
template <typename Derived>
MatrixXi quantize(const Eigen::MatrixBase<Derived>& normalized, const StepSizes& steps)
{
    check_steps(steps, normalized.cols());
    MatrixXi out(normalized.rows(), normalized.cols());
    for (Eigen::Index m = 0; m < normalized.rows(); ++m)
        for (Eigen::Index c = 0; c < normalized.cols(); ++c)
            out(m, c) = static_cast<std::int64_t>(
                round_half_away(static_cast<double>(normalized(m, c)) / steps.delta[c]));
    return out;
}

inline MatrixXd dequantize(const MatrixXi& symbols, const StepSizes& steps)
{
    check_steps(steps, symbols.cols());
    return symbols.cast<double>() * steps.delta.asDiagonal();
}

enum class QuantMode { Training, Inference };

// Additive-noise stand-in for rounding: Ubar / delta + W, W ~ iid U(-0.5, 0.5).
// The caller rescales by delta where the rounded value would be used.
template <typename Derived>
MatrixXd noise_proxy(const Eigen::MatrixBase<Derived>& normalized, const StepSizes& steps, Rng& rng,
                     QuantMode mode = QuantMode::Training)
{
    if (mode != QuantMode::Training)
        throw UsageError("noise proxy is a training-time operation");
    check_steps(steps, normalized.cols());
    MatrixXd out(normalized.rows(), normalized.cols());
    for (Eigen::Index m = 0; m < normalized.rows(); ++m)
        for (Eigen::Index c = 0; c < normalized.cols(); ++c)
            out(m, c) = static_cast<double>(normalized(m, c)) / steps.delta[c] + (rng.uniform() - 0.5);
    return out;
}

// Baseline sweep steps 2^0 .. 2^10.
inline double baseline_step(int exponent) { return std::ldexp(1.0, exponent); }

}  // namespace lvac

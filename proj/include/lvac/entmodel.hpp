#pragma once

#include <vector>

#include "lvac/core.hpp"

namespace lvac {

// A univariate monotone CDF built from a 1 -> 3 -> 3 -> 1 stack. Each
// hidden layer is h = softplus(H) x + b followed by g = h + tanh(a) * tanh(h);
// the output is sigmoid(softplus(H3) g + b3). Softplus keeps the matrices
// positive and |tanh(a)| < 1 keeps every layer increasing.
//
// Raw parameter layout (28 values):
//   [0,3) H1  [3,6) b1  [6,9) a1  [9,18) H2 (row-major)  [18,21) b2
//   [21,24) a2  [24,27) H3  [27] b3
inline constexpr int kCdfParams = 28;
inline constexpr int kCdfWidth = 3;
using CdfParams = Eigen::Matrix<double, kCdfParams, 1>;

CdfParams default_cdf_params(Rng& rng);

double cdf_logit(const CdfParams& phi, double u);
double cdf(const CdfParams& phi, double u);

// CDF(u + 0.5) - CDF(u - 0.5), computed without cancellation in the tails.
double pmf(const CdfParams& phi, double u);

// Lower bound on the probability inside the training loss. The gradient
// passes through the bound so that outliers still pull mass toward them.
inline constexpr double kTrainProbabilityBound = 1e-9;
// Floor used when estimating inference code lengths.
inline constexpr double kInferenceProbabilityFloor = 1.0 / 32768.0;

enum class RateMode { Training, Inference };

// -log2 p(u) and optionally its gradient with respect to u and phi
// (accumulated into `dphi`, scaled by `weight`).
double bits_with_grad(const CdfParams& phi, double u, RateMode mode, double weight, double* du,
                      CdfParams* dphi);

// One model per (coded binary level, channel).
class EntropyModelBank {
public:
    EntropyModelBank() = default;
    EntropyModelBank(std::vector<int> levels, int channels, Rng& rng);

    const std::vector<int>& levels() const { return levels_; }
    int channels() const { return channels_; }
    std::size_t group_count() const { return levels_.size() * static_cast<std::size_t>(channels_); }

    // Throws DataError when no model exists for (level, channel).
    std::size_t group(int level, int channel) const;

    CdfParams model(std::size_t g) const { return params.row(static_cast<Eigen::Index>(g)).transpose(); }

    // G x 28, row g = level_index * C + channel.
    Matrix<double> params;

private:
    std::vector<int> levels_;
    std::vector<int> level_index_;  // level -> index or -1
    int channels_ = 0;
};

std::size_t parameter_count(const EntropyModelBank& bank);
std::size_t parameter_count(std::size_t levels, std::size_t channels);

// Rate proxy R = -sum log2 p_{level(m), c}(U[m,c]) over rows m in
// [first_row, U.rows()). `row_levels[m]` labels each row. When `dU` or
// `dparams` are given they receive the gradient of R (dU is overwritten on
// the covered rows, dparams is overwritten entirely).
double rate_bits(const EntropyModelBank& bank, const MatrixXd& U, const std::vector<int>& row_levels,
                 Eigen::Index first_row = 0, RateMode mode = RateMode::Training, MatrixXd* dU = nullptr,
                 MatrixXd* dparams = nullptr);

}  // namespace lvac

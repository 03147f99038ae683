#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lvac/cbn.hpp"
#include "lvac/entmodel.hpp"
#include "lvac/partition.hpp"
#include "lvac/quant.hpp"
#include "lvac/raht.hpp"

namespace lvac {

struct TrainConfig {
    double lambda = 1e-3;
    int steps = 3000;
    double learning_rate = 0.01;
    std::uint64_t seed = 1;
    bool freeze_cbn = false;
    bool freeze_normalization = false;
    int target_level = 24;
    CbnSpec spec = CbnSpec::mlp(64);
    // Starting weights; required when freeze_cbn is set.
    std::optional<CbnParams> cbn_weights;
    // Standard deviation of the initial latents beyond the first three
    // channels.
    double init_noise = 0.01;
    // The learning rate is constant up to decay_start * steps, then follows
    // a half cosine down to final_lr_ratio * learning_rate at the last step.
    // decay_start = 1 keeps it constant.
    double decay_start = 0.5;
    double final_lr_ratio = 0.1;

    // 25K steps at a constant learning rate, as in the full-scale experiments.
    static TrainConfig paper_schedule();
    void validate() const;
    double learning_rate_at(std::int64_t step) const;
};

struct AdamMoments {
    MatrixXd V;
    VectorXd log_delta;
    MatrixXd entropy;
    VectorXd cbn;
};

struct TrainState {
    int target_level = 0;
    bool normalized = true;
    CoefficientSet<double> V;  // N x C
    VectorXd log_delta;        // step sizes are exp(log_delta)
    EntropyModelBank entropy;
    CbnParams cbn;
    AdamMoments first;
    AdamMoments second;
    std::int64_t step = 0;

    const CbnSpec& spec() const { return cbn.spec; }
    Eigen::Index channels() const { return V.channels(); }
    StepSizes steps() const { return {log_delta.array().exp().matrix(), true}; }
};

struct LossTerms {
    double J = 0.0;
    double D = 0.0;  // squared error, attributes in [0,1]
    double R = 0.0;  // bits
};

struct GradientSet {
    MatrixXd V;
    VectorXd log_delta;
    MatrixXd entropy;
    VectorXd cbn;
};

// Fixed per-cloud quantities shared by every step.
class TrainingProblem {
public:
    TrainingProblem(const VoxelizedPointCloud& cloud, const PartitionTree& tree, bool normalized);

    const PartitionTree& tree() const { return *tree_; }
    const MatrixXd& targets() const { return targets_; }
    const CbnBatch& batch() const { return batch_; }
    const std::vector<int>& row_levels() const { return row_levels_; }
    bool normalized() const { return normalized_; }

    // s_m * delta_c / q_m with q = 2^8 on the root row and 1 elsewhere.
    MatrixXd step_grid(const VectorXd& delta) const;

private:
    const PartitionTree* tree_;
    MatrixXd targets_;
    CbnBatch batch_;
    VectorXd scale_;
    VectorXd gain_;
    std::vector<int> row_levels_;
    bool normalized_;
};

inline constexpr double kRootGain = 256.0;

// Root-to-leaf point batch (block-local coordinates) for a tree.
CbnBatch make_batch(const VoxelizedPointCloud& cloud, const PartitionTree& tree);

// iid U(-1/2, 1/2) in row-major order.
MatrixXd draw_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);
MatrixXd step_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, std::int64_t step);

// J = D + lambda R under the noise proxy; fills `grad` when given.
LossTerms evaluate(const TrainingProblem& problem, const TrainState& state, double lambda,
                   const MatrixXd& noise, GradientSet* grad = nullptr, bool freeze_cbn = false);

TrainState init_state(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainConfig& config);

LossTerms loss(const TrainState& state, const VoxelizedPointCloud& cloud, const PartitionTree& tree,
               const TrainConfig& config, Rng& rng);
GradientSet gradients(const TrainState& state, const VoxelizedPointCloud& cloud, const PartitionTree& tree,
                      const TrainConfig& config, Rng& rng);

// Full-batch Adam. Throws DivergenceError on a non-finite loss or gradient.
TrainState train(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainConfig& config,
                 std::vector<LossTerms>* history = nullptr);
// Continues from `state` until config.steps steps have been taken in total.
void train_steps(TrainState& state, const TrainingProblem& problem, const TrainConfig& config,
                 std::vector<LossTerms>* history = nullptr);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace lvac

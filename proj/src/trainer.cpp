#include "lvac/trainer.hpp"

#include <cmath>
#include <sstream>

#include "lvac/serialize.hpp"

namespace lvac {

TrainConfig TrainConfig::paper_schedule()
{
    TrainConfig c;
    c.steps = 25000;
    c.decay_start = 1.0;
    return c;
}

double TrainConfig::learning_rate_at(std::int64_t step) const
{
    const double begin = decay_start * steps;
    if (static_cast<double>(step) < begin || steps <= 0)
        return learning_rate;
    const double t = std::min(1.0, (static_cast<double>(step) - begin) / std::max(1.0, steps - begin));
    const double ratio = final_lr_ratio + (1.0 - final_lr_ratio) * 0.5 * (1.0 + std::cos(M_PI * t));
    return learning_rate * ratio;
}

void TrainConfig::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw UsageError("lambda must be a finite non-negative number");
    if (steps < 0)
        throw UsageError("steps must be non-negative");
    if (!(learning_rate > 0.0))
        throw UsageError("learning rate must be positive");
    if (!(decay_start >= 0.0 && decay_start <= 1.0) || !(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0))
        throw UsageError("learning rate schedule out of range");
    spec.validate();
    if (freeze_cbn && !cbn_weights)
        throw UsageError("freezing the CBN requires pre-trained weights");
    if (cbn_weights && !(cbn_weights->spec == spec))
        throw UsageError("pre-trained CBN weights do not match the requested network");
}

CbnBatch make_batch(const VoxelizedPointCloud& cloud, const PartitionTree& tree)
{
    CbnBatch batch;
    const auto n = static_cast<Eigen::Index>(cloud.size());
    batch.local.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto x = tree.local_coordinates(cloud.positions[static_cast<std::size_t>(i)]);
        batch.local.row(i) << x[0], x[1], x[2];
    }
    batch.block_begin.resize(tree.block_count() + 1);
    for (std::size_t b = 0; b < tree.block_count(); ++b)
        batch.block_begin[b] = tree.leaf_range(b).first;
    batch.block_begin.back() = static_cast<std::uint32_t>(cloud.size());
    return batch;
}

TrainingProblem::TrainingProblem(const VoxelizedPointCloud& cloud, const PartitionTree& tree, bool normalized)
    : tree_(&tree), targets_(cloud.attributes), batch_(make_batch(cloud, tree)),
      row_levels_(coefficient_levels(tree)), normalized_(normalized)
{
    if (cloud.size() != tree.point_count())
        throw DataError("cloud and tree disagree on the point count");
    const auto n = static_cast<Eigen::Index>(tree.branching_count() + 1);
    scale_ = normalized ? scale_factors<double>(tree) : VectorXd::Ones(n);
    gain_ = VectorXd::Ones(n);
    gain_[0] = kRootGain;
}

MatrixXd TrainingProblem::step_grid(const VectorXd& delta) const
{
    return (scale_.cwiseQuotient(gain_)) * delta.transpose();
}

MatrixXd draw_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    MatrixXd w(rows, cols);
    for (Eigen::Index m = 0; m < rows; ++m)
        for (Eigen::Index c = 0; c < cols; ++c)
            w(m, c) = rng.uniform() - 0.5;
    return w;
}

MatrixXd step_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, std::int64_t step)
{
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step) + 0x9e3779b9ULL));
    return draw_noise(rows, cols, rng);
}

LossTerms evaluate(const TrainingProblem& problem, const TrainState& state, double lambda, const MatrixXd& noise,
                   GradientSet* grad, bool freeze_cbn)
{
    const PartitionTree& tree = problem.tree();
    const MatrixXd& V = state.V.rows;
    if (V.rows() != static_cast<Eigen::Index>(tree.branching_count() + 1) || noise.rows() != V.rows() ||
        noise.cols() != V.cols() || state.log_delta.size() != V.cols() || state.cbn.spec.channels != V.cols())
        throw DataError("training state does not match the tree");

    const VectorXd delta = state.log_delta.array().exp().matrix();
    const MatrixXd grid = problem.step_grid(delta);
    const MatrixXd U = V.cwiseQuotient(grid);
    const MatrixXd Ut = U + noise;
    const MatrixXd Vhat = Ut.cwiseProduct(grid);
    const MatrixXd Zhat = synthesize(tree, Vhat);

    CbnCache cache;
    const MatrixXd Y = forward(state.cbn, problem.batch(), Zhat, grad ? &cache : nullptr);
    const MatrixXd E = Y - problem.targets();

    LossTerms out;
    out.D = E.squaredNorm();

    MatrixXd dR;
    MatrixXd dphi;
    if (grad)
        dR = MatrixXd::Zero(U.rows(), U.cols());
    out.R = rate_bits(state.entropy, Ut, problem.row_levels(), 1, RateMode::Training, grad ? &dR : nullptr,
                      grad ? &dphi : nullptr);
    out.J = out.D + lambda * out.R;
    if (!grad)
        return out;

    const CbnGradient g = backward(state.cbn, problem.batch(), Zhat, cache, 2.0 * E);
    const MatrixXd dVhat = synthesize_adjoint(tree, g.latents);

    // Vhat = V + W * grid, Ut = V / grid + W, grid proportional to delta_c.
    grad->V = dVhat + lambda * dR.cwiseQuotient(grid);
    grad->log_delta = (dVhat.cwiseProduct(noise).cwiseProduct(grid) - lambda * dR.cwiseProduct(U))
                          .colwise()
                          .sum()
                          .transpose();
    grad->entropy = lambda * dphi;
    grad->cbn = freeze_cbn ? VectorXd::Zero(g.params.size()) : g.params;
    return out;
}

TrainState init_state(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainConfig& config)
{
    config.validate();
    if (tree.target_level() != config.target_level)
        throw UsageError("tree target level does not match the configuration");
    Rng rng(mix_seed(config.seed, 0x1a7e17));
    const Eigen::Index C = config.spec.channels;
    const auto M = static_cast<Eigen::Index>(tree.block_count());

    MatrixXd Z = MatrixXd::Zero(M, C);
    for (Eigen::Index b = 0; b < M; ++b) {
        const auto [begin, end] = tree.leaf_range(static_cast<std::size_t>(b));
        Z.row(b).head(3) = cloud.attributes.middleRows(begin, end - begin).colwise().mean();
        for (Eigen::Index c = 3; c < C; ++c)
            Z(b, c) = config.init_noise * rng.normal();
    }

    TrainState s;
    s.target_level = tree.target_level();
    s.normalized = !config.freeze_normalization;
    s.V = analyze(tree, Z);
    s.log_delta = VectorXd::Zero(C);
    s.entropy = EntropyModelBank(tree.coded_levels(), static_cast<int>(C), rng);
    s.cbn = config.cbn_weights ? *config.cbn_weights : init_params(config.spec, rng);

    s.first = {MatrixXd::Zero(s.V.rows.rows(), C), VectorXd::Zero(C),
               MatrixXd::Zero(s.entropy.params.rows(), s.entropy.params.cols()), VectorXd::Zero(s.cbn.data.size())};
    s.second = s.first;
    return s;
}

LossTerms loss(const TrainState& state, const VoxelizedPointCloud& cloud, const PartitionTree& tree,
               const TrainConfig& config, Rng& rng)
{
    const TrainingProblem problem(cloud, tree, !config.freeze_normalization);
    const MatrixXd noise = draw_noise(state.V.rows.rows(), state.V.rows.cols(), rng);
    const LossTerms t = evaluate(problem, state, config.lambda, noise);
    if (!std::isfinite(t.J))
        throw DivergenceError("non-finite loss");
    return t;
}

GradientSet gradients(const TrainState& state, const VoxelizedPointCloud& cloud, const PartitionTree& tree,
                      const TrainConfig& config, Rng& rng)
{
    const TrainingProblem problem(cloud, tree, !config.freeze_normalization);
    const MatrixXd noise = draw_noise(state.V.rows.rows(), state.V.rows.cols(), rng);
    GradientSet g;
    evaluate(problem, state, config.lambda, noise, &g, config.freeze_cbn);
    return g;
}

namespace {

struct AdamStep {
    double lr;
    double c1;  // 1 - beta1^t
    double c2;  // 1 - beta2^t
    static constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    template <typename P, typename G>
    void operator()(P& param, const G& grad, P& m, P& v) const
    {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

bool all_finite(const GradientSet& g)
{
    return g.V.allFinite() && g.log_delta.allFinite() && g.entropy.allFinite() && g.cbn.allFinite();
}

}  // namespace

void train_steps(TrainState& state, const TrainingProblem& problem, const TrainConfig& config,
                 std::vector<LossTerms>* history)
{
    config.validate();
    if (problem.normalized() != state.normalized)
        throw UsageError("normalization setting differs from the state");
    const Eigen::Index rows = state.V.rows.rows(), cols = state.V.rows.cols();
    GradientSet g;
    while (state.step < static_cast<std::int64_t>(config.steps)) {
        const MatrixXd noise = step_noise(rows, cols, config.seed, state.step);
        const LossTerms t = evaluate(problem, state, config.lambda, noise, &g, config.freeze_cbn);
        if (!std::isfinite(t.J) || !all_finite(g)) {
            std::ostringstream msg;
            msg << "training diverged at step " << state.step << " (D=" << t.D << ", R=" << t.R << ")";
            throw DivergenceError(msg.str());
        }
        if (history)
            history->push_back(t);

        ++state.step;
        const double t1 = static_cast<double>(state.step);
        const AdamStep adam{config.learning_rate_at(static_cast<std::int64_t>(state.step) - 1),
                            1.0 - std::pow(AdamStep::b1, t1),
                            1.0 - std::pow(AdamStep::b2, t1)};
        adam(state.V.rows, g.V, state.first.V, state.second.V);
        adam(state.log_delta, g.log_delta, state.first.log_delta, state.second.log_delta);
        adam(state.entropy.params, g.entropy, state.first.entropy, state.second.entropy);
        if (!config.freeze_cbn)
            adam(state.cbn.data, g.cbn, state.first.cbn, state.second.cbn);
    }
}

TrainState train(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainConfig& config,
                 std::vector<LossTerms>* history)
{
    TrainState state = init_state(cloud, tree, config);
    const TrainingProblem problem(cloud, tree, state.normalized);
    train_steps(state, problem, config, history);
    return state;
}

namespace {

constexpr std::uint8_t kCheckpointVersion = 1;

void put_matrix(ByteWriter& w, const MatrixXd& m)
{
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            w.f64(m(i, j));
}

MatrixXd get_matrix(ByteReader& r)
{
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining())
        throw DataError("checkpoint tensor exceeds file size");
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = r.f64();
    return m;
}

void put_moments(ByteWriter& w, const AdamMoments& a)
{
    put_matrix(w, a.V);
    put_matrix(w, a.log_delta);
    put_matrix(w, a.entropy);
    put_matrix(w, a.cbn);
}

AdamMoments get_moments(ByteReader& r)
{
    AdamMoments a;
    a.V = get_matrix(r);
    a.log_delta = get_matrix(r);
    a.entropy = get_matrix(r);
    a.cbn = get_matrix(r);
    return a;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state)
{
    ByteWriter w;
    w.tag("LVCK");
    w.u8(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(state.target_level));
    w.u8(state.normalized ? 1 : 0);
    w.u64(static_cast<std::uint64_t>(state.step));
    const auto cbn = encode_cbn_params(state.cbn);
    w.u32(static_cast<std::uint32_t>(cbn.size()));
    w.raw(cbn);
    // Full-precision copy so that training resumes exactly.
    put_matrix(w, state.cbn.data);
    put_matrix(w, state.V.rows);
    put_matrix(w, state.log_delta);
    const auto& levels = state.entropy.levels();
    w.u16(static_cast<std::uint16_t>(levels.size()));
    for (int l : levels)
        w.u8(static_cast<std::uint8_t>(l));
    w.u16(static_cast<std::uint16_t>(state.entropy.channels()));
    put_matrix(w, state.entropy.params);
    put_moments(w, state.first);
    put_moments(w, state.second);
    w.u32(crc32(w.bytes()));
    return std::move(w.bytes());
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 8)
        throw DataError("checkpoint too short");
    ByteReader tail(bytes.subspan(bytes.size() - 4));
    if (crc32(bytes.first(bytes.size() - 4)) != tail.u32())
        throw DataError("checkpoint checksum mismatch");
    ByteReader r(bytes.first(bytes.size() - 4));
    r.expect_tag("LVCK", "checkpoint");
    if (r.u8() != kCheckpointVersion)
        throw DataError("unsupported checkpoint version");
    TrainState s;
    s.target_level = r.u8();
    s.normalized = r.u8() != 0;
    s.step = static_cast<std::int64_t>(r.u64());
    const std::uint32_t cbn_bytes = r.u32();
    s.cbn = decode_cbn_params(r.take(cbn_bytes));
    const MatrixXd theta = get_matrix(r);
    if (theta.size() != s.cbn.data.size())
        throw DataError("checkpoint CBN size mismatch");
    s.cbn.data = theta;
    s.V.rows = get_matrix(r);
    s.log_delta = get_matrix(r);
    std::vector<int> levels(r.u16());
    for (int& l : levels)
        l = r.u8();
    const int channels = r.u16();
    Rng unused(0);
    s.entropy = EntropyModelBank(levels, channels, unused);
    s.entropy.params = get_matrix(r);
    s.first = get_moments(r);
    s.second = get_moments(r);
    if (r.remaining() != 0)
        throw DataError("trailing bytes in checkpoint");
    if (s.V.rows.cols() != s.cbn.spec.channels || s.log_delta.size() != s.V.rows.cols() ||
        s.entropy.params.rows() != static_cast<Eigen::Index>(s.entropy.group_count()))
        throw DataError("inconsistent checkpoint tensors");
    return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path)
{
    write_file(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace lvac

#include "lvac/cbn.hpp"

#include <numeric>

namespace lvac {

std::string CbnSpec::name() const
{
    switch (family) {
    case CbnFamily::Linear3x3: return "linear(3x3)";
    case CbnFamily::Mlp: return "mlp(" + std::to_string(3 + channels) + "x" + std::to_string(hidden) + "x3)";
    case CbnFamily::PositionAttention: return "pa(3x" + std::to_string(channels) + "x3)";
    }
    return "?";
}

void CbnSpec::validate() const
{
    if (family == CbnFamily::Linear3x3 && channels != 3)
        throw UsageError("linear(3x3) requires 3 latent channels");
    if (channels <= 0 || channels > 255)
        throw UsageError("latent channels must be in [1, 255]");
    if (family == CbnFamily::Mlp && (hidden <= 0 || hidden > 65535))
        throw UsageError("mlp hidden width must be in [1, 65535]");
}

std::optional<CbnSpec> parse_cbn(const std::string& family, int hidden, int channels)
{
    if (family == "linear" || family == "linear(3x3)")
        return CbnSpec::linear();
    if (family == "mlp")
        return CbnSpec::mlp(hidden, channels);
    if (family == "mlp(35x256x3)")
        return CbnSpec::mlp(256, 32);
    if (family == "mlp(35x64x3)")
        return CbnSpec::mlp(64, 32);
    if (family == "pa")
        return CbnSpec::pa(channels);
    if (family == "pa(3x32x3)")
        return CbnSpec::pa(32);
    return std::nullopt;
}

std::vector<TensorShape> tensor_shapes(const CbnSpec& spec)
{
    const Eigen::Index C = spec.channels, H = spec.hidden;
    switch (spec.family) {
    case CbnFamily::Linear3x3: return {{3, 3}};
    case CbnFamily::Mlp: return {{3, 1}, {3, H}, {H, 1}, {H, 3 + C}};
    case CbnFamily::PositionAttention: return {{3, 1}, {3, C}, {C, 1}, {C, 3}};
    }
    return {};
}

std::size_t param_count(const CbnSpec& spec)
{
    std::size_t n = 0;
    for (const auto& s : tensor_shapes(spec))
        n += static_cast<std::size_t>(s.rows * s.cols);
    return n;
}

namespace {

Eigen::Index tensor_offset(const CbnSpec& spec, std::size_t k)
{
    const auto shapes = tensor_shapes(spec);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < k; ++i)
        off += shapes[i].rows * shapes[i].cols;
    return off;
}

}  // namespace

CbnParams::ConstMap CbnParams::tensor(std::size_t k) const
{
    const auto shape = tensor_shapes(spec).at(k);
    return ConstMap(data.data() + tensor_offset(spec, k), shape.rows, shape.cols);
}

CbnParams::MutMap CbnParams::tensor(std::size_t k)
{
    const auto shape = tensor_shapes(spec).at(k);
    return MutMap(data.data() + tensor_offset(spec, k), shape.rows, shape.cols);
}

CbnParams init_params(const CbnSpec& spec, Rng& rng)
{
    spec.validate();
    CbnParams p(spec);
    auto fill = [&](CbnParams::MutMap m, double bound) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = rng.uniform(-bound, bound);
    };
    switch (spec.family) {
    case CbnFamily::Linear3x3: p.tensor(0) = Eigen::Matrix3d::Identity(); break;
    case CbnFamily::Mlp:
        fill(p.tensor(1), 1.0 / std::sqrt(static_cast<double>(spec.hidden)));
        fill(p.tensor(3), 1.0 / std::sqrt(static_cast<double>(3 + spec.channels)));
        break;
    case CbnFamily::PositionAttention:
        fill(p.tensor(1), 1.0 / std::sqrt(static_cast<double>(spec.channels)));
        fill(p.tensor(3), 4.0 / std::sqrt(3.0));
        break;
    }
    return p;
}

namespace {

void check_shapes(const CbnParams& params, const CbnBatch& batch, const MatrixXd& latents)
{
    if (static_cast<std::size_t>(params.data.size()) != param_count(params.spec))
        throw DataError("CBN parameter vector has the wrong length");
    if (latents.cols() != params.spec.channels)
        throw DataError("latent width does not match the CBN");
    if (static_cast<std::size_t>(latents.rows()) != batch.blocks())
        throw DataError("latent rows do not match the batch blocks");
    if (batch.block_begin.empty() || batch.local.cols() != 3 ||
        batch.block_begin.back() != static_cast<std::uint32_t>(batch.local.rows()))
        throw DataError("malformed CBN batch");
}

template <typename Fn>
void for_each_block(const CbnBatch& batch, Fn&& fn)
{
    for (std::size_t b = 0; b < batch.blocks(); ++b) {
        const Eigen::Index begin = batch.block_begin[b];
        const Eigen::Index count = static_cast<Eigen::Index>(batch.block_begin[b + 1]) - begin;
        if (count > 0)
            fn(static_cast<Eigen::Index>(b), begin, count);
    }
}

// One point per block: block rows and point rows coincide.
bool one_per_block(const CbnBatch& batch) { return static_cast<std::size_t>(batch.points()) == batch.blocks(); }

// dst.row(p) += per_block.row(block of p)
void add_per_block(MatrixXd& dst, const MatrixXd& per_block, const CbnBatch& batch)
{
    if (one_per_block(batch)) {
        dst += per_block;
        return;
    }
    for_each_block(batch, [&](Eigen::Index b, Eigen::Index begin, Eigen::Index n) {
        dst.middleRows(begin, n).rowwise() += per_block.row(b);
    });
}

// dst.row(p) *= per_block.row(block of p), elementwise
void scale_per_block(MatrixXd& dst, const MatrixXd& per_block, const CbnBatch& batch)
{
    if (one_per_block(batch)) {
        dst.array() *= per_block.array();
        return;
    }
    for_each_block(batch, [&](Eigen::Index b, Eigen::Index begin, Eigen::Index n) {
        dst.middleRows(begin, n).array().rowwise() *= per_block.row(b).array();
    });
}

// Row sums of `src` over the points of each block.
MatrixXd sum_per_block(const MatrixXd& src, const CbnBatch& batch)
{
    if (one_per_block(batch))
        return src;
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(batch.blocks()), src.cols());
    for_each_block(batch, [&](Eigen::Index b, Eigen::Index begin, Eigen::Index n) {
        out.row(b) = src.middleRows(begin, n).colwise().sum();
    });
    return out;
}

}  // namespace

MatrixXd forward(const CbnParams& params, const CbnBatch& batch, const MatrixXd& latents, CbnCache* cache)
{
    check_shapes(params, batch, latents);
    const Eigen::Index P = batch.points();
    MatrixXd Y(P, 3);
    switch (params.spec.family) {
    case CbnFamily::Linear3x3: {
        const MatrixXd per_block = latents * params.tensor(0).transpose();
        Y.setZero();
        add_per_block(Y, per_block, batch);
        break;
    }
    case CbnFamily::Mlp: {
        const auto b3 = params.tensor(0);
        const auto W_out = params.tensor(1);
        const auto b_h = params.tensor(2);
        const auto W_in = params.tensor(3);
        // Split W_in into position and latent columns; the latent term is per block.
        MatrixXd pre(P, params.spec.hidden);
        pre.noalias() = batch.local * W_in.leftCols(3).transpose();
        MatrixXd block_term(latents.rows(), params.spec.hidden);
        block_term.noalias() = latents * W_in.rightCols(params.spec.channels).transpose();
        block_term.rowwise() += b_h.col(0).transpose();
        add_per_block(pre, block_term, batch);
        MatrixXd out(P, 3);
        out.noalias() = pre.cwiseMax(0.0) * W_out.transpose();
        out.rowwise() += b3.col(0).transpose();
        Y = out.cwiseMax(0.0);
        if (cache) {
            cache->hidden_pre = std::move(pre);
            cache->out_pre = std::move(out);
        }
        break;
    }
    case CbnFamily::PositionAttention: {
        const auto b3 = params.tensor(0);
        const auto W_out = params.tensor(1);
        const auto b_c = params.tensor(2);
        const auto W_in = params.tensor(3);
        MatrixXd pre = (batch.local * W_in.transpose()).rowwise() + b_c.col(0).transpose();
        MatrixXd mod = pre.array().sin().matrix();
        scale_per_block(mod, latents, batch);
        Y = (mod * W_out.transpose()).rowwise() + b3.col(0).transpose();
        if (cache)
            cache->hidden_pre = std::move(pre);
        break;
    }
    }
    return Y;
}

CbnGradient backward(const CbnParams& params, const CbnBatch& batch, const MatrixXd& latents,
                     const CbnCache& cache, const MatrixXd& upstream)
{
    check_shapes(params, batch, latents);
    CbnGradient g;
    g.params = VectorXd::Zero(params.data.size());
    g.latents = MatrixXd::Zero(latents.rows(), latents.cols());
    auto view = [&](std::size_t k) {
        const auto shape = tensor_shapes(params.spec)[k];
        return Eigen::Map<MatrixXd>(g.params.data() + tensor_offset(params.spec, k), shape.rows, shape.cols);
    };

    switch (params.spec.family) {
    case CbnFamily::Linear3x3: {
        const auto A = params.tensor(0);
        const MatrixXd per_block = sum_per_block(upstream, batch);
        view(0) = per_block.transpose() * latents;
        g.latents = per_block * A;
        break;
    }
    case CbnFamily::Mlp: {
        const auto W_out = params.tensor(1);
        const auto W_in = params.tensor(3);
        const MatrixXd d_out = (cache.out_pre.array() > 0.0).select(upstream, 0.0);
        view(0) = d_out.colwise().sum().transpose();
        view(1).noalias() = d_out.transpose() * cache.hidden_pre.cwiseMax(0.0);
        MatrixXd d_pre(d_out.rows(), params.spec.hidden);
        d_pre.noalias() = d_out * W_out;
        d_pre = (cache.hidden_pre.array() > 0.0).select(d_pre, 0.0);
        view(2) = d_pre.colwise().sum().transpose();
        MatrixXd reduced;
        const MatrixXd& d_block = one_per_block(batch) ? d_pre : (reduced = sum_per_block(d_pre, batch));
        auto d_in = view(3);
        d_in.leftCols(3).noalias() = d_pre.transpose() * batch.local;
        d_in.rightCols(params.spec.channels).noalias() = d_block.transpose() * latents;
        g.latents.noalias() = d_block * W_in.rightCols(params.spec.channels);
        break;
    }
    case CbnFamily::PositionAttention: {
        const auto W_out = params.tensor(1);
        const MatrixXd sin_pre = cache.hidden_pre.array().sin().matrix();
        MatrixXd mod = sin_pre;
        scale_per_block(mod, latents, batch);
        view(0) = upstream.colwise().sum().transpose();
        view(1) = upstream.transpose() * mod;
        const MatrixXd d_mod = upstream * W_out;  // P x C
        g.latents = sum_per_block(d_mod.cwiseProduct(sin_pre), batch);
        MatrixXd d_sin = d_mod;
        scale_per_block(d_sin, latents, batch);
        const MatrixXd d_pre = d_sin.cwiseProduct(cache.hidden_pre.array().cos().matrix());
        view(2) = d_pre.colwise().sum().transpose();
        view(3) = d_pre.transpose() * batch.local;
        break;
    }
    }
    return g;
}

namespace {

CbnBatch single_point_batch(const Eigen::Vector3d& x)
{
    CbnBatch batch;
    batch.local = x.transpose();
    batch.block_begin = {0, 1};
    return batch;
}

}  // namespace

Eigen::Vector3d forward(const CbnParams& params, const Eigen::Vector3d& x, const VectorXd& z)
{
    const MatrixXd latents = z.transpose();
    return forward(params, single_point_batch(x), latents).row(0).transpose();
}

CbnGradient backward(const CbnParams& params, const Eigen::Vector3d& x, const VectorXd& z,
                     const Eigen::Vector3d& upstream)
{
    const CbnBatch batch = single_point_batch(x);
    const MatrixXd latents = z.transpose();
    CbnCache cache;
    forward(params, batch, latents, &cache);
    return backward(params, batch, latents, cache, upstream.transpose());
}

}  // namespace lvac

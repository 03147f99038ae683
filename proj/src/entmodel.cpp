#include "lvac/entmodel.hpp"

#include <algorithm>
#include <array>

namespace lvac {

namespace {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Transformed parameters of one model, ready for repeated evaluation.
struct Kernel {
    std::array<double, 3> S1, b1, A1;
    std::array<double, 9> S2;
    std::array<double, 3> b2, A2, S3;
    double b3;

    explicit Kernel(const CdfParams& phi)
    {
        for (int j = 0; j < 3; ++j) {
            S1[j] = softplus(phi[j]);
            b1[j] = phi[3 + j];
            A1[j] = std::tanh(phi[6 + j]);
            b2[j] = phi[18 + j];
            A2[j] = std::tanh(phi[21 + j]);
            S3[j] = softplus(phi[24 + j]);
        }
        for (int k = 0; k < 9; ++k)
            S2[k] = softplus(phi[9 + k]);
        b3 = phi[27];
    }
};

// Gradient with respect to transformed parameters, mapped to raw ones once.
struct KernelGrad {
    std::array<double, kCdfParams> d{};

    void add_to_raw(const CdfParams& phi, CdfParams& out) const
    {
        for (int k = 0; k < kCdfParams; ++k) {
            const bool is_matrix = k < 3 || (k >= 9 && k < 18) || (k >= 24 && k < 27);
            const bool is_factor = (k >= 6 && k < 9) || (k >= 21 && k < 24);
            if (is_matrix)
                out[k] += d[static_cast<std::size_t>(k)] * sigmoid(phi[k]);
            else if (is_factor) {
                const double t = std::tanh(phi[k]);
                out[k] += d[static_cast<std::size_t>(k)] * (1.0 - t * t);
            } else
                out[k] += d[static_cast<std::size_t>(k)];
        }
    }
};

struct Trace {
    std::array<double, 3> t1, g1, t2, g2;
};

inline double forward(const Kernel& k, double u, Trace& tr)
{
    for (int j = 0; j < 3; ++j) {
        const double h = k.S1[j] * u + k.b1[j];
        tr.t1[j] = std::tanh(h);
        tr.g1[j] = h + k.A1[j] * tr.t1[j];
    }
    double l = k.b3;
    for (int i = 0; i < 3; ++i) {
        const double h = k.S2[3 * i] * tr.g1[0] + k.S2[3 * i + 1] * tr.g1[1] + k.S2[3 * i + 2] * tr.g1[2] + k.b2[i];
        tr.t2[i] = std::tanh(h);
        tr.g2[i] = h + k.A2[i] * tr.t2[i];
        l += k.S3[i] * tr.g2[i];
    }
    return l;
}

// Accumulates dl * dlogit/dparams into g, returns dlogit/du * dl.
inline double backward(const Kernel& k, const Trace& tr, double u, double dl, KernelGrad* g)
{
    std::array<double, 3> dh2, dg1{0.0, 0.0, 0.0};
    for (int i = 0; i < 3; ++i) {
        const double dg2 = dl * k.S3[i];
        dh2[i] = dg2 * (1.0 + k.A2[i] * (1.0 - tr.t2[i] * tr.t2[i]));
        if (g) {
            g->d[24 + i] += dl * tr.g2[i];
            g->d[21 + i] += dg2 * tr.t2[i];
            g->d[18 + i] += dh2[i];
        }
        for (int j = 0; j < 3; ++j) {
            dg1[j] += dh2[i] * k.S2[3 * i + j];
            if (g)
                g->d[9 + 3 * i + j] += dh2[i] * tr.g1[j];
        }
    }
    if (g)
        g->d[27] += dl;
    double du = 0.0;
    for (int j = 0; j < 3; ++j) {
        const double dh1 = dg1[j] * (1.0 + k.A1[j] * (1.0 - tr.t1[j] * tr.t1[j]));
        if (g) {
            g->d[6 + j] += dg1[j] * tr.t1[j];
            g->d[3 + j] += dh1;
            g->d[j] += dh1 * u;
        }
        du += dh1 * k.S1[j];
    }
    return du;
}

// Probability mass of [u - 0.5, u + 0.5] from the two logits, plus the
// derivatives dp/dl_upper and dp/dl_lower.
inline double mass(double upper, double lower, double& dp_upper, double& dp_lower)
{
    const double su = sigmoid(upper), sl = sigmoid(lower);
    dp_upper = su * sigmoid(-upper);
    dp_lower = -sl * sigmoid(-lower);
    if (upper + lower > 0.0)
        return sigmoid(-lower) - sigmoid(-upper);
    return su - sl;
}

inline double bits_kernel(const Kernel& k, double u, RateMode mode, double weight, double* du, KernelGrad* g)
{
    Trace tu, tl;
    const double lu = forward(k, u + 0.5, tu);
    const double ll = forward(k, u - 0.5, tl);
    double dpu = 0.0, dpl = 0.0;
    double p = mass(lu, ll, dpu, dpl);
    if (mode == RateMode::Inference) {
        p = std::max(p, kInferenceProbabilityFloor);
    } else {
        p = std::max(p, kTrainProbabilityBound);
    }
    const double bits = -std::log2(p);
    if (du || g) {
        const double dbits_dp = -weight / (p * M_LN2);
        const double a = backward(k, tu, u + 0.5, dbits_dp * dpu, g);
        const double b = backward(k, tl, u - 0.5, dbits_dp * dpl, g);
        if (du)
            *du = a + b;
    }
    return bits;
}

// Batched variants over all values of one model. tanh and the logistic
// function are written through exp so that Eigen vectorizes them.
constexpr Eigen::Index kChunk = 256;
// Fixed capacity keeps every temporary on the stack.
using Column = Eigen::Array<double, Eigen::Dynamic, 1, Eigen::ColMajor, kChunk, 1>;
using Columns = Eigen::Array<double, Eigen::Dynamic, 3, Eigen::ColMajor, kChunk, 3>;

inline Column tanh_v(const Column& x) { return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0); }
// s = sigmoid(x) and n = sigmoid(-x) from one exp.
inline void sigmoid_pair(const Column& x, Column& s, Column& n)
{
    const Column e = (-x.abs()).exp();
    const Column big = 1.0 / (1.0 + e);
    const Column small = e * big;
    s = (x >= 0.0).select(big, small);
    n = (x >= 0.0).select(small, big);
}

struct BatchTrace {
    Columns t1, g1, t2, g2;
    Column logit;
};

void forward_batch(const Kernel& k, const Column& x, BatchTrace& tr)
{
    const Eigen::Index n = x.size();
    tr.t1.resize(n, 3);
    tr.g1.resize(n, 3);
    tr.t2.resize(n, 3);
    tr.g2.resize(n, 3);
    for (int j = 0; j < 3; ++j) {
        const Column h = k.S1[j] * x + k.b1[j];
        tr.t1.col(j) = tanh_v(h);
        tr.g1.col(j) = h + k.A1[j] * tr.t1.col(j);
    }
    tr.logit = Column::Constant(n, k.b3);
    for (int i = 0; i < 3; ++i) {
        const Column h = k.S2[3 * i] * tr.g1.col(0) + k.S2[3 * i + 1] * tr.g1.col(1) +
                         k.S2[3 * i + 2] * tr.g1.col(2) + k.b2[i];
        tr.t2.col(i) = tanh_v(h);
        tr.g2.col(i) = h + k.A2[i] * tr.t2.col(i);
        tr.logit += k.S3[i] * tr.g2.col(i);
    }
}

Column backward_batch(const Kernel& k, const BatchTrace& tr, const Column& x, const Column& dl, KernelGrad* g)
{
    Columns dg1 = Columns::Zero(x.size(), 3);
    for (int i = 0; i < 3; ++i) {
        const Column dg2 = dl * k.S3[i];
        const Column dh2 = dg2 * (1.0 + k.A2[i] * (1.0 - tr.t2.col(i).square()));
        if (g) {
            g->d[24 + i] += (dl * tr.g2.col(i)).sum();
            g->d[21 + i] += (dg2 * tr.t2.col(i)).sum();
            g->d[18 + i] += dh2.sum();
            for (int j = 0; j < 3; ++j)
                g->d[9 + 3 * i + j] += (dh2 * tr.g1.col(j)).sum();
        }
        for (int j = 0; j < 3; ++j)
            dg1.col(j) += dh2 * k.S2[3 * i + j];
    }
    if (g)
        g->d[27] += dl.sum();
    Column du = Column::Zero(x.size());
    for (int j = 0; j < 3; ++j) {
        const Column dh1 = dg1.col(j) * (1.0 + k.A1[j] * (1.0 - tr.t1.col(j).square()));
        if (g) {
            g->d[6 + j] += (dg1.col(j) * tr.t1.col(j)).sum();
            g->d[3 + j] += dh1.sum();
            g->d[j] += (dh1 * x).sum();
        }
        du += dh1 * k.S1[j];
    }
    return du;
}

// Total bits of the values `u`; `du` receives per-value gradients.
double bits_batch(const Kernel& k, const Column& u, RateMode mode, Column* du, KernelGrad* g)
{
    BatchTrace tu, tl;
    const Column xu = u + 0.5, xl = u - 0.5;
    forward_batch(k, xu, tu);
    forward_batch(k, xl, tl);
    Column su, nu, sl, nl;
    sigmoid_pair(tu.logit, su, nu);
    sigmoid_pair(tl.logit, sl, nl);
    const Column raw = (tu.logit + tl.logit > 0.0).select(nl - nu, su - sl);
    const double bound = mode == RateMode::Inference ? kInferenceProbabilityFloor : kTrainProbabilityBound;
    const Column p = raw.max(bound);
    const double bits = -p.log().sum() / M_LN2;
    if (du || g) {
        const Column dbits_dp = -1.0 / (p * M_LN2);
        const Column a = backward_batch(k, tu, xu, dbits_dp * su * nu, g);
        const Column b = backward_batch(k, tl, xl, -dbits_dp * sl * nl, g);
        if (du)
            *du = a + b;
    }
    return bits;
}

}  // namespace

CdfParams default_cdf_params(Rng& rng)
{
    // Initial logit is roughly u / 10.
    const double scale = std::cbrt(10.0);
    const double h_hidden = std::log(std::expm1(1.0 / scale / kCdfWidth));
    const double h_out = std::log(std::expm1(1.0 / scale));
    CdfParams phi;
    for (int j = 0; j < 3; ++j) {
        phi[j] = h_hidden;
        phi[3 + j] = rng.uniform(-0.5, 0.5);
        phi[6 + j] = 0.0;
        phi[18 + j] = rng.uniform(-0.5, 0.5);
        phi[21 + j] = 0.0;
        phi[24 + j] = h_out;
    }
    for (int k = 0; k < 9; ++k)
        phi[9 + k] = h_hidden;
    phi[27] = rng.uniform(-0.5, 0.5);
    return phi;
}

double cdf_logit(const CdfParams& phi, double u)
{
    Trace tr;
    return forward(Kernel(phi), u, tr);
}

double cdf(const CdfParams& phi, double u) { return sigmoid(cdf_logit(phi, u)); }

double pmf(const CdfParams& phi, double u)
{
    const Kernel k(phi);
    Trace a, b;
    double dpu = 0.0, dpl = 0.0;
    return mass(forward(k, u + 0.5, a), forward(k, u - 0.5, b), dpu, dpl);
}

double bits_with_grad(const CdfParams& phi, double u, RateMode mode, double weight, double* du, CdfParams* dphi)
{
    const Kernel k(phi);
    KernelGrad g;
    const double bits = bits_kernel(k, u, mode, weight, du, dphi ? &g : nullptr);
    if (dphi)
        g.add_to_raw(phi, *dphi);
    return bits;
}

EntropyModelBank::EntropyModelBank(std::vector<int> levels, int channels, Rng& rng)
    : levels_(std::move(levels)), channels_(channels)
{
    if (channels <= 0)
        throw UsageError("entropy model needs at least one channel");
    const int max_level = levels_.empty() ? 0 : *std::max_element(levels_.begin(), levels_.end());
    level_index_.assign(static_cast<std::size_t>(max_level) + 1, -1);
    for (std::size_t i = 0; i < levels_.size(); ++i)
        level_index_[static_cast<std::size_t>(levels_[i])] = static_cast<int>(i);
    params.resize(static_cast<Eigen::Index>(group_count()), kCdfParams);
    for (Eigen::Index g = 0; g < params.rows(); ++g)
        params.row(g) = default_cdf_params(rng).transpose();
}

std::size_t EntropyModelBank::group(int level, int channel) const
{
    if (level < 0 || static_cast<std::size_t>(level) >= level_index_.size() ||
        level_index_[static_cast<std::size_t>(level)] < 0 || channel < 0 || channel >= channels_)
        throw DataError("no entropy model for level " + std::to_string(level) + ", channel " +
                        std::to_string(channel));
    return static_cast<std::size_t>(level_index_[static_cast<std::size_t>(level)]) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(channel);
}

std::size_t parameter_count(std::size_t levels, std::size_t channels) { return levels * channels * kCdfParams; }

std::size_t parameter_count(const EntropyModelBank& bank)
{
    return parameter_count(bank.levels().size(), static_cast<std::size_t>(bank.channels()));
}

double rate_bits(const EntropyModelBank& bank, const MatrixXd& U, const std::vector<int>& row_levels,
                 Eigen::Index first_row, RateMode mode, MatrixXd* dU, MatrixXd* dparams)
{
    if (static_cast<Eigen::Index>(row_levels.size()) != U.rows())
        throw DataError("row level labels do not match coefficient rows");
    if (U.cols() != bank.channels() && U.rows() > first_row)
        throw DataError("coefficient channels do not match the entropy model bank");

    std::vector<Kernel> kernels;
    kernels.reserve(bank.group_count());
    for (std::size_t g = 0; g < bank.group_count(); ++g)
        kernels.emplace_back(bank.model(g));
    std::vector<KernelGrad> grads(dparams ? bank.group_count() : 0);
    if (dU) {
        if (dU->rows() != U.rows() || dU->cols() != U.cols())
            dU->setZero(U.rows(), U.cols());
    }

    // Rows grouped by level; each (level, channel) pair is one batch.
    std::vector<std::vector<Eigen::Index>> rows_of(bank.levels().size());
    for (Eigen::Index m = first_row; m < U.rows(); ++m) {
        const std::size_t g = bank.group(row_levels[static_cast<std::size_t>(m)], 0);
        rows_of[g / static_cast<std::size_t>(bank.channels())].push_back(m);
    }

    double total = 0.0;
    Column u, du;
    for (std::size_t li = 0; li < rows_of.size(); ++li) {
        const auto& rows = rows_of[li];
        if (rows.empty())
            continue;
        const auto n = static_cast<Eigen::Index>(rows.size());
        for (Eigen::Index c = 0; c < U.cols(); ++c) {
            const std::size_t g = li * static_cast<std::size_t>(bank.channels()) + static_cast<std::size_t>(c);
            // Cache-sized pieces keep the traces in L1.
            for (Eigen::Index start = 0; start < n; start += kChunk) {
                const Eigen::Index len = std::min(kChunk, n - start);
                u.resize(len);
                for (Eigen::Index r = 0; r < len; ++r)
                    u[r] = U(rows[static_cast<std::size_t>(start + r)], c);
                total += bits_batch(kernels[g], u, mode, dU ? &du : nullptr, dparams ? &grads[g] : nullptr);
                if (dU)
                    for (Eigen::Index r = 0; r < len; ++r)
                        (*dU)(rows[static_cast<std::size_t>(start + r)], c) = du[r];
            }
        }
    }
    if (dparams) {
        dparams->setZero(static_cast<Eigen::Index>(bank.group_count()), kCdfParams);
        for (std::size_t g = 0; g < grads.size(); ++g) {
            CdfParams acc = CdfParams::Zero();
            grads[g].add_to_raw(bank.model(g), acc);
            dparams->row(static_cast<Eigen::Index>(g)) = acc.transpose();
        }
    }
    return total;
}

}  // namespace lvac

#include "doctest.h"
#include "lvac/cbn.hpp"
#include "support.hpp"

using namespace lvac;

namespace {

CbnParams random_params(const CbnSpec& spec, Rng& rng)
{
    CbnParams p(spec);
    for (Eigen::Index i = 0; i < p.data.size(); ++i)
        p.data[i] = rng.uniform(-1, 1);
    return p;
}

}  // namespace

TEST_CASE("parameter counts")
{
    CHECK(param_count(CbnSpec::linear()) == 9);
    CHECK(param_count(CbnSpec::mlp(256)) == 9987);
    CHECK(param_count(CbnSpec::mlp(64)) == 2499);
    CHECK(param_count(CbnSpec::pa()) == 227);
    CHECK(CbnSpec::mlp(64).name() == "mlp(35x64x3)");
    CHECK(CbnSpec::pa().name() == "pa(3x32x3)");
    CHECK(parse_cbn("mlp(35x256x3)") == CbnSpec::mlp(256));
    CHECK_FALSE(parse_cbn("siren").has_value());
    CHECK_THROWS_AS((CbnSpec{CbnFamily::Linear3x3, 4, 0}.validate()), UsageError);
}

TEST_CASE("closed-form forward cases")
{
    Rng rng(1);
    const Eigen::Vector3d x(0.3, 0.7, 0.1);
    {
        const CbnParams p = init_params(CbnSpec::linear(), rng);
        const VectorXd z = (VectorXd(3) << 0.2, 0.4, 0.6).finished();
        CHECK(forward(p, x, z).isApprox(Eigen::Vector3d(0.2, 0.4, 0.6)));
        CHECK(forward(p, Eigen::Vector3d(0.9, 0.9, 0.9), z).isApprox(Eigen::Vector3d(0.2, 0.4, 0.6)));
    }
    {
        CbnParams p(CbnSpec::mlp(64));
        p.tensor(0) = Eigen::Vector3d(1, 2, -1);
        CHECK(forward(p, x, VectorXd::Random(32)).isApprox(Eigen::Vector3d(1, 2, 0)));
    }
    {
        CbnParams p(CbnSpec::pa(4));
        p.tensor(0) = Eigen::Vector3d(0.1, 0.2, 0.3);
        p.tensor(2).setConstant(M_PI / 2);
        p.tensor(1) << 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0;
        const VectorXd z = (VectorXd(4) << 1, 2, 3, 4).finished();
        const Eigen::Vector3d expect = Eigen::Vector3d(0.1, 0.2, 0.3) + p.tensor(1) * z;
        CHECK(forward(p, x, z).isApprox(expect));
    }
}

TEST_CASE("analytic gradients match finite differences")
{
    Rng rng(7);
    for (const CbnSpec& spec : {CbnSpec::linear(), CbnSpec::mlp(6, 4), CbnSpec::pa(5)}) {
        for (int trial = 0; trial < 100; ++trial) {
            CbnParams p = random_params(spec, rng);
            Eigen::Vector3d x(rng.uniform(), rng.uniform(), rng.uniform());
            VectorXd z = VectorXd::Random(spec.channels);
            const Eigen::Vector3d up(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            const CbnGradient g = backward(p, x, z, up);
            auto f = [&] { return up.dot(forward(p, x, z)); };
            for (Eigen::Index i = 0; i < p.data.size(); ++i) {
                const double fd = testing::central_difference(f, p.data[i], 1e-5);
                CHECK(std::abs(g.params[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
            for (Eigen::Index c = 0; c < z.size(); ++c) {
                const double fd = testing::central_difference(f, z[c], 1e-5);
                CHECK(std::abs(g.latents(0, c) - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("linear gradient and zero upstream")
{
    Rng rng(2);
    const CbnParams p = random_params(CbnSpec::linear(), rng);
    const Eigen::Vector3d up(0.5, -1, 2);
    const VectorXd z = VectorXd::Random(3);
    const auto g = backward(p, Eigen::Vector3d(0.5, 0.5, 0.5), z, up);
    CHECK(g.latents.row(0).transpose().isApprox(p.tensor(0).transpose() * up));
    for (const CbnSpec& spec : {CbnSpec::mlp(8, 3), CbnSpec::pa(3)}) {
        const CbnParams q = random_params(spec, rng);
        const auto zero = backward(q, Eigen::Vector3d(0.2, 0.2, 0.2), z, Eigen::Vector3d::Zero());
        CHECK(zero.params.isZero());
        CHECK(zero.latents.isZero());
    }
}

TEST_CASE("batched evaluation equals per-point evaluation")
{
    Rng rng(4);
    for (const CbnSpec& spec : {CbnSpec::linear(), CbnSpec::mlp(16, 6), CbnSpec::pa(6)}) {
        const CbnParams p = random_params(spec, rng);
        CbnBatch batch;
        batch.local = (MatrixXd::Random(20, 3).array() * 0.5 + 0.5).matrix();
        batch.block_begin = {0, 3, 3, 11, 20};
        const MatrixXd Z = MatrixXd::Random(4, spec.channels);
        CbnCache cache;
        const MatrixXd Y = forward(p, batch, Z, &cache);
        const MatrixXd up = MatrixXd::Random(20, 3);
        const CbnGradient g = backward(p, batch, Z, cache, up);
        VectorXd dparams = VectorXd::Zero(p.data.size());
        MatrixXd dz = MatrixXd::Zero(4, spec.channels);
        for (std::size_t b = 0; b < 4; ++b)
            for (auto i = batch.block_begin[b]; i < batch.block_begin[b + 1]; ++i) {
                const Eigen::Vector3d x = batch.local.row(i).transpose();
                const VectorXd z = Z.row(static_cast<Eigen::Index>(b)).transpose();
                CHECK((Y.row(i).transpose() - forward(p, x, z)).norm() < 1e-12);
                const auto gi = backward(p, x, z, up.row(i).transpose());
                dparams += gi.params;
                dz.row(static_cast<Eigen::Index>(b)) += gi.latents.row(0);
            }
        CHECK((g.params - dparams).norm() < 1e-10);
        CHECK((g.latents - dz).norm() < 1e-10);
    }
}

TEST_CASE("position attention output is bounded")
{
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const CbnParams p = random_params(CbnSpec::pa(), rng);
        const VectorXd z = VectorXd::Random(32) * 3;
        const Eigen::Vector3d x(rng.uniform(), rng.uniform(), rng.uniform());
        const Eigen::Vector3d y = forward(p, x, z);
        const double bound = p.tensor(1).cwiseAbs().rowwise().sum().maxCoeff() * z.cwiseAbs().maxCoeff();
        CHECK((y - p.tensor(0).col(0)).cwiseAbs().maxCoeff() <= bound + 1e-12);
    }
}

TEST_CASE("initialization")
{
    Rng a(3), b(3);
    const CbnParams p = init_params(CbnSpec::mlp(64), a);
    CHECK(p.data == init_params(CbnSpec::mlp(64), b).data);
    CHECK(p.tensor(0).isZero());
    CHECK(p.tensor(2).isZero());
    CHECK(p.tensor(3).cwiseAbs().maxCoeff() <= 1 / std::sqrt(35.0));
    const CbnParams l = init_params(CbnSpec::linear(), a);
    CHECK(l.tensor(0).isIdentity());
}

TEST_CASE("shape errors")
{
    Rng rng(1);
    const CbnParams p = init_params(CbnSpec::pa(4), rng);
    CbnBatch batch;
    batch.local = MatrixXd::Zero(2, 3);
    batch.block_begin = {0, 2};
    CHECK_THROWS_AS(forward(p, batch, MatrixXd::Zero(1, 5)), DataError);
    CHECK_THROWS_AS(forward(p, batch, MatrixXd::Zero(2, 4)), DataError);
}

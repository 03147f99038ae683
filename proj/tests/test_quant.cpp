#include "doctest.h"
#include "lvac/quant.hpp"

using namespace lvac;

namespace {

std::int64_t q1(double x, double step)
{
    MatrixXd m(1, 1);
    m(0, 0) = x;
    return quantize(m, StepSizes::uniform(1, step))(0, 0);
}

}  // namespace

TEST_CASE("rounding and ties")
{
    CHECK(q1(2.4, 1.0) == 2);
    CHECK(q1(-2.5, 1.0) == -3);
    CHECK(q1(2.5, 1.0) == 3);
    CHECK(q1(3.0, 0.5) == 6);
    MatrixXi six(1, 1);
    six(0, 0) = 6;
    CHECK(dequantize(six, StepSizes::uniform(1, 0.5))(0, 0) == 3.0);
    MatrixXi zero = MatrixXi::Zero(1, 1);
    CHECK(dequantize(zero, StepSizes::uniform(1, 7.3))(0, 0) == 0.0);
}

TEST_CASE("reconstruction error, idempotence and monotonicity")
{
    Rng rng(9);
    const StepSizes steps{(VectorXd(3) << 0.3, 1.0, 4.5).finished(), true};
    MatrixXd x(2000, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = rng.uniform(-50, 50);
    const MatrixXi q = quantize(x, steps);
    const MatrixXd back = dequantize(q, steps);
    for (Eigen::Index c = 0; c < 3; ++c)
        CHECK((back.col(c) - x.col(c)).cwiseAbs().maxCoeff() <= steps.delta[c] / 2 + 1e-12);
    CHECK(quantize(back, steps) == q);

    VectorXd sorted = x.col(1);
    std::sort(sorted.data(), sorted.data() + sorted.size());
    MatrixXd col = sorted;
    const MatrixXi qs = quantize(col, StepSizes::uniform(1, 0.7));
    for (Eigen::Index i = 1; i < qs.rows(); ++i)
        CHECK(qs(i - 1, 0) <= qs(i, 0));
}

TEST_CASE("step validation")
{
    MatrixXd x = MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(quantize(x, StepSizes::uniform(3, 1.0)), DataError);
    CHECK_THROWS_AS(quantize(x, StepSizes::uniform(2, 0.0)), DataError);
}

TEST_CASE("noise proxy")
{
    MatrixXd x = MatrixXd::Constant(1000, 2, 1.25);
    const auto steps = StepSizes::uniform(2, 0.5);
    Rng a(4), b(4);
    const MatrixXd pa = noise_proxy(x, steps, a);
    CHECK(pa == noise_proxy(x, steps, b));
    CHECK(((pa.array() - 2.5).abs() <= 0.5).all());

    MatrixXd big = MatrixXd::Zero(100000, 1);
    Rng c(5);
    const MatrixXd pb = noise_proxy(big, StepSizes::uniform(1, 1.0), c);
    CHECK(std::abs(pb.mean()) < 0.01);

    Rng d(1);
    CHECK_THROWS_AS(noise_proxy(x, steps, d, QuantMode::Inference), UsageError);
    CHECK(baseline_step(0) == 1.0);
    CHECK(baseline_step(10) == 1024.0);
}

#include <map>

#include "doctest.h"
#include "lvac/entmodel.hpp"
#include "support.hpp"

using namespace lvac;

namespace {

CdfParams random_params(Rng& rng)
{
    CdfParams phi = default_cdf_params(rng);
    for (int k = 0; k < kCdfParams; ++k)
        phi[k] += rng.uniform(-0.5, 0.5);
    return phi;
}

}  // namespace

TEST_CASE("fresh model is a distribution")
{
    Rng rng(1);
    const CdfParams phi = default_cdf_params(rng);
    double mass = 0.0;
    for (int u = -1000; u <= 1000; ++u)
        mass += pmf(phi, u);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(pmf(phi, 0.3) == doctest::Approx(cdf(phi, 0.8) - cdf(phi, -0.2)));
    CHECK(cdf(phi, -1e6) < 1e-12);
    CHECK(cdf(phi, 1e6) > 1 - 1e-12);
}

TEST_CASE("CDF is monotone for arbitrary parameters")
{
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        CdfParams phi;
        for (int k = 0; k < kCdfParams; ++k)
            phi[k] = rng.uniform(-4, 4);
        double prev = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const double u = -50.0 + i * 0.01;
            const double c = cdf(phi, u);
            CHECK(c >= prev);
            CHECK(c <= 1.0);
            prev = c;
        }
        CHECK(pmf(phi, 1e4) >= 0.0);
    }
}

TEST_CASE("bits are minus log2 of the mass")
{
    Rng rng(3);
    const CdfParams phi = default_cdf_params(rng);
    const double p = pmf(phi, 1.0);
    CHECK(bits_with_grad(phi, 1.0, RateMode::Training, 1.0, nullptr, nullptr) == doctest::Approx(-std::log2(p)));
    EntropyModelBank bank({1}, 1, rng);
    MatrixXd U(2, 1);
    U << 0.0, 1.0;
    CHECK(rate_bits(bank, U, {0, 1}, 1) == doctest::Approx(-std::log2(pmf(bank.model(0), 1.0))));
    MatrixXd none(0, 1);
    CHECK(rate_bits(bank, none, {}, 0) == 0.0);
}

TEST_CASE("parameter accounting")
{
    CHECK(parameter_count(26, 32) == 23296);
    CHECK(parameter_count(1, 1) == static_cast<std::size_t>(kCdfParams));
    CHECK(parameter_count(5, 8) == 2 * parameter_count(5, 4));
    Rng rng(1);
    EntropyModelBank bank({3, 4, 7}, 2, rng);
    CHECK(parameter_count(bank) == 3 * 2 * 28);
    CHECK(bank.group(7, 1) == 5);
    CHECK_THROWS_AS(bank.group(5, 0), DataError);
    MatrixXd U = MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(rate_bits(bank, U, {0, 5}, 1), DataError);
}

TEST_CASE("batched rate agrees with the scalar path and is permutation invariant")
{
    Rng rng(4);
    EntropyModelBank bank({1, 2}, 3, rng);
    for (Eigen::Index g = 0; g < bank.params.rows(); ++g)
        bank.params.row(g) = random_params(rng).transpose();
    MatrixXd U(40, 3);
    std::vector<int> levels(40);
    for (Eigen::Index m = 0; m < 40; ++m) {
        levels[static_cast<std::size_t>(m)] = m == 0 ? 0 : (m < 15 ? 1 : 2);
        for (int c = 0; c < 3; ++c)
            U(m, c) = rng.uniform(-20, 20);
    }
    double scalar = 0.0;
    for (Eigen::Index m = 1; m < 40; ++m)
        for (int c = 0; c < 3; ++c)
            scalar += bits_with_grad(bank.model(bank.group(levels[static_cast<std::size_t>(m)], c)), U(m, c),
                                     RateMode::Training, 1.0, nullptr, nullptr);
    const double batched = rate_bits(bank, U, levels, 1);
    CHECK(testing::rel_err(batched, scalar) < 1e-10);

    MatrixXd P = U;
    P.middleRows(15, 25) = U.middleRows(15, 25).colwise().reverse();
    CHECK(testing::rel_err(rate_bits(bank, P, levels, 1), batched) < 1e-12);
}

TEST_CASE("rate gradients match finite differences")
{
    Rng rng(6);
    EntropyModelBank bank({2, 5}, 2, rng);
    for (Eigen::Index g = 0; g < bank.params.rows(); ++g)
        bank.params.row(g) = random_params(rng).transpose();
    MatrixXd U(9, 2);
    std::vector<int> levels{0, 2, 2, 2, 5, 5, 5, 5, 5};
    for (Eigen::Index i = 0; i < U.size(); ++i)
        U.data()[i] = rng.uniform(-6, 6);
    MatrixXd dU = MatrixXd::Zero(9, 2), dphi;
    rate_bits(bank, U, levels, 1, RateMode::Training, &dU, &dphi);
    auto f = [&] { return rate_bits(bank, U, levels, 1); };
    for (Eigen::Index m = 1; m < 9; ++m)
        for (int c = 0; c < 2; ++c) {
            const double fd = testing::central_difference(f, U(m, c), 1e-5);
            CHECK(testing::rel_err(dU(m, c), fd) < 1e-4);
        }
    for (Eigen::Index g = 0; g < bank.params.rows(); ++g)
        for (int k = 0; k < kCdfParams; ++k) {
            const double fd = testing::central_difference(f, bank.params(g, k), 1e-5);
            CHECK(testing::rel_err(dphi(g, k), fd) < 1e-4);
        }
}

TEST_CASE("fitted model approaches the empirical entropy")
{
    // Laplacian samples rounded to integers; fit one model with Adam.
    Rng rng(8);
    const int n = 100000;
    MatrixXd U(n + 1, 1);
    std::vector<int> levels(n + 1, 1);
    levels[0] = 0;
    U(0, 0) = 0;
    std::map<long, int> histogram;
    for (int i = 1; i <= n; ++i) {
        const double e = -3.0 * std::log(rng.uniform() + 1e-300);
        const double v = std::round(rng.uniform() < 0.5 ? -e : e);
        U(i, 0) = v;
        ++histogram[static_cast<long>(v)];
    }
    double entropy = 0.0;
    for (const auto& [v, count] : histogram) {
        const double p = static_cast<double>(count) / n;
        entropy -= count * std::log2(p);
    }
    EntropyModelBank bank({1}, 1, rng);
    MatrixXd m = MatrixXd::Zero(1, kCdfParams), v = m, dphi;
    for (int t = 1; t <= 600; ++t) {
        rate_bits(bank, U, levels, 1, RateMode::Training, nullptr, &dphi);
        dphi /= n;
        m = 0.9 * m + 0.1 * dphi;
        v = 0.999 * v + 0.001 * dphi.cwiseAbs2();
        const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.999, t);
        bank.params.array() -= 0.05 * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
    }
    const double bits = rate_bits(bank, U, levels, 1, RateMode::Inference);
    CHECK(bits / entropy < 1.05);
    CHECK(bits / entropy > 0.999);
}

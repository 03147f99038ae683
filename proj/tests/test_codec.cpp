#include "doctest.h"
#include "lvac/codec.hpp"
#include "lvac/metrics.hpp"
#include "lvac/serialize.hpp"
#include "support.hpp"

using namespace lvac;

namespace {

struct Trained {
    VoxelizedPointCloud cloud;
    PartitionTree tree;
    TrainState state;
};

Trained trained(const CbnSpec& spec, int L, int steps, bool normalized = true)
{
    auto cloud = synthesize_cloud(CloudKind::SphereShell, 5, 4);
    auto tree = PartitionTree::build(cloud, L);
    TrainConfig cfg;
    cfg.spec = spec;
    cfg.target_level = L;
    cfg.steps = steps;
    cfg.lambda = 1e-3;
    cfg.freeze_normalization = !normalized;
    auto state = train(cloud, tree, cfg);
    return {std::move(cloud), std::move(tree), std::move(state)};
}

}  // namespace

TEST_CASE("decode reproduces the encoder reconstruction exactly")
{
    for (const CbnSpec& spec : {CbnSpec::linear(), CbnSpec::mlp(16, 6), CbnSpec::pa(5)})
        for (bool normalized : {true, false}) {
            CAPTURE(spec.name());
            const auto t = trained(spec, 12, 60, normalized);
            const auto res = encode(t.cloud, t.tree, t.state, {});
            const DecodedModel dec = decode(res.bytes, t.tree);
            CHECK(dec.header.normalized() == normalized);
            CHECK(dec.symbols == res.model.symbols);
            CHECK(dec.latents == res.model.latents);
            REQUIRE(dec.cbn);
            CHECK(dec.cbn->data == res.model.cbn->data);
            const auto rec = reconstruct_cloud(dec, t.tree, t.cloud.positions);
            CHECK(rec.attributes == res.reconstruction.attributes);
            CHECK(encode(t.cloud, t.tree, t.state, {}).bytes == res.bytes);

            // Distortion recomputed from the reconstruction.
            const double sse = (rec.attributes - t.cloud.attributes).squaredNorm();
            CHECK(std::abs(sse - res.distortion) <= 1e-9 * std::max(1.0, sse));
            for (std::size_t i = 0; i < t.cloud.size(); i += 7) {
                const auto y = query(dec, t.tree, t.cloud.positions[i]);
                REQUIRE(y);
                // Same network, different summation order.
                CHECK((y->transpose() - rec.attributes.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-12);
            }
        }
}

TEST_CASE("rate accounting")
{
    const auto t = trained(CbnSpec::pa(32), 12, 5);
    for (int B : {0, 8, 32}) {
        SideInfoPolicy policy;
        policy.bits_per_parameter = B;
        const auto res = encode(t.cloud, t.tree, t.state, policy, CbnPlacement::External);
        const double n = static_cast<double>(t.cloud.size());
        CHECK(res.side_info_bits == static_cast<std::uint64_t>(227 * B));
        CHECK(res.header_bits == 8 * (20 + 4 * 32));
        CHECK(res.bpp == static_cast<double>(res.header_bits + res.payload_bits + res.side_info_bits) / n);
        CHECK(res.file_bpp == static_cast<double>(res.bytes.size() * 8) / n);
        if (B == 0)
            CHECK(res.bpp == res.file_bpp);
    }
    CHECK(227.0 * 32 / 805882 == doctest::Approx(0.009).epsilon(0.01));
    SideInfoPolicy bad;
    bad.bits_per_parameter = -1;
    CHECK_THROWS_AS(encode(t.cloud, t.tree, t.state, bad), UsageError);
}

TEST_CASE("external CBN weights")
{
    const auto t = trained(CbnSpec::mlp(8, 4), 12, 10);
    const auto res = encode(t.cloud, t.tree, t.state, {}, CbnPlacement::External);
    CHECK_THROWS_AS(decode(res.bytes, t.tree), UsageError);
    const auto dec = decode(res.bytes, t.tree, round_to_f32(t.state.cbn));
    CHECK(dec.latents == res.model.latents);
    CHECK(reconstruct_cloud(dec, t.tree, t.cloud.positions).attributes == res.reconstruction.attributes);
    // Weights for another family are rejected.
    Rng rng(1);
    CHECK_THROWS(decode(res.bytes, t.tree, init_params(CbnSpec::pa(4), rng)));
}

TEST_CASE("corrupt and truncated streams are rejected")
{
    const auto t = trained(CbnSpec::linear(), 15, 30);
    const auto res = encode(t.cloud, t.tree, t.state, {});
    const std::span<const std::uint8_t> all(res.bytes);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, res.model.header.size_bytes(),
                            res.model.header.size_bytes() + res.model.header.payload_bytes / 2, res.bytes.size() - 1})
        CHECK_THROWS_AS(decode(all.first(cut), t.tree), DataError);
    auto bad = res.bytes;
    bad[6] ^= 1;
    CHECK_THROWS_AS(decode(bad, t.tree), DataError);
    auto tail = res.bytes;
    tail.push_back(0);
    CHECK_THROWS_AS(decode(tail, t.tree), DataError);
    // Geometry mismatch.
    const auto other = PartitionTree::build(t.cloud, 14);
    CHECK_THROWS_AS(decode(res.bytes, other), DataError);
}

TEST_CASE("all-zero latents cost almost nothing")
{
    std::vector<Position> positions;
    for (std::uint32_t x = 0; x < 47; ++x)
        for (std::uint32_t y = 0; y < 47; ++y)
            for (std::uint32_t z = 0; z < 47; ++z)
                positions.push_back({x, y, z});
    MatrixXd colors = MatrixXd::Constant(static_cast<Eigen::Index>(positions.size()), 3, 0.5);
    const auto cloud = canonicalize(6, std::move(positions), std::move(colors));
    REQUIRE(cloud.size() > 100000);
    const auto tree = PartitionTree::build(cloud, 18);
    TrainConfig cfg;
    cfg.spec = CbnSpec::linear();
    cfg.target_level = 18;
    TrainState s = init_state(cloud, tree, cfg);
    s.V.rows.setZero();
    const auto res = encode(cloud, tree, s, {});
    CHECK(static_cast<double>(res.payload_bits) / static_cast<double>(cloud.size()) < 0.05);
    CHECK(res.model.symbols.isZero());
    // Zero latents through a linear map give a flat cloud.
    CHECK((res.reconstruction.attributes.rowwise() - res.reconstruction.attributes.row(0)).isZero());
}

TEST_CASE("linear CBN queries are constant within a block")
{
    const auto t = trained(CbnSpec::linear(), 9, 30);
    const auto res = encode(t.cloud, t.tree, t.state, {});
    for (std::size_t b = 0; b < t.tree.block_count(); ++b) {
        const auto [begin, end] = t.tree.leaf_range(b);
        for (auto i = begin + 1; i < end; ++i)
            CHECK(res.reconstruction.attributes.row(static_cast<Eigen::Index>(i)) ==
                  res.reconstruction.attributes.row(static_cast<Eigen::Index>(begin)));
    }
    // Unoccupied space has no answer.
    for (std::uint32_t x = 0; x < 32; ++x) {
        const Position q{x, 16, 16};
        CHECK(query(res.model, t.tree, q).has_value() == t.tree.block_of(q).has_value());
    }
}

TEST_CASE("mlp queries respect the weight Lipschitz bound")
{
    const auto t = trained(CbnSpec::mlp(16, 6), 9, 80);
    const auto res = encode(t.cloud, t.tree, t.state, {});
    const CbnParams& p = *res.model.cbn;
    const double lip = p.tensor(1).operatorNorm() * p.tensor(3).leftCols(3).operatorNorm();
    int checked = 0;
    for (std::size_t i = 0; i < t.cloud.size(); ++i) {
        Position q = t.cloud.positions[i];
        q[0] ^= 1;  // neighbour across x
        if (t.tree.block_of(q) != t.tree.block_of(t.cloud.positions[i]))
            continue;
        const auto a = query(res.model, t.tree, t.cloud.positions[i]);
        const auto b = query(res.model, t.tree, q);
        REQUIRE(a);
        REQUIRE(b);
        const auto xa = t.tree.local_coordinates(t.cloud.positions[i]);
        const auto xb = t.tree.local_coordinates(q);
        const double dx = std::abs(xa[0] - xb[0]);
        CHECK((*a - *b).norm() <= lip * dx + 1e-12);
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("baseline round trip and error bound")
{
    const auto cloud = synthesize_cloud(CloudKind::NoiseSurface, 6, 2);
    const auto tree = PartitionTree::build(cloud, 18);
    double previous_bpp = std::numeric_limits<double>::infinity();
    for (int n = 0; n <= 10; ++n) {
        const double delta = std::ldexp(1.0, n);
        for (ColorSpace cs : {ColorSpace::Rgb, ColorSpace::YuvBt709}) {
            const auto res = raht_baseline_encode(cloud, tree, delta, cs);
            const auto dec = raht_baseline_decode(res.bytes, tree);
            CHECK(dec.positions == cloud.positions);
            CHECK(dec.attributes == res.reconstruction.attributes);
            CHECK(res.bpp == res.file_bpp);
            if (cs == ColorSpace::Rgb) {
                const double sse255 = (dec.attributes - cloud.attributes).squaredNorm() * 255.0 * 255.0;
                CHECK(sse255 <= 3.0 * static_cast<double>(cloud.size()) * delta * delta / 4.0);
                CHECK(res.bpp < previous_bpp);
                previous_bpp = res.bpp;
            }
        }
    }
    const auto fine = raht_baseline_encode(cloud, tree, 1.0);
    CHECK(psnr_rgb(cloud, fine.reconstruction) > 45.0);
    const auto flat = raht_baseline_encode(cloud, tree, 1024.0);
    CHECK(static_cast<double>(flat.payload_bits) / static_cast<double>(cloud.size()) < 0.3);
    const auto coarse = PartitionTree::build(cloud, 12);
    CHECK_THROWS_AS(raht_baseline_encode(cloud, coarse, 1.0), UsageError);
    CHECK_THROWS_AS(raht_baseline_encode(cloud, tree, 0.0), UsageError);
}

TEST_CASE("payload coding")
{
    Rng rng(3);
    MatrixXi symbols(50, 4);
    for (Eigen::Index i = 0; i < symbols.size(); ++i)
        symbols.data()[i] = static_cast<int>(rng.below(9)) - 4;
    const auto bytes = encode_payload(symbols);
    CHECK(decode_payload(bytes, 50, 4) == symbols);
    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_AS(decode_payload(padded, 50, 4), DataError);
    const MatrixXd grid = MatrixXd::Constant(3, 2, 0.5);
    MatrixXd V(3, 2);
    V << 0.26, -0.24, 1.0, 9e15, 0, 0;
    CHECK_THROWS_AS(quantize_coefficients(V, grid), DataError);
}

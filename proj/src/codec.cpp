#include "lvac/codec.hpp"

#include <algorithm>
#include <numeric>

#include "lvac/raht.hpp"
#include "lvac/rlgr.hpp"
#include "lvac/serialize.hpp"

namespace lvac {

void SideInfoPolicy::validate() const
{
    if (bits_per_parameter < 0)
        throw UsageError("bits per parameter must be non-negative");
}

std::optional<CbnSpec> StreamHeader::cbn_spec() const
{
    if (baseline())
        return std::nullopt;
    if (family < 1 || family > 3)
        throw DataError("unknown CBN family in stream");
    CbnSpec spec{static_cast<CbnFamily>(family), channels, hidden};
    try {
        spec.validate();
    } catch (const UsageError& e) {
        throw DataError(std::string("invalid CBN description in stream: ") + e.what());
    }
    return spec;
}

std::vector<std::uint8_t> write_header(const StreamHeader& h)
{
    ByteWriter w;
    w.tag("LVAC");
    w.u8(kStreamVersion);
    w.u8(static_cast<std::uint8_t>(h.depth));
    w.u8(static_cast<std::uint8_t>(h.target_level));
    w.u8(static_cast<std::uint8_t>(h.channels));
    w.u8(static_cast<std::uint8_t>(h.family));
    w.u16(static_cast<std::uint16_t>(h.hidden));
    w.u8(h.flags);
    for (Eigen::Index c = 0; c < h.delta.size(); ++c)
        w.f32(static_cast<float>(h.delta[c]));
    w.u32(h.payload_bytes);
    w.u32(crc32(w.bytes()));
    return std::move(w.bytes());
}

StreamHeader read_header(std::span<const std::uint8_t> stream)
{
    ByteReader r(stream);
    r.expect_tag("LVAC", "LVAC stream");
    if (r.u8() != kStreamVersion)
        throw DataError("unsupported stream version");
    StreamHeader h;
    h.depth = r.u8();
    h.target_level = r.u8();
    h.channels = r.u8();
    h.family = r.u8();
    h.hidden = r.u16();
    h.flags = r.u8();
    if (h.channels < 1)
        throw DataError("stream declares no channels");
    h.delta.resize(h.channels);
    for (int c = 0; c < h.channels; ++c)
        h.delta[c] = r.f32();
    h.payload_bytes = r.u32();
    const std::size_t end = r.position();
    if (crc32(r.window(0, end)) != r.u32())
        throw DataError("stream header checksum mismatch");
    if (!(h.delta.array() > 0.0).all() || !h.delta.allFinite())
        throw DataError("stream step sizes must be positive");
    return h;
}

MatrixXd quantizer_grid(const PartitionTree& tree, const VectorXd& delta, bool normalized)
{
    const auto n = static_cast<Eigen::Index>(tree.block_count());
    VectorXd s = normalized ? scale_factors<double>(tree) : VectorXd::Ones(n);
    s[0] /= kRootGain;
    return s * delta.transpose();
}

MatrixXi quantize_coefficients(const MatrixXd& V, const MatrixXd& grid)
{
    MatrixXi out(V.rows(), V.cols());
    for (Eigen::Index m = 0; m < V.rows(); ++m)
        for (Eigen::Index c = 0; c < V.cols(); ++c) {
            const double u = round_half_away(V(m, c) / grid(m, c));
            if (!(std::abs(u) < 9.0e15))
                throw DataError("coefficient out of codable range");
            out(m, c) = static_cast<std::int64_t>(u);
        }
    return out;
}

MatrixXd reconstruct_latents(const PartitionTree& tree, const MatrixXi& symbols, const MatrixXd& grid)
{
    return synthesize(tree, MatrixXd(symbols.cast<double>().cwiseProduct(grid)));
}

std::vector<std::uint8_t> encode_payload(const MatrixXi& symbols)
{
    BitSink sink;
    std::vector<std::int64_t> run(static_cast<std::size_t>(symbols.cols()));
    for (Eigen::Index c = 0; c < symbols.cols(); ++c)
        run[static_cast<std::size_t>(c)] = symbols(0, c);
    rlgr_encode(run, sink);
    run.resize(static_cast<std::size_t>(symbols.rows() - 1));
    for (Eigen::Index c = 0; c < symbols.cols(); ++c) {
        for (Eigen::Index m = 1; m < symbols.rows(); ++m)
            run[static_cast<std::size_t>(m - 1)] = symbols(m, c);
        rlgr_encode(run, sink);
    }
    return std::move(sink).finish();
}

MatrixXi decode_payload(std::span<const std::uint8_t> payload, Eigen::Index rows, Eigen::Index channels)
{
    BitSource source(payload);
    MatrixXi out(rows, channels);
    const auto root = rlgr_decode(source, static_cast<std::size_t>(channels));
    for (Eigen::Index c = 0; c < channels; ++c)
        out(0, c) = root[static_cast<std::size_t>(c)];
    for (Eigen::Index c = 0; c < channels; ++c) {
        const auto col = rlgr_decode(source, static_cast<std::size_t>(rows - 1));
        for (Eigen::Index m = 1; m < rows; ++m)
            out(m, c) = col[static_cast<std::size_t>(m - 1)];
    }
    if (source.remaining() >= 8)
        throw DataError("unused bytes at the end of the payload");
    return out;
}

namespace {

Eigen::Vector3d finish_attribute(const DecodedModel& model, const Eigen::Vector3d& raw)
{
    Eigen::Vector3d y = raw;
    if (model.header.baseline()) {
        y /= 255.0;
        if (model.header.yuv()) {
            VoxelizedPointCloud one;
            one.attributes = y.transpose();
            y = yuv_to_rgb_bt709(one).attributes.row(0).transpose();
        }
    }
    return y.cwiseMax(0.0).cwiseMin(1.0);
}

// Evaluates the model on points grouped by block. `blocks[i]` is the block
// of point i.
MatrixXd evaluate_points(const DecodedModel& model, const PartitionTree& tree,
                         const std::vector<Position>& positions, const std::vector<std::size_t>& blocks)
{
    const std::size_t n = positions.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return blocks[a] < blocks[b]; });

    MatrixXd raw(static_cast<Eigen::Index>(n), 3);
    if (model.header.baseline()) {
        for (std::size_t i = 0; i < n; ++i)
            raw.row(static_cast<Eigen::Index>(i)) = model.latents.row(static_cast<Eigen::Index>(blocks[i]));
    } else {
        CbnBatch batch;
        batch.local.resize(static_cast<Eigen::Index>(n), 3);
        batch.block_begin.assign(tree.block_count() + 1, 0);
        for (std::size_t k = 0; k < n; ++k) {
            const auto x = tree.local_coordinates(positions[order[k]]);
            batch.local.row(static_cast<Eigen::Index>(k)) << x[0], x[1], x[2];
            ++batch.block_begin[blocks[order[k]] + 1];
        }
        std::partial_sum(batch.block_begin.begin(), batch.block_begin.end(), batch.block_begin.begin());
        const MatrixXd y = forward(*model.cbn, batch, model.latents);
        for (std::size_t k = 0; k < n; ++k)
            raw.row(static_cast<Eigen::Index>(order[k])) = y.row(static_cast<Eigen::Index>(k));
    }
    MatrixXd out(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        out.row(i) = finish_attribute(model, raw.row(i).transpose()).transpose();
    return out;
}

void check_tree(const StreamHeader& h, const PartitionTree& tree)
{
    if (h.depth != tree.voxel_depth() || h.target_level != tree.target_level())
        throw DataError("stream was coded for a different tree");
}

EncodeResult finish_encode(const VoxelizedPointCloud& cloud, const PartitionTree& tree, StreamHeader header,
                           const MatrixXd& V, std::optional<CbnParams> cbn, CbnPlacement placement,
                           const SideInfoPolicy& policy)
{
    if (cloud.size() != tree.point_count())
        throw DataError("cloud and tree disagree on the point count");
    if (V.rows() != static_cast<Eigen::Index>(tree.block_count()))
        throw DataError("coefficient count does not match the tree");
    header.depth = tree.voxel_depth();
    header.target_level = tree.target_level();
    header.channels = static_cast<int>(V.cols());
    header.delta = header.delta.cast<float>().cast<double>();

    EncodeResult out;
    const MatrixXd grid = quantizer_grid(tree, header.delta, header.normalized());
    out.model.symbols = quantize_coefficients(V, grid);
    out.model.latents = reconstruct_latents(tree, out.model.symbols, grid);
    const auto payload = encode_payload(out.model.symbols);
    header.payload_bytes = static_cast<std::uint32_t>(payload.size());

    std::vector<std::uint8_t> cbn_block;
    if (cbn) {
        *cbn = round_to_f32(*cbn);
        if (placement == CbnPlacement::Inline) {
            header.flags |= stream_flags::kCbnInline;
            cbn_block = encode_cbn_params(*cbn);
        } else {
            header.flags |= stream_flags::kCbnExternal;
        }
        out.side_info_bits = static_cast<std::uint64_t>(policy.bits_per_parameter) * param_count(cbn->spec);
    }
    out.model.header = header;
    out.model.cbn = cbn;

    out.bytes = write_header(header);
    out.header_bits = 8 * out.bytes.size();
    out.bytes.insert(out.bytes.end(), payload.begin(), payload.end());
    out.payload_bits = 8 * payload.size();
    out.bytes.insert(out.bytes.end(), cbn_block.begin(), cbn_block.end());
    out.cbn_block_bits = 8 * cbn_block.size();

    const double n = static_cast<double>(cloud.size());
    out.bpp = static_cast<double>(out.header_bits + out.payload_bits + out.side_info_bits) / n;
    out.file_bpp = static_cast<double>(8 * out.bytes.size()) / n;

    out.reconstruction = reconstruct_cloud(out.model, tree, cloud.positions);
    out.distortion = (out.reconstruction.attributes - cloud.attributes).squaredNorm();
    return out;
}

}  // namespace

EncodeResult encode(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainState& state,
                    const SideInfoPolicy& policy, CbnPlacement placement)
{
    policy.validate();
    if (state.target_level != tree.target_level())
        throw DataError("training state was built for a different target level");
    if (state.V.channels() != state.cbn.spec.channels)
        throw DataError("latent width does not match the CBN");
    StreamHeader header;
    header.family = static_cast<int>(state.cbn.spec.family);
    header.hidden = state.cbn.spec.hidden;
    header.flags = state.normalized ? stream_flags::kNormalized : 0;
    header.delta = state.steps().delta;
    return finish_encode(cloud, tree, header, state.V.rows, state.cbn, placement, policy);
}

DecodedModel decode(std::span<const std::uint8_t> stream, const PartitionTree& tree,
                    const std::optional<CbnParams>& external_cbn)
{
    DecodedModel model;
    model.header = read_header(stream);
    const StreamHeader& h = model.header;
    check_tree(h, tree);
    const std::size_t start = h.size_bytes();
    if (stream.size() - start < h.payload_bytes)
        throw DataError("stream truncated inside the payload");
    const auto payload = stream.subspan(start, h.payload_bytes);
    const auto rest = stream.subspan(start + h.payload_bytes);

    const auto spec = h.cbn_spec();
    if (spec) {
        if (h.cbn_inline()) {
            model.cbn = decode_cbn_params(rest);
            if (!(model.cbn->spec == *spec))
                throw DataError("inline CBN does not match the header");
        } else if (h.cbn_external()) {
            if (!external_cbn)
                throw UsageError("stream requires external CBN weights");
            if (!(external_cbn->spec == *spec))
                throw DataError("external CBN weights do not match the stream");
            model.cbn = round_to_f32(*external_cbn);
        } else {
            throw DataError("stream carries no CBN");
        }
    } else if (!rest.empty()) {
        throw DataError("unexpected bytes after the payload");
    }

    const auto rows = static_cast<Eigen::Index>(tree.block_count());
    model.symbols = decode_payload(payload, rows, h.channels);
    const MatrixXd grid = quantizer_grid(tree, h.delta, h.normalized());
    model.latents = reconstruct_latents(tree, model.symbols, grid);
    return model;
}

std::optional<Eigen::Vector3d> query(const DecodedModel& model, const PartitionTree& tree, const Position& x)
{
    const auto block = tree.block_of(x);
    if (!block)
        return std::nullopt;
    const VectorXd z = model.latents.row(static_cast<Eigen::Index>(*block)).transpose();
    if (model.header.baseline())
        return finish_attribute(model, z.head(3));
    const auto local = tree.local_coordinates(x);
    return finish_attribute(model, forward(*model.cbn, Eigen::Vector3d(local[0], local[1], local[2]), z));
}

VoxelizedPointCloud reconstruct_cloud(const DecodedModel& model, const PartitionTree& tree,
                                      const std::vector<Position>& positions)
{
    std::vector<std::size_t> blocks(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto b = tree.block_of(positions[i]);
        if (!b)
            throw DataError("position outside the coded geometry");
        blocks[i] = *b;
    }
    VoxelizedPointCloud out;
    out.depth = tree.voxel_depth();
    out.positions = positions;
    out.attributes = evaluate_points(model, tree, positions, blocks);
    return out;
}

EncodeResult raht_baseline_encode(const VoxelizedPointCloud& cloud, const PartitionTree& tree, double delta,
                                  ColorSpace colorspace)
{
    if (tree.target_level() != tree.depth_binary())
        throw UsageError("the baseline codes at the voxel level");
    if (!(delta > 0.0))
        throw UsageError("baseline step must be positive");
    const MatrixXd colors =
        (colorspace == ColorSpace::YuvBt709 ? rgb_to_yuv_bt709(cloud).attributes : cloud.attributes) * 255.0;
    StreamHeader header;
    header.family = kBaselineFamily;
    header.flags = stream_flags::kNormalized | (colorspace == ColorSpace::YuvBt709 ? stream_flags::kYuv : 0);
    header.delta = VectorXd::Constant(3, delta);
    return finish_encode(cloud, tree, header, analyze(tree, colors).rows, std::nullopt, CbnPlacement::Inline,
                         SideInfoPolicy{});
}

VoxelizedPointCloud raht_baseline_decode(std::span<const std::uint8_t> stream, const PartitionTree& tree)
{
    const DecodedModel model = decode(stream, tree);
    if (!model.header.baseline())
        throw DataError("not a baseline stream");
    std::vector<Position> positions;
    positions.reserve(tree.point_count());
    // At the voxel level every block is one point, in Morton order.
    const auto& leaves = tree.level(tree.target_level());
    for (const TreeNode& n : leaves)
        positions.push_back(morton_decode(n.prefix, tree.voxel_depth()));
    return reconstruct_cloud(model, tree, positions);
}

}  // namespace lvac

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lvac/cbn.hpp"
#include "lvac/partition.hpp"
#include "lvac/trainer.hpp"

namespace lvac {

enum class ColorSpace : std::uint8_t { Rgb, YuvBt709 };

struct SideInfoPolicy {
    int bits_per_parameter = 0;          // B
    bool include_entropy_model = false;  // RLGR needs none at inference

    void validate() const;
};

enum class CbnPlacement { Inline, External };

inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::uint8_t kBaselineFamily = 0;

namespace stream_flags {
inline constexpr std::uint8_t kNormalized = 1;
inline constexpr std::uint8_t kCbnExternal = 2;
inline constexpr std::uint8_t kYuv = 4;
inline constexpr std::uint8_t kCbnInline = 8;
}  // namespace stream_flags

// "LVAC" | version u8 | depth u8 | L u8 | C u8 | family u8 | H u16 | flags u8
// | delta C x f32 | payload bytes u32 | CRC32 of the preceding header bytes.
// The payload holds the root DC symbols as one RLGR run, then one RLGR run
// per channel over the remaining coefficients in coefficient order,
// bit-contiguous and zero-padded to a byte at the end. An inline CBN block
// may follow.
struct StreamHeader {
    int depth = 0;
    int target_level = 0;
    int channels = 0;
    int family = 0;
    int hidden = 0;
    std::uint8_t flags = 0;
    VectorXd delta;  // exactly representable as float
    std::uint32_t payload_bytes = 0;

    bool normalized() const { return flags & stream_flags::kNormalized; }
    bool cbn_external() const { return flags & stream_flags::kCbnExternal; }
    bool cbn_inline() const { return flags & stream_flags::kCbnInline; }
    bool yuv() const { return flags & stream_flags::kYuv; }
    bool baseline() const { return family == kBaselineFamily; }
    std::optional<CbnSpec> cbn_spec() const;
    std::size_t size_bytes() const { return 20 + 4 * static_cast<std::size_t>(channels); }
};

std::vector<std::uint8_t> write_header(const StreamHeader& header);
// Parses and checks the header at the start of a stream.
StreamHeader read_header(std::span<const std::uint8_t> stream);

// s_m * delta_c / q_m (q = 2^8 on the root row); s = 1 when not normalized.
MatrixXd quantizer_grid(const PartitionTree& tree, const VectorXd& delta, bool normalized);

// Round to the grid and back; shared by encoder and decoder.
MatrixXi quantize_coefficients(const MatrixXd& V, const MatrixXd& grid);
MatrixXd reconstruct_latents(const PartitionTree& tree, const MatrixXi& symbols, const MatrixXd& grid);

std::vector<std::uint8_t> encode_payload(const MatrixXi& symbols);
MatrixXi decode_payload(std::span<const std::uint8_t> payload, Eigen::Index rows, Eigen::Index channels);

struct DecodedModel {
    StreamHeader header;
    std::optional<CbnParams> cbn;  // absent for the baseline
    MatrixXd latents;              // M x C, block order
    MatrixXi symbols;
};

struct EncodeResult {
    std::vector<std::uint8_t> bytes;
    DecodedModel model;  // encoder-side reconstruction state
    std::uint64_t header_bits = 0;
    std::uint64_t payload_bits = 0;  // including final padding
    std::uint64_t cbn_block_bits = 0;
    std::uint64_t side_info_bits = 0;  // B x CBN parameter count
    double bpp = 0.0;                  // (header + payload + side info) / N
    double file_bpp = 0.0;             // bytes x 8 / N
    VoxelizedPointCloud reconstruction;
    double distortion = 0.0;           // sum of squared errors, [0,1] units
};

EncodeResult encode(const VoxelizedPointCloud& cloud, const PartitionTree& tree, const TrainState& state,
                    const SideInfoPolicy& policy, CbnPlacement placement = CbnPlacement::Inline);

DecodedModel decode(std::span<const std::uint8_t> stream, const PartitionTree& tree,
                    const std::optional<CbnParams>& external_cbn = std::nullopt);

std::optional<Eigen::Vector3d> query(const DecodedModel& model, const PartitionTree& tree, const Position& x);

// Attributes at `positions`, which must all lie in occupied blocks.
VoxelizedPointCloud reconstruct_cloud(const DecodedModel& model, const PartitionTree& tree,
                                      const std::vector<Position>& positions);

// Non-learned path: colors x 255 at the voxel level, uniform step, RLGR.
EncodeResult raht_baseline_encode(const VoxelizedPointCloud& cloud, const PartitionTree& tree, double delta,
                                  ColorSpace colorspace = ColorSpace::Rgb);
VoxelizedPointCloud raht_baseline_decode(std::span<const std::uint8_t> stream, const PartitionTree& tree);

}  // namespace lvac

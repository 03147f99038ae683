#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lvac/core.hpp"

namespace lvac {

// MSB-first bit writer. finish() zero-pads the final partial byte.
class BitSink {
public:
    void put_bit(bool bit);
    // Writes the low `count` bits of `value`, most significant first; count <= 64.
    void put_bits(std::uint64_t value, int count);
    std::uint64_t bit_count() const { return bits_; }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> finish() &&;

private:
    std::vector<std::uint8_t> bytes_;
    std::uint64_t bits_ = 0;
};

// MSB-first bit reader over a byte span. Reading past the end throws
// DataError.
class BitSource {
public:
    explicit BitSource(std::span<const std::uint8_t> bytes)
        : bytes_(bytes), limit_(static_cast<std::uint64_t>(bytes.size()) * 8)
    {
    }
    bool get_bit();
    std::uint64_t get_bits(int count);
    std::uint64_t position() const { return pos_; }
    std::uint64_t remaining() const { return limit_ - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::uint64_t limit_;
    std::uint64_t pos_ = 0;
};

inline std::uint64_t zigzag(std::int64_t v)
{
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
inline std::int64_t unzigzag(std::uint64_t u)
{
    return static_cast<std::int64_t>((u >> 1) ^ (~(u & 1) + 1));
}

// Adaptation table. Parameters are fixed point with kFrac fractional bits;
// the integer part is the run-length exponent k (run mode when k > 0) or
// the Rice parameter k_R.
struct RlgrConstants {
    static constexpr int kFrac = 4;
    static constexpr int kMaxParam = 24 << kFrac;
    static constexpr int kInitRun = 1 << kFrac;
    static constexpr int kInitRice = 4 << kFrac;
    static constexpr int kZeroUp = 8;       // no-run mode, zero coded
    static constexpr int kNonzeroDown = 3;   // no-run mode, nonzero coded
    static constexpr int kFullRunUp = 6;     // run mode, complete run of 2^k zeros
    static constexpr int kPartialRunDown = 6;  // run mode, run ended by a nonzero
    static constexpr int kRiceDown = 6;      // codeword quotient == 0
    static constexpr int kRiceUpPerQuotient = 2;  // codeword quotient > 1
    static constexpr int kEscapeQuotient = 32;
    static constexpr int kEscapeLengthBits = 7;
};

struct RlgrState {
    int run_param = RlgrConstants::kInitRun;
    int rice_param = RlgrConstants::kInitRice;

    int run_k() const { return run_param >> RlgrConstants::kFrac; }
    int rice_k() const { return rice_param >> RlgrConstants::kFrac; }
    bool run_mode() const { return run_k() > 0; }
    bool operator==(const RlgrState&) const = default;
};

class RlgrEncoder {
public:
    explicit RlgrEncoder(BitSink& sink) : sink_(sink) {}
    void put(std::int64_t v);
    // Emits a pending partial run. Call once after the last symbol.
    void finish();
    const RlgrState& state() const { return state_; }

private:
    BitSink& sink_;
    RlgrState state_;
    std::uint64_t run_ = 0;
};

// Returns the number of bits written (the sink is not padded).
std::uint64_t rlgr_encode(std::span<const std::int64_t> symbols, BitSink& sink);

// Decodes exactly `count` symbols. Throws DataError on a truncated or
// inconsistent stream.
std::vector<std::int64_t> rlgr_decode(BitSource& source, std::size_t count);

}  // namespace lvac

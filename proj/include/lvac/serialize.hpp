#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lvac/cbn.hpp"

namespace lvac {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian append-only byte buffer.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void tag(const char (&magic)[5]) { raw({reinterpret_cast<const std::uint8_t*>(magic), 4}); }

    std::size_t size() const { return bytes_.size(); }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader; throws DataError on underflow.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::span<const std::uint8_t> take(std::size_t n);
    void expect_tag(const char (&magic)[5], const char* what);

    std::size_t position() const { return pos_; }
    std::span<const std::uint8_t> window(std::size_t begin, std::size_t end) const { return bytes_.subspan(begin, end - begin); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// CBN parameter block: family u8, C u8, H u16, tensors row-major as f32,
// CRC32 of everything before it.
std::vector<std::uint8_t> encode_cbn_params(const CbnParams& params);
// Reads one block starting at the reader position.
CbnParams decode_cbn_params(ByteReader& reader);
CbnParams decode_cbn_params(std::span<const std::uint8_t> bytes);

// Rounds every parameter to float, as stored.
CbnParams round_to_f32(const CbnParams& params);

}  // namespace lvac

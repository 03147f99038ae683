#include "lvac/serialize.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

namespace lvac {

std::uint32_t crc32(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

void ByteWriter::u16(std::uint16_t v)
{
    for (int i = 0; i < 2; ++i)
        bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f32(float v)
{
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
}
void ByteWriter::f64(double v)
{
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n)
{
    if (n > remaining())
        throw DataError("unexpected end of data");
    const auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
}
std::uint8_t ByteReader::u8() { return take(1)[0]; }
std::uint16_t ByteReader::u16()
{
    const auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t ByteReader::u32()
{
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
        v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}
std::uint64_t ByteReader::u64()
{
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}
float ByteReader::f32()
{
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
double ByteReader::f64()
{
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
void ByteReader::expect_tag(const char (&magic)[5], const char* what)
{
    const auto b = take(4);
    if (std::memcmp(b.data(), magic, 4) != 0)
        throw DataError(std::string("not a ") + what);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("cannot write " + path.string());
}

std::vector<std::uint8_t> encode_cbn_params(const CbnParams& params)
{
    params.spec.validate();
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(params.spec.family));
    w.u8(static_cast<std::uint8_t>(params.spec.channels));
    w.u16(static_cast<std::uint16_t>(params.spec.hidden));
    for (Eigen::Index i = 0; i < params.data.size(); ++i)
        w.f32(static_cast<float>(params.data[i]));
    w.u32(crc32(w.bytes()));
    return std::move(w.bytes());
}

CbnParams decode_cbn_params(ByteReader& reader)
{
    const std::size_t start = reader.position();
    CbnSpec spec;
    const std::uint8_t family = reader.u8();
    if (family < 1 || family > 3)
        throw DataError("unknown CBN family tag");
    spec.family = static_cast<CbnFamily>(family);
    spec.channels = reader.u8();
    spec.hidden = reader.u16();
    try {
        spec.validate();
    } catch (const UsageError& e) {
        throw DataError(std::string("invalid CBN header: ") + e.what());
    }
    CbnParams params(spec);
    for (Eigen::Index i = 0; i < params.data.size(); ++i)
        params.data[i] = reader.f32();
    const std::size_t end = reader.position();
    const std::uint32_t stored = reader.u32();
    if (crc32(reader.window(start, end)) != stored)
        throw DataError("CBN parameter block checksum mismatch");
    return params;
}

CbnParams decode_cbn_params(std::span<const std::uint8_t> bytes)
{
    ByteReader reader(bytes);
    CbnParams params = decode_cbn_params(reader);
    if (reader.remaining() != 0)
        throw DataError("trailing bytes after CBN parameter block");
    return params;
}

CbnParams round_to_f32(const CbnParams& params)
{
    CbnParams out = params;
    for (Eigen::Index i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<double>(static_cast<float>(out.data[i]));
    return out;
}

}  // namespace lvac

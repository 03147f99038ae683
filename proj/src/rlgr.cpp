#include "lvac/rlgr.hpp"

#include <algorithm>
#include <bit>

namespace lvac {

void BitSink::put_bit(bool bit)
{
    if ((bits_ & 7u) == 0)
        bytes_.push_back(0);
    if (bit)
        bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ & 7u));
    ++bits_;
}

void BitSink::put_bits(std::uint64_t value, int count)
{
    for (int i = count - 1; i >= 0; --i)
        put_bit((value >> i) & 1u);
}

std::vector<std::uint8_t> BitSink::finish() && { return std::move(bytes_); }

bool BitSource::get_bit()
{
    if (pos_ >= limit_)
        throw DataError("bitstream truncated");
    const bool bit = (bytes_[pos_ >> 3] >> (7 - (pos_ & 7u))) & 1u;
    ++pos_;
    return bit;
}

std::uint64_t BitSource::get_bits(int count)
{
    std::uint64_t v = 0;
    for (int i = 0; i < count; ++i)
        v = (v << 1) | static_cast<std::uint64_t>(get_bit());
    return v;
}

namespace {

using K = RlgrConstants;

void rice_put(BitSink& sink, std::uint64_t u, int k)
{
    const std::uint64_t q = u >> k;
    if (q < static_cast<std::uint64_t>(K::kEscapeQuotient)) {
        for (std::uint64_t i = 0; i < q; ++i)
            sink.put_bit(true);
        sink.put_bit(false);
        sink.put_bits(u, k);
    } else {
        for (int i = 0; i < K::kEscapeQuotient; ++i)
            sink.put_bit(true);
        const int width = std::bit_width(u);
        sink.put_bits(static_cast<std::uint64_t>(width), K::kEscapeLengthBits);
        sink.put_bits(u, width);
    }
}

std::uint64_t rice_get(BitSource& source, int k)
{
    int q = 0;
    while (q < K::kEscapeQuotient && source.get_bit())
        ++q;
    if (q == K::kEscapeQuotient) {
        const int width = static_cast<int>(source.get_bits(K::kEscapeLengthBits));
        if (width > 64)
            throw DataError("invalid escape length in RLGR stream");
        return source.get_bits(width);
    }
    return (static_cast<std::uint64_t>(q) << k) | source.get_bits(k);
}

void adapt_rice(RlgrState& s, std::uint64_t u, int k)
{
    const std::uint64_t q = u >> k;
    if (q == 0)
        s.rice_param = std::max(s.rice_param - K::kRiceDown, 0);
    else if (q > 1)
        s.rice_param = static_cast<int>(std::min<std::uint64_t>(
            static_cast<std::uint64_t>(s.rice_param) + K::kRiceUpPerQuotient * std::min<std::uint64_t>(q, K::kMaxParam),
            K::kMaxParam));
}

void raise(int& param, int by) { param = std::min(param + by, K::kMaxParam); }
void lower(int& param, int by) { param = std::max(param - by, 0); }

}  // namespace

void RlgrEncoder::put(std::int64_t v)
{
    const int k = state_.run_k();
    const int kr = state_.rice_k();
    if (k == 0) {
        const std::uint64_t u = zigzag(v);
        rice_put(sink_, u, kr);
        adapt_rice(state_, u, kr);
        if (u == 0)
            raise(state_.run_param, K::kZeroUp);
        else
            lower(state_.run_param, K::kNonzeroDown);
        return;
    }
    if (v == 0) {
        if (++run_ == (std::uint64_t{1} << k)) {
            sink_.put_bit(false);
            run_ = 0;
            raise(state_.run_param, K::kFullRunUp);
        }
        return;
    }
    sink_.put_bit(true);
    sink_.put_bits(run_, k);
    run_ = 0;
    const std::uint64_t u = zigzag(v) - 1;
    rice_put(sink_, u, kr);
    adapt_rice(state_, u, kr);
    lower(state_.run_param, K::kPartialRunDown);
}

void RlgrEncoder::finish()
{
    if (run_ > 0) {
        sink_.put_bit(true);
        sink_.put_bits(run_, state_.run_k());
        run_ = 0;
    }
}

std::uint64_t rlgr_encode(std::span<const std::int64_t> symbols, BitSink& sink)
{
    const std::uint64_t start = sink.bit_count();
    RlgrEncoder enc(sink);
    for (const std::int64_t v : symbols)
        enc.put(v);
    enc.finish();
    return sink.bit_count() - start;
}

std::vector<std::int64_t> rlgr_decode(BitSource& source, std::size_t count)
{
    std::vector<std::int64_t> out;
    out.reserve(count);
    RlgrState state;
    while (out.size() < count) {
        const int k = state.run_k();
        const int kr = state.rice_k();
        if (k == 0) {
            const std::uint64_t u = rice_get(source, kr);
            adapt_rice(state, u, kr);
            if (u == 0)
                raise(state.run_param, K::kZeroUp);
            else
                lower(state.run_param, K::kNonzeroDown);
            out.push_back(unzigzag(u));
            continue;
        }
        const std::size_t remaining = count - out.size();
        if (!source.get_bit()) {
            const std::uint64_t run = std::uint64_t{1} << k;
            if (run > remaining)
                throw DataError("RLGR run exceeds the declared symbol count");
            out.insert(out.end(), static_cast<std::size_t>(run), 0);
            raise(state.run_param, K::kFullRunUp);
            continue;
        }
        const std::uint64_t run = source.get_bits(k);
        if (run > remaining)
            throw DataError("RLGR run exceeds the declared symbol count");
        out.insert(out.end(), static_cast<std::size_t>(run), 0);
        if (out.size() == count)
            break;
        const std::uint64_t u = rice_get(source, kr);
        adapt_rice(state, u, kr);
        if (u == ~std::uint64_t{0})
            throw DataError("RLGR value overflow");
        out.push_back(unzigzag(u + 1));
        lower(state.run_param, K::kPartialRunDown);
    }
    return out;
}

}  // namespace lvac

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace hcic::ehd {

/// Encrypted-Hamming-distance layout. A `width`-bit word is built from the
/// 6-bit Hamming distance (most significant) followed by the top `l` bits of
/// key_2, then rotated right by the low `k` bits of key_2.
struct EhdParams {
    static constexpr unsigned kHdBits = 6;

    unsigned width = 32;
    unsigned k = 5;
    unsigned l = 26;

    static constexpr EhdParams paper32() { return {32, 5, 26}; }
    static constexpr EhdParams demo8() { return {8, 3, 2}; }

    /// True for the two supported presets.
    bool supported() const;
    std::uint32_t mask() const { return width == 32 ? 0xFFFFFFFFu : ((1u << width) - 1); }

    friend bool operator==(const EhdParams&, const EhdParams&) = default;
};

/// "paper32" or "demo8".
std::optional<EhdParams> preset_by_name(std::string_view name);
std::string_view preset_name(const EhdParams& params);

unsigned hamming_distance(std::uint32_t x, std::uint32_t y);

std::uint32_t rotate_right(std::uint32_t value, unsigned amount, unsigned width);
std::uint32_t rotate_left(std::uint32_t value, unsigned amount, unsigned width);

/// Rotation amount m: the low k bits of key_2.
unsigned rotation_of(std::uint32_t key_2, const EhdParams& params);
/// Padding: the top l bits of key_2.
std::uint32_t padding_of(std::uint32_t key_2, const EhdParams& params);

/// EHD for an explicit Hamming-distance field value.
std::uint32_t encode_distance(unsigned hd, std::uint32_t key_2, const EhdParams& params);

std::uint32_t ehd_encode(std::uint32_t addr, std::uint32_t key_2, const EhdParams& params);

/// Bit-exact comparison against a stored word; high bits above `width`
/// must be zero for a match.
bool ehd_verify(std::uint32_t addr, std::uint32_t key_2, std::uint32_t stored, const EhdParams& params);

/// Outstanding call frames under the current key_2.
struct KeyCounter {
    std::uint64_t count = 0;
    friend bool operator==(const KeyCounter&, const KeyCounter&) = default;
};

struct RetResult {
    KeyCounter counter;
    bool update_due;
};

KeyCounter counter_on_call(KeyCounter c);
/// nullopt when count is already zero (a ret with no paired call).
std::optional<RetResult> counter_on_ret(KeyCounter c);

using Rational = boost::multiprecision::cpp_rational;

/// [(1/2)^k * 1/(x+1)]^n
double attack_success_probability(unsigned k, unsigned x, unsigned n);
Rational attack_success_probability_exact(unsigned k, unsigned x, unsigned n);

}  // namespace hcic::ehd

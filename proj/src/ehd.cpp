#include "hcic/ehd.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace hcic::ehd {

bool EhdParams::supported() const { return *this == paper32() || *this == demo8(); }

std::optional<EhdParams> preset_by_name(std::string_view name) {
    if (name == "paper32") return EhdParams::paper32();
    if (name == "demo8") return EhdParams::demo8();
    return std::nullopt;
}

std::string_view preset_name(const EhdParams& params) {
    if (params == EhdParams::paper32()) return "paper32";
    if (params == EhdParams::demo8()) return "demo8";
    return "custom";
}

unsigned hamming_distance(std::uint32_t x, std::uint32_t y) { return static_cast<unsigned>(std::popcount(x ^ y)); }

std::uint32_t rotate_right(std::uint32_t value, unsigned amount, unsigned width) {
    if (width == 32) return std::rotr(value, static_cast<int>(amount));
    const std::uint32_t mask = (1u << width) - 1;
    value &= mask;
    amount %= width;
    if (amount == 0) return value;
    return ((value >> amount) | (value << (width - amount))) & mask;
}

std::uint32_t rotate_left(std::uint32_t value, unsigned amount, unsigned width) {
    amount %= width;
    return rotate_right(value, (width - amount) % width, width);
}

unsigned rotation_of(std::uint32_t key_2, const EhdParams& params) { return key_2 & ((1u << params.k) - 1); }

std::uint32_t padding_of(std::uint32_t key_2, const EhdParams& params) {
    return params.l == 0 ? 0 : key_2 >> (32 - params.l);
}

std::uint32_t encode_distance(unsigned hd, std::uint32_t key_2, const EhdParams& params) {
    const std::uint32_t field = (hd & ((1u << EhdParams::kHdBits) - 1)) << params.l;
    return rotate_right(field | padding_of(key_2, params), rotation_of(key_2, params), params.width);
}

std::uint32_t ehd_encode(std::uint32_t addr, std::uint32_t key_2, const EhdParams& params) {
    return encode_distance(hamming_distance(addr, key_2), key_2, params);
}

bool ehd_verify(std::uint32_t addr, std::uint32_t key_2, std::uint32_t stored, const EhdParams& params) {
    return ehd_encode(addr, key_2, params) == stored;
}

KeyCounter counter_on_call(KeyCounter c) { return {c.count + 1}; }

std::optional<RetResult> counter_on_ret(KeyCounter c) {
    if (c.count == 0) return std::nullopt;
    KeyCounter next{c.count - 1};
    return RetResult{next, next.count == 0};
}

double attack_success_probability(unsigned k, unsigned x, unsigned n) {
    if (k < 1 || n < 1) throw std::invalid_argument("k and n must be >= 1");
    double per_hop = std::ldexp(1.0, -static_cast<int>(k)) / static_cast<double>(x + 1);
    return std::pow(per_hop, static_cast<double>(n));
}

Rational attack_success_probability_exact(unsigned k, unsigned x, unsigned n) {
    if (k < 1 || n < 1) throw std::invalid_argument("k and n must be >= 1");
    boost::multiprecision::cpp_int denom = boost::multiprecision::cpp_int(1) << k;
    denom *= (x + 1);
    boost::multiprecision::cpp_int d = boost::multiprecision::pow(denom, n);
    return Rational(1, d);
}

}  // namespace hcic::ehd

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include "hcic/ehd.hpp"

using namespace hcic::ehd;

namespace {

// Reference EHD built from bit strings: 6-bit HD, then the first l key bits
// (MSB first), rotated right by the value of the last k key bits.
std::string bits(std::uint32_t v, unsigned n) {
    std::string s;
    for (unsigned i = n; i-- > 0;) s.push_back(((v >> i) & 1) ? '1' : '0');
    return s;
}

std::uint32_t reference_ehd(unsigned hd, std::uint32_t key, unsigned width, unsigned k, unsigned l) {
    std::string key_bits = bits(key, 32);
    std::string word = bits(hd, 6) + key_bits.substr(0, l);
    REQUIRE(word.size() == width);
    unsigned m = static_cast<unsigned>(std::stoul(key_bits.substr(32 - k), nullptr, 2)) % width;
    std::string rotated = word.substr(width - m) + word.substr(0, width - m);
    return static_cast<std::uint32_t>(std::stoul(rotated, nullptr, 2));
}

unsigned reference_hd(std::uint32_t x, std::uint32_t y) {
    unsigned n = 0;
    for (unsigned i = 0; i < 32; ++i) n += ((x >> i) & 1) != ((y >> i) & 1);
    return n;
}

}  // namespace

TEST_CASE("hamming distance examples") {
    CHECK(hamming_distance(0, 0) == 0);
    CHECK(hamming_distance(0xFFFFFFFF, 0) == 32);
    CHECK(hamming_distance(0x0804854B, 0xA2156CF7) == 16);
    CHECK(hamming_distance(0x080486F1, 0xA2156CF7) == reference_hd(0x080486F1, 0xA2156CF7));
    CHECK(hamming_distance(0x080486F1, 0xA2156CF7) == 13);
    std::mt19937 rng(1);
    for (int i = 0; i < 1000; ++i) {
        auto a = rng(), b = rng();
        CHECK(hamming_distance(a, b) == reference_hd(a, b));
    }
}

TEST_CASE("presets satisfy hd_bits + l = width") {
    for (auto p : {EhdParams::paper32(), EhdParams::demo8()}) {
        CHECK(EhdParams::kHdBits + p.l == p.width);
        CHECK(p.supported());
    }
    CHECK_FALSE((EhdParams{16, 4, 10}).supported());
    CHECK(preset_by_name("demo8") == EhdParams::demo8());
    CHECK_FALSE(preset_by_name("other").has_value());
}

TEST_CASE("32-bit worked example") {
    CHECK(encode_distance(20, 0x12345678, EhdParams::paper32()) == 0x48D15950u);
    CHECK(reference_ehd(20, 0x12345678, 32, 5, 26) == 0x48D15950u);
}

TEST_CASE("8-bit demo values") {
    const auto p = EhdParams::demo8();
    CHECK(ehd_encode(0x0804854B, 0xA2156CF7, p) == 132);
    CHECK(ehd_encode(0x080486F1, 0xA2156CF7, p) == 108);
    CHECK_FALSE(ehd_verify(0x080486F1, 0xA2156CF7, 132, p));
    CHECK(ehd_verify(0x0804854B, 0xA2156CF7, 132, p));
}

TEST_CASE("encoder matches the bit-string reference") {
    std::mt19937 rng(2);
    for (int i = 0; i < 5000; ++i) {
        std::uint32_t key = rng();
        unsigned hd = rng() % 33;
        CHECK(encode_distance(hd, key, EhdParams::paper32()) == reference_ehd(hd, key, 32, 5, 26));
        CHECK(encode_distance(hd, key, EhdParams::demo8()) == reference_ehd(hd, key, 8, 3, 2));
    }
}

TEST_CASE("zero rotation leaves the concatenation unchanged") {
    const std::uint32_t key = 0xABCDEF00;  // low 5 bits zero
    const auto p = EhdParams::paper32();
    CHECK(rotation_of(key, p) == 0);
    CHECK(encode_distance(7, key, p) == ((7u << 26) | (key >> 6)));
}

TEST_CASE("encode/verify round trip and single-bit sensitivity") {
    std::mt19937 rng(3);
    for (int i = 0; i < 10000; ++i) {
        std::uint32_t addr = rng(), key = rng();
        for (auto p : {EhdParams::paper32(), EhdParams::demo8()}) {
            auto e = ehd_encode(addr, key, p);
            CHECK(e <= p.mask());
            CHECK(ehd_verify(addr, key, e, p));
            if (i < 200)
                for (unsigned b = 0; b < 32; ++b) CHECK_FALSE(ehd_verify(addr, key, e ^ (1u << b), p));
        }
    }
}

TEST_CASE("rotation introduces no collisions over the 64 HD field values") {
    std::mt19937 rng(4);
    for (int i = 0; i < 200; ++i) {
        std::uint32_t key = rng();
        for (auto p : {EhdParams::paper32(), EhdParams::demo8()}) {
            std::set<std::uint32_t> seen;
            for (unsigned hd = 0; hd < 64; ++hd) seen.insert(encode_distance(hd, key, p));
            CHECK(seen.size() == 64);
        }
    }
}

TEST_CASE("EHD xor address is not constant for a fixed key") {
    std::mt19937 rng(5);
    for (auto p : {EhdParams::paper32(), EhdParams::demo8()}) {
        const std::uint32_t key = rng();
        std::set<std::uint32_t> diffs;
        for (int i = 0; i < 100; ++i) {
            std::uint32_t a = rng();
            diffs.insert(ehd_encode(a, key, p) ^ (a & p.mask()));
        }
        CHECK(diffs.size() >= 2);
    }
}

TEST_CASE("rotate helpers are inverse bijections") {
    for (unsigned w : {8u, 32u})
        for (unsigned m = 0; m < w; ++m)
            for (std::uint32_t v : {0x1u, 0x81u, 0xA5u, 0xDEADBEEFu}) {
                std::uint32_t masked = w == 32 ? v : v & 0xFF;
                CHECK(rotate_left(rotate_right(masked, m, w), m, w) == masked);
            }
}

TEST_CASE("key counter schedule") {
    KeyCounter c;
    c = counter_on_call(c);
    auto r = counter_on_ret(c);
    REQUIRE(r);
    CHECK(r->counter.count == 0);
    CHECK(r->update_due);

    c = counter_on_call(counter_on_call(KeyCounter{}));
    auto r1 = counter_on_ret(c);
    CHECK_FALSE(r1->update_due);
    auto r2 = counter_on_ret(r1->counter);
    CHECK(r2->update_due);

    c = KeyCounter{};
    for (int i = 0; i < 3; ++i) c = counter_on_call(c);
    std::vector<std::uint64_t> counts;
    int updates = 0;
    for (int i = 0; i < 3; ++i) {
        auto rr = counter_on_ret(c);
        c = rr->counter;
        counts.push_back(c.count);
        updates += rr->update_due;
    }
    CHECK(counts == std::vector<std::uint64_t>{2, 1, 0});
    CHECK(updates == 1);
    CHECK_FALSE(counter_on_ret(KeyCounter{}).has_value());
}

TEST_CASE("balanced traces: count returns to 0 with one update per top-level region") {
    std::mt19937 rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        KeyCounter c;
        int regions = 0, updates = 0, depth = 0;
        int steps = 0;
        while (steps++ < 60 || depth > 0) {
            bool call = depth == 0 || (steps < 60 && rng() % 2);
            if (call) {
                if (depth == 0) ++regions;
                c = counter_on_call(c);
                ++depth;
            } else {
                auto r = counter_on_ret(c);
                REQUIRE(r);
                c = r->counter;
                updates += r->update_due;
                --depth;
            }
        }
        CHECK(c.count == 0);
        CHECK(updates == regions);
    }
}

TEST_CASE("guessing probability") {
    CHECK(attack_success_probability(5, 1, 1) == doctest::Approx(1.0 / 64));
    CHECK(attack_success_probability_exact(5, 1, 1) == Rational(1, 64));
    CHECK(attack_success_probability_exact(5, 1, 2) == Rational(1, 64) * Rational(1, 64));
    CHECK(attack_success_probability_exact(3, 3, 1) == Rational(1, 32));
    CHECK(attack_success_probability(3, 1, 2) == doctest::Approx(1.0 / 256));
    CHECK(attack_success_probability(3, 0, 1) == doctest::Approx(0.125));
    CHECK_THROWS(attack_success_probability(0, 1, 1));
    CHECK_THROWS(attack_success_probability(3, 1, 0));
}

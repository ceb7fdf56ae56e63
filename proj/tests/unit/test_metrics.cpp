#include <doctest.h>

#include <random>
#include <set>
#include <tuple>

#include "hcic/assembler.hpp"
#include "hcic/fixtures.hpp"
#include "hcic/metrics.hpp"

using namespace hcic;
using namespace hcic::metrics;
using ehd::Rational;

namespace {

using Key = std::tuple<Address, Address, std::size_t>;  // entry, terminator, length

// Tries every (start, end) byte pair: decode from start straight through,
// and keep the pair when the instruction beginning exactly at end is a
// ret / jmp [r] / call [r] reached without passing another control transfer.
std::set<Key> brute_force_gadgets(const BinaryImage& img, unsigned max_len) {
    const auto& bytes = img.code.bytes;
    auto dec = [&](std::size_t off) -> std::optional<Instruction> {
        return isa::decode(std::span<const std::uint8_t>(bytes).subspan(off));
    };
    auto is_term = [](isa::Opcode op) {
        return op == isa::Opcode::Ret || op == isa::Opcode::JmpInd || op == isa::Opcode::CallInd;
    };
    auto stops = [](isa::Opcode op) {
        switch (op) {
            case isa::Opcode::Ret: case isa::Opcode::JmpInd: case isa::Opcode::CallInd:
            case isa::Opcode::Jz: case isa::Opcode::Jnz: case isa::Opcode::Jmp:
            case isa::Opcode::Call: case isa::Opcode::Halt:
                return true;
            default:
                return false;
        }
    };
    std::set<Key> out;
    for (std::size_t s = 0; s < bytes.size(); ++s)
        for (std::size_t e = s; e < bytes.size(); ++e) {
            auto t = dec(e);
            if (!t || !is_term(t->opcode)) continue;
            std::size_t off = s, n = 0;
            bool ok = true;
            while (off < e) {
                auto i = dec(off);
                if (!i || stops(i->opcode)) { ok = false; break; }
                off += i->length;
                ++n;
            }
            if (ok && off == e && n + 1 <= max_len)
                out.insert({img.code.base + static_cast<Address>(s), img.code.base + static_cast<Address>(e), n + 1});
        }
    return out;
}

std::set<Key> keys_of(const std::vector<Gadget>& gs) {
    std::set<Key> out;
    for (const auto& g : gs) out.insert({g.entry, g.terminator_addr(), g.instructions.size()});
    return out;
}

BinaryImage random_image(std::mt19937& rng, std::size_t max_size) {
    BinaryImage img;
    std::size_t size = std::uniform_int_distribution<std::size_t>(0, max_size)(rng);
    std::uniform_int_distribution<int> byte(0, 255), pick(0, 9);
    const auto table = isa::opcode_table();
    while (img.code.bytes.size() < size) {
        // Mostly well-formed instructions with random operands, some noise.
        if (pick(rng) < 7) {
            const auto& info = table[std::uniform_int_distribution<std::size_t>(0, table.size() - 1)(rng)];
            img.code.bytes.push_back(static_cast<std::uint8_t>(info.opcode));
            for (int i = 1; i < info.length; ++i)
                img.code.bytes.push_back(static_cast<std::uint8_t>(pick(rng) < 6 ? pick(rng) % 8 : byte(rng)));
        } else {
            img.code.bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
        }
    }
    img.code.bytes.resize(size);
    return img;
}

}  // namespace

TEST_CASE("pop r1; ret gives the aligned gadget and the ret suffix") {
    auto img = assemble("main:\n pop r1\n ret\n");
    auto gs = scan_gadgets(img, 5);
    std::set<Key> want{{img.code.base, img.code.base + 2, 2}, {img.code.base + 2, img.code.base + 2, 1}};
    CHECK(keys_of(gs) == want);
    for (const auto& g : gs) {
        CHECK(g.aligned);
        CHECK(g.terminator == Terminator::Ret);
        CHECK(g.instructions.back().insn.opcode == isa::Opcode::Ret);
    }
}

TEST_CASE("empty code and bad max_len") {
    BinaryImage img;
    CHECK(scan_gadgets(img, 5).empty());
    CHECK_THROWS_AS(scan_gadgets(img, 0), std::invalid_argument);
    CHECK_THROWS_AS(scan_gadgets(img, 11), std::invalid_argument);
}

TEST_CASE("unintended gadgets inside an immediate are found and flagged misaligned") {
    // The immediate 0x00C30158 encodes `pop r1; ret` at offset 2.
    auto img = assemble("main:\n mov r0, 0x00C30158\n mov r0, 0\n int 0x01\n");
    auto gs = scan_gadgets(img, 5);
    bool found = false;
    for (const auto& g : gs)
        if (g.entry == img.code.base + 2) {
            found = true;
            CHECK_FALSE(g.aligned);
            CHECK(g.instructions.size() == 2);
        }
    CHECK(found);
}

TEST_CASE("scanner equals the brute-force enumerator on random images") {
    std::mt19937 rng(20240611);
    for (int n = 0; n < 30; ++n) {
        auto img = random_image(rng, 700);
        for (unsigned len : {1u, 3u, 5u, 10u}) {
            CAPTURE(n);
            CAPTURE(len);
            auto gs = scan_gadgets(img, len);
            CHECK(keys_of(gs) == brute_force_gadgets(img, len));
            CHECK(keys_of(gs).size() == gs.size());  // entry determines the gadget
            auto canon = canonical_starts(img);
            for (const auto& g : gs) CHECK(g.aligned == (canon.count(g.entry) == 1));
        }
    }
}

TEST_CASE("scanner equals the brute-force enumerator on every fixture") {
    for (const auto& f : fixtures::catalog()) {
        CAPTURE(f.name);
        auto img = fixtures::assemble_fixture(f);
        CHECK(keys_of(scan_gadgets(img, 5)) == brute_force_gadgets(img, 5));
    }
}

TEST_CASE("substituting a return address never verifies under all keys") {
    std::mt19937 rng(7);
    for (auto p : {ehd::EhdParams::paper32(), ehd::EhdParams::demo8()}) {
        for (int i = 0; i < 2000; ++i) {
            Address a = static_cast<Address>(rng()), b = static_cast<Address>(rng());
            if (a == b) continue;
            CHECK_FALSE(substitution_verifies_for_all_keys(a, b, p));
            // The claimed witness really rejects.
            CHECK_FALSE(ehd::ehd_verify(b, a, ehd::ehd_encode(a, a, p), p));
        }
        CHECK(substitution_verifies_for_all_keys(0x08048010, 0x08048010, p));
    }
}

TEST_CASE("allowed gadgets") {
    auto img = assemble(
        "main:\n call f\n mov r0, 0\n int 0x01\n"
        "f:\n pop r1\n ret\n"
        "t:\n pop r0\n jmp [r7]\n"
        "u:\n pop r2\n jmp [r7]\n");
    auto gs = scan_gadgets(img, 5);
    const auto sites = return_sites(img);
    CHECK(sites == std::set<Address>{img.code.base + 4});
    const auto p = ehd::EhdParams::paper32();

    SUBCASE("hcic disabled: everything allowed") {
        auto c = allowed_gadgets(gs, false, p, sites, {});
        CHECK(c.allowed() == c.total);
        CHECK(c.elimination_rate() == 0.0);
    }
    SUBCASE("hcic enabled: no ret gadget, jmp gadgets only at BB leaders") {
        const Address t = img.require_symbol("t");
        auto c = allowed_gadgets(gs, true, p, sites, {t});
        CHECK(c.allowed_ret == 0);
        CHECK(c.ret_elimination_rate() == 1.0);
        std::size_t at_t = 0;
        for (const auto& g : gs) at_t += g.terminator != Terminator::Ret && g.entry == t;
        CHECK(at_t == 1);
        CHECK(c.allowed_jmp == at_t);
        CHECK(c.total_ret + c.total_jmp == c.total);
        CHECK(c.elimination_rate() == doctest::Approx(1.0 - 1.0 / static_cast<double>(c.total)));
    }
}

TEST_CASE("AIR closed form") {
    CHECK(air_three_class(300, 3, 8) == Rational(1) - Rational(12, 900));
    CHECK(air_three_class(300, 3, 8).convert_to<double>() == doctest::Approx(0.98667).epsilon(1e-5));
    // Non-increasing in the number of targets.
    for (std::uint64_t t = 0; t < 50; ++t) CHECK(air_three_class(500, t, 3) >= air_three_class(500, t + 1, 3));
    CHECK_THROWS_AS(air_three_class(0, 1, 1), std::invalid_argument);
}

TEST_CASE("AIR on images") {
    SUBCASE("no control flow is vacuous") {
        auto img = assemble("main:\n mov r0, 0\n int 0x01\n");
        auto r = air(img, {});
        CHECK(r.vacuous);
        CHECK(r.closed_form == 1);
    }
    SUBCASE("all three classes: equals the three-class formula") {
        auto img = assemble("main:\n call f\n jmp e\ne:\n mov r0, 0\n int 0x01\nf:\n ret\n");
        loader::TargetSet t;
        t.call_targets = {img.require_symbol("f")};
        t.jmp_targets = {img.require_symbol("e")};
        auto r = air(img, t);
        CHECK(r.classes == 3);
        CHECK(r.closed_form == air_three_class(img.code.bytes.size(), 1, 1));
        CHECK(r.per_insn == r.closed_form);
    }
    SUBCASE("class mix does not weight the closed form") {
        // Three jumps and one ret: the flat average leans toward the jumps.
        auto img = assemble("main:\n jmp a\na:\n jmp b\nb:\n jmp c\nc:\n ret\n");
        loader::TargetSet t;
        t.jmp_targets = {img.require_symbol("a"), img.require_symbol("b"), img.require_symbol("c")};
        auto r = air(img, t);
        const std::uint64_t S = img.code.bytes.size();
        CHECK(r.classes == 2);
        CHECK(r.closed_form == Rational(1) - Rational(3 + 1, 2 * S));
        CHECK(r.per_insn == r.closed_form);
        CHECK(r.per_insn_flat == Rational(1) - Rational(3 * 3 + 1, 4 * S));
    }
}

TEST_CASE("overhead report") {
    auto img = fixtures::assemble_fixture("callheavy");
    auto base = cpu::run_image(img, cpu::HcicConfig::disabled(), 100000);
    SUBCASE("identity configuration") {
        auto r = overhead_report(img, 0, base, base);
        CHECK(r.binary_size_overhead == 0.0);
        CHECK(r.runtime_overhead == 0.0);
        CHECK(r.runtime_overhead_with_trampolines == 0.0);
    }
    SUBCASE("one trampoline in 400 bytes is 1%") {
        BinaryImage orig;
        orig.code.bytes.assign(400, 0x90);
        auto r = overhead_report(orig, 4, base, base);
        CHECK(r.binary_size_overhead == doctest::Approx(0.01));
    }
    SUBCASE("runtime overhead is extra cycles over base cycles") {
        cpu::HcicConfig cfg;
        cfg.keys.key_1 = 0;
        cfg.keys.key_2 = 0x1234;
        auto on = cpu::run_image(img, cfg, 100000);
        REQUIRE(on.exited());
        auto r = overhead_report(img, 0, base, on);
        const auto& c = on.counters;
        CHECK(r.hcic_extra_cycles == 3 * c.calls + 3 * c.rets + c.decrypted_fetches);
        CHECK(r.runtime_overhead ==
              doctest::Approx(static_cast<double>(r.hcic_extra_cycles) / static_cast<double>(base.counters.cycles)));
    }
    SUBCASE("rejects alarmed runs") {
        cpu::Outcome bad;
        bad.terminal = cpu::CraAlarm{};
        CHECK_THROWS_AS(overhead_report(img, 0, base, bad), std::invalid_argument);
    }
}

#include <doctest.h>

#include <algorithm>

#include "hcic/assembler.hpp"
#include "hcic/cpu.hpp"
#include "hcic/fixtures.hpp"
#include "hcic/loader.hpp"

using namespace hcic;
using namespace hcic::loader;

namespace {

constexpr std::uint64_t kSteps = 200000;

TargetSet profile(const BinaryImage& img, const fixtures::Fixture& f) {
    auto rep = profile_targets(img, f.profile_inputs, kSteps);
    REQUIRE(rep.skipped.empty());
    return rep.targets;
}

cpu::Outcome run_with(const BinaryImage& img, const cpu::HcicConfig& cfg, const std::vector<std::uint8_t>& input,
                      bool trace = false) {
    cpu::MachineOptions opts;
    opts.input = cpu::stream_input(input);
    opts.record_trace = trace;
    return cpu::run_image(img, cfg, kSteps, opts);
}

Address sym(const BinaryImage& img, const char* name) { return img.require_symbol(name); }

}  // namespace

TEST_CASE("fig2 profile: one call target, one jmp target, no conflicts") {
    const auto& f = fixtures::get("fig2");
    auto img = fixtures::assemble_fixture(f);
    auto t = profile(img, f);
    CHECK(t.call_targets == std::set<Address>{sym(img, "g")});
    CHECK(t.jmp_targets == std::set<Address>{sym(img, "head")});
    CHECK(t.conflicts().empty());
    auto r = relink(img, t);
    CHECK(r.size_overhead_bytes == 0);
    CHECK(r.image.code.bytes == img.code.bytes);
}

TEST_CASE("conflict classification on the exception-style fixtures") {
    SUBCASE("dowhile body gets one trampoline") {
        auto img = fixtures::assemble_fixture("dowhile");
        auto t = profile(img, fixtures::get("dowhile"));
        CHECK(t.fallthrough_conflicts == std::set<Address>{sym(img, "body")});
        CHECK(t.return_site_conflicts.empty());
        auto r = relink(img, t);
        CHECK(r.size_overhead_bytes == 4);
        REQUIRE(r.trampoline_map.size() == 1);
        // The trampoline sits where body used to be and jumps to the next word.
        const Address tramp = r.trampoline_map.at(sym(img, "body"));
        CHECK(tramp == sym(img, "body"));
        auto j = decode_at(r.image, tramp);
        REQUIRE(j);
        CHECK(j->opcode == isa::Opcode::Jmp);
        CHECK(isa::branch_target(*j, tramp) == tramp + 4);
        CHECK(r.image.require_symbol("body") == tramp + 4);
    }
    SUBCASE("longjmp resume is a return-site conflict") {
        auto img = fixtures::assemble_fixture("longjmp");
        auto t = profile(img, fixtures::get("longjmp"));
        CHECK(t.jmp_targets.count(sym(img, "resume")));
        CHECK(t.return_site_conflicts.count(sym(img, "resume")));
        CHECK(t.fallthrough_conflicts.count(sym(img, "loop")));
    }
    SUBCASE("throw target is a fallthrough conflict") {
        auto img = fixtures::assemble_fixture("throw");
        auto t = profile(img, fixtures::get("throw"));
        CHECK(t.jmp_targets.count(sym(img, "catch_end")));
        CHECK(t.fallthrough_conflicts.count(sym(img, "catch_end")));
    }
    SUBCASE("threads: the join loop follows a call") {
        auto img = fixtures::assemble_fixture("threads");
        auto t = profile(img, fixtures::get("threads"));
        CHECK(t.return_site_conflicts.count(sym(img, "wait")));
        CHECK(t.call_targets == std::set<Address>{sym(img, "slow"), sym(img, "quick")});
    }
    SUBCASE("indirect targets are only seen dynamically") {
        auto img = fixtures::assemble_fixture("funcptr");
        auto st = static_targets(img);
        CHECK_FALSE(st.call_targets.count(sym(img, "inc")));
        auto t = profile(img, fixtures::get("funcptr"));
        CHECK(t.call_targets == std::set<Address>{sym(img, "inc"), sym(img, "dbl")});
        // r5 ends even, so only one switch arm is ever taken.
        CHECK(t.jmp_targets.count(sym(img, "case_even")));
        CHECK_FALSE(t.jmp_targets.count(sym(img, "case_odd")));
    }
}

TEST_CASE("runs that do not exit are skipped and reported") {
    const auto& f = fixtures::get("smash");
    auto img = fixtures::assemble_fixture(f);
    auto rep = profile_targets(img, {std::vector<std::uint8_t>(64, 0x41), {}}, kSteps);
    CHECK(rep.runs_used == 1);
    REQUIRE(rep.skipped.size() == 1);
    CHECK(rep.skipped[0].rfind("input 0", 0) == 0);
}

TEST_CASE("zero key_1 is the identity on code and warns") {
    auto img = fixtures::assemble_fixture("fig2");
    auto t = profile(img, fixtures::get("fig2"));
    auto h = harden(img, t, 0);
    CHECK(h.image == relink(img, t).image);
    CHECK(h.warnings.size() == 1);
    CHECK(harden(img, t, 0x5A).warnings.empty());
}

TEST_CASE("one call target: hardened differs from relinked in exactly that byte") {
    auto img = assemble("main:\n call f\n mov r0, 0\n int 0x01\nf:\n nop\n ret\n");
    auto t = profile_targets(img, {{}}, 100).targets;
    REQUIRE(t.call_targets.size() == 1);
    REQUIRE(t.jmp_targets.empty());
    auto r = relink(img, t);
    for (unsigned key = 1; key < 256; ++key) {
        auto h = encrypt(r, static_cast<std::uint8_t>(key));
        std::vector<std::size_t> diff;
        for (std::size_t i = 0; i < r.image.code.bytes.size(); ++i)
            if (h.image.code.bytes[i] != r.image.code.bytes[i]) diff.push_back(i);
        REQUIRE(diff.size() == 1);
        CHECK(r.image.code.base + diff[0] == sym(img, "f"));
        CHECK((h.image.code.bytes[diff[0]] ^ r.image.code.bytes[diff[0]]) == key);
    }
}

TEST_CASE("harden then decrypt is the relinked image, and encrypt is an involution") {
    for (const auto& f : fixtures::catalog()) {
        CAPTURE(f.name);
        auto img = fixtures::assemble_fixture(f);
        auto t = profile(img, f);
        auto r = relink(img, t);
        for (std::uint8_t key : {0x01, 0x5A, 0xFF}) {
            auto h = harden(img, t, key);
            CHECK(decrypt_image_for_audit(h, key) == r.image);
            RelinkedImage again = r;
            again.image = h.image;
            CHECK(encrypt(again, key).image == r.image);
        }
    }
}

TEST_CASE("hardened programs behave like the originals under HCIC") {
    for (const auto& f : fixtures::catalog()) {
        CAPTURE(f.name);
        auto img = fixtures::assemble_fixture(f);
        auto t = profile(img, f);
        auto r = relink(img, t);
        for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
            auto cfg = cpu::HcicConfig::from_puf(puf::PufDevice(seed), 100 + seed, ehd::EhdParams::paper32());
            auto h = encrypt(r, cfg.keys.key_1);
            for (const auto& in : f.profile_inputs) {
                auto base = run_with(img, cpu::HcicConfig::disabled(), in);
                REQUIRE(base.exited());
                auto on = run_with(h.image, cfg, in);
                CHECK_MESSAGE(on.same_result(base), cpu::describe(on.terminal));
                CHECK(run_with(r.image, cpu::HcicConfig::disabled(), in).same_result(base));
            }
        }
    }
}

TEST_CASE("every decrypted fetch lands on an encrypted site and vice versa") {
    for (const auto* f : fixtures::benign()) {
        CAPTURE(f->name);
        auto img = fixtures::assemble_fixture(*f);
        auto t = profile(img, *f);
        auto cfg = cpu::HcicConfig::from_puf(puf::PufDevice(9), 1);
        auto h = harden(img, t, cfg.keys.key_1);
        auto out = run_with(h.image, cfg, f->profile_inputs.front(), true);
        REQUIRE(out.exited());
        for (const auto& ev : out.trace) {
            if (ev.type != cpu::EventType::Fetch) continue;
            CHECK(ev.decrypted == (h.encrypted_addrs.count(ev.pc) == 1));
        }
    }
}

TEST_CASE("trampolines that push a branch out of range raise RelocationOverflow") {
    // jz spans the maximum forward displacement; a trampoline in between
    // adds four bytes.
    auto img = assemble(
        "main:\n"
        "  jz far\n"
        "  nop\n"
        "t:\n"
        "  nop\n"
        "  jmp t\n"
        ".org 0x08050003\n"
        "far:\n"
        "  mov r0, 0\n"
        "  int 0x01\n");
    REQUIRE(sym(img, "far") - (sym(img, "main") + 4) == 32767);
    auto t = static_targets(img);
    CHECK_NOTHROW(relink(img, t));
    t.fallthrough_conflicts.insert(sym(img, "t"));
    CHECK_THROWS_AS(relink(img, t), RelocationOverflow);
}

TEST_CASE("targets off instruction boundaries are rejected") {
    auto img = assemble("main:\n mov r0, 0\n int 0x01\n");
    TargetSet t;
    t.jmp_targets.insert(img.code.base + 1);
    CHECK_THROWS_AS(relink(img, t), ImageError);
}

TEST_CASE("target sets and relink metadata round-trip") {
    auto img = fixtures::assemble_fixture("longjmp");
    auto t = profile(img, fixtures::get("longjmp"));
    CHECK(target_set_from_json(nlohmann::json::parse(to_json(t).dump())) == t);
    CHECK(to_json(t)["call_targets"][0].get<std::string>().rfind("0x", 0) == 0);

    auto r = relink(img, t);
    auto f = deserialize(serialize(to_image_file(r)));
    auto back = relinked_from_image_file(f);
    REQUIRE(back);
    CHECK(*back == r);
    CHECK_FALSE(relinked_from_image_file(ImageFile{img, {}}));
}

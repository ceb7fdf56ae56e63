#include "hcic/fixtures.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hcic/assembler.hpp"

#ifndef HCIC_FIXTURE_DIR
#define HCIC_FIXTURE_DIR "fixtures"
#endif

namespace hcic::fixtures {

std::string_view to_string(AttackClass c) {
    switch (c) {
        case AttackClass::Smash: return "smash";
        case AttackClass::Rop: return "rop";
        case AttackClass::Jop: return "jop";
        case AttackClass::Ffr: return "ffr";
    }
    return "?";
}

std::optional<AttackClass> attack_class_from_string(std::string_view s) {
    for (auto c : {AttackClass::Smash, AttackClass::Rop, AttackClass::Jop, AttackClass::Ffr})
        if (to_string(c) == s) return c;
    return std::nullopt;
}

std::filesystem::path fixture_dir() {
    if (const char* env = std::getenv("HCIC_FIXTURE_DIR"); env && *env) return env;
    return HCIC_FIXTURE_DIR;
}

namespace {

std::vector<std::uint8_t> bytes(std::string_view s) { return {s.begin(), s.end()}; }

std::vector<Fixture> make_catalog() {
    std::vector<Fixture> c;
    auto benign = [&](std::string name, std::string desc) {
        Fixture f;
        f.file = name + ".s";
        f.name = std::move(name);
        f.description = std::move(desc);
        c.push_back(std::move(f));
    };
    benign("straight", "no control transfers at all");
    benign("fig2", "loop entered by a jump, calling a leaf function");
    benign("dowhile", "loop body reached by fallthrough and by jnz");
    benign("longjmp", "setjmp/longjmp: indirect jmp onto a return site");
    benign("threads", "two contexts with interleaved call/ret");
    benign("throw", "throw-style indirect jmp out of a call chain");
    benign("callheavy", "deep recursion, call dominated");
    benign("funcptr", "indirect calls through a table and a jump-table switch");
    benign("fig7", "call at 0x08048547 returning to 0x0804854B");
    c.back().profile_inputs = {bytes("hello")};

    auto attack = [&](std::string name, AttackClass cls, std::string desc, VulnSpec v,
                      std::vector<std::string> goal) {
        Fixture f;
        f.file = name + ".s";
        f.name = std::move(name);
        f.description = std::move(desc);
        f.kind = Kind::Attack;
        f.attack = cls;
        f.profile_inputs = {bytes("hi"), bytes("0123456789")};
        f.vuln = v;
        f.goal_args = std::move(goal);
        c.push_back(std::move(f));
    };
    attack("smash", AttackClass::Smash, "stack smash redirecting to an uncalled admin routine", {16, {}}, {});
    attack("rop", AttackClass::Rop, "pop/mov/ret gadget chain setting two syscall arguments", {16, {}},
           {"11", "binsh"});
    attack("jop", AttackClass::Jop, "dispatcher-driven jmp gadget chain via a clobbered handler pointer",
           {32, 32}, {"11", "0x600d"});
    attack("ffr_same", AttackClass::Ffr, "recorded return replayed within one key epoch", {16, {}}, {});
    attack("ffr_cross", AttackClass::Ffr, "recorded return replayed across a key update", {16, {}}, {});
    return c;
}

}  // namespace

const std::vector<Fixture>& catalog() {
    static const std::vector<Fixture> c = make_catalog();
    return c;
}

std::vector<const Fixture*> benign() {
    std::vector<const Fixture*> out;
    for (const auto& f : catalog())
        if (f.kind == Kind::Benign) out.push_back(&f);
    return out;
}

std::vector<const Fixture*> attacks() {
    std::vector<const Fixture*> out;
    for (const auto& f : catalog())
        if (f.kind == Kind::Attack) out.push_back(&f);
    return out;
}

const Fixture& get(std::string_view name) {
    for (const auto& f : catalog())
        if (f.name == name) return f;
    throw std::out_of_range("unknown fixture: " + std::string(name));
}

std::string load_source(const Fixture& f) {
    const auto path = fixture_dir() / f.file;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open fixture " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

BinaryImage assemble_fixture(const Fixture& f) { return assemble(load_source(f)); }

BinaryImage assemble_fixture(std::string_view name) { return assemble_fixture(get(name)); }

}  // namespace hcic::fixtures

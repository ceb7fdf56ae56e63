#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "hcic/assembler.hpp"
#include "hcic/isa.hpp"

using namespace hcic;
using namespace hcic::isa;

namespace {

// Independent description of the encoding: total length, which operand
// offsets hold register bytes, and which offsets are reserved zero.
struct RefShape {
    unsigned length;
    std::vector<unsigned> reg_offsets;
    std::vector<unsigned> zero_offsets;
};

const std::map<std::uint8_t, RefShape>& reference_table() {
    static const std::map<std::uint8_t, RefShape> t{
        {0x90, {1, {}, {}}},     {0xC3, {1, {}, {}}},     {0xF4, {1, {}, {}}},     {0x50, {2, {1}, {}}},
        {0x58, {2, {1}, {}}},    {0x8A, {3, {1, 2}, {}}}, {0xB8, {6, {1}, {}}},    {0x01, {3, {1, 2}, {}}},
        {0x29, {3, {1, 2}, {}}}, {0x31, {3, {1, 2}, {}}}, {0x21, {3, {1, 2}, {}}}, {0x39, {3, {1, 2}, {}}},
        {0x8B, {4, {1, 2}, {}}}, {0x89, {4, {1, 3}, {}}}, {0x74, {4, {}, {1}}},    {0x75, {4, {}, {1}}},
        {0xE9, {4, {}, {1}}},    {0xE8, {4, {}, {1}}},    {0xE0, {2, {1}, {}}},    {0xD0, {2, {1}, {}}},
        {0xCD, {2, {}, {}}},
    };
    return t;
}

// Reference length of the instruction at bytes[off], or 0 if undecodable.
unsigned reference_length(const std::vector<std::uint8_t>& bytes, std::size_t off) {
    auto it = reference_table().find(bytes[off]);
    if (it == reference_table().end()) return 0;
    const auto& s = it->second;
    if (off + s.length > bytes.size()) return 0;
    for (unsigned r : s.reg_offsets)
        if (bytes[off + r] > 7) return 0;
    for (unsigned z : s.zero_offsets)
        if (bytes[off + z] != 0) return 0;
    return s.length;
}

// Every opcode with every register combination and a spread of immediates.
std::vector<Instruction> opcode_corpus() {
    std::vector<Instruction> out;
    const std::vector<std::uint32_t> imms{0, 1, 0x7F, 0x80, 0xFF, 0x1234, 0x80000000u, 0xFFFFFFFFu};
    const std::vector<std::int32_t> disps8{-128, -1, 0, 1, 4, 127};
    const std::vector<std::int32_t> rels{-32768, -4, 0, 4, 32767};
    for (const auto& oi : opcode_table()) {
        switch (oi.shape) {
            case Shape::None: out.push_back(make(oi.opcode)); break;
            case Shape::Reg:
                for (std::uint8_t r = 0; r < 8; ++r) out.push_back(make_reg(oi.opcode, r));
                break;
            case Shape::RegReg:
                for (std::uint8_t a = 0; a < 8; ++a)
                    for (std::uint8_t b = 0; b < 8; ++b) out.push_back(make_reg_reg(oi.opcode, a, b));
                break;
            case Shape::RegImm32:
                for (std::uint8_t r = 0; r < 8; ++r)
                    for (auto v : imms) out.push_back(make_mov_imm(r, v));
                break;
            case Shape::Load:
            case Shape::Store:
                for (std::uint8_t a = 0; a < 8; ++a)
                    for (std::uint8_t b = 0; b < 8; ++b)
                        for (auto d : disps8)
                            out.push_back(oi.shape == Shape::Load ? make_load(a, b, d) : make_store(a, d, b));
                break;
            case Shape::Rel16:
                for (auto d : rels) out.push_back(make_branch(oi.opcode, d));
                break;
            case Shape::Imm8:
                for (unsigned v = 0; v < 256; ++v) out.push_back(make_int(static_cast<std::uint8_t>(v)));
                break;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("opcode table matches the reference encoding") {
    CHECK(opcode_table().size() == reference_table().size());
    for (const auto& oi : opcode_table()) {
        auto it = reference_table().find(static_cast<std::uint8_t>(oi.opcode));
        REQUIRE(it != reference_table().end());
        CHECK(oi.length == it->second.length);
    }
}

TEST_CASE("lengths span 1..6 and at least a quarter of byte values are unassigned") {
    unsigned min_len = 99, max_len = 0, assigned = 0;
    for (unsigned b = 0; b < 256; ++b) {
        if (auto oi = lookup_opcode(static_cast<std::uint8_t>(b))) {
            ++assigned;
            min_len = std::min<unsigned>(min_len, oi->length);
            max_len = std::max<unsigned>(max_len, oi->length);
        }
    }
    CHECK(min_len == 1);
    CHECK(max_len == 6);
    CHECK(256 - assigned >= 64);
    CHECK(info(Opcode::Ret).length == 1);
    CHECK(encode(make(Opcode::Ret)) == std::vector<std::uint8_t>{0xC3});
}

TEST_CASE("encode/decode round trip over the full opcode corpus") {
    auto corpus = opcode_corpus();
    CHECK(corpus.size() > 1000);
    for (const auto& insn : corpus) {
        auto bytes = encode(insn);
        REQUIRE(bytes.size() == info(insn.opcode).length);
        auto back = decode(bytes);
        REQUIRE(back.has_value());
        CHECK(back->length == bytes.size());
        CHECK(encode(*back) == bytes);
        CHECK(*back == decode(encode(*back)).value());
    }
}

TEST_CASE("assembler/disassembler round trip over the full opcode corpus") {
    // Lay the corpus out as one program; branches are printed as absolute
    // targets, so keep rel16 values within the code range.
    std::string src;
    std::vector<std::vector<std::uint8_t>> expected;
    Address at = kDefaultCodeBase + 0x10000;
    for (auto insn : opcode_corpus()) {
        if (info(insn.opcode).shape == Shape::Rel16) insn.disp = insn.disp / 4;
        src += format(insn, at) + "\n";
        expected.push_back(encode(insn));
        at += info(insn.opcode).length;
    }
    AssemblerOptions opts;
    opts.code_base = kDefaultCodeBase + 0x10000;
    auto image = assemble(src, opts);
    auto listing = disassemble(image);
    CHECK(listing == src);
    auto sweep = linear_sweep(image);
    REQUIRE(sweep.size() == expected.size());
    for (std::size_t i = 0; i < sweep.size(); ++i) CHECK(encode(sweep[i].insn) == expected[i]);
}

TEST_CASE("decode rejects unassigned opcodes, bad registers and truncation") {
    CHECK_FALSE(decode(std::vector<std::uint8_t>{0xFF}).has_value());
    CHECK_FALSE(decode(std::vector<std::uint8_t>{0x50, 0x08}).has_value());
    CHECK_FALSE(decode(std::vector<std::uint8_t>{0xE9, 0x01, 0x00, 0x00}).has_value());
    CHECK_FALSE(decode(std::vector<std::uint8_t>{0xB8, 0x00, 0x01, 0x02}).has_value());
    CHECK_FALSE(decode(std::vector<std::uint8_t>{}).has_value());
    auto halt = decode(std::vector<std::uint8_t>{0xF4});
    REQUIRE(halt);
    CHECK(halt->opcode == Opcode::Halt);
    CHECK(halt->length == 1);
}

TEST_CASE("misaligned decodes of a fixed snippet match brute-force reference") {
    auto image = assemble(
        "main:\n"
        "  mov r0, 0x58C30158\n"
        "  mov r1, 0xC3015001\n"
        "  load r2, [r1+3]\n"
        "  ret\n");
    REQUIRE(image.code.bytes.size() == 17);
    image.code.bytes.resize(16);
    const auto& bytes = image.code.bytes;
    unsigned valid = 0;
    for (std::size_t off = 0; off < bytes.size(); ++off) {
        auto got = decode_at(image, image.code.base + static_cast<Address>(off));
        unsigned ref = reference_length(bytes, off);
        CHECK(got.has_value() == (ref != 0));
        if (got) {
            CHECK(got->length == ref);
            ++valid;
        }
    }
    // The immediates hide unintended pop/ret/add instructions.
    CHECK(valid > 4);
    CHECK_FALSE(decode_at(image, image.code.end()).has_value());
    CHECK_FALSE(decode_at(image, image.code.base - 1).has_value());
}

TEST_CASE("random byte strings: decoder agrees with reference at every offset") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint8_t> bytes(32);
        for (auto& b : bytes) b = static_cast<std::uint8_t>(byte(rng) % 3 == 0 ? byte(rng) % 8 : byte(rng));
        for (std::size_t off = 0; off < bytes.size(); ++off) {
            auto got = decode(std::span<const std::uint8_t>(bytes).subspan(off));
            unsigned ref = reference_length(bytes, off);
            CHECK(got.has_value() == (ref != 0));
            if (got) CHECK(encode(*got) == std::vector<std::uint8_t>(bytes.begin() + off, bytes.begin() + off + ref));
        }
    }
}

TEST_CASE("branch targets are relative to the next instruction") {
    auto j = make_branch(Opcode::Jmp, -4);
    CHECK(branch_target(j, 0x1000) == 0x1000);
    CHECK(branch_target(make_branch(Opcode::Call, 8), 0x2000) == 0x200C);
}

TEST_CASE("control-transfer classification") {
    CHECK(is_call(Opcode::Call));
    CHECK(is_call(Opcode::CallInd));
    CHECK(is_jump(Opcode::Jz));
    CHECK(is_jump(Opcode::JmpInd));
    CHECK_FALSE(is_jump(Opcode::Ret));
    CHECK(is_control_transfer(Opcode::Ret));
    CHECK(is_control_transfer(Opcode::Halt));
    CHECK_FALSE(is_control_transfer(Opcode::Int));
    CHECK(falls_through(make_branch(Opcode::Jz, 0)));
    CHECK_FALSE(falls_through(make_branch(Opcode::Jmp, 0)));
    CHECK_FALSE(falls_through(make(Opcode::Ret)));
    CHECK(falls_through(make_int(0x80)));
    CHECK_FALSE(falls_through(make_int(0x01)));
}

TEST_CASE("format uses sp for r6 and signed displacements") {
    CHECK(format(make_reg(Opcode::Pop, 6), 0) == "pop sp");
    CHECK(format(make_load(1, 2, -4), 0) == "load r1, [r2-4]");
    CHECK(format(make_store(6, 8, 3), 0) == "store [sp+8], r3");
    CHECK(format(make_load(1, 2, 0), 0) == "load r1, [r2]");
}

#pragma once

// Toy 32-bit variable-length instruction set.
//
// Every instruction starts with a one-byte opcode. Operand bytes follow in
// little-endian order. Register operands occupy a full byte and must be in
// 0..7; anything else makes the instruction undecodable, which keeps the
// defined encodings sparse.
//
//   nop            90                    1
//   ret            C3                    1
//   halt           F4                    1
//   push r         50 rr                 2
//   pop r          58 rr                 2
//   mov rd, rs     8A dd ss              3
//   mov r, imm32   B8 rr i0 i1 i2 i3     6
//   add/sub/xor/and/cmp rd, rs
//                  01/29/31/21/39 dd ss  3
//   load rd, [rb+d8]   8B dd bb d8       4
//   store [rb+d8], rs  89 bb d8 ss       4
//   jz/jnz/jmp/call rel16
//                  74/75/E9/E8 00 lo hi  4   (second byte reserved, must be 0)
//   jmp [r]        E0 rr                 2
//   call [r]       D0 rr                 2
//   int imm8       CD ii                 2
//
// rel16 is relative to the address of the following instruction.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hcic::isa {

using Address = std::uint32_t;
using Word = std::uint32_t;

inline constexpr int kNumRegisters = 8;
inline constexpr std::uint8_t kStackPointer = 6;
inline constexpr std::size_t kMaxInstructionLength = 6;

enum class Opcode : std::uint8_t {
    Nop = 0x90,
    Ret = 0xC3,
    Halt = 0xF4,
    Push = 0x50,
    Pop = 0x58,
    MovRR = 0x8A,
    MovRI = 0xB8,
    Add = 0x01,
    Sub = 0x29,
    Xor = 0x31,
    And = 0x21,
    Cmp = 0x39,
    Load = 0x8B,
    Store = 0x89,
    Jz = 0x74,
    Jnz = 0x75,
    Jmp = 0xE9,
    JmpInd = 0xE0,
    Call = 0xE8,
    CallInd = 0xD0,
    Int = 0xCD,
};

/// Operand layout of an opcode.
enum class Shape : std::uint8_t {
    None,      // ret, nop, halt
    Reg,       // push, pop, jmp [r], call [r]
    RegReg,    // mov/add/sub/xor/and/cmp
    RegImm32,  // mov r, imm32
    Load,      // load rd, [rb+disp8]
    Store,     // store [rb+disp8], rs
    Rel16,     // jz, jnz, jmp, call
    Imm8,      // int
};

struct OpcodeInfo {
    Opcode opcode;
    std::string_view mnemonic;
    Shape shape;
    std::uint8_t length;
};

/// All defined opcodes, in a fixed order.
std::span<const OpcodeInfo> opcode_table();

std::optional<OpcodeInfo> lookup_opcode(std::uint8_t byte);
const OpcodeInfo& info(Opcode op);

/// Decoded instruction. Field use depends on the opcode's shape:
///   Reg: ra.  RegReg: ra = dst, rb = src.  RegImm32: ra, imm.
///   Load: ra = dst, rb = base, disp.  Store: ra = base, rb = src, disp.
///   Rel16: disp.  Imm8: imm.
struct Instruction {
    Opcode opcode = Opcode::Nop;
    std::uint8_t ra = 0;
    std::uint8_t rb = 0;
    std::uint32_t imm = 0;
    std::int32_t disp = 0;
    std::uint8_t length = 1;

    friend bool operator==(const Instruction&, const Instruction&) = default;
};

/// Decodes the instruction at the start of `bytes`. Returns nullopt for an
/// unassigned opcode, an out-of-range register or reserved byte, or when
/// the operands run past the end of the span.
std::optional<Instruction> decode(std::span<const std::uint8_t> bytes);

/// Appends the encoding of `insn` to `out`. The instruction's length field
/// is ignored; the opcode determines the length.
void encode_into(const Instruction& insn, std::vector<std::uint8_t>& out);
std::vector<std::uint8_t> encode(const Instruction& insn);

// Instruction builders.
Instruction make(Opcode op);
Instruction make_reg(Opcode op, std::uint8_t r);
Instruction make_reg_reg(Opcode op, std::uint8_t dst, std::uint8_t src);
Instruction make_mov_imm(std::uint8_t r, std::uint32_t imm);
Instruction make_load(std::uint8_t dst, std::uint8_t base, std::int32_t disp);
Instruction make_store(std::uint8_t base, std::int32_t disp, std::uint8_t src);
Instruction make_branch(Opcode op, std::int32_t rel);
Instruction make_int(std::uint8_t vector);

bool is_direct_branch(Opcode op);    // jz, jnz, jmp, call
bool is_indirect_branch(Opcode op);  // jmp [r], call [r]
bool is_call(Opcode op);
bool is_jump(Opcode op);             // any jmp-class transfer incl. conditional
bool is_control_transfer(Opcode op); // anything that can redirect pc, incl. ret and halt

/// Absolute target of a direct branch located at `at`.
Address branch_target(const Instruction& insn, Address at);

/// Whether control can reach the next sequential instruction without a
/// taken transfer (calls count as not falling through; they return there).
bool falls_through(const Instruction& insn);

std::string register_name(std::uint8_t r);

/// Canonical text form. Direct branch targets are printed as absolute
/// addresses, which the assembler accepts back.
std::string format(const Instruction& insn, Address at);

}  // namespace hcic::isa

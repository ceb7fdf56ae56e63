#include "hcic/isa.hpp"

#include <array>
#include <stdexcept>

#include <fmt/format.h>

#include "hcic/syscalls.hpp"

namespace hcic::isa {

namespace {

constexpr std::array<OpcodeInfo, 21> kOpcodes{{
    {Opcode::Nop, "nop", Shape::None, 1},
    {Opcode::Ret, "ret", Shape::None, 1},
    {Opcode::Halt, "halt", Shape::None, 1},
    {Opcode::Push, "push", Shape::Reg, 2},
    {Opcode::Pop, "pop", Shape::Reg, 2},
    {Opcode::MovRR, "mov", Shape::RegReg, 3},
    {Opcode::MovRI, "mov", Shape::RegImm32, 6},
    {Opcode::Add, "add", Shape::RegReg, 3},
    {Opcode::Sub, "sub", Shape::RegReg, 3},
    {Opcode::Xor, "xor", Shape::RegReg, 3},
    {Opcode::And, "and", Shape::RegReg, 3},
    {Opcode::Cmp, "cmp", Shape::RegReg, 3},
    {Opcode::Load, "load", Shape::Load, 4},
    {Opcode::Store, "store", Shape::Store, 4},
    {Opcode::Jz, "jz", Shape::Rel16, 4},
    {Opcode::Jnz, "jnz", Shape::Rel16, 4},
    {Opcode::Jmp, "jmp", Shape::Rel16, 4},
    {Opcode::JmpInd, "jmp", Shape::Reg, 2},
    {Opcode::Call, "call", Shape::Rel16, 4},
    {Opcode::CallInd, "call", Shape::Reg, 2},
    {Opcode::Int, "int", Shape::Imm8, 2},
}};

// 256-entry index into kOpcodes, -1 for unassigned bytes.
constexpr std::array<int, 256> build_index() {
    std::array<int, 256> idx{};
    for (auto& v : idx) v = -1;
    for (std::size_t i = 0; i < kOpcodes.size(); ++i) idx[static_cast<std::uint8_t>(kOpcodes[i].opcode)] = static_cast<int>(i);
    return idx;
}

constexpr std::array<int, 256> kIndex = build_index();

bool valid_reg(std::uint8_t r) { return r < kNumRegisters; }

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::span<const OpcodeInfo> opcode_table() { return kOpcodes; }

std::optional<OpcodeInfo> lookup_opcode(std::uint8_t byte) {
    int i = kIndex[byte];
    if (i < 0) return std::nullopt;
    return kOpcodes[static_cast<std::size_t>(i)];
}

const OpcodeInfo& info(Opcode op) {
    int i = kIndex[static_cast<std::uint8_t>(op)];
    if (i < 0) throw std::invalid_argument("undefined opcode");
    return kOpcodes[static_cast<std::size_t>(i)];
}

std::optional<Instruction> decode(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) return std::nullopt;
    auto oi = lookup_opcode(bytes[0]);
    if (!oi || bytes.size() < oi->length) return std::nullopt;

    Instruction insn;
    insn.opcode = oi->opcode;
    insn.length = oi->length;
    switch (oi->shape) {
        case Shape::None:
            break;
        case Shape::Reg:
            insn.ra = bytes[1];
            if (!valid_reg(insn.ra)) return std::nullopt;
            break;
        case Shape::RegReg:
            insn.ra = bytes[1];
            insn.rb = bytes[2];
            if (!valid_reg(insn.ra) || !valid_reg(insn.rb)) return std::nullopt;
            break;
        case Shape::RegImm32:
            insn.ra = bytes[1];
            if (!valid_reg(insn.ra)) return std::nullopt;
            insn.imm = static_cast<std::uint32_t>(bytes[2]) | (static_cast<std::uint32_t>(bytes[3]) << 8) |
                       (static_cast<std::uint32_t>(bytes[4]) << 16) | (static_cast<std::uint32_t>(bytes[5]) << 24);
            break;
        case Shape::Load:
            insn.ra = bytes[1];
            insn.rb = bytes[2];
            insn.disp = static_cast<std::int8_t>(bytes[3]);
            if (!valid_reg(insn.ra) || !valid_reg(insn.rb)) return std::nullopt;
            break;
        case Shape::Store:
            insn.ra = bytes[1];
            insn.disp = static_cast<std::int8_t>(bytes[2]);
            insn.rb = bytes[3];
            if (!valid_reg(insn.ra) || !valid_reg(insn.rb)) return std::nullopt;
            break;
        case Shape::Rel16:
            if (bytes[1] != 0) return std::nullopt;
            insn.disp = static_cast<std::int16_t>(static_cast<std::uint16_t>(bytes[2] | (bytes[3] << 8)));
            break;
        case Shape::Imm8:
            insn.imm = bytes[1];
            break;
    }
    return insn;
}

void encode_into(const Instruction& insn, std::vector<std::uint8_t>& out) {
    const OpcodeInfo& oi = info(insn.opcode);
    out.push_back(static_cast<std::uint8_t>(insn.opcode));
    switch (oi.shape) {
        case Shape::None:
            break;
        case Shape::Reg:
            out.push_back(insn.ra);
            break;
        case Shape::RegReg:
            out.push_back(insn.ra);
            out.push_back(insn.rb);
            break;
        case Shape::RegImm32:
            out.push_back(insn.ra);
            put32(out, insn.imm);
            break;
        case Shape::Load:
            out.push_back(insn.ra);
            out.push_back(insn.rb);
            out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(insn.disp)));
            break;
        case Shape::Store:
            out.push_back(insn.ra);
            out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(insn.disp)));
            out.push_back(insn.rb);
            break;
        case Shape::Rel16: {
            auto rel = static_cast<std::uint16_t>(static_cast<std::int16_t>(insn.disp));
            out.push_back(0);
            out.push_back(static_cast<std::uint8_t>(rel & 0xFF));
            out.push_back(static_cast<std::uint8_t>(rel >> 8));
            break;
        }
        case Shape::Imm8:
            out.push_back(static_cast<std::uint8_t>(insn.imm));
            break;
    }
}

std::vector<std::uint8_t> encode(const Instruction& insn) {
    std::vector<std::uint8_t> out;
    encode_into(insn, out);
    return out;
}

Instruction make(Opcode op) {
    Instruction i;
    i.opcode = op;
    i.length = info(op).length;
    return i;
}

Instruction make_reg(Opcode op, std::uint8_t r) {
    Instruction i = make(op);
    i.ra = r;
    return i;
}

Instruction make_reg_reg(Opcode op, std::uint8_t dst, std::uint8_t src) {
    Instruction i = make(op);
    i.ra = dst;
    i.rb = src;
    return i;
}

Instruction make_mov_imm(std::uint8_t r, std::uint32_t imm) {
    Instruction i = make(Opcode::MovRI);
    i.ra = r;
    i.imm = imm;
    return i;
}

Instruction make_load(std::uint8_t dst, std::uint8_t base, std::int32_t disp) {
    Instruction i = make(Opcode::Load);
    i.ra = dst;
    i.rb = base;
    i.disp = disp;
    return i;
}

Instruction make_store(std::uint8_t base, std::int32_t disp, std::uint8_t src) {
    Instruction i = make(Opcode::Store);
    i.ra = base;
    i.rb = src;
    i.disp = disp;
    return i;
}

Instruction make_branch(Opcode op, std::int32_t rel) {
    Instruction i = make(op);
    i.disp = rel;
    return i;
}

Instruction make_int(std::uint8_t vector) {
    Instruction i = make(Opcode::Int);
    i.imm = vector;
    return i;
}

bool is_direct_branch(Opcode op) {
    return op == Opcode::Jz || op == Opcode::Jnz || op == Opcode::Jmp || op == Opcode::Call;
}

bool is_indirect_branch(Opcode op) { return op == Opcode::JmpInd || op == Opcode::CallInd; }

bool is_call(Opcode op) { return op == Opcode::Call || op == Opcode::CallInd; }

bool is_jump(Opcode op) {
    return op == Opcode::Jz || op == Opcode::Jnz || op == Opcode::Jmp || op == Opcode::JmpInd;
}

bool is_control_transfer(Opcode op) {
    return is_direct_branch(op) || is_indirect_branch(op) || op == Opcode::Ret || op == Opcode::Halt;
}

Address branch_target(const Instruction& insn, Address at) {
    return at + insn.length + static_cast<std::uint32_t>(insn.disp);
}

bool falls_through(const Instruction& insn) {
    switch (insn.opcode) {
        case Opcode::Jmp:
        case Opcode::JmpInd:
        case Opcode::Ret:
        case Opcode::Halt:
        case Opcode::Call:
        case Opcode::CallInd:
            return false;
        case Opcode::Int:
            return insn.imm != static_cast<std::uint32_t>(Syscall::Exit);
        default:
            return true;
    }
}

std::string register_name(std::uint8_t r) {
    if (r == kStackPointer) return "sp";
    return fmt::format("r{}", r);
}

std::string format(const Instruction& insn, Address at) {
    const OpcodeInfo& oi = info(insn.opcode);
    auto reg = [](std::uint8_t r) { return register_name(r); };
    auto mem = [&](std::uint8_t base, std::int32_t d) {
        if (d == 0) return fmt::format("[{}]", reg(base));
        if (d < 0) return fmt::format("[{}-{}]", reg(base), -d);
        return fmt::format("[{}+{}]", reg(base), d);
    };
    switch (oi.shape) {
        case Shape::None:
            return std::string(oi.mnemonic);
        case Shape::Reg:
            if (is_indirect_branch(insn.opcode)) return fmt::format("{} [{}]", oi.mnemonic, reg(insn.ra));
            return fmt::format("{} {}", oi.mnemonic, reg(insn.ra));
        case Shape::RegReg:
            return fmt::format("{} {}, {}", oi.mnemonic, reg(insn.ra), reg(insn.rb));
        case Shape::RegImm32:
            return fmt::format("mov {}, {:#x}", reg(insn.ra), insn.imm);
        case Shape::Load:
            return fmt::format("load {}, {}", reg(insn.ra), mem(insn.rb, insn.disp));
        case Shape::Store:
            return fmt::format("store {}, {}", mem(insn.ra, insn.disp), reg(insn.rb));
        case Shape::Rel16:
            return fmt::format("{} {:#010x}", oi.mnemonic, branch_target(insn, at));
        case Shape::Imm8:
            return fmt::format("int {:#x}", insn.imm);
    }
    return {};
}

}  // namespace hcic::isa

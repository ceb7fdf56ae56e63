#include "hcic/assembler.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>
#include <variant>

#include <fmt/format.h>

namespace hcic {

AssemblyError::AssemblyError(int line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

namespace {

using isa::Opcode;

enum class Section { Text, Data };

struct RegOp {
    std::uint8_t reg;
};
struct MemOp {
    std::uint8_t base;
    std::int32_t disp;
};
struct ValueOp {  // number or label
    std::optional<std::int64_t> number;
    std::string label;
};
using Operand = std::variant<RegOp, MemOp, ValueOp>;

struct Statement {
    int line = 0;
    std::vector<std::string> labels;
    std::string head;  // mnemonic or directive, lower-cased; empty for label-only lines
    std::vector<Operand> operands;
    std::string text;  // .ascii payload (unescaped)
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

bool is_identifier(std::string_view s) {
    if (s.empty() || !is_ident_start(s[0])) return false;
    for (char c : s)
        if (!is_ident_char(c)) return false;
    return true;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::optional<std::uint8_t> parse_register(std::string_view s) {
    std::string l = lower(trim(s));
    if (l == "sp") return isa::kStackPointer;
    if (l.size() == 2 && l[0] == 'r' && l[1] >= '0' && l[1] < '0' + isa::kNumRegisters)
        return static_cast<std::uint8_t>(l[1] - '0');
    return std::nullopt;
}

std::optional<std::int64_t> parse_number(std::string_view s) {
    s = trim(s);
    bool neg = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    if (s.empty()) return std::nullopt;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size() || v > 0xFFFFFFFFull) return std::nullopt;
    return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

Operand parse_operand(std::string_view s, int line) {
    s = trim(s);
    if (s.empty()) throw AssemblyError(line, "empty operand");
    if (s.front() == '[') {
        if (s.back() != ']') throw AssemblyError(line, "unterminated memory operand");
        std::string_view inner = trim(s.substr(1, s.size() - 2));
        std::size_t op = inner.find_first_of("+-");
        std::string_view reg_part = op == std::string_view::npos ? inner : inner.substr(0, op);
        auto reg = parse_register(reg_part);
        if (!reg) throw AssemblyError(line, fmt::format("bad base register in '{}'", s));
        std::int32_t disp = 0;
        if (op != std::string_view::npos) {
            auto n = parse_number(inner.substr(op));
            if (!n) throw AssemblyError(line, fmt::format("bad displacement in '{}'", s));
            if (*n < -128 || *n > 127) throw AssemblyError(line, "displacement out of 8-bit range");
            disp = static_cast<std::int32_t>(*n);
        }
        return MemOp{*reg, disp};
    }
    if (auto reg = parse_register(s)) return RegOp{*reg};
    if (auto n = parse_number(s)) return ValueOp{n, {}};
    if (is_identifier(s)) return ValueOp{std::nullopt, std::string(s)};
    throw AssemblyError(line, fmt::format("cannot parse operand '{}'", s));
}

std::vector<std::string_view> split_operands(std::string_view s) {
    std::vector<std::string_view> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '[') ++depth;
        if (s[i] == ']') --depth;
        if (s[i] == ',' && depth == 0) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    auto last = trim(s.substr(start));
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

std::string parse_string_literal(std::string_view s, int line) {
    s = trim(s);
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') throw AssemblyError(line, "expected string literal");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (i + 2 >= s.size()) throw AssemblyError(line, "dangling escape");
        char e = s[++i];
        switch (e) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case '0': out.push_back('\0'); break;
            case '\\': out.push_back('\\'); break;
            case '"': out.push_back('"'); break;
            default: throw AssemblyError(line, fmt::format("unknown escape \\{}", e));
        }
    }
    return out;
}

// Strips a trailing comment, ignoring ';' inside string literals.
std::string_view strip_comment(std::string_view s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == ';' && !in_str) return s.substr(0, i);
    }
    return s;
}

std::vector<Statement> parse(std::string_view source) {
    std::vector<Statement> out;
    std::istringstream in{std::string(source)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view rest = trim(strip_comment(raw));
        Statement st;
        st.line = line_no;
        // Leading labels.
        while (true) {
            std::size_t colon = rest.find(':');
            if (colon == std::string_view::npos) break;
            std::string_view cand = trim(rest.substr(0, colon));
            if (!is_identifier(cand) || cand.front() == '.') break;
            st.labels.emplace_back(cand);
            rest = trim(rest.substr(colon + 1));
        }
        if (!rest.empty()) {
            std::size_t sp = 0;
            while (sp < rest.size() && !std::isspace(static_cast<unsigned char>(rest[sp]))) ++sp;
            st.head = lower(rest.substr(0, sp));
            std::string_view args = trim(rest.substr(sp));
            if (st.head == ".ascii") {
                st.text = parse_string_literal(args, line_no);
            } else if (!args.empty()) {
                for (auto a : split_operands(args)) st.operands.push_back(parse_operand(a, line_no));
            }
        }
        if (!st.labels.empty() || !st.head.empty()) out.push_back(std::move(st));
    }
    return out;
}

// Resolves the opcode of an instruction statement from its mnemonic and
// operand kinds.
std::optional<Opcode> select_opcode(const Statement& st) {
    const auto& h = st.head;
    const auto& ops = st.operands;
    auto is_reg = [&](std::size_t i) { return i < ops.size() && std::holds_alternative<RegOp>(ops[i]); };
    auto is_mem = [&](std::size_t i) { return i < ops.size() && std::holds_alternative<MemOp>(ops[i]); };
    auto is_val = [&](std::size_t i) { return i < ops.size() && std::holds_alternative<ValueOp>(ops[i]); };
    auto n = ops.size();
    if (h == "nop" && n == 0) return Opcode::Nop;
    if (h == "ret" && n == 0) return Opcode::Ret;
    if (h == "halt" && n == 0) return Opcode::Halt;
    if (h == "push" && n == 1 && is_reg(0)) return Opcode::Push;
    if (h == "pop" && n == 1 && is_reg(0)) return Opcode::Pop;
    if (h == "mov" && n == 2 && is_reg(0) && is_reg(1)) return Opcode::MovRR;
    if (h == "mov" && n == 2 && is_reg(0) && is_val(1)) return Opcode::MovRI;
    if (n == 2 && is_reg(0) && is_reg(1)) {
        if (h == "add") return Opcode::Add;
        if (h == "sub") return Opcode::Sub;
        if (h == "xor") return Opcode::Xor;
        if (h == "and") return Opcode::And;
        if (h == "cmp") return Opcode::Cmp;
    }
    if (h == "load" && n == 2 && is_reg(0) && is_mem(1)) return Opcode::Load;
    if (h == "store" && n == 2 && is_mem(0) && is_reg(1)) return Opcode::Store;
    if (n == 1 && is_val(0)) {
        if (h == "jz") return Opcode::Jz;
        if (h == "jnz") return Opcode::Jnz;
        if (h == "jmp") return Opcode::Jmp;
        if (h == "call") return Opcode::Call;
        if (h == "int") return Opcode::Int;
    }
    if (n == 1 && is_mem(0) && std::get<MemOp>(ops[0]).disp == 0) {
        if (h == "jmp") return Opcode::JmpInd;
        if (h == "call") return Opcode::CallInd;
    }
    return std::nullopt;
}

class Assembler {
public:
    explicit Assembler(const AssemblerOptions& opts) : opts_(opts) {}

    BinaryImage run(std::string_view source) {
        auto stmts = parse(source);
        layout(stmts);
        emit(stmts);

        image_.code.base = opts_.code_base;
        image_.data.base = opts_.data_base;
        image_.stack = opts_.stack;
        image_.symbols = symbols_;
        if (entry_label_) {
            image_.entry_point = resolve_label(*entry_label_, entry_line_);
        } else if (auto it = symbols_.find("main"); it != symbols_.end()) {
            image_.entry_point = it->second;
        } else {
            image_.entry_point = opts_.code_base;
        }
        for (const auto& [label, line] : thread_labels_) image_.thread_entries.push_back(resolve_label(label, line));
        try {
            image_.validate();
        } catch (const ImageError& e) {
            throw AssemblyError(0, e.what());
        }
        return std::move(image_);
    }

private:
    Address& cursor(Section s) { return s == Section::Text ? text_pc_ : data_pc_; }

    std::uint32_t instruction_size(const Statement& st) {
        auto op = select_opcode(st);
        if (!op) throw AssemblyError(st.line, fmt::format("invalid instruction '{}' or operands", st.head));
        return isa::info(*op).length;
    }

    void require_data(const Statement& st, Section sec) {
        if (sec != Section::Data) throw AssemblyError(st.line, st.head + " is only allowed in .data");
    }

    std::int64_t plain_number(const Statement& st, std::size_t i) {
        if (i >= st.operands.size()) throw AssemblyError(st.line, "missing operand");
        const auto* v = std::get_if<ValueOp>(&st.operands[i]);
        if (!v || !v->number) throw AssemblyError(st.line, "expected a number");
        return *v->number;
    }

    // Pass 1: addresses of every label.
    void layout(const std::vector<Statement>& stmts) {
        text_pc_ = opts_.code_base;
        data_pc_ = opts_.data_base;
        Section sec = Section::Text;
        for (const auto& st : stmts) {
            for (const auto& l : st.labels) {
                if (!symbols_.emplace(l, cursor(sec)).second) throw AssemblyError(st.line, "duplicate label '" + l + "'");
            }
            if (st.head.empty()) continue;
            if (st.head == ".text") {
                sec = Section::Text;
            } else if (st.head == ".data") {
                sec = Section::Data;
            } else if (st.head == ".word") {
                require_data(st, sec);
                if (st.operands.empty()) throw AssemblyError(st.line, ".word needs a value");
                cursor(sec) += 4 * static_cast<Address>(st.operands.size());
            } else if (st.head == ".ascii") {
                require_data(st, sec);
                cursor(sec) += static_cast<Address>(st.text.size());
            } else if (st.head == ".space") {
                require_data(st, sec);
                auto n = plain_number(st, 0);
                if (n < 0) throw AssemblyError(st.line, "negative .space");
                cursor(sec) += static_cast<Address>(n);
            } else if (st.head == ".org") {
                auto target = plain_number(st, 0);
                if (target < cursor(sec)) throw AssemblyError(st.line, ".org moves backwards");
                cursor(sec) = static_cast<Address>(target);
            } else if (st.head == ".entry" || st.head == ".thread") {
                if (st.operands.size() != 1) throw AssemblyError(st.line, st.head + " needs one label");
                const auto* v = std::get_if<ValueOp>(&st.operands[0]);
                if (!v || v->label.empty()) throw AssemblyError(st.line, st.head + " needs a label");
                if (st.head == ".entry") {
                    entry_label_ = v->label;
                    entry_line_ = st.line;
                } else {
                    thread_labels_.emplace_back(v->label, st.line);
                }
            } else if (st.head.front() == '.') {
                throw AssemblyError(st.line, "unknown directive " + st.head);
            } else {
                if (sec != Section::Text) throw AssemblyError(st.line, "instruction outside .text");
                text_pc_ += instruction_size(st);
            }
        }
    }

    Address resolve_label(const std::string& label, int line) const {
        auto it = symbols_.find(label);
        if (it == symbols_.end()) throw AssemblyError(line, "undefined label '" + label + "'");
        return it->second;
    }

    // Returns the 32-bit value of a number/label operand, and whether it came
    // from a label.
    std::pair<std::uint32_t, bool> value(const Statement& st, const Operand& op) const {
        const auto& v = std::get<ValueOp>(op);
        if (v.number) return {static_cast<std::uint32_t>(*v.number), false};
        return {resolve_label(v.label, st.line), true};
    }

    // Pass 2: bytes.
    void emit(const std::vector<Statement>& stmts) {
        auto& code = image_.code.bytes;
        auto& data = image_.data.bytes;
        Section sec = Section::Text;
        for (const auto& st : stmts) {
            if (st.head.empty()) continue;
            if (st.head == ".text") {
                sec = Section::Text;
            } else if (st.head == ".data") {
                sec = Section::Data;
            } else if (st.head == ".word") {
                for (const auto& op : st.operands) {
                    if (!std::holds_alternative<ValueOp>(op)) throw AssemblyError(st.line, ".word takes numbers or labels");
                    auto [v, is_label] = value(st, op);
                    Address at = opts_.data_base + static_cast<Address>(data.size());
                    if (is_label) image_.relocations.push_back(at);
                    for (int i = 0; i < 4; ++i) data.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
                }
            } else if (st.head == ".ascii") {
                data.insert(data.end(), st.text.begin(), st.text.end());
            } else if (st.head == ".space") {
                data.insert(data.end(), static_cast<std::size_t>(plain_number(st, 0)), 0);
            } else if (st.head == ".org") {
                auto target = static_cast<Address>(plain_number(st, 0));
                if (sec == Section::Text) {
                    code.resize(target - opts_.code_base, static_cast<std::uint8_t>(Opcode::Nop));
                } else {
                    data.resize(target - opts_.data_base, 0);
                }
            } else if (st.head == ".entry" || st.head == ".thread") {
                // handled in layout
            } else {
                emit_instruction(st, code);
            }
        }
    }

    void emit_instruction(const Statement& st, std::vector<std::uint8_t>& code) {
        Opcode op = *select_opcode(st);
        Address at = opts_.code_base + static_cast<Address>(code.size());
        const auto& ops = st.operands;
        auto reg = [&](std::size_t i) { return std::get<RegOp>(ops[i]).reg; };
        isa::Instruction insn;
        switch (isa::info(op).shape) {
            case isa::Shape::None:
                insn = isa::make(op);
                break;
            case isa::Shape::Reg:
                insn = isa::make_reg(op, isa::is_indirect_branch(op) ? std::get<MemOp>(ops[0]).base : reg(0));
                break;
            case isa::Shape::RegReg:
                insn = isa::make_reg_reg(op, reg(0), reg(1));
                break;
            case isa::Shape::RegImm32: {
                auto [v, is_label] = value(st, ops[1]);
                if (is_label) image_.relocations.push_back(at + 2);
                insn = isa::make_mov_imm(reg(0), v);
                break;
            }
            case isa::Shape::Load: {
                const auto& m = std::get<MemOp>(ops[1]);
                insn = isa::make_load(reg(0), m.base, m.disp);
                break;
            }
            case isa::Shape::Store: {
                const auto& m = std::get<MemOp>(ops[0]);
                insn = isa::make_store(m.base, m.disp, reg(1));
                break;
            }
            case isa::Shape::Rel16: {
                auto [target, is_label] = value(st, ops[0]);
                std::int64_t rel = static_cast<std::int64_t>(target) - (static_cast<std::int64_t>(at) + 4);
                if (rel < -32768 || rel > 32767)
                    throw AssemblyError(st.line, fmt::format("branch target {:#x} out of range", target));
                insn = isa::make_branch(op, static_cast<std::int32_t>(rel));
                break;
            }
            case isa::Shape::Imm8: {
                auto [v, is_label] = value(st, ops[0]);
                if (is_label || v > 0xFF) throw AssemblyError(st.line, "int vector must be a number in 0..255");
                insn = isa::make_int(static_cast<std::uint8_t>(v));
                break;
            }
        }
        isa::encode_into(insn, code);
    }

    AssemblerOptions opts_;
    BinaryImage image_;
    std::map<std::string, Address> symbols_;
    Address text_pc_ = 0;
    Address data_pc_ = 0;
    std::optional<std::string> entry_label_;
    int entry_line_ = 0;
    std::vector<std::pair<std::string, int>> thread_labels_;
};

}  // namespace

BinaryImage assemble(std::string_view source, const AssemblerOptions& options) {
    return Assembler(options).run(source);
}

std::string disassemble(const BinaryImage& image) {
    std::string out;
    for (const auto& d : linear_sweep(image)) {
        out += isa::format(d.insn, d.addr);
        out += '\n';
    }
    return out;
}

}  // namespace hcic

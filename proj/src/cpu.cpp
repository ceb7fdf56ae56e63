#include "hcic/cpu.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "hcic/syscalls.hpp"

namespace hcic::cpu {

using isa::Opcode;

HcicConfig HcicConfig::disabled() {
    HcicConfig c;
    c.enabled = false;
    return c;
}

HcicConfig HcicConfig::from_puf(puf::PufDevice device, std::uint64_t load_nonce, ehd::EhdParams params) {
    HcicConfig c;
    c.params = params;
    c.keys = puf::generate_keys(device, load_nonce);
    c.load_nonce = load_nonce;
    c.puf = std::move(device);
    return c;
}

std::string_view to_string(FaultKind kind) {
    switch (kind) {
        case FaultKind::InvalidOpcode: return "invalid_opcode";
        case FaultKind::StackFault: return "stack_fault";
        case FaultKind::UnmatchedRet: return "unmatched_ret";
        case FaultKind::MemoryFault: return "memory_fault";
        case FaultKind::BadSyscall: return "bad_syscall";
    }
    return "?";
}

std::string_view to_string(EntryKind kind) {
    switch (kind) {
        case EntryKind::Start: return "start";
        case EntryKind::Sequential: return "seq";
        case EntryKind::Jump: return "jmp";
        case EntryKind::Call: return "call";
        case EntryKind::Return: return "ret";
    }
    return "?";
}

std::string_view to_string(EventType type) {
    switch (type) {
        case EventType::Fetch: return "fetch";
        case EventType::Call: return "call";
        case EventType::Ret: return "ret";
        case EventType::Jump: return "jump";
        case EventType::Syscall: return "syscall";
        case EventType::KeyUpdate: return "key_update";
        case EventType::Alarm: return "alarm";
        case EventType::Fault: return "fault";
        case EventType::Exit: return "exit";
        case EventType::Halt: return "halt";
        case EventType::Timeout: return "timeout";
    }
    return "?";
}

namespace {

bool same_terminal(const Terminal& a, const Terminal& b) {
    if (a.index() != b.index()) return false;
    if (auto* x = std::get_if<ExitStatus>(&a)) return x->code == std::get<ExitStatus>(b).code;
    if (auto* x = std::get_if<Fault>(&a)) {
        const auto& y = std::get<Fault>(b);
        return x->kind == y.kind;
    }
    return true;
}

}  // namespace

bool Outcome::same_result(const Outcome& other) const {
    return same_terminal(terminal, other.terminal) && output == other.output && privileged == other.privileged;
}

std::string describe(const Terminal& t) {
    if (auto* e = std::get_if<ExitStatus>(&t)) return fmt::format("exit({})", e->code);
    if (auto* a = std::get_if<CraAlarm>(&t))
        return fmt::format("cra_alarm(pc={:#010x}, ret={:#010x}, stored={:#x}, computed={:#x})", a->pc, a->ret_addr,
                           a->stored_ehd, a->computed_ehd);
    if (auto* f = std::get_if<Fault>(&t)) return fmt::format("fault({}, pc={:#010x})", to_string(f->kind), f->pc);
    return "timeout";
}

InputProvider stream_input(std::vector<std::uint8_t> bytes) {
    auto pos = std::make_shared<std::size_t>(0);
    auto data = std::make_shared<std::vector<std::uint8_t>>(std::move(bytes));
    return [pos, data](const InputRequest& req) {
        std::size_t n = std::min<std::size_t>(req.max_bytes, data->size() - *pos);
        std::vector<std::uint8_t> out(data->begin() + static_cast<std::ptrdiff_t>(*pos),
                                      data->begin() + static_cast<std::ptrdiff_t>(*pos + n));
        *pos += n;
        return out;
    };
}

Machine::Machine(const BinaryImage& image, HcicConfig hcic, MachineOptions options)
    : image_(image),
      data_(image.data.bytes),
      puf_(std::move(hcic.puf)),
      load_nonce_(hcic.load_nonce),
      costs_(hcic.costs),
      options_(std::move(options)) {
    image_.validate();
    if (!hcic.params.supported()) throw std::invalid_argument("unsupported EHD parameters");
    hcic_.enabled = hcic.enabled;
    hcic_.params = hcic.params;
    hcic_.key_1 = hcic.keys.key_1;
    hcic_.key_2 = hcic.keys.key_2;
    hcic_.key_len_1 = hcic.keys.key_len_1;
    hcic_.key_len_2 = hcic.keys.key_len_2;

    const auto& st = image_.stack;
    if (st.limit <= st.base) throw ImageError("empty stack region");
    stack_.assign(st.limit - st.base, 0);

    std::vector<Address> entries{image_.entry_point};
    entries.insert(entries.end(), image_.thread_entries.begin(), image_.thread_entries.end());
    // Equal word-aligned slices, the entry context at the top.
    const std::uint32_t slice = ((st.limit - st.base) / static_cast<std::uint32_t>(entries.size())) & ~3u;
    if (slice < 16) throw ImageError("stack region too small for the number of contexts");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ExecContext ctx;
        ctx.pc = entries[i];
        ctx.stack_high = st.limit - static_cast<std::uint32_t>(i) * slice;
        ctx.stack_low = ctx.stack_high - slice;
        ctx.regs[isa::kStackPointer] = ctx.stack_high;
        contexts_.push_back(ctx);
    }
}

std::uint8_t* Machine::writable_byte(Address addr) {
    if (image_.data.contains(addr)) return &data_[addr - image_.data.base];
    if (image_.stack.contains(addr)) return &stack_[addr - image_.stack.base];
    return nullptr;
}

std::optional<std::uint8_t> Machine::read_byte(Address addr) const {
    if (image_.code.contains(addr)) return image_.code.bytes[addr - image_.code.base];
    if (image_.data.contains(addr)) return data_[addr - image_.data.base];
    if (image_.stack.contains(addr)) return stack_[addr - image_.stack.base];
    return std::nullopt;
}

bool Machine::write_byte(Address addr, std::uint8_t value) {
    auto* p = writable_byte(addr);
    if (!p) return false;
    *p = value;
    return true;
}

std::optional<std::uint32_t> Machine::read_word(Address addr) const {
    auto in = [&](Address base, std::size_t size) {
        return addr >= base && static_cast<std::uint64_t>(addr) + 4 <= static_cast<std::uint64_t>(base) + size;
    };
    if (in(image_.code.base, image_.code.bytes.size())) return read_le32(image_.code.bytes, addr - image_.code.base);
    if (in(image_.data.base, data_.size())) return read_le32(data_, addr - image_.data.base);
    if (in(image_.stack.base, stack_.size())) return read_le32(stack_, addr - image_.stack.base);
    return std::nullopt;
}

bool Machine::write_word(Address addr, std::uint32_t value) {
    auto in = [&](Address base, std::size_t size) {
        return addr >= base && static_cast<std::uint64_t>(addr) + 4 <= static_cast<std::uint64_t>(base) + size;
    };
    if (in(image_.data.base, data_.size())) {
        write_le32(data_, addr - image_.data.base, value);
        return true;
    }
    if (in(image_.stack.base, stack_.size())) {
        write_le32(stack_, addr - image_.stack.base, value);
        return true;
    }
    return false;
}

std::optional<std::uint32_t> Machine::peek_word(Address addr) const { return read_word(addr); }
bool Machine::poke_word(Address addr, std::uint32_t value) { return write_word(addr, value); }

bool Machine::push(ExecContext& ctx, std::uint32_t value) {
    const std::uint32_t sp = ctx.sp();
    if (sp < ctx.stack_low + 4 || sp > ctx.stack_high) return false;
    ctx.regs[isa::kStackPointer] = sp - 4;
    return write_word(sp - 4, value);
}

std::optional<std::uint32_t> Machine::pop(ExecContext& ctx) {
    const std::uint32_t sp = ctx.sp();
    if (sp < ctx.stack_low || static_cast<std::uint64_t>(sp) + 4 > ctx.stack_high) return std::nullopt;
    auto v = read_word(sp);
    if (v) ctx.regs[isa::kStackPointer] = sp + 4;
    return v;
}

Event Machine::make_event(EventType type, unsigned ctx, Address pc) {
    Event ev;
    ev.type = type;
    ev.context = ctx;
    ev.pc = pc;
    ev.hcic = hcic_.enabled;
    ev.epoch = hcic_.epoch;
    return ev;
}

void Machine::emit(Event& ev) {
    ev.seq = seq_++;
    if (options_.record_trace) trace_.push_back(ev);
    if (options_.observer) options_.observer(ev);
}

Machine::StepResult Machine::finish(Event ev, Terminal t) {
    emit(ev);
    terminal_ = t;
    return {ev, t};
}

Machine::StepResult Machine::fault(unsigned ctx, FaultKind kind, Address pc) {
    Event ev = make_event(EventType::Fault, ctx, pc);
    ev.fault = kind;
    return finish(ev, Fault{ctx, kind, pc});
}

void Machine::advance_context() {
    const auto n = static_cast<unsigned>(contexts_.size());
    for (unsigned i = 1; i <= n; ++i) {
        unsigned next = (current_ + i) % n;
        if (!contexts_[next].halted) {
            current_ = next;
            return;
        }
    }
}

Machine::StepResult Machine::step() {
    if (terminal_) throw std::logic_error("step() on a finished machine");
    const unsigned ci = current_;
    ExecContext& ctx = contexts_[ci];
    const Address pc = ctx.pc;

    std::array<std::uint8_t, isa::kMaxInstructionLength> buf{};
    std::size_t avail = 0;
    if (image_.code.contains(pc)) {
        avail = std::min<std::size_t>(buf.size(), image_.code.end() - pc);
        std::copy_n(image_.code.bytes.begin() + (pc - image_.code.base), avail, buf.begin());
    }

    Event fetch = make_event(EventType::Fetch, ci, pc);
    fetch.entry = ctx.next_entry;
    if (hcic_.enabled && ctx.pending_decrypt && avail > 0) {
        buf[0] ^= hcic_.key_1;
        fetch.decrypted = true;
        counters_.decrypted_fetches++;
        counters_.hcic_extra_cycles += costs_.decrypt;
    }
    ctx.pending_decrypt = false;
    fetch.opcode = buf[0];

    emit(fetch);
    auto insn = isa::decode(std::span<const std::uint8_t>(buf.data(), avail));
    if (!insn) return fault(ci, FaultKind::InvalidOpcode, pc);

    counters_.instructions++;
    counters_.cycles++;
    StepResult r = execute(ci, *insn, fetch);
    if (!r.terminal) {
        if (std::all_of(contexts_.begin(), contexts_.end(), [](const ExecContext& c) { return c.halted; })) {
            Event ev = make_event(EventType::Exit, ci, pc);
            return finish(ev, ExitStatus{0});
        }
        advance_context();
    }
    return r;
}

void Machine::maybe_update_key(unsigned ci) {
    for (unsigned i = 0; i < contexts_.size(); ++i)
        if (i != ci && contexts_[i].counter.count != 0) return;
    if (!puf_) return;
    hcic_.epoch++;
    hcic_.key_2 = puf::generate_keys(*puf_, load_nonce_ + hcic_.epoch).key_2;
    counters_.key_updates++;
    Event ev = make_event(EventType::KeyUpdate, ci, contexts_[ci].pc);
    emit(ev);
}

Machine::StepResult Machine::execute(unsigned ci, const Instruction& insn, Event fetch_event) {
    ExecContext& ctx = contexts_[ci];
    auto& R = ctx.regs;
    const Address pc = ctx.pc;
    const Address next = pc + insn.length;
    ctx.next_entry = EntryKind::Sequential;

    auto transfer = [&](Address target, EntryKind kind) {
        ctx.pc = target;
        ctx.next_entry = kind;
        ctx.pending_decrypt = kind == EntryKind::Jump || kind == EntryKind::Call;
    };
    auto taken_jump = [&](Address target) {
        Event ev = make_event(EventType::Jump, ci, pc);
        ev.target = target;
        emit(ev);
        transfer(target, EntryKind::Jump);
        return StepResult{ev, std::nullopt};
    };
    auto alu = [&](std::uint32_t v) {
        R[insn.ra] = v;
        ctx.zero_flag = v == 0;
        ctx.pc = next;
        return StepResult{fetch_event, std::nullopt};
    };

    switch (insn.opcode) {
        case Opcode::Nop: ctx.pc = next; return {fetch_event, std::nullopt};
        case Opcode::Halt: {
            ctx.halted = true;
            Event ev = make_event(EventType::Halt, ci, pc);
            emit(ev);
            return {ev, std::nullopt};
        }
        case Opcode::Push:
            if (!push(ctx, R[insn.ra])) return fault(ci, FaultKind::StackFault, pc);
            ctx.pc = next;
            return {fetch_event, std::nullopt};
        case Opcode::Pop: {
            auto v = pop(ctx);
            if (!v) return fault(ci, FaultKind::StackFault, pc);
            R[insn.ra] = *v;
            ctx.pc = next;
            return {fetch_event, std::nullopt};
        }
        case Opcode::MovRR: R[insn.ra] = R[insn.rb]; ctx.pc = next; return {fetch_event, std::nullopt};
        case Opcode::MovRI: R[insn.ra] = insn.imm; ctx.pc = next; return {fetch_event, std::nullopt};
        case Opcode::Add: return alu(R[insn.ra] + R[insn.rb]);
        case Opcode::Sub: return alu(R[insn.ra] - R[insn.rb]);
        case Opcode::Xor: return alu(R[insn.ra] ^ R[insn.rb]);
        case Opcode::And: return alu(R[insn.ra] & R[insn.rb]);
        case Opcode::Cmp:
            ctx.zero_flag = R[insn.ra] == R[insn.rb];
            ctx.pc = next;
            return {fetch_event, std::nullopt};
        case Opcode::Load: {
            auto v = read_word(R[insn.rb] + static_cast<std::uint32_t>(insn.disp));
            if (!v) return fault(ci, FaultKind::MemoryFault, pc);
            R[insn.ra] = *v;
            ctx.pc = next;
            return {fetch_event, std::nullopt};
        }
        case Opcode::Store:
            if (!write_word(R[insn.ra] + static_cast<std::uint32_t>(insn.disp), R[insn.rb]))
                return fault(ci, FaultKind::MemoryFault, pc);
            ctx.pc = next;
            return {fetch_event, std::nullopt};
        case Opcode::Jz:
        case Opcode::Jnz: {
            const bool taken = (insn.opcode == Opcode::Jz) == ctx.zero_flag;
            if (!taken) {
                ctx.pc = next;
                return {fetch_event, std::nullopt};
            }
            return taken_jump(isa::branch_target(insn, pc));
        }
        case Opcode::Jmp: return taken_jump(isa::branch_target(insn, pc));
        case Opcode::JmpInd: return taken_jump(R[insn.ra]);
        case Opcode::Call:
        case Opcode::CallInd: {
            const Address target = insn.opcode == Opcode::Call ? isa::branch_target(insn, pc) : R[insn.ra];
            Event ev = make_event(EventType::Call, ci, pc);
            ev.target = target;
            ev.ret_addr = next;
            if (!push(ctx, next)) return fault(ci, FaultKind::StackFault, pc);
            if (hcic_.enabled) {
                const std::uint32_t e = ehd::ehd_encode(next, hcic_.key_2, hcic_.params);
                if (!push(ctx, e)) return fault(ci, FaultKind::StackFault, pc);
                ev.stored_ehd = e;
                ctx.counter = ehd::counter_on_call(ctx.counter);
                counters_.calls++;
                counters_.hcic_extra_cycles += costs_.encode;
            }
            emit(ev);
            transfer(target, EntryKind::Call);
            return {ev, std::nullopt};
        }
        case Opcode::Ret: {
            Event ev = make_event(EventType::Ret, ci, pc);
            if (!hcic_.enabled) {
                auto ret = pop(ctx);
                if (!ret) return fault(ci, FaultKind::StackFault, pc);
                ev.ret_addr = *ret;
                emit(ev);
                transfer(*ret, EntryKind::Return);
                return {ev, std::nullopt};
            }
            auto counted = ehd::counter_on_ret(ctx.counter);
            if (!counted) return fault(ci, FaultKind::UnmatchedRet, pc);
            auto stored = pop(ctx);
            if (!stored) return fault(ci, FaultKind::StackFault, pc);
            auto ret = pop(ctx);
            if (!ret) return fault(ci, FaultKind::StackFault, pc);
            const std::uint32_t computed = ehd::ehd_encode(*ret, hcic_.key_2, hcic_.params);
            counters_.rets++;
            counters_.hcic_extra_cycles += costs_.verify;
            ev.ret_addr = *ret;
            ev.stored_ehd = *stored;
            ev.computed_ehd = computed;
            ev.ehd_ok = computed == *stored;
            emit(ev);
            if (!ev.ehd_ok) {
                Event alarm = make_event(EventType::Alarm, ci, pc);
                alarm.ret_addr = *ret;
                alarm.stored_ehd = *stored;
                alarm.computed_ehd = computed;
                return finish(alarm, CraAlarm{ci, pc, *ret, *stored, computed});
            }
            ctx.counter = counted->counter;
            transfer(*ret, EntryKind::Return);
            if (counted->update_due) maybe_update_key(ci);
            return {ev, std::nullopt};
        }
        case Opcode::Int: return syscall(ci, static_cast<std::uint8_t>(insn.imm), pc);
    }
    return fault(ci, FaultKind::InvalidOpcode, pc);
}

Machine::StepResult Machine::syscall(unsigned ci, std::uint8_t vector, Address pc) {
    ExecContext& ctx = contexts_[ci];
    auto& R = ctx.regs;
    Event ev = make_event(EventType::Syscall, ci, pc);
    ev.vector = vector;
    ev.arg0 = R[0];
    ev.arg1 = R[1];
    ctx.pc = pc + 2;

    switch (static_cast<Syscall>(vector)) {
        case Syscall::Exit: {
            emit(ev);
            Event ex = make_event(EventType::Exit, ci, pc);
            ex.result = R[0];
            return finish(ex, ExitStatus{R[0]});
        }
        case Syscall::ReadInput: {
            std::vector<std::uint8_t> bytes;
            if (options_.input) bytes = options_.input(InputRequest{*this, ci, R[0], R[1]});
            const std::size_t n = std::min<std::size_t>(bytes.size(), R[1]);
            for (std::size_t i = 0; i < n; ++i)
                if (!write_byte(R[0] + static_cast<std::uint32_t>(i), bytes[i]))
                    return fault(ci, FaultKind::MemoryFault, pc);
            R[0] = static_cast<std::uint32_t>(n);
            ev.result = R[0];
            emit(ev);
            return {ev, std::nullopt};
        }
        case Syscall::Write: {
            if (R[1] > kMaxWriteBytes) return fault(ci, FaultKind::MemoryFault, pc);
            for (std::uint32_t i = 0; i < R[1]; ++i) {
                auto b = read_byte(R[0] + i);
                if (!b) return fault(ci, FaultKind::MemoryFault, pc);
                output_.push_back(*b);
            }
            ev.result = R[1];
            emit(ev);
            return {ev, std::nullopt};
        }
        case Syscall::Privileged:
            privileged_.push_back({ci, pc, R[0], R[1]});
            emit(ev);
            return {ev, std::nullopt};
    }
    return fault(ci, FaultKind::BadSyscall, pc);
}

Outcome Machine::run(std::uint64_t max_steps) {
    if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
    std::optional<Terminal> t = terminal_;
    for (std::uint64_t i = 0; !t && i < max_steps; ++i) t = step().terminal;
    if (!t) {
        Event ev = make_event(EventType::Timeout, current_, contexts_[current_].pc);
        finish(ev, Timeout{});
        t = Timeout{};
    }
    Outcome out;
    out.terminal = *t;
    out.output = output_;
    out.privileged = privileged_;
    out.counters = counters_;
    out.trace = trace_;
    return out;
}

Outcome run_image(const BinaryImage& image, const HcicConfig& hcic, std::uint64_t max_steps,
                  MachineOptions options) {
    Machine m(image, hcic, std::move(options));
    return m.run(max_steps);
}

}  // namespace hcic::cpu

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "hcic/ehd.hpp"
#include "hcic/image.hpp"
#include "hcic/puf.hpp"

namespace hcic::cpu {

/// Emulated cycles charged for each activation of the HCIC units. These are
/// model parameters for overhead reporting, not measured hardware costs.
struct CycleCosts {
    std::uint64_t encode = 3;   // EHD computed and pushed on call
    std::uint64_t verify = 3;   // EHD recomputed and compared on ret
    std::uint64_t decrypt = 1;  // opcode byte XORed on fetch after jmp/call
};

/// Load-time configuration of the protection hardware.
struct HcicConfig {
    bool enabled = true;
    ehd::EhdParams params = ehd::EhdParams::paper32();
    puf::KeyMaterial keys{};
    /// Source of fresh key_2 values when the call counter drains. Without a
    /// device key_2 stays fixed for the whole run.
    std::optional<puf::PufDevice> puf;
    /// Nonce the load keys came from; epoch e draws key_2 from nonce + e.
    std::uint64_t load_nonce = 0;
    CycleCosts costs{};

    static HcicConfig disabled();
    /// Draws keys from the device for `load_nonce` and keeps the device for
    /// later key updates.
    static HcicConfig from_puf(puf::PufDevice device, std::uint64_t load_nonce,
                               ehd::EhdParams params = ehd::EhdParams::paper32());
};

enum class FaultKind : std::uint8_t {
    InvalidOpcode,  // undecodable fetch, including pc outside the code region
    StackFault,     // push/pop outside the context's stack slice
    UnmatchedRet,   // ret with no outstanding call under HCIC
    MemoryFault,    // data access outside writable/readable regions
    BadSyscall,     // unknown int vector
};

std::string_view to_string(FaultKind kind);

struct ExitStatus {
    std::uint32_t code = 0;
};

struct CraAlarm {
    unsigned context = 0;
    Address pc = 0;
    Address ret_addr = 0;
    std::uint32_t stored_ehd = 0;
    std::uint32_t computed_ehd = 0;
};

struct Fault {
    unsigned context = 0;
    FaultKind kind = FaultKind::InvalidOpcode;
    Address pc = 0;
};

struct Timeout {};

using Terminal = std::variant<ExitStatus, CraAlarm, Fault, Timeout>;

/// How control arrived at a fetched instruction.
enum class EntryKind : std::uint8_t { Start, Sequential, Jump, Call, Return };

std::string_view to_string(EntryKind kind);

enum class EventType : std::uint8_t { Fetch, Call, Ret, Jump, Syscall, KeyUpdate, Alarm, Fault, Exit, Halt, Timeout };

std::string_view to_string(EventType type);

/// One trace record. Which fields are meaningful depends on `type`:
///   Fetch     pc, entry, decrypted, opcode (as fetched, after any XOR)
///   Call      pc, target, ret_addr, stored_ehd (the pushed EHD, HCIC only)
///   Ret       pc, ret_addr, stored_ehd, computed_ehd, ehd_ok (HCIC only)
///   Jump      pc, target (taken jmp-class transfers only)
///   Syscall   pc, vector, arg0, arg1, result
///   KeyUpdate epoch, key_counter
///   Alarm     pc, ret_addr, stored_ehd, computed_ehd
///   Fault     pc, fault
///   Exit      code (in result)
struct Event {
    EventType type = EventType::Fetch;
    std::uint64_t seq = 0;
    unsigned context = 0;
    Address pc = 0;
    EntryKind entry = EntryKind::Sequential;
    bool decrypted = false;
    std::uint8_t opcode = 0;
    Address target = 0;
    Address ret_addr = 0;
    std::uint32_t stored_ehd = 0;
    std::uint32_t computed_ehd = 0;
    bool hcic = false;
    bool ehd_ok = true;
    std::uint8_t vector = 0;
    std::uint32_t arg0 = 0;
    std::uint32_t arg1 = 0;
    std::uint32_t result = 0;
    FaultKind fault = FaultKind::InvalidOpcode;
    std::uint64_t epoch = 0;
};

struct Counters {
    std::uint64_t instructions = 0;
    std::uint64_t cycles = 0;             // one per retired instruction
    std::uint64_t hcic_extra_cycles = 0;  // HCIC unit activations, per CycleCosts
    std::uint64_t calls = 0;              // EHD encodes
    std::uint64_t rets = 0;               // EHD verifies
    std::uint64_t decrypted_fetches = 0;
    std::uint64_t key_updates = 0;

    friend bool operator==(const Counters&, const Counters&) = default;
};

struct PrivilegedMarker {
    unsigned context = 0;
    Address pc = 0;
    std::uint32_t arg0 = 0;
    std::uint32_t arg1 = 0;
    friend bool operator==(const PrivilegedMarker&, const PrivilegedMarker&) = default;
};

struct Outcome {
    Terminal terminal;
    std::vector<std::uint8_t> output;
    std::vector<PrivilegedMarker> privileged;
    Counters counters;
    std::vector<Event> trace;  // filled only when MachineOptions::record_trace

    bool exited() const { return std::holds_alternative<ExitStatus>(terminal); }
    bool alarmed() const { return std::holds_alternative<CraAlarm>(terminal); }
    bool faulted() const { return std::holds_alternative<Fault>(terminal); }
    bool timed_out() const { return std::holds_alternative<Timeout>(terminal); }
    /// Architectural result: terminal kind/exit code, output and markers.
    bool same_result(const Outcome& other) const;
};

std::string describe(const Terminal& t);

class Machine;

struct InputRequest {
    const Machine& machine;
    unsigned context;
    Address destination;
    std::uint32_t max_bytes;
};

/// Supplies bytes for each `read_input` syscall.
using InputProvider = std::function<std::vector<std::uint8_t>(const InputRequest&)>;

/// Serves a fixed byte string, consumed front to back across reads.
InputProvider stream_input(std::vector<std::uint8_t> bytes);

struct MachineOptions {
    InputProvider input;  // empty: every read returns 0 bytes
    bool record_trace = false;
    std::function<void(const Event&)> observer;
};

struct ExecContext {
    std::array<std::uint32_t, isa::kNumRegisters> regs{};
    Address pc = 0;
    bool zero_flag = false;
    Address stack_low = 0;   // lowest usable address of this context's slice
    Address stack_high = 0;  // one past the highest; initial sp
    ehd::KeyCounter counter{};
    bool pending_decrypt = false;
    EntryKind next_entry = EntryKind::Start;
    bool halted = false;

    std::uint32_t sp() const { return regs[isa::kStackPointer]; }
};

/// Hardware key registers and unit state.
struct HcicState {
    bool enabled = false;
    ehd::EhdParams params{};
    std::uint8_t key_1 = 0;
    std::uint32_t key_2 = 0;
    unsigned key_len_1 = puf::kKey1Bits;
    unsigned key_len_2 = puf::kKey2Bits;
    std::uint64_t epoch = 0;
};

/// Fetch-decode-execute emulator with the HCIC datapath: EHD push on call,
/// EHD compare on ret, and opcode-byte decryption of the first instruction
/// fetched after a taken jmp or call.
///
/// The entry point and each thread entry get one execution context with a
/// private slice of the stack region; contexts run round-robin, one
/// instruction per turn. key_2 is shared; it is refreshed only when a ret
/// drains its context's counter while every other context's counter is
/// already zero.
class Machine {
public:
    Machine(const BinaryImage& image, HcicConfig hcic, MachineOptions options = {});

    struct StepResult {
        Event event;                      // the instruction's primary event
        std::optional<Terminal> terminal; // set when the run is over
    };

    /// Executes one instruction of the current context and rotates to the
    /// next live context.
    StepResult step();

    /// Steps until a terminal event or until `max_steps` instructions have
    /// run (Timeout).
    Outcome run(std::uint64_t max_steps);

    const BinaryImage& image() const { return image_; }
    const HcicState& hcic() const { return hcic_; }
    const Counters& counters() const { return counters_; }
    const std::vector<ExecContext>& contexts() const { return contexts_; }
    ExecContext& context(unsigned i) { return contexts_.at(i); }
    const std::vector<std::uint8_t>& output() const { return output_; }
    const std::vector<PrivilegedMarker>& privileged() const { return privileged_; }
    bool finished() const { return terminal_.has_value(); }

    /// Replaces the input source or observer for the rest of the run.
    void set_input(InputProvider input) { options_.input = std::move(input); }
    void set_observer(std::function<void(const Event&)> observer) { options_.observer = std::move(observer); }

    /// Memory access as seen by a debugger (no permission checks beyond
    /// the address being mapped). Used by attack harnesses.
    std::optional<std::uint32_t> peek_word(Address addr) const;
    bool poke_word(Address addr, std::uint32_t value);

    static constexpr std::uint32_t kMaxWriteBytes = 1u << 20;

private:
    std::optional<std::uint32_t> read_word(Address addr) const;
    bool write_word(Address addr, std::uint32_t value);
    bool write_byte(Address addr, std::uint8_t value);
    std::optional<std::uint8_t> read_byte(Address addr) const;
    std::uint8_t* writable_byte(Address addr);

    bool push(ExecContext& ctx, std::uint32_t value);
    std::optional<std::uint32_t> pop(ExecContext& ctx);

    void emit(Event& ev);
    StepResult finish(Event ev, Terminal t);
    Event make_event(EventType type, unsigned ctx, Address pc);
    StepResult fault(unsigned ctx, FaultKind kind, Address pc);
    StepResult execute(unsigned ci, const Instruction& insn, Event fetch_event);
    StepResult syscall(unsigned ci, std::uint8_t vector, Address pc);
    void maybe_update_key(unsigned ci);
    void advance_context();

    BinaryImage image_;
    std::vector<std::uint8_t> data_;
    std::vector<std::uint8_t> stack_;
    HcicState hcic_;
    std::optional<puf::PufDevice> puf_;
    std::uint64_t load_nonce_ = 0;
    CycleCosts costs_;
    MachineOptions options_;

    std::vector<ExecContext> contexts_;
    unsigned current_ = 0;
    Counters counters_;
    std::uint64_t seq_ = 0;
    std::vector<std::uint8_t> output_;
    std::vector<PrivilegedMarker> privileged_;
    std::vector<Event> trace_;
    std::optional<Terminal> terminal_;
};

/// Convenience: build a machine and run it.
Outcome run_image(const BinaryImage& image, const HcicConfig& hcic, std::uint64_t max_steps,
                  MachineOptions options = {});

}  // namespace hcic::cpu

#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "hcic/cpu.hpp"
#include "hcic/ehd.hpp"
#include "hcic/image.hpp"
#include "hcic/loader.hpp"

namespace hcic::metrics {

enum class Terminator : std::uint8_t { Ret, JmpInd, CallInd };

std::string_view to_string(Terminator t);

struct Gadget {
    Address entry = 0;
    std::vector<DecodedInstruction> instructions;  // last one is the terminator
    Terminator terminator = Terminator::Ret;
    bool aligned = false;

    Address terminator_addr() const { return instructions.back().addr; }
};

inline constexpr unsigned kMaxGadgetLength = 10;

/// Canonical decoding: a linear sweep from the code base that skips one
/// byte whenever it meets an undecodable one.
std::vector<DecodedInstruction> canonical_decode(const BinaryImage& image);
std::set<Address> canonical_starts(const BinaryImage& image);

/// Every gadget of at most `max_len` instructions, aligned or not: for each
/// terminator occurrence, all start offsets up to max_len * 6 bytes back
/// whose decoding reaches that terminator with no earlier control transfer
/// (jumps, calls, ret, halt; `int` may appear inside). Throws
/// std::invalid_argument unless 1 <= max_len <= kMaxGadgetLength.
/// `canonical` overrides the instruction starts used for `aligned` (pass the
/// decrypted view's starts for a hardened image). Sorted by entry.
std::vector<Gadget> scan_gadgets(const BinaryImage& image, unsigned max_len,
                                 const std::set<Address>* canonical = nullptr);

/// Addresses that follow a call instruction in the canonical decoding.
std::set<Address> return_sites(const BinaryImage& image, const std::set<Address>* canonical = nullptr);

/// Whether replacing a saved `legit` return address with `substitute` passes
/// the DC check under every key_2. A key equal to `legit` is a witness
/// against any substitute at nonzero distance, so this holds only for
/// substitute == legit.
bool substitution_verifies_for_all_keys(Address legit, Address substitute, const ehd::EhdParams& params);

struct GadgetCounts {
    std::size_t total = 0;
    std::size_t total_ret = 0;
    std::size_t total_jmp = 0;  // jmp [r] and call [r] terminated
    std::size_t allowed_ret = 0;
    std::size_t allowed_jmp = 0;

    std::size_t allowed() const { return allowed_ret + allowed_jmp; }
    double elimination_rate() const;
    double ret_elimination_rate() const;
};

/// Ret-gadgets are allowed only if some legitimate return address other
/// than the entry itself can be swapped for the entry and still verify
/// under every key (returning to the very address that was pushed is the
/// legitimate path, not a redirection). jmp/call gadgets are allowed only if
/// their entry is an encrypted target. With HCIC disabled every gadget is
/// allowed.
GadgetCounts allowed_gadgets(const std::vector<Gadget>& gadgets, bool hcic_enabled, const ehd::EhdParams& params,
                             const std::set<Address>& legit_return_sites, const std::set<Address>& encrypted_addrs);

struct AirResult {
    ehd::Rational closed_form;   // 1 - (sum of per-class target counts) / (classes * S)
    ehd::Rational per_insn;      // per-instruction average, then averaged per class
    ehd::Rational per_insn_flat; // plain average over all control-flow instructions
    unsigned classes = 0;        // call / jmp / ret classes present
    std::size_t control_flow_insns = 0;
    bool vacuous = false;        // no control-flow instructions: 1.0 by convention

    double value() const { return closed_form.convert_to<double>(); }
};

/// 1 - (|T_call| + |T_jmp| + 1) / (3 S).
ehd::Rational air_three_class(std::uint64_t code_size, std::uint64_t call_targets, std::uint64_t jmp_targets);

/// AIR for an image and its target set. The closed form charges each class
/// of control-flow instruction its target-set size (call: function entries,
/// jmp: BB leaders, ret: 1) and averages over the classes that occur; with
/// all three present it is exactly air_three_class. `per_insn` computes the
/// same quantity instruction by instruction.
AirResult air(const BinaryImage& image, const loader::TargetSet& targets);

struct MetricsReport {
    GadgetCounts gadgets;
    double air = 1.0;
    double binary_size_overhead = 0.0;
    double runtime_overhead = 0.0;           // hcic_extra_cycles / base cycles
    double runtime_overhead_with_trampolines = 0.0;  // also counts extra instructions retired
    std::uint64_t base_cycles = 0;
    std::uint64_t hcic_cycles = 0;
    std::uint64_t hcic_extra_cycles = 0;
    std::uint32_t size_overhead_bytes = 0;
    std::size_t original_code_size = 0;
};

/// Size and runtime overhead of a hardened program against its original.
/// Throws std::invalid_argument if either run alarmed or faulted, or the
/// base run retired no instructions.
MetricsReport overhead_report(const BinaryImage& original, std::uint32_t size_overhead_bytes,
                              const cpu::Outcome& base_run, const cpu::Outcome& hcic_run);

}  // namespace hcic::metrics

#include "hcic/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace hcic::metrics {

using isa::Opcode;
using ehd::Rational;

std::string_view to_string(Terminator t) {
    switch (t) {
        case Terminator::Ret: return "ret";
        case Terminator::JmpInd: return "jmp_ind";
        case Terminator::CallInd: return "call_ind";
    }
    return "?";
}

std::vector<DecodedInstruction> canonical_decode(const BinaryImage& image) {
    std::vector<DecodedInstruction> out;
    Address a = image.code.base;
    while (a < image.code.end()) {
        if (auto insn = decode_at(image, a)) {
            out.push_back({a, *insn});
            a += insn->length;
        } else {
            ++a;
        }
    }
    return out;
}

std::set<Address> canonical_starts(const BinaryImage& image) {
    std::set<Address> s;
    for (const auto& d : canonical_decode(image)) s.insert(d.addr);
    return s;
}

namespace {

std::optional<Terminator> terminator_of(Opcode op) {
    switch (op) {
        case Opcode::Ret: return Terminator::Ret;
        case Opcode::JmpInd: return Terminator::JmpInd;
        case Opcode::CallInd: return Terminator::CallInd;
        default: return std::nullopt;
    }
}

}  // namespace

std::vector<Gadget> scan_gadgets(const BinaryImage& image, unsigned max_len, const std::set<Address>* canonical) {
    if (max_len < 1 || max_len > kMaxGadgetLength) throw std::invalid_argument("max_len must be in [1, 10]");
    std::set<Address> own;
    if (!canonical) {
        own = canonical_starts(image);
        canonical = &own;
    }
    const Address base = image.code.base;
    const std::uint32_t window = max_len * static_cast<std::uint32_t>(isa::kMaxInstructionLength);

    std::vector<Gadget> out;
    for (Address p = base; p < image.code.end(); ++p) {
        auto term = decode_at(image, p);
        if (!term || !terminator_of(term->opcode)) continue;
        const Address lo = p - base >= window ? p - window : base;
        for (Address s = lo; s <= p; ++s) {
            Gadget g;
            g.entry = s;
            Address a = s;
            bool ok = false;
            while (g.instructions.size() < max_len) {
                auto insn = decode_at(image, a);
                if (!insn) break;
                g.instructions.push_back({a, *insn});
                if (a == p) {
                    ok = true;
                    break;
                }
                if (isa::is_control_transfer(insn->opcode)) break;
                a += insn->length;
                if (a > p) break;
            }
            if (!ok) continue;
            g.terminator = *terminator_of(term->opcode);
            g.aligned = canonical->count(s) == 1;
            out.push_back(std::move(g));
        }
    }
    std::sort(out.begin(), out.end(), [](const Gadget& a, const Gadget& b) { return a.entry < b.entry; });
    return out;
}

std::set<Address> return_sites(const BinaryImage& image, const std::set<Address>* canonical) {
    std::set<Address> out;
    auto add = [&](Address a) {
        if (auto insn = decode_at(image, a); insn && isa::is_call(insn->opcode)) out.insert(a + insn->length);
    };
    if (canonical) {
        for (Address a : *canonical) add(a);
    } else {
        for (const auto& d : canonical_decode(image)) add(d.addr);
    }
    return out;
}

bool substitution_verifies_for_all_keys(Address legit, Address substitute, const ehd::EhdParams& params) {
    if (legit == substitute) return true;
    // Witness keys: K = legit gives stored HD 0 while the substitute is at
    // nonzero distance; its complement gives 32 against something smaller.
    for (std::uint32_t key : {legit, ~legit}) {
        const auto stored = ehd::ehd_encode(legit, key, params);
        if (!ehd::ehd_verify(substitute, key, stored, params)) return false;
    }
    return true;
}

double GadgetCounts::elimination_rate() const {
    return total == 0 ? 1.0 : 1.0 - static_cast<double>(allowed()) / static_cast<double>(total);
}

double GadgetCounts::ret_elimination_rate() const {
    return total_ret == 0 ? 1.0 : 1.0 - static_cast<double>(allowed_ret) / static_cast<double>(total_ret);
}

GadgetCounts allowed_gadgets(const std::vector<Gadget>& gadgets, bool hcic_enabled, const ehd::EhdParams& params,
                             const std::set<Address>& legit_return_sites, const std::set<Address>& encrypted_addrs) {
    GadgetCounts c;
    for (const auto& g : gadgets) {
        ++c.total;
        if (g.terminator == Terminator::Ret) {
            ++c.total_ret;
            bool allowed = !hcic_enabled;
            for (auto it = legit_return_sites.begin(); !allowed && it != legit_return_sites.end(); ++it)
                allowed = *it != g.entry && substitution_verifies_for_all_keys(*it, g.entry, params);
            c.allowed_ret += allowed;
        } else {
            ++c.total_jmp;
            c.allowed_jmp += !hcic_enabled || encrypted_addrs.count(g.entry) == 1;
        }
    }
    return c;
}

Rational air_three_class(std::uint64_t code_size, std::uint64_t call_targets, std::uint64_t jmp_targets) {
    if (code_size == 0) throw std::invalid_argument("code size must be positive");
    return Rational(1) - Rational(call_targets + jmp_targets + 1, 3 * code_size);
}

AirResult air(const BinaryImage& image, const loader::TargetSet& targets) {
    const std::uint64_t S = image.code.bytes.size();
    if (S == 0) throw std::invalid_argument("code size must be positive");

    enum { kCall, kJmp, kRet };
    const std::uint64_t class_targets[3] = {targets.call_targets.size(), targets.jmp_targets.size(), 1};
    std::uint64_t count[3] = {0, 0, 0};
    Rational class_sum[3];
    Rational flat_sum;

    for (const auto& d : canonical_decode(image)) {
        int cls;
        switch (d.insn.opcode) {
            case Opcode::Call:
            case Opcode::CallInd: cls = kCall; break;
            case Opcode::Jz:
            case Opcode::Jnz:
            case Opcode::Jmp:
            case Opcode::JmpInd: cls = kJmp; break;
            case Opcode::Ret: cls = kRet; break;
            default: continue;
        }
        // Reduction for this one instruction: the fraction of code
        // addresses it can no longer reach.
        const Rational r = Rational(1) - Rational(class_targets[cls], S);
        class_sum[cls] += r;
        flat_sum += r;
        ++count[cls];
    }

    AirResult res;
    res.control_flow_insns = count[0] + count[1] + count[2];
    if (res.control_flow_insns == 0) {
        res.closed_form = res.per_insn = res.per_insn_flat = 1;
        res.vacuous = true;
        return res;
    }
    std::uint64_t target_sum = 0;
    Rational per_class_sum;
    for (int c = 0; c < 3; ++c) {
        if (count[c] == 0) continue;
        ++res.classes;
        target_sum += class_targets[c];
        per_class_sum += class_sum[c] / count[c];
    }
    res.closed_form = Rational(1) - Rational(target_sum, res.classes * S);
    res.per_insn = per_class_sum / res.classes;
    res.per_insn_flat = flat_sum / res.control_flow_insns;
    return res;
}

MetricsReport overhead_report(const BinaryImage& original, std::uint32_t size_overhead_bytes,
                              const cpu::Outcome& base_run, const cpu::Outcome& hcic_run) {
    for (const auto* o : {&base_run, &hcic_run})
        if (o->alarmed() || o->faulted())
            throw std::invalid_argument("overhead runs must not alarm or fault: " + cpu::describe(o->terminal));
    if (base_run.counters.cycles == 0) throw std::invalid_argument("base run retired no instructions");
    if (original.code.bytes.empty()) throw std::invalid_argument("original code is empty");

    MetricsReport r;
    r.original_code_size = original.code.bytes.size();
    r.size_overhead_bytes = size_overhead_bytes;
    r.base_cycles = base_run.counters.cycles;
    r.hcic_extra_cycles = hcic_run.counters.hcic_extra_cycles;
    r.hcic_cycles = hcic_run.counters.cycles + hcic_run.counters.hcic_extra_cycles;
    r.binary_size_overhead = static_cast<double>(size_overhead_bytes) / static_cast<double>(r.original_code_size);
    r.runtime_overhead = static_cast<double>(r.hcic_extra_cycles) / static_cast<double>(r.base_cycles);
    r.runtime_overhead_with_trampolines =
        (static_cast<double>(r.hcic_cycles) - static_cast<double>(r.base_cycles)) / static_cast<double>(r.base_cycles);
    return r;
}

}  // namespace hcic::metrics

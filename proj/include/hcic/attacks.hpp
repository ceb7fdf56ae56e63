#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcic/cpu.hpp"
#include "hcic/ehd.hpp"
#include "hcic/fixtures.hpp"
#include "hcic/image.hpp"
#include "hcic/loader.hpp"

namespace hcic::attacks {

class GadgetNotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PayloadTooLarge : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Required PRIVILEGED arguments, r0 first. Empty: any PRIVILEGED call.
struct Goal {
    std::vector<std::uint32_t> args;

    bool satisfied_by(const cpu::PrivilegedMarker& m) const;
    bool satisfied_by(const std::vector<cpu::PrivilegedMarker>& ms) const;
};

/// Resolves the fixture's goal arguments (numbers or symbols) in `image`.
Goal resolve_goal(const fixtures::Fixture& f, const BinaryImage& image);

/// Number of `pop` instructions executed from `entry` up to the first
/// control transfer, exit or undecodable byte (at most kMaxGadgetLength
/// instructions).
unsigned pops_in_gadget(const BinaryImage& image, Address entry);

struct ChainEntry {
    Address gadget = 0;
    /// Words consumed by the gadget's pops, in pop order.
    std::vector<std::uint32_t> data;

    friend bool operator==(const ChainEntry&, const ChainEntry&) = default;
};

enum class ChainKind : std::uint8_t { Smash, Rop, Jop };

struct GadgetChain {
    ChainKind kind = ChainKind::Rop;
    std::vector<ChainEntry> entries;
    Goal goal;
    /// JOP only: dispatcher gadget and the stride it adds per step. The
    /// first entry is the loader, whose first data word (the dispatch table
    /// pointer) is filled in when the payload is laid out.
    Address dispatcher = 0;
    std::uint32_t stride = 4;

    /// Appends an entry after checking that `data` has one word per pop in
    /// the gadget at `gadget`.
    void add(const BinaryImage& image, Address gadget, std::vector<std::uint32_t> data);

    /// Entry addresses and data in stack order: [g1, d1.., g2, ...].
    std::vector<std::uint32_t> stack_words() const;
};

/// Stack smash: return straight into the fixture's `admin` routine.
GadgetChain build_smash_chain(const BinaryImage& image, Goal goal);

/// pop/mov/ret chain loading goal.args into r0 and r1, ending at an
/// `int 0x80` site. An empty goal yields the single-entry chain [int_site].
GadgetChain build_rop_chain(const BinaryImage& image, Goal goal);

/// Dispatcher-style chain: a loader gadget (pop r4; pop r5; pop r7;
/// jmp [r7]) seeds the dispatch table pointer, stride and dispatcher; the
/// dispatcher (load r3, [r4]; add r4, r5; jmp [r3]) walks a table of
/// functional gadgets (pop rN; jmp [r7]) and finally the `int 0x80` site.
GadgetChain build_jop_chain(const BinaryImage& image, Goal goal);

GadgetChain build_chain(fixtures::AttackClass cls, const BinaryImage& image, Goal goal);

/// Appends a `mov r0, 0; int 0x01` tail so that a ROP chain's final `ret`
/// exits cleanly instead of returning into whatever follows on the stack.
/// Returns false (chain unchanged) when the image has no such sequence.
bool append_clean_exit(GadgetChain& chain, const BinaryImage& image);

/// What the attacker writes into the EHD slot preceding each return
/// address on an HCIC stack.
enum class EhdPolicy : std::uint8_t {
    None,    // no EHD words: the unprotected stack layout
    Blind,   // random words
    Replay,  // the EHD found in the overwritten slot, reused for every entry
    Guess,   // forged from the slot's (address, EHD) pair as in forge_ehd
};

std::string_view to_string(EhdPolicy p);

struct InjectionOptions {
    EhdPolicy policy = EhdPolicy::None;
    ehd::EhdParams params = ehd::EhdParams::paper32();
    std::uint64_t seed = 0;  // for Blind and Guess
    std::uint8_t filler = 0x41;
    /// When set, receives the bytes actually delivered to the read.
    std::shared_ptr<std::vector<std::uint8_t>> delivered;
};

/// Slot contents the attacker sees at injection time.
struct SlotView {
    std::uint32_t ehd = 0;
    Address ret_addr = 0;
};

/// Payload bytes for an overflow of the buffer at `buffer`: buffer_size
/// filler bytes (JOP: the dispatch data, padded to the handler slot), then
/// the chain. Throws PayloadTooLarge when the JOP layout does not fit before
/// the handler slot.
std::vector<std::uint8_t> serialize_payload(const GadgetChain& chain, const fixtures::VulnSpec& vuln, Address buffer,
                                            const InjectionOptions& opt, const SlotView& slot = {});

/// Arms the machine's next `read_input` to deliver the serialized chain: the
/// unchecked copy in the vulnerable function writes it over the stack past
/// the buffer. The payload is laid out against the buffer address the
/// program actually passes. The read throws PayloadTooLarge if the payload
/// exceeds the requested byte count or the context's stack slice.
void inject_overflow(cpu::Machine& m, const GadgetChain& chain, const fixtures::VulnSpec& vuln,
                     const InjectionOptions& opt);

struct AttackOutcome {
    bool succeeded = false;  // a PRIVILEGED marker met the goal
    bool detected = false;   // alarm or fault, and no success before it
    std::optional<std::uint64_t> steps_to_detection;
    cpu::Terminal terminal;
    std::vector<cpu::PrivilegedMarker> privileged;
};

/// Classifies a finished run against a goal.
AttackOutcome classify(const cpu::Outcome& out, const Goal& goal);

/// Injects `chain` into a fresh run of `image` and classifies the result.
AttackOutcome run_attack(const BinaryImage& image, const cpu::HcicConfig& cfg, const GadgetChain& chain,
                         const fixtures::VulnSpec& vuln, const InjectionOptions& opt, std::uint64_t max_steps);

struct DifferentialResult {
    AttackOutcome unprotected;  // original image, HCIC disabled, plain layout
    AttackOutcome protected_;   // hardened image, HCIC enabled
    std::uint8_t key_1 = 0;
    std::uint32_t key_2 = 0;

    /// Attack works without HCIC and fails with it.
    bool sound() const { return unprotected.succeeded && !protected_.succeeded; }
};

struct DifferentialOptions {
    std::uint64_t puf_seed = 1;
    std::uint64_t load_nonce = 1;
    ehd::EhdParams params = ehd::EhdParams::paper32();
    EhdPolicy policy = EhdPolicy::Blind;
    std::uint64_t max_steps = 100000;
};

/// Mounts a smash/rop/jop fixture's attack once. The attacker builds the
/// chain from the program file: the original image when `hcic` is false
/// (plain stack layout), otherwise the relinked plaintext that the loader
/// encrypts at load time with keys from the PUF (EHD words per opt.policy).
AttackOutcome attack_fixture(const fixtures::Fixture& f, bool hcic, const DifferentialOptions& opt,
                             std::shared_ptr<std::vector<std::uint8_t>> delivered = {});

/// attack_fixture without and with HCIC.
DifferentialResult run_differential(const fixtures::Fixture& f, const DifferentialOptions& opt);

/// Records (return address, EHD) pairs from the Call events of a run.
struct Recorder {
    std::map<Address, std::uint32_t> pairs;  // latest EHD per return address
    std::vector<std::pair<Address, std::uint32_t>> log;

    void observe(const cpu::Event& ev);
};

struct FfrOptions {
    std::uint64_t max_steps = 100000;
    /// Return address to replay; the vulnerable function returns there with
    /// the EHD recorded for it.
    Address replay_return = 0;
};

/// Full-function reuse: while the program runs, the recorder captures the
/// (return address, EHD) pairs pushed by calls. At the vulnerable read the
/// payload replaces the frame's saved EHD and return address with the
/// recorded pair for `replay_return`. Succeeds only if the pair still
/// verifies, i.e. no key update happened since it was recorded.
AttackOutcome full_function_reuse_attack(const BinaryImage& image, const cpu::HcicConfig& cfg, Recorder& recorder,
                                         const fixtures::VulnSpec& vuln, const Goal& goal, const FfrOptions& opt);

/// Convenience for the ffr fixtures: profile, harden under the PUF keys, and
/// replay the pair recorded for `after_gate`.
AttackOutcome run_ffr_fixture(const fixtures::Fixture& f, std::uint64_t puf_seed, std::uint64_t load_nonce,
                              const ehd::EhdParams& params = ehd::EhdParams::paper32(),
                              std::uint64_t max_steps = 100000);

// ---------------------------------------------------------------------------
// EHD guessing
//
// Attacker model: knows a legitimate pair (R_i, EHD_i), the target R_j at
// Hamming distance x from R_i, and the EHD construction, but not key_2. It
// guesses the rotation m' uniformly, un-rotates EHD_i to read HD_i and the
// padding, guesses HD_j uniformly among the x+1 values of matching parity,
// and re-encodes.
// ---------------------------------------------------------------------------

/// HD_i + x - 2t for t = 0..x (not clipped to [0, 32]).
std::vector<int> hd_candidates(int hd_i, unsigned x);

struct Forgery {
    unsigned m_guess = 0;
    int hd_guess = 0;
    std::uint32_t ehd = 0;
};

/// Forges EHD_j from EHD_i given a rotation guess and a candidate index
/// t in [0, x].
Forgery forge_ehd(std::uint32_t ehd_i, unsigned x, unsigned m_guess, unsigned t, const ehd::EhdParams& params);

enum class ScoreMode : std::uint8_t {
    Verify,      // the forged word passes the DC check
    ExactGuess,  // m' and HD_j' are both right
};

enum class KeyMode : std::uint8_t {
    Independent,  // fresh key_2 per hop
    Fixed,        // one key_2 for all hops of a trial
};

struct MonteCarloConfig {
    ehd::EhdParams params = ehd::EhdParams::demo8();
    unsigned x = 1;
    unsigned n = 1;
    std::uint64_t trials = 50000;
    std::uint64_t seed = 1;
    ScoreMode score = ScoreMode::Verify;
    KeyMode keys = KeyMode::Independent;
    unsigned threads = 0;  // 0: hardware concurrency
};

struct MonteCarloResult {
    std::uint64_t trials = 0;
    std::uint64_t successes = 0;
    double rate = 0.0;
    double expected = 0.0;  // [(1/2)^k / (x+1)]^n
    double sigma = 0.0;     // binomial standard deviation of the rate at `expected`
    double ci_low = 0.0;    // 95% Wilson interval
    double ci_high = 0.0;

    /// |rate - expected| / sigma.
    double z() const;
};

/// Trials are seeded from (seed, trial index), so the result does not
/// depend on the thread count.
MonteCarloResult ehd_guess_montecarlo(const MonteCarloConfig& cfg);

/// Exact success probability of one hop by enumeration over every key_2
/// (demo8: over every key whose relevant bits matter) and every attacker
/// choice. Only for small parameter sets: enumerates 2^k rotations, x+1
/// candidates, and the key bits that influence the outcome.
ehd::Rational exact_hop_probability(Address r_i, Address r_j, ScoreMode score, const ehd::EhdParams& params);

}  // namespace hcic::attacks

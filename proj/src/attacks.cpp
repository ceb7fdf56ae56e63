#include "hcic/attacks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "hcic/metrics.hpp"
#include "hcic/puf.hpp"
#include "hcic/syscalls.hpp"

namespace hcic::attacks {

using isa::Opcode;

bool Goal::satisfied_by(const cpu::PrivilegedMarker& m) const {
    if (args.size() > 2) return false;
    if (args.size() >= 1 && m.arg0 != args[0]) return false;
    if (args.size() >= 2 && m.arg1 != args[1]) return false;
    return true;
}

bool Goal::satisfied_by(const std::vector<cpu::PrivilegedMarker>& ms) const {
    return std::any_of(ms.begin(), ms.end(), [&](const auto& m) { return satisfied_by(m); });
}

Goal resolve_goal(const fixtures::Fixture& f, const BinaryImage& image) {
    Goal g;
    for (const auto& a : f.goal_args) {
        if (auto s = image.symbol(a)) {
            g.args.push_back(*s);
            continue;
        }
        std::size_t used = 0;
        unsigned long v = std::stoul(a, &used, 0);
        if (used != a.size()) throw std::invalid_argument("bad goal argument: " + a);
        g.args.push_back(static_cast<std::uint32_t>(v));
    }
    if (g.args.size() > 2) throw std::invalid_argument("goals take at most two arguments");
    return g;
}

unsigned pops_in_gadget(const BinaryImage& image, Address entry) {
    unsigned pops = 0;
    Address a = entry;
    for (unsigned i = 0; i < metrics::kMaxGadgetLength; ++i) {
        auto insn = decode_at(image, a);
        if (!insn) break;
        if (insn->opcode == Opcode::Pop) ++pops;
        if (isa::is_control_transfer(insn->opcode) || !isa::falls_through(*insn)) break;
        a += insn->length;
    }
    return pops;
}

void GadgetChain::add(const BinaryImage& image, Address gadget, std::vector<std::uint32_t> data) {
    const unsigned pops = pops_in_gadget(image, gadget);
    if (data.size() != pops)
        throw std::invalid_argument(
            fmt::format("gadget {:#010x} pops {} words but {} were supplied", gadget, pops, data.size()));
    entries.push_back({gadget, std::move(data)});
}

std::vector<std::uint32_t> GadgetChain::stack_words() const {
    std::vector<std::uint32_t> w;
    for (const auto& e : entries) {
        w.push_back(e.gadget);
        w.insert(w.end(), e.data.begin(), e.data.end());
    }
    return w;
}

namespace {

using Seq = std::vector<DecodedInstruction>;

// Aligned gadgets of the plain image, as instruction sequences.
std::vector<metrics::Gadget> aligned_gadgets(const BinaryImage& image) {
    auto all = metrics::scan_gadgets(image, 4);
    std::erase_if(all, [](const metrics::Gadget& g) { return !g.aligned; });
    return all;
}

bool is(const DecodedInstruction& d, Opcode op) { return d.insn.opcode == op; }

Address find_int_site(const BinaryImage& image) {
    for (const auto& d : metrics::canonical_decode(image))
        if (is(d, Opcode::Int) && d.insn.imm == static_cast<std::uint32_t>(Syscall::Privileged)) return d.addr;
    throw GadgetNotFound("no `int 0x80` site");
}

// pop rX; ret
std::optional<std::pair<Address, std::uint8_t>> find_pop_ret(const std::vector<metrics::Gadget>& gs,
                                                             std::optional<std::uint8_t> reg = {}) {
    for (const auto& g : gs) {
        const Seq& s = g.instructions;
        if (s.size() == 2 && is(s[0], Opcode::Pop) && is(s[1], Opcode::Ret) && (!reg || s[0].insn.ra == *reg))
            return std::pair{g.entry, s[0].insn.ra};
    }
    return std::nullopt;
}

// mov dst, src; ret
std::optional<Address> find_mov_ret(const std::vector<metrics::Gadget>& gs, std::uint8_t dst, std::uint8_t src) {
    for (const auto& g : gs) {
        const Seq& s = g.instructions;
        if (s.size() == 2 && is(s[0], Opcode::MovRR) && s[0].insn.ra == dst && s[0].insn.rb == src &&
            is(s[1], Opcode::Ret))
            return g.entry;
    }
    return std::nullopt;
}

}  // namespace

GadgetChain build_smash_chain(const BinaryImage& image, Goal goal) {
    auto admin = image.symbol("admin");
    if (!admin) throw GadgetNotFound("no `admin` routine to return into");
    GadgetChain c;
    c.kind = ChainKind::Smash;
    c.goal = std::move(goal);
    c.add(image, *admin, {});
    return c;
}

GadgetChain build_rop_chain(const BinaryImage& image, Goal goal) {
    GadgetChain c;
    c.kind = ChainKind::Rop;
    const Address int_site = find_int_site(image);
    if (goal.args.size() > 2) throw GadgetNotFound("only r0 and r1 can be loaded");
    if (!goal.args.empty()) {
        const auto gs = aligned_gadgets(image);
        auto pop = find_pop_ret(gs);
        if (!pop) throw GadgetNotFound("no `pop r; ret` gadget");
        const auto [g_pop, reg] = *pop;
        for (std::size_t i = 0; i < goal.args.size(); ++i) {
            const auto dst = static_cast<std::uint8_t>(i);
            // Step: load the parameter into the scratch register, then move it.
            if (reg == dst) {
                c.add(image, g_pop, {goal.args[i]});
                continue;
            }
            auto mov = find_mov_ret(gs, dst, reg);
            if (!mov) throw GadgetNotFound(fmt::format("no `mov r{}, r{}; ret` gadget", dst, reg));
            c.add(image, g_pop, {goal.args[i]});
            c.add(image, *mov, {});
        }
    }
    c.add(image, int_site, {});
    c.goal = std::move(goal);
    return c;
}

GadgetChain build_jop_chain(const BinaryImage& image, Goal goal) {
    if (goal.args.size() > 2) throw GadgetNotFound("only r0 and r1 can be loaded");
    const auto gs = aligned_gadgets(image);
    const Address int_site = find_int_site(image);

    // Loader: pop a; pop b; pop c; jmp [c].
    const metrics::Gadget* loader = nullptr;
    for (const auto& g : gs) {
        const Seq& s = g.instructions;
        if (s.size() == 4 && is(s[0], Opcode::Pop) && is(s[1], Opcode::Pop) && is(s[2], Opcode::Pop) &&
            is(s[3], Opcode::JmpInd) && s[3].insn.ra == s[2].insn.ra) {
            loader = &g;
            break;
        }
    }
    if (!loader) throw GadgetNotFound("no loader gadget (pop; pop; pop; jmp [r])");
    const std::uint8_t table_reg = loader->instructions[0].insn.ra;
    const std::uint8_t stride_reg = loader->instructions[1].insn.ra;
    const std::uint8_t disp_reg = loader->instructions[2].insn.ra;

    // Dispatcher: load t, [table]; add table, stride; jmp [t].
    std::optional<Address> dispatcher;
    for (const auto& g : gs) {
        const Seq& s = g.instructions;
        if (s.size() == 3 && is(s[0], Opcode::Load) && s[0].insn.rb == table_reg && s[0].insn.disp == 0 &&
            is(s[1], Opcode::Add) && s[1].insn.ra == table_reg && s[1].insn.rb == stride_reg &&
            is(s[2], Opcode::JmpInd) && s[2].insn.ra == s[0].insn.ra) {
            dispatcher = g.entry;
            break;
        }
    }
    if (!dispatcher) throw GadgetNotFound("no dispatcher gadget");

    GadgetChain c;
    c.kind = ChainKind::Jop;
    c.dispatcher = *dispatcher;
    c.stride = 4;
    c.add(image, loader->entry, {0, c.stride, *dispatcher});
    for (std::size_t i = 0; i < goal.args.size(); ++i) {
        // Functional gadget: pop r_i; jmp [dispatcher register].
        std::optional<Address> op;
        for (const auto& g : gs) {
            const Seq& s = g.instructions;
            if (s.size() == 2 && is(s[0], Opcode::Pop) && s[0].insn.ra == i && is(s[1], Opcode::JmpInd) &&
                s[1].insn.ra == disp_reg) {
                op = g.entry;
                break;
            }
        }
        if (!op) throw GadgetNotFound(fmt::format("no `pop r{}; jmp [r{}]` gadget", i, disp_reg));
        c.add(image, *op, {goal.args[i]});
    }
    c.add(image, int_site, {});
    c.goal = std::move(goal);
    return c;
}

GadgetChain build_chain(fixtures::AttackClass cls, const BinaryImage& image, Goal goal) {
    switch (cls) {
        case fixtures::AttackClass::Smash: return build_smash_chain(image, std::move(goal));
        case fixtures::AttackClass::Rop: return build_rop_chain(image, std::move(goal));
        case fixtures::AttackClass::Jop: return build_jop_chain(image, std::move(goal));
        case fixtures::AttackClass::Ffr: break;
    }
    throw std::invalid_argument("full-function reuse has no gadget chain");
}

std::string_view to_string(EhdPolicy p) {
    switch (p) {
        case EhdPolicy::None: return "none";
        case EhdPolicy::Blind: return "blind";
        case EhdPolicy::Replay: return "replay";
        case EhdPolicy::Guess: return "guess";
    }
    return "?";
}

namespace {

void put_word(std::vector<std::uint8_t>& out, std::uint32_t w) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(w >> (8 * i)));
}

}  // namespace

std::vector<std::uint8_t> serialize_payload(const GadgetChain& chain, const fixtures::VulnSpec& vuln, Address buffer,
                                            const InjectionOptions& opt, const SlotView& slot) {
    std::vector<std::uint8_t> out;
    if (chain.kind == ChainKind::Jop) {
        if (!vuln.handler_offset) throw std::invalid_argument("JOP needs a handler slot after the buffer");
        if (chain.entries.empty()) throw std::invalid_argument("empty JOP chain");
        // [table ptr][stride][dispatcher] popped by the loader, then the data
        // words the functional gadgets pop, then the dispatch table.
        std::vector<std::uint32_t> words;
        std::vector<std::uint32_t> data;
        for (std::size_t i = 1; i < chain.entries.size(); ++i)
            data.insert(data.end(), chain.entries[i].data.begin(), chain.entries[i].data.end());
        const Address table = buffer + 12 + 4 * static_cast<Address>(data.size());
        words.push_back(table);
        words.push_back(chain.entries[0].data.at(1));
        words.push_back(chain.entries[0].data.at(2));
        words.insert(words.end(), data.begin(), data.end());
        for (std::size_t i = 1; i < chain.entries.size(); ++i) words.push_back(chain.entries[i].gadget);
        if (4 * words.size() > *vuln.handler_offset)
            throw PayloadTooLarge(fmt::format("JOP layout needs {} bytes before the handler slot at {}",
                                              4 * words.size(), *vuln.handler_offset));
        for (auto w : words) put_word(out, w);
        out.resize(*vuln.handler_offset, opt.filler);
        put_word(out, chain.entries[0].gadget);
        return out;
    }

    out.assign(vuln.buffer_size, opt.filler);
    std::mt19937_64 rng(opt.seed);
    for (const auto& e : chain.entries) {
        switch (opt.policy) {
            case EhdPolicy::None: break;
            case EhdPolicy::Blind: put_word(out, static_cast<std::uint32_t>(rng()) & opt.params.mask()); break;
            case EhdPolicy::Replay: put_word(out, slot.ehd); break;
            case EhdPolicy::Guess: {
                const unsigned x = ehd::hamming_distance(slot.ret_addr, e.gadget);
                const unsigned m = static_cast<unsigned>(rng() % (1u << opt.params.k));
                const unsigned t = static_cast<unsigned>(rng() % (x + 1));
                put_word(out, forge_ehd(slot.ehd, x, m, t, opt.params).ehd);
                break;
            }
        }
        put_word(out, e.gadget);
        for (auto d : e.data) put_word(out, d);
    }
    return out;
}

void inject_overflow(cpu::Machine& m, const GadgetChain& chain, const fixtures::VulnSpec& vuln,
                     const InjectionOptions& opt) {
    auto armed = std::make_shared<bool>(true);
    m.set_input([chain, vuln, opt, armed](const cpu::InputRequest& req) -> std::vector<std::uint8_t> {
        if (!*armed) return {};
        *armed = false;
        SlotView slot;
        slot.ehd = req.machine.peek_word(req.destination + vuln.buffer_size).value_or(0);
        slot.ret_addr = req.machine.peek_word(req.destination + vuln.buffer_size + 4).value_or(0);
        auto payload = serialize_payload(chain, vuln, req.destination, opt, slot);
        if (payload.size() > req.max_bytes)
            throw PayloadTooLarge(
                fmt::format("payload of {} bytes exceeds the {}-byte read", payload.size(), req.max_bytes));
        const auto& ctx = req.machine.contexts().at(req.context);
        if (static_cast<std::uint64_t>(req.destination) + payload.size() > ctx.stack_high)
            throw PayloadTooLarge(fmt::format("payload of {} bytes runs past the top of the stack", payload.size()));
        if (opt.delivered) *opt.delivered = payload;
        return payload;
    });
}

AttackOutcome classify(const cpu::Outcome& out, const Goal& goal) {
    AttackOutcome a;
    a.terminal = out.terminal;
    a.privileged = out.privileged;
    a.succeeded = goal.satisfied_by(out.privileged);
    a.detected = !a.succeeded && (out.alarmed() || out.faulted());
    if (a.detected) a.steps_to_detection = out.counters.instructions;
    return a;
}

AttackOutcome run_attack(const BinaryImage& image, const cpu::HcicConfig& cfg, const GadgetChain& chain,
                         const fixtures::VulnSpec& vuln, const InjectionOptions& opt, std::uint64_t max_steps) {
    cpu::Machine m(image, cfg);
    inject_overflow(m, chain, vuln, opt);
    return classify(m.run(max_steps), chain.goal);
}

bool append_clean_exit(GadgetChain& chain, const BinaryImage& image) {
    const auto code = metrics::canonical_decode(image);
    for (std::size_t i = 0; i + 1 < code.size(); ++i) {
        const auto& a = code[i];
        const auto& b = code[i + 1];
        if (is(a, Opcode::MovRI) && a.insn.ra == 0 && a.insn.imm == 0 && is(b, Opcode::Int) &&
            b.insn.imm == static_cast<std::uint32_t>(Syscall::Exit) && b.addr == a.addr + a.insn.length) {
            chain.add(image, a.addr, {});
            return true;
        }
    }
    return false;
}

AttackOutcome attack_fixture(const fixtures::Fixture& f, bool hcic, const DifferentialOptions& opt,
                             std::shared_ptr<std::vector<std::uint8_t>> delivered) {
    if (!f.attack || *f.attack == fixtures::AttackClass::Ffr)
        throw std::invalid_argument(f.name + " is not a gadget-chain attack fixture");
    const auto cls = *f.attack;
    const auto img = fixtures::assemble_fixture(f);
    if (!hcic) {
        auto chain = build_chain(cls, img, resolve_goal(f, img));
        if (cls == fixtures::AttackClass::Rop) append_clean_exit(chain, img);
        InjectionOptions inj{EhdPolicy::None, opt.params, 0, 0x41, delivered};
        return run_attack(img, cpu::HcicConfig::disabled(), chain, f.vuln, inj, opt.max_steps);
    }
    auto profile = loader::profile_targets(img, f.profile_inputs, opt.max_steps);
    const auto relinked = loader::relink(img, profile.targets);
    auto cfg = cpu::HcicConfig::from_puf(puf::PufDevice(opt.puf_seed), opt.load_nonce, opt.params);
    const auto hardened = loader::encrypt(relinked, cfg.keys.key_1);
    auto chain = build_chain(cls, relinked.image, resolve_goal(f, relinked.image));
    if (cls == fixtures::AttackClass::Rop) append_clean_exit(chain, relinked.image);
    InjectionOptions inj{opt.policy, opt.params, puf::mix64(opt.puf_seed ^ 0xA77AC4ull), 0x41, delivered};
    return run_attack(hardened.image, cfg, chain, f.vuln, inj, opt.max_steps);
}

DifferentialResult run_differential(const fixtures::Fixture& f, const DifferentialOptions& opt) {
    DifferentialResult r;
    r.unprotected = attack_fixture(f, false, opt);
    r.protected_ = attack_fixture(f, true, opt);
    const auto keys = cpu::HcicConfig::from_puf(puf::PufDevice(opt.puf_seed), opt.load_nonce, opt.params).keys;
    r.key_1 = keys.key_1;
    r.key_2 = keys.key_2;
    return r;
}

void Recorder::observe(const cpu::Event& ev) {
    if (ev.type != cpu::EventType::Call || !ev.hcic) return;
    pairs[ev.ret_addr] = ev.stored_ehd;
    log.emplace_back(ev.ret_addr, ev.stored_ehd);
}

AttackOutcome full_function_reuse_attack(const BinaryImage& image, const cpu::HcicConfig& cfg, Recorder& recorder,
                                         const fixtures::VulnSpec& vuln, const Goal& goal, const FfrOptions& opt) {
    cpu::Machine m(image, cfg);
    m.set_observer([&recorder](const cpu::Event& ev) { recorder.observe(ev); });
    auto armed = std::make_shared<bool>(true);
    const bool hcic = cfg.enabled;
    m.set_input([&recorder, vuln, opt, armed, hcic](const cpu::InputRequest&) -> std::vector<std::uint8_t> {
        if (!*armed) return {};
        *armed = false;
        std::vector<std::uint8_t> out(vuln.buffer_size, 0x41);
        if (hcic) {
            auto it = recorder.pairs.find(opt.replay_return);
            put_word(out, it != recorder.pairs.end() ? it->second : 0);
        }
        put_word(out, opt.replay_return);
        return out;
    });
    return classify(m.run(opt.max_steps), goal);
}

AttackOutcome run_ffr_fixture(const fixtures::Fixture& f, std::uint64_t puf_seed, std::uint64_t load_nonce,
                              const ehd::EhdParams& params, std::uint64_t max_steps) {
    const auto img = fixtures::assemble_fixture(f);
    auto profile = loader::profile_targets(img, f.profile_inputs, max_steps);
    const auto relinked = loader::relink(img, profile.targets);
    auto cfg = cpu::HcicConfig::from_puf(puf::PufDevice(puf_seed), load_nonce, params);
    const auto hardened = loader::encrypt(relinked, cfg.keys.key_1);
    Recorder rec;
    FfrOptions o;
    o.max_steps = max_steps;
    o.replay_return = hardened.image.require_symbol("after_gate");
    return full_function_reuse_attack(hardened.image, cfg, rec, f.vuln, resolve_goal(f, hardened.image), o);
}

// ---------------------------------------------------------------------------

std::vector<int> hd_candidates(int hd_i, unsigned x) {
    std::vector<int> out;
    for (unsigned t = 0; t <= x; ++t) out.push_back(hd_i + static_cast<int>(x) - 2 * static_cast<int>(t));
    return out;
}

Forgery forge_ehd(std::uint32_t ehd_i, unsigned x, unsigned m_guess, unsigned t, const ehd::EhdParams& p) {
    const std::uint32_t w = ehd::rotate_left(ehd_i & p.mask(), m_guess, p.width);
    const std::uint32_t pad_mask = p.l == 32 ? 0xFFFFFFFFu : ((1u << p.l) - 1);
    const int hd_i = static_cast<int>(w >> p.l);
    Forgery f;
    f.m_guess = m_guess;
    f.hd_guess = hd_i + static_cast<int>(x) - 2 * static_cast<int>(t);
    const std::uint32_t word =
        ((static_cast<std::uint32_t>(f.hd_guess) & 63u) << p.l | (w & pad_mask)) & p.mask();
    f.ehd = ehd::rotate_right(word, m_guess, p.width);
    return f;
}

double MonteCarloResult::z() const { return sigma == 0 ? (rate == expected ? 0 : INFINITY) : std::abs(rate - expected) / sigma; }

namespace {

std::uint32_t flip_bits(std::mt19937_64& rng, std::uint32_t r, unsigned x) {
    std::uint32_t mask = 0;
    while (static_cast<unsigned>(std::popcount(mask)) < x) mask |= 1u << (rng() % 32);
    return r ^ mask;
}

bool hop(std::mt19937_64& rng, std::uint32_t key, const MonteCarloConfig& c) {
    const auto& p = c.params;
    const auto r_i = static_cast<std::uint32_t>(rng());
    const auto r_j = flip_bits(rng, r_i, c.x);
    const auto ehd_i = ehd::ehd_encode(r_i, key, p);
    const auto m = static_cast<unsigned>(rng() % (1u << p.k));
    const auto t = static_cast<unsigned>(rng() % (c.x + 1));
    const auto f = forge_ehd(ehd_i, c.x, m, t, p);
    if (c.score == ScoreMode::Verify) return ehd::ehd_verify(r_j, key, f.ehd, p);
    return m == ehd::rotation_of(key, p) && f.hd_guess == static_cast<int>(ehd::hamming_distance(r_j, key));
}

}  // namespace

MonteCarloResult ehd_guess_montecarlo(const MonteCarloConfig& c) {
    if (c.trials == 0) throw std::invalid_argument("trials must be positive");
    if (!c.params.supported()) throw std::invalid_argument("unsupported EHD parameters");
    if (c.x > 32) throw std::invalid_argument("x must be at most 32");

    unsigned threads = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, c.trials));
    std::vector<std::uint64_t> wins(threads, 0);
    auto work = [&](unsigned w) {
        for (std::uint64_t trial = w; trial < c.trials; trial += threads) {
            std::mt19937_64 rng(puf::mix64(c.seed * 0x9E3779B97F4A7C15ull + trial));
            const auto fixed_key = static_cast<std::uint32_t>(rng());
            bool ok = true;
            for (unsigned h = 0; h < c.n && ok; ++h) {
                const auto key = c.keys == KeyMode::Fixed ? fixed_key : static_cast<std::uint32_t>(rng());
                ok = hop(rng, key, c);
            }
            wins[w] += ok;
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < threads; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& t : pool) t.join();

    MonteCarloResult r;
    r.trials = c.trials;
    for (auto s : wins) r.successes += s;
    const double N = static_cast<double>(c.trials);
    r.rate = static_cast<double>(r.successes) / N;
    r.expected = ehd::attack_success_probability(c.params.k, c.x, c.n);
    r.sigma = std::sqrt(r.expected * (1 - r.expected) / N);
    const double z = 1.959964, z2 = z * z;
    const double centre = (r.rate + z2 / (2 * N)) / (1 + z2 / N);
    const double half = z * std::sqrt(r.rate * (1 - r.rate) / N + z2 / (4 * N * N)) / (1 + z2 / N);
    r.ci_low = std::max(0.0, centre - half);
    r.ci_high = std::min(1.0, centre + half);
    return r;
}

ehd::Rational exact_hop_probability(Address r_i, Address r_j, ScoreMode score, const ehd::EhdParams& p) {
    using boost::multiprecision::cpp_int;
    const unsigned x = ehd::hamming_distance(r_i, r_j);
    // Key bits that matter individually: rotation, padding, and the
    // positions where R_i and R_j differ. All other bits only contribute
    // to the common part of both Hamming distances.
    std::uint32_t relevant = ((1u << p.k) - 1) | (r_i ^ r_j);
    if (p.l > 0) relevant |= p.l >= 32 ? 0xFFFFFFFFu : ~(0xFFFFFFFFu >> p.l);
    std::vector<unsigned> rel_bits, rest_bits;
    for (unsigned b = 0; b < 32; ++b) ((relevant >> b) & 1 ? rel_bits : rest_bits).push_back(b);
    if (rel_bits.size() > 20) throw std::invalid_argument("too many relevant key bits to enumerate");

    const unsigned rest = static_cast<unsigned>(rest_bits.size());
    std::vector<cpp_int> binom(rest + 1);
    binom[0] = 1;
    for (unsigned c = 1; c <= rest; ++c) binom[c] = binom[c - 1] * (rest - c + 1) / c;

    cpp_int hits = 0;
    for (std::uint32_t a = 0; a < (1u << rel_bits.size()); ++a) {
        std::uint32_t key_rel = 0;
        for (std::size_t i = 0; i < rel_bits.size(); ++i)
            if ((a >> i) & 1) key_rel |= 1u << rel_bits[i];
        for (unsigned c = 0; c <= rest; ++c) {
            // Representative key: matches R_i on the other bits except c of them.
            std::uint32_t key = key_rel;
            for (unsigned i = 0; i < rest; ++i) {
                const unsigned b = rest_bits[i];
                const std::uint32_t bit = ((r_i >> b) & 1) ^ (i < c ? 1u : 0u);
                key |= bit << b;
            }
            const auto ehd_i = ehd::ehd_encode(r_i, key, p);
            const auto m_true = ehd::rotation_of(key, p);
            const int hd_j = static_cast<int>(ehd::hamming_distance(r_j, key));
            unsigned wins = 0;
            for (unsigned m = 0; m < (1u << p.k); ++m)
                for (unsigned t = 0; t <= x; ++t) {
                    const auto f = forge_ehd(ehd_i, x, m, t, p);
                    wins += score == ScoreMode::Verify ? ehd::ehd_verify(r_j, key, f.ehd, p)
                                                       : (m == m_true && f.hd_guess == hd_j);
                }
            hits += binom[c] * wins;
        }
    }
    cpp_int denom = cpp_int(1) << (32 + p.k);
    denom *= (x + 1);
    return ehd::Rational(hits, denom);
}

}  // namespace hcic::attacks

#include "hcic/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hcic/assembler.hpp"
#include "hcic/attacks.hpp"
#include "hcic/fixtures.hpp"
#include "hcic/loader.hpp"
#include "hcic/metrics.hpp"

namespace hcic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

cpu::HcicConfig RunConfig::hcic_config() const {
    if (!hcic_enabled) return cpu::HcicConfig::disabled();
    auto params = ehd::preset_by_name(ehd_preset);
    if (!params) throw CLI::ValidationError("--ehd-preset", "unknown preset " + ehd_preset);
    return cpu::HcicConfig::from_puf(puf::PufDevice(puf_seed, puf_noise, puf_seed ^ 0x5EED), load_nonce, *params);
}

int exit_code_for(const cpu::Terminal& t) {
    if (std::holds_alternative<cpu::CraAlarm>(t)) return kExitAlarm;
    if (std::holds_alternative<cpu::Fault>(t)) return kExitFault;
    if (std::holds_alternative<cpu::Timeout>(t)) return kExitTimeout;
    return kExitOk;
}

namespace {

std::string hex(std::uint32_t v) { return fmt::format("{:#010x}", v); }

std::string rational_text(const ehd::Rational& r) {
    std::ostringstream ss;
    ss << r;
    return ss.str();
}

}  // namespace

json event_to_json(const cpu::Event& ev) {
    using cpu::EventType;
    json j{{"seq", ev.seq}, {"type", cpu::to_string(ev.type)}, {"ctx", ev.context}, {"pc", hex(ev.pc)}};
    switch (ev.type) {
        case EventType::Fetch:
            j["entry"] = cpu::to_string(ev.entry);
            j["opcode"] = fmt::format("{:#04x}", ev.opcode);
            j["decrypted"] = ev.decrypted;
            break;
        case EventType::Call:
            j["target"] = hex(ev.target);
            j["ret_addr"] = hex(ev.ret_addr);
            if (ev.hcic) j["ehd"] = ev.stored_ehd;
            break;
        case EventType::Ret:
            j["ret_addr"] = hex(ev.ret_addr);
            if (ev.hcic) {
                j["stored_ehd"] = ev.stored_ehd;
                j["computed_ehd"] = ev.computed_ehd;
                j["ehd_ok"] = ev.ehd_ok;
            }
            break;
        case EventType::Jump: j["target"] = hex(ev.target); break;
        case EventType::Syscall:
            j["vector"] = fmt::format("{:#04x}", ev.vector);
            j["arg0"] = hex(ev.arg0);
            j["arg1"] = hex(ev.arg1);
            j["result"] = ev.result;
            break;
        case EventType::KeyUpdate: j["epoch"] = ev.epoch; break;
        case EventType::Alarm:
            j["ret_addr"] = hex(ev.ret_addr);
            j["stored_ehd"] = ev.stored_ehd;
            j["computed_ehd"] = ev.computed_ehd;
            break;
        case EventType::Fault: j["fault"] = cpu::to_string(ev.fault); break;
        case EventType::Exit: j["code"] = ev.result; break;
        case EventType::Halt:
        case EventType::Timeout: break;
    }
    return j;
}

json terminal_to_json(const cpu::Terminal& t) {
    if (auto* e = std::get_if<cpu::ExitStatus>(&t)) return {{"kind", "exit"}, {"code", e->code}};
    if (auto* a = std::get_if<cpu::CraAlarm>(&t))
        return {{"kind", "alarm"},         {"ctx", a->context},           {"pc", hex(a->pc)},
                {"ret_addr", hex(a->ret_addr)}, {"stored_ehd", a->stored_ehd}, {"computed_ehd", a->computed_ehd}};
    if (auto* f = std::get_if<cpu::Fault>(&t))
        return {{"kind", "fault"}, {"fault", cpu::to_string(f->kind)}, {"pc", hex(f->pc)}};
    return {{"kind", "timeout"}};
}

json counters_to_json(const cpu::Counters& c) {
    return {{"instructions", c.instructions},   {"cycles", c.cycles},
            {"hcic_extra_cycles", c.hcic_extra_cycles}, {"calls", c.calls},
            {"rets", c.rets},                   {"decrypted_fetches", c.decrypted_fetches},
            {"key_updates", c.key_updates}};
}

namespace {

json markers_to_json(const std::vector<cpu::PrivilegedMarker>& ms) {
    json arr = json::array();
    for (const auto& m : ms) arr.push_back({{"ctx", m.context}, {"pc", hex(m.pc)}, {"arg0", hex(m.arg0)}, {"arg1", hex(m.arg1)}});
    return arr;
}

}  // namespace

json summary_to_json(const cpu::Outcome& out) {
    std::string text(out.output.begin(), out.output.end());
    return {{"type", "summary"},
            {"terminal", terminal_to_json(out.terminal)},
            {"counters", counters_to_json(out.counters)},
            {"privileged", markers_to_json(out.privileged)},
            {"output_hex", fmt::format("{:02x}", fmt::join(out.output, ""))}};
}

namespace {

class CliError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CliError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& p) {
    auto b = read_bytes(p);
    return {b.begin(), b.end()};
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream o(p, std::ios::binary);
    if (!o) throw CliError("cannot write " + p.string());
    o << s;
}

/// Assembly sources (.s) are assembled on the fly; anything else is read
/// as an image file.
ImageFile load_any(const std::string& path) {
    if (fs::path(path).extension() == ".s") return ImageFile{assemble(read_text(path)), {}};
    return load_image(path);
}

std::vector<std::vector<std::uint8_t>> gather_inputs(const std::string& dir, const std::vector<std::string>& files) {
    std::vector<std::vector<std::uint8_t>> inputs;
    if (!dir.empty()) {
        std::vector<fs::path> paths;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) paths.push_back(e.path());
        std::sort(paths.begin(), paths.end());
        for (const auto& p : paths) inputs.push_back(read_bytes(p));
    }
    for (const auto& f : files) inputs.push_back(read_bytes(f));
    if (inputs.empty()) inputs.push_back({});
    return inputs;
}

void add_run_config(CLI::App* app, RunConfig& rc) {
    app->add_option("--puf-seed", rc.puf_seed, "PUF device seed")->capture_default_str();
    app->add_option("--puf-noise", rc.puf_noise, "per-bit PUF response noise")->check(CLI::Range(0.0, 0.5));
    app->add_option("--load-nonce", rc.load_nonce, "load nonce for key generation")->capture_default_str();
    app->add_option("--ehd-preset", rc.ehd_preset, "EHD layout")
        ->check(CLI::IsMember({"paper32", "demo8"}))
        ->capture_default_str();
    app->add_option("--max-steps", rc.max_steps, "instruction budget")->capture_default_str();
    app->add_flag("!--no-hcic", rc.hcic_enabled, "run with the protection disabled");
}

ehd::EhdParams preset(const RunConfig& rc) { return *ehd::preset_by_name(rc.ehd_preset); }

/// Image as loaded into memory: for a hardened file with HCIC on, the
/// relinked plaintext encrypted with this load's key_1.
BinaryImage load_for_run(const ImageFile& f, const cpu::HcicConfig& cfg, std::ostream& err) {
    auto relinked = loader::relinked_from_image_file(f);
    if (!cfg.enabled) return f.image;
    if (!relinked) {
        err << "warning: image has no loader metadata; call/jmp targets are not encrypted\n";
        return f.image;
    }
    auto h = loader::encrypt(*relinked, cfg.keys.key_1);
    for (const auto& w : h.warnings) err << "warning: " << w << "\n";
    return h.image;
}

struct Sink {
    std::ofstream file;
    void write(const json& j) { file << j.dump() << '\n'; }
};

// --------------------------------------------------------------------------

int cmd_assemble(const std::string& src, const std::string& out_path, bool listing, std::ostream& out) {
    auto img = assemble(read_text(src));
    save_image(out_path, ImageFile{img, {}});
    if (listing) out << disassemble(img);
    return kExitOk;
}

int cmd_profile(const std::string& img_path, const std::string& dir, const std::vector<std::string>& files,
                std::uint64_t max_steps, const std::string& out_path, std::ostream& out, std::ostream& err) {
    auto f = load_any(img_path);
    auto rep = loader::profile_targets(f.image, gather_inputs(dir, files), max_steps);
    for (const auto& s : rep.skipped) err << "skipped " << s << "\n";
    json j{{"format", "hcic-targets"},
           {"version", 1},
           {"targets", loader::to_json(rep.targets)},
           {"runs_used", rep.runs_used},
           {"skipped", rep.skipped}};
    if (out_path.empty()) out << j.dump(2) << "\n";
    else write_text(out_path, j.dump(2) + "\n");
    return kExitOk;
}

loader::TargetSet read_targets(const std::string& path) {
    auto j = json::parse(read_text(path));
    return loader::target_set_from_json(j.contains("targets") ? j.at("targets") : j);
}

int cmd_harden(const std::string& img_path, const std::string& targets_path, const std::string& dir,
               const std::vector<std::string>& files, std::uint64_t max_steps, const std::string& out_path,
               std::ostream& out) {
    auto f = load_any(img_path);
    if (loader::relinked_from_image_file(f)) throw CliError(img_path + " is already hardened");
    loader::TargetSet t = targets_path.empty()
                              ? loader::profile_targets(f.image, gather_inputs(dir, files), max_steps).targets
                              : read_targets(targets_path);
    auto r = loader::relink(f.image, t);
    save_image(out_path, loader::to_image_file(r));
    out << json{{"encryption_sites", r.encryption_sites.size()},
                {"trampolines", r.trampoline_map.size()},
                {"size_overhead_bytes", r.size_overhead_bytes},
                {"original_code_bytes", f.image.code.bytes.size()}}
               .dump()
        << "\n";
    return kExitOk;
}

int cmd_run(const std::string& img_path, const RunConfig& rc, const std::vector<std::string>& input_files,
            const std::string& report_path, std::ostream& out, std::ostream& err) {
    auto f = load_any(img_path);
    const auto cfg = rc.hcic_config();
    const auto img = load_for_run(f, cfg, err);
    std::vector<std::uint8_t> input;
    for (const auto& p : input_files) {
        auto b = read_bytes(p);
        input.insert(input.end(), b.begin(), b.end());
    }
    cpu::MachineOptions opts;
    opts.input = cpu::stream_input(std::move(input));
    Sink sink;
    if (!rc.trace_path.empty()) {
        sink.file.open(rc.trace_path, std::ios::binary);
        if (!sink.file) throw CliError("cannot write " + rc.trace_path);
        opts.observer = [&sink](const cpu::Event& ev) { sink.write(event_to_json(ev)); };
    }
    auto outcome = cpu::run_image(img, cfg, rc.max_steps, std::move(opts));
    if (sink.file.is_open()) sink.write(summary_to_json(outcome));
    out.write(reinterpret_cast<const char*>(outcome.output.data()), static_cast<std::streamsize>(outcome.output.size()));
    err << cpu::describe(outcome.terminal) << "\n";
    for (const auto& m : outcome.privileged)
        err << fmt::format("privileged: pc={:#010x} r0={:#010x} r1={:#010x}\n", m.pc, m.arg0, m.arg1);
    if (!report_path.empty()) write_text(report_path, summary_to_json(outcome).dump(2) + "\n");
    return exit_code_for(outcome.terminal);
}

json outcome_to_json(const attacks::AttackOutcome& o) {
    json j{{"succeeded", o.succeeded},
           {"detected", o.detected},
           {"terminal", terminal_to_json(o.terminal)},
           {"privileged", markers_to_json(o.privileged)}};
    j["steps_to_detection"] = o.steps_to_detection ? json(*o.steps_to_detection) : json(nullptr);
    return j;
}

struct GuessOptions {
    unsigned x = 1;
    unsigned n = 1;
    std::uint64_t trials = 50000;
    std::uint64_t seed = 1;
    std::string score = "verify";
    std::string key_mode = "independent";
    unsigned threads = 0;
};

int cmd_attack(const std::string& fixture, const std::string& cls_name, const RunConfig& rc, const std::string& policy,
               const GuessOptions& g, const std::string& report_path, const std::string& payload_path,
               std::ostream& out) {
    json report{{"fixture", fixture}, {"class", cls_name}, {"hcic", rc.hcic_enabled}};
    int code = kExitOk;
    if (cls_name == "guess") {
        attacks::MonteCarloConfig c;
        c.params = preset(rc);
        c.x = g.x;
        c.n = g.n;
        c.trials = g.trials;
        c.seed = g.seed;
        c.threads = g.threads;
        c.score = g.score == "exact" ? attacks::ScoreMode::ExactGuess : attacks::ScoreMode::Verify;
        c.keys = g.key_mode == "fixed" ? attacks::KeyMode::Fixed : attacks::KeyMode::Independent;
        auto r = attacks::ehd_guess_montecarlo(c);
        report.update({{"ehd_preset", rc.ehd_preset},
                       {"x", c.x},
                       {"n", c.n},
                       {"score", g.score},
                       {"key_mode", g.key_mode},
                       {"trials", r.trials},
                       {"successes", r.successes},
                       {"rate", r.rate},
                       {"expected", r.expected},
                       {"sigma", r.sigma},
                       {"z", r.z()},
                       {"ci95", {r.ci_low, r.ci_high}}});
    } else {
        const auto& f = fixtures::get(fixture);
        auto cls = fixtures::attack_class_from_string(cls_name);
        if (!cls) throw CLI::ValidationError("--class", "unknown class " + cls_name);
        if (!f.attack || *f.attack != *cls)
            throw CliError(fmt::format("fixture {} does not carry a {} attack", fixture, cls_name));
        attacks::AttackOutcome o;
        if (*cls == fixtures::AttackClass::Ffr) {
            if (rc.hcic_enabled) {
                o = attacks::run_ffr_fixture(f, rc.puf_seed, rc.load_nonce, preset(rc), rc.max_steps);
            } else {
                auto img = fixtures::assemble_fixture(f);
                attacks::Recorder rec;
                attacks::FfrOptions fo;
                fo.max_steps = rc.max_steps;
                fo.replay_return = img.require_symbol("after_gate");
                o = attacks::full_function_reuse_attack(img, cpu::HcicConfig::disabled(), rec, f.vuln,
                                                        attacks::resolve_goal(f, img), fo);
            }
        } else {
            attacks::DifferentialOptions d;
            d.puf_seed = rc.puf_seed;
            d.load_nonce = rc.load_nonce;
            d.params = preset(rc);
            d.max_steps = rc.max_steps;
            d.policy = policy == "replay"  ? attacks::EhdPolicy::Replay
                       : policy == "guess" ? attacks::EhdPolicy::Guess
                                           : attacks::EhdPolicy::Blind;
            auto delivered = std::make_shared<std::vector<std::uint8_t>>();
            o = attacks::attack_fixture(f, rc.hcic_enabled, d, delivered);
            report["policy"] = rc.hcic_enabled ? policy : "none";
            report["payload_bytes"] = delivered->size();
            if (!payload_path.empty())
                write_text(payload_path, std::string(delivered->begin(), delivered->end()));
        }
        report.update(outcome_to_json(o));
        code = exit_code_for(o.terminal);
    }
    if (!report_path.empty()) write_text(report_path, report.dump(2) + "\n");
    out << report.dump() << "\n";
    return code;
}

json gadget_counts_json(const metrics::GadgetCounts& c) {
    return {{"total", c.total},
            {"total_ret", c.total_ret},
            {"total_jmp", c.total_jmp},
            {"allowed", c.allowed()},
            {"allowed_ret", c.allowed_ret},
            {"allowed_jmp", c.allowed_jmp},
            {"elimination_rate", c.elimination_rate()},
            {"ret_elimination_rate", c.ret_elimination_rate()}};
}

struct ScanResult {
    std::vector<metrics::Gadget> gadgets;
    metrics::GadgetCounts counts;
};

// Gadgets of the program file's plaintext view; allowed counts use the
// file's encryption sites when it is hardened.
ScanResult scan_file(const ImageFile& f, unsigned max_len, bool hcic, const ehd::EhdParams& params) {
    auto relinked = loader::relinked_from_image_file(f);
    ScanResult r;
    r.gadgets = metrics::scan_gadgets(f.image, max_len);
    const auto sites = metrics::return_sites(f.image);
    const std::set<Address> none;
    r.counts = metrics::allowed_gadgets(r.gadgets, hcic && relinked.has_value(), params, sites,
                                        relinked ? relinked->encryption_sites : none);
    return r;
}

int cmd_scan(const std::string& img_path, unsigned max_len, bool as_json, bool hcic, const std::string& preset_name,
             std::ostream& out) {
    auto f = load_any(img_path);
    auto r = scan_file(f, max_len, hcic, *ehd::preset_by_name(preset_name));
    if (as_json) {
        json gs = json::array();
        for (const auto& g : r.gadgets) {
            json insns = json::array();
            for (const auto& d : g.instructions) insns.push_back(isa::format(d.insn, d.addr));
            gs.push_back({{"entry", hex(g.entry)},
                          {"aligned", g.aligned},
                          {"terminator", metrics::to_string(g.terminator)},
                          {"instructions", insns}});
        }
        json j{{"max_len", max_len}, {"hardened", loader::relinked_from_image_file(f).has_value()},
               {"counts", gadget_counts_json(r.counts)}, {"gadgets", gs}};
        out << j.dump(2) << "\n";
        return kExitOk;
    }
    for (const auto& g : r.gadgets) {
        out << hex(g.entry) << (g.aligned ? "  " : " *");
        for (std::size_t i = 0; i < g.instructions.size(); ++i)
            out << (i ? " ; " : " ") << isa::format(g.instructions[i].insn, g.instructions[i].addr);
        out << "\n";
    }
    out << fmt::format("{} gadgets ({} ret, {} jmp/call), {} allowed; * = misaligned\n", r.counts.total,
                       r.counts.total_ret, r.counts.total_jmp, r.counts.allowed());
    return kExitOk;
}

cpu::Outcome outcome_from_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CliError("cannot open " + path);
    std::string line, last;
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    auto j = json::parse(last);
    if (j.value("type", "") != "summary") throw CliError(path + " does not end with a summary record");
    cpu::Outcome o;
    const auto& t = j.at("terminal");
    const auto kind = t.at("kind").get<std::string>();
    if (kind == "exit") o.terminal = cpu::ExitStatus{t.at("code").get<std::uint32_t>()};
    else if (kind == "timeout") o.terminal = cpu::Timeout{};
    else if (kind == "alarm") o.terminal = cpu::CraAlarm{};
    else o.terminal = cpu::Fault{};
    const auto& c = j.at("counters");
    o.counters.instructions = c.at("instructions");
    o.counters.cycles = c.at("cycles");
    o.counters.hcic_extra_cycles = c.at("hcic_extra_cycles");
    o.counters.calls = c.at("calls");
    o.counters.rets = c.at("rets");
    o.counters.decrypted_fetches = c.at("decrypted_fetches");
    o.counters.key_updates = c.at("key_updates");
    return o;
}

int cmd_report(const std::string& orig_path, const std::string& hard_path, const std::string& trace_path,
               const std::string& targets_path, const RunConfig& rc, const std::vector<std::string>& input_files,
               std::ostream& out, std::ostream& err) {
    auto orig = load_any(orig_path);
    auto hard = load_any(hard_path);
    auto relinked = loader::relinked_from_image_file(hard);
    if (!relinked) throw CliError(hard_path + " carries no loader metadata");
    std::vector<std::uint8_t> input;
    for (const auto& p : input_files) {
        auto b = read_bytes(p);
        input.insert(input.end(), b.begin(), b.end());
    }
    auto run = [&](const BinaryImage& img, const cpu::HcicConfig& cfg) {
        cpu::MachineOptions o;
        o.input = cpu::stream_input(input);
        return cpu::run_image(img, cfg, rc.max_steps, std::move(o));
    };
    const auto base = run(orig.image, cpu::HcicConfig::disabled());
    cpu::Outcome hrun;
    if (!trace_path.empty()) {
        hrun = outcome_from_trace(trace_path);
    } else {
        RunConfig on = rc;
        on.hcic_enabled = true;
        const auto cfg = on.hcic_config();
        hrun = run(load_for_run(hard, cfg, err), cfg);
    }
    auto m = metrics::overhead_report(orig.image, relinked->size_overhead_bytes, base, hrun);

    const auto params = preset(rc);
    auto hs = scan_file(hard, 5, true, params);
    auto os = scan_file(orig, 5, false, params);
    loader::TargetSet targets = targets_path.empty()
                                    ? loader::profile_targets(orig.image, {input}, rc.max_steps).targets
                                    : read_targets(targets_path);
    auto a = metrics::air(orig.image, targets);

    json j{{"binary_size_overhead", m.binary_size_overhead},
           {"runtime_overhead", m.runtime_overhead},
           {"runtime_overhead_with_trampolines", m.runtime_overhead_with_trampolines},
           {"base_cycles", m.base_cycles},
           {"hcic_cycles", m.hcic_cycles},
           {"hcic_extra_cycles", m.hcic_extra_cycles},
           {"size_overhead_bytes", m.size_overhead_bytes},
           {"original_code_bytes", m.original_code_size},
           {"gadgets_original", gadget_counts_json(os.counts)},
           {"gadgets_hardened", gadget_counts_json(hs.counts)},
           {"air",
            {{"value", a.value()},
             {"closed_form", rational_text(a.closed_form)},
             {"per_insn", rational_text(a.per_insn)},
             {"per_insn_flat", rational_text(a.per_insn_flat)},
             {"classes", a.classes},
             {"control_flow_insns", a.control_flow_insns},
             {"vacuous", a.vacuous}}}};
    out << j.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"HCIC toolchain: assemble, profile, harden, run, attack, scan, report"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 normal exit, 2 CRA alarm, 3 fault, 4 timeout (step budget), 1 other errors, 64 usage.");

    // assemble
    std::string src, out_path;
    bool listing = false;
    auto* a_asm = app.add_subcommand("assemble", "assemble a source file into an image");
    a_asm->add_option("source", src, "assembly source")->required()->check(CLI::ExistingFile);
    a_asm->add_option("-o,--output", out_path, "image file to write")->required();
    a_asm->add_flag("--listing", listing, "print the disassembly");

    // profile
    std::string img_path, inputs_dir, targets_path;
    std::vector<std::string> input_files;
    std::uint64_t max_steps = 1000000;
    auto* a_prof = app.add_subcommand("profile", "collect call/jmp targets by running the plain emulator");
    a_prof->add_option("image", img_path, "image or .s source")->required()->check(CLI::ExistingFile);
    a_prof->add_option("--inputs", inputs_dir, "directory of input files, one run each")->check(CLI::ExistingDirectory);
    a_prof->add_option("--input-file", input_files, "input file, one run each")->check(CLI::ExistingFile);
    a_prof->add_option("--max-steps", max_steps, "instruction budget per run")->capture_default_str();
    a_prof->add_option("-o,--output", out_path, "write the target set here instead of stdout");

    // harden
    auto* a_hard = app.add_subcommand("harden", "insert trampolines and record encryption sites");
    a_hard->add_option("image", img_path, "image or .s source")->required()->check(CLI::ExistingFile);
    a_hard->add_option("--targets", targets_path, "target set from `profile` (default: profile now)")
        ->check(CLI::ExistingFile);
    a_hard->add_option("--inputs", inputs_dir, "profiling inputs when --targets is absent")
        ->check(CLI::ExistingDirectory);
    a_hard->add_option("--input-file", input_files, "profiling input when --targets is absent")
        ->check(CLI::ExistingFile);
    a_hard->add_option("--max-steps", max_steps, "instruction budget per profiling run");
    a_hard->add_option("-o,--output", out_path, "hardened image file")->required();

    // run
    RunConfig rc;
    std::string report_path;
    auto* a_run = app.add_subcommand("run", "execute an image");
    a_run->add_option("image", img_path, "image or .s source")->required()->check(CLI::ExistingFile);
    add_run_config(a_run, rc);
    a_run->add_option("--trace", rc.trace_path, "write one JSON object per event (JSONL)");
    a_run->add_option("--input-file", input_files, "bytes served to read_input")->check(CLI::ExistingFile);
    a_run->add_option("--report", report_path, "write the run summary as JSON");

    // attack
    std::string fixture, cls_name, policy = "blind", payload_path;
    GuessOptions g;
    auto* a_att = app.add_subcommand("attack", "mount a bundled attack");
    a_att->add_option("fixture", fixture, "fixture name (ignored for --class guess)");
    a_att->add_option("--class", cls_name, "attack class")
        ->required()
        ->check(CLI::IsMember({"smash", "rop", "jop", "ffr", "guess"}));
    add_run_config(a_att, rc);
    a_att->add_option("--policy", policy, "EHD words written under HCIC")
        ->check(CLI::IsMember({"blind", "replay", "guess"}))
        ->capture_default_str();
    a_att->add_option("--report", report_path, "write the attack report as JSON");
    a_att->add_option("--payload-out", payload_path, "save the delivered overflow bytes");
    a_att->add_option("--x", g.x, "guess: Hamming distance between R_i and R_j")->capture_default_str();
    a_att->add_option("--n", g.n, "guess: chain length")->capture_default_str();
    a_att->add_option("--trials", g.trials, "guess: number of trials")->capture_default_str();
    a_att->add_option("--seed", g.seed, "guess: root seed")->capture_default_str();
    a_att->add_option("--score", g.score, "guess: success criterion")
        ->check(CLI::IsMember({"verify", "exact"}))
        ->capture_default_str();
    a_att->add_option("--key-mode", g.key_mode, "guess: key per hop or per trial")
        ->check(CLI::IsMember({"independent", "fixed"}))
        ->capture_default_str();
    a_att->add_option("--threads", g.threads, "guess: worker threads (0 = all cores)");

    // scan
    unsigned max_len = 5;
    bool as_json = false;
    auto* a_scan = app.add_subcommand("scan", "list ROP/JOP gadgets");
    a_scan->add_option("image", img_path, "image or .s source")->required()->check(CLI::ExistingFile);
    a_scan->add_option("--max-len", max_len, "maximum gadget length")->check(CLI::Range(1, 10))->capture_default_str();
    a_scan->add_flag("--json", as_json, "JSON output");
    add_run_config(a_scan, rc);

    // report
    std::string orig_path, hard_path, trace_in;
    auto* a_rep = app.add_subcommand("report", "overhead, gadget and AIR metrics for a hardened image");
    a_rep->add_option("--orig", orig_path, "original image")->required()->check(CLI::ExistingFile);
    a_rep->add_option("--hard", hard_path, "hardened image")->required()->check(CLI::ExistingFile);
    a_rep->add_option("--trace", trace_in, "trace of the hardened run (from `run --trace`) instead of re-running")
        ->check(CLI::ExistingFile);
    a_rep->add_option("--targets", targets_path, "target set for AIR (default: profile the original)")
        ->check(CLI::ExistingFile);
    a_rep->add_option("--input-file", input_files, "program input")->check(CLI::ExistingFile);
    add_run_config(a_rep, rc);

    std::vector<std::string> argv_store{"hcic"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        err << "run with --help for usage\n";
        return kExitUsage;
    }

    try {
        if (*a_asm) return cmd_assemble(src, out_path, listing, out);
        if (*a_prof) return cmd_profile(img_path, inputs_dir, input_files, max_steps, out_path, out, err);
        if (*a_hard) return cmd_harden(img_path, targets_path, inputs_dir, input_files, max_steps, out_path, out);
        if (*a_run) return cmd_run(img_path, rc, input_files, report_path, out, err);
        if (*a_att) {
            if (cls_name != "guess" && fixture.empty()) throw CLI::ValidationError("fixture", "required");
            return cmd_attack(fixture, cls_name, rc, policy, g, report_path, payload_path, out);
        }
        if (*a_scan) return cmd_scan(img_path, max_len, as_json, rc.hcic_enabled, rc.ehd_preset, out);
        if (*a_rep) return cmd_report(orig_path, hard_path, trace_in, targets_path, rc, input_files, out, err);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}

}  // namespace hcic::cli

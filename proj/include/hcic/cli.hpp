#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcic/cpu.hpp"

namespace hcic::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitAlarm = 2;
inline constexpr int kExitFault = 3;
inline constexpr int kExitTimeout = 4;
inline constexpr int kExitUsage = 64;

/// Everything besides the image and the input bytes that decides a run.
struct RunConfig {
    std::uint64_t puf_seed = 1;
    double puf_noise = 0.0;
    std::uint64_t load_nonce = 1;
    std::string ehd_preset = "paper32";
    std::uint64_t max_steps = 1000000;
    std::string trace_path;  // empty: no trace
    bool hcic_enabled = true;

    cpu::HcicConfig hcic_config() const;
};

int exit_code_for(const cpu::Terminal& t);

/// One trace line. Common fields: seq, type, ctx, pc. See docs/trace.md.
nlohmann::json event_to_json(const cpu::Event& ev);
nlohmann::json terminal_to_json(const cpu::Terminal& t);
nlohmann::json counters_to_json(const cpu::Counters& c);
/// Final trace line: terminal, counters, privileged markers, output.
nlohmann::json summary_to_json(const cpu::Outcome& out);

/// Runs the command line `args` (without the program name). Program
/// output of `run` goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hcic::cli

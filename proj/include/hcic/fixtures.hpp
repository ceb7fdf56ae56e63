#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hcic/image.hpp"

namespace hcic::fixtures {

enum class Kind : std::uint8_t { Benign, Attack };

enum class AttackClass : std::uint8_t { Smash, Rop, Jop, Ffr };

std::string_view to_string(AttackClass c);
std::optional<AttackClass> attack_class_from_string(std::string_view s);

/// Where the overflow happens: the `read_input` call inside the vulnerable
/// function writes into a buffer of `buffer_size` bytes at the bottom of the
/// frame. For the JOP fixture a handler pointer follows the buffer at
/// `handler_offset`.
struct VulnSpec {
    std::uint32_t buffer_size = 16;
    std::optional<std::uint32_t> handler_offset;
};

struct Fixture {
    std::string name;
    std::string file;  // relative to fixture_dir()
    std::string description;
    Kind kind = Kind::Benign;
    std::optional<AttackClass> attack;
    /// Inputs used for target profiling; each one is a legitimate run.
    std::vector<std::vector<std::uint8_t>> profile_inputs{{}};
    VulnSpec vuln;
    /// Required PRIVILEGED arguments (r0, r1, ...), as numbers or symbol
    /// names. Empty: any PRIVILEGED call counts.
    std::vector<std::string> goal_args;
};

/// $HCIC_FIXTURE_DIR if set, else the source tree's fixtures directory.
std::filesystem::path fixture_dir();

const std::vector<Fixture>& catalog();
std::vector<const Fixture*> benign();
std::vector<const Fixture*> attacks();

/// Throws std::out_of_range for an unknown name.
const Fixture& get(std::string_view name);

std::string load_source(const Fixture& f);
BinaryImage assemble_fixture(const Fixture& f);
BinaryImage assemble_fixture(std::string_view name);

}  // namespace hcic::fixtures

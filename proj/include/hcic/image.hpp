#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcic/isa.hpp"

namespace hcic {

using isa::Address;
using isa::Instruction;

inline constexpr Address kDefaultCodeBase = 0x08048000;
inline constexpr Address kDefaultDataBase = 0x08060000;
inline constexpr Address kDefaultStackBase = 0xBFFF0000;
inline constexpr Address kDefaultStackLimit = 0xC0000000;

struct Region {
    Address base = 0;
    std::vector<std::uint8_t> bytes;

    Address end() const { return base + static_cast<Address>(bytes.size()); }
    bool contains(Address a) const { return a >= base && a < end(); }
    bool contains(Address a, std::uint32_t len) const {
        return a >= base && static_cast<std::uint64_t>(a) + len <= end();
    }

    friend bool operator==(const Region&, const Region&) = default;
};

/// Half-open [base, limit).
struct StackRegion {
    Address base = kDefaultStackBase;
    Address limit = kDefaultStackLimit;

    bool contains(Address a) const { return a >= base && a < limit; }
    friend bool operator==(const StackRegion&, const StackRegion&) = default;
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BinaryImage {
    Address entry_point = kDefaultCodeBase;
    Region code{kDefaultCodeBase, {}};
    Region data{kDefaultDataBase, {}};
    StackRegion stack;
    std::map<std::string, Address> symbols;
    /// Locations (in code or data) of 32-bit little-endian fields holding an
    /// absolute address; rewritten when code is relocated.
    std::vector<Address> relocations;
    /// Additional execution contexts, started round-robin after the entry.
    std::vector<Address> thread_entries;

    /// Throws ImageError if regions overlap or the entry lies outside code.
    void validate() const;

    std::optional<Address> symbol(const std::string& name) const;
    /// Like symbol(), but throws ImageError when missing.
    Address require_symbol(const std::string& name) const;

    friend bool operator==(const BinaryImage&, const BinaryImage&) = default;
};

/// Decodes the instruction at `addr`. Never reads past the code region;
/// nullopt means invalid opcode (including addresses outside code).
std::optional<Instruction> decode_at(const BinaryImage& image, Address addr);

struct DecodedInstruction {
    Address addr;
    Instruction insn;
};

/// Decodes the code region instruction by instruction from its base.
/// Throws ImageError if an undecodable byte is hit.
std::vector<DecodedInstruction> linear_sweep(const BinaryImage& image);

std::uint32_t read_le32(std::span<const std::uint8_t> bytes, std::size_t offset);
void write_le32(std::span<std::uint8_t> bytes, std::size_t offset, std::uint32_t value);

// ---------------------------------------------------------------------------
// Image file format (little-endian throughout):
//
//   "HCIC"  u8 version (=1)
//   repeated section: u8 tag, u32 payload length, payload
//     0x01 code      u32 base, bytes
//     0x02 data      u32 base, bytes
//     0x03 stack     u32 base, u32 limit
//     0x04 entry     u32 address
//     0x05 symbols   u32 count, { u16 name length, name bytes, u32 address }
//     0x06 relocs    u32 count, { u32 address }
//     0x07 threads   u32 count, { u32 address }
//     0x10..0xFF     extension sections, carried through opaquely
//
// Sections 0x01-0x04 are required. Unknown tags below 0x10 are rejected.
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kImageVersion = 1;
inline constexpr std::uint8_t kFirstExtensionTag = 0x10;

struct ImageFile {
    BinaryImage image;
    std::map<std::uint8_t, std::vector<std::uint8_t>> extensions;
};

std::vector<std::uint8_t> serialize(const ImageFile& file);
ImageFile deserialize(std::span<const std::uint8_t> bytes);

void save_image(const std::filesystem::path& path, const ImageFile& file);
ImageFile load_image(const std::filesystem::path& path);

}  // namespace hcic

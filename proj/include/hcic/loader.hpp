#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcic/image.hpp"

namespace hcic::loader {

/// Control-transfer targets of a program, in the original image's address
/// space.
struct TargetSet {
    std::set<Address> call_targets;
    std::set<Address> jmp_targets;
    /// Targets that are also entered without a taken jmp/call: by falling
    /// through from the previous instruction, or as a context entry.
    std::set<Address> fallthrough_conflicts;
    /// Targets that are also ret destinations.
    std::set<Address> return_site_conflicts;

    std::set<Address> all_targets() const;
    /// Addresses that need a trampoline (union of both conflict kinds).
    std::set<Address> conflicts() const;

    friend bool operator==(const TargetSet&, const TargetSet&) = default;
};

nlohmann::json to_json(const TargetSet& t);
TargetSet target_set_from_json(const nlohmann::json& j);

struct ProfileReport {
    TargetSet targets;
    std::size_t runs_used = 0;
    /// One line per input whose run did not exit normally; such runs
    /// contribute nothing.
    std::vector<std::string> skipped;
};

/// Direct branch targets, classified against the canonical linear sweep.
TargetSet static_targets(const BinaryImage& image);

/// Runs the plain (unprotected) emulator once per input and collects every
/// taken call/jmp destination, merged with the static harvest. Conflicts
/// are classified both from the observed traces and from static
/// predecessors.
ProfileReport profile_targets(const BinaryImage& image, const std::vector<std::vector<std::uint8_t>>& inputs,
                              std::uint64_t max_steps);

class RelocationOverflow : public ImageError {
public:
    using ImageError::ImageError;
};

/// Image with trampolines inserted and all references relinked, before
/// encryption. Key-independent.
struct RelinkedImage {
    BinaryImage image;
    /// Addresses (in `image`) of the first instruction of every call/jmp
    /// target; these get encrypted.
    std::set<Address> encryption_sites;
    /// Original conflict address -> address of the inserted jmp.
    std::map<Address, Address> trampoline_map;
    /// Original instruction address -> its address after relinking.
    std::map<Address, Address> address_map;
    std::uint32_t size_overhead_bytes = 0;

    friend bool operator==(const RelinkedImage&, const RelinkedImage&) = default;
};

struct HardenedImage {
    BinaryImage image;
    std::set<Address> encrypted_addrs;
    std::map<Address, Address> trampoline_map;
    std::map<Address, Address> address_map;
    std::uint32_t size_overhead_bytes = 0;
    std::vector<std::string> warnings;
};

/// Inserts a direct `jmp` in front of every conflict address so that the
/// instruction there is reached only by a taken jmp, and rewrites branch
/// displacements, relocated pointers, symbols, entry and thread entries.
///
/// References to a target (branches, relocated pointers, symbols) are
/// redirected to the instruction itself; the entry point, thread entries,
/// fallthrough and return paths reach the trampoline instead. Throws
/// RelocationOverflow when a rel16 branch no longer reaches, ImageError
/// when a target is not an instruction boundary.
RelinkedImage relink(const BinaryImage& image, const TargetSet& targets);

/// XORs the first byte of every encryption site with key_1.
HardenedImage encrypt(const RelinkedImage& relinked, std::uint8_t key_1);

/// relink followed by encrypt.
HardenedImage harden(const BinaryImage& image, const TargetSet& targets, std::uint8_t key_1);

/// Undoes the XOR step only; trampolines stay.
BinaryImage decrypt_image_for_audit(const HardenedImage& h, std::uint8_t key_1);

/// Extension tag carrying relink metadata in an image file.
inline constexpr std::uint8_t kLoaderMetadataTag = 0x10;

/// A relinked image is stored unencrypted with its site list; the XOR step
/// runs at load time with keys drawn for that load.
ImageFile to_image_file(const RelinkedImage& r);
/// Returns nullopt when the file carries no loader metadata.
std::optional<RelinkedImage> relinked_from_image_file(const ImageFile& f);

}  // namespace hcic::loader

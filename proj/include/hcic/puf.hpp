#pragma once

#include <cstdint>
#include <random>

namespace hcic::puf {

/// Stand-in for a silicon PUF: a keyed 64->32 bit mixer per device, with
/// optional i.i.d. per-bit response noise drawn from a seeded stream.
class PufDevice {
public:
    PufDevice(std::uint64_t device_seed, double noise_rate = 0.0, std::uint64_t rng_seed = 0);

    std::uint64_t device_seed() const { return device_seed_; }
    double noise_rate() const { return noise_rate_; }

    /// Noise-free response; a pure function of (device_seed, challenge).
    std::uint32_t ideal_response(std::uint64_t challenge) const;

    /// One evaluation: the ideal response with each bit flipped with
    /// probability noise_rate. Advances the noise stream.
    std::uint32_t response(std::uint64_t challenge);

private:
    std::uint64_t device_seed_;
    double noise_rate_;
    std::mt19937_64 noise_;
};

inline constexpr unsigned kKey1Bits = 8;
inline constexpr unsigned kKey2Bits = 32;

struct KeyMaterial {
    std::uint8_t key_1 = 0;
    std::uint32_t key_2 = 0;
    unsigned key_len_1 = kKey1Bits;
    unsigned key_len_2 = kKey2Bits;

    friend bool operator==(const KeyMaterial&, const KeyMaterial&) = default;
};

/// Challenge derived from a load nonce and a key slot index.
std::uint64_t key_challenge(std::uint64_t load_nonce, std::uint64_t slot);

/// key_2 from slot 2, key_1 from the low byte of slot 1. A zero key_1 would
/// make instruction encryption the identity, so further odd slots (3, 5, ...)
/// are challenged until a nonzero byte comes back.
KeyMaterial generate_keys(PufDevice& device, std::uint64_t load_nonce);

/// 64-bit finalizer used as the device mixing function.
std::uint64_t mix64(std::uint64_t x);

}  // namespace hcic::puf

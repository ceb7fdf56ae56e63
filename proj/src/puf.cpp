#include "hcic/puf.hpp"

#include <stdexcept>

namespace hcic::puf {

// murmur3 fmix64.
std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

PufDevice::PufDevice(std::uint64_t device_seed, double noise_rate, std::uint64_t rng_seed)
    : device_seed_(device_seed), noise_rate_(noise_rate), noise_(rng_seed) {
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw std::invalid_argument("noise_rate must be in [0,1]");
}

std::uint32_t PufDevice::ideal_response(std::uint64_t challenge) const {
    std::uint64_t h = mix64(mix64(challenge ^ 0x9e3779b97f4a7c15ULL) ^ mix64(device_seed_));
    return static_cast<std::uint32_t>(h >> 32);
}

std::uint32_t PufDevice::response(std::uint64_t challenge) {
    std::uint32_t r = ideal_response(challenge);
    if (noise_rate_ <= 0.0) return r;
    std::bernoulli_distribution flip(noise_rate_);
    for (unsigned bit = 0; bit < 32; ++bit)
        if (flip(noise_)) r ^= 1u << bit;
    return r;
}

std::uint64_t key_challenge(std::uint64_t load_nonce, std::uint64_t slot) {
    return mix64(load_nonce * 0x100000001b3ULL + slot);
}

KeyMaterial generate_keys(PufDevice& device, std::uint64_t load_nonce) {
    KeyMaterial km;
    km.key_2 = device.response(key_challenge(load_nonce, 2));
    for (std::uint64_t slot = 1;; slot += 2) {
        km.key_1 = static_cast<std::uint8_t>(device.response(key_challenge(load_nonce, slot)));
        if (km.key_1 != 0) break;
    }
    return km;
}

}  // namespace hcic::puf

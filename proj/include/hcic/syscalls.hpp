#pragma once

#include <cstdint>

namespace hcic {

/// Vectors accepted by `int imm8`.
///   exit       r0 = exit code; terminates every context
///   read_input r0 = destination, r1 = maximum bytes; r0 <- bytes copied
///   write      r0 = source, r1 = length; appends to the output log
///   privileged records a marker with r0/r1; the goal of every attack fixture
enum class Syscall : std::uint8_t {
    Exit = 0x01,
    ReadInput = 0x03,
    Write = 0x04,
    Privileged = 0x80,
};

}  // namespace hcic

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "hcic/image.hpp"

namespace hcic {

/// Syntax or resolution error, tagged with a 1-based source line.
class AssemblyError : public std::runtime_error {
public:
    AssemblyError(int line, const std::string& what);
    int line() const { return line_; }

private:
    int line_;
};

struct AssemblerOptions {
    Address code_base = kDefaultCodeBase;
    Address data_base = kDefaultDataBase;
    StackRegion stack{};
};

/// Assembles source text into an image.
///
/// Grammar, one statement per line, `;` starts a comment:
///
///     label:                      define a label at the current location
///     .text / .data               switch section (default .text)
///     .word v[, v...]             32-bit words (numbers or labels), data only
///     .ascii "text"               bytes, C escapes \n \t \0 \\ \", data only
///     .space n                    n zero bytes, data only
///     .org addr                   pad the current section up to addr
///                                 (nop in text, zero in data)
///     .entry label                program entry (default: `main`, else code base)
///     .thread label               start an extra execution context at label
///
///     mnemonic operands           see isa.hpp; registers r0-r7, sp = r6;
///                                 numbers in decimal or 0x hex;
///                                 memory operands [r], [r+n], [r-n];
///                                 branch targets are labels or absolute
///                                 addresses
///
/// Labels used as `mov` immediates or `.word` values are recorded as
/// relocations.
BinaryImage assemble(std::string_view source, const AssemblerOptions& options = {});

/// Canonical listing of the code region, one instruction per line, in a
/// form that `assemble` accepts back.
std::string disassemble(const BinaryImage& image);

}  // namespace hcic

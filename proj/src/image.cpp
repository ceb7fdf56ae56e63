#include "hcic/image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace hcic {

namespace {

bool overlaps(Address a0, Address a1, Address b0, Address b1) { return a0 < b1 && b0 < a1; }

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(std::span<const std::uint8_t> b) {
        out_.reserve(out_.size() + b.size());
        out_.insert(out_.end(), b.begin(), b.end());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        auto v = read_le32(in_, pos_);
        pos_ += 4;
        return v;
    }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw ImageError("truncated image file");
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

void section(Writer& w, std::uint8_t tag, const std::vector<std::uint8_t>& payload) {
    w.u8(tag);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.bytes(payload);
}

std::vector<std::uint8_t> address_list(const std::vector<Address>& addrs) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(addrs.size()));
    for (Address a : addrs) w.u32(a);
    return w.take();
}

std::vector<Address> read_address_list(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    std::uint32_t n = r.u32();
    std::vector<Address> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.u32());
    if (!r.done()) throw ImageError("trailing bytes in address list");
    return out;
}

}  // namespace

void BinaryImage::validate() const {
    if (stack.limit <= stack.base) throw ImageError("empty stack region");
    if (overlaps(code.base, code.end(), data.base, data.end()))
        throw ImageError("code and data regions overlap");
    if (overlaps(code.base, code.end(), stack.base, stack.limit))
        throw ImageError("code and stack regions overlap");
    if (overlaps(data.base, data.end(), stack.base, stack.limit))
        throw ImageError("data and stack regions overlap");
    if (!code.contains(entry_point)) throw ImageError(fmt::format("entry point {:#x} outside code", entry_point));
    for (Address t : thread_entries)
        if (!code.contains(t)) throw ImageError(fmt::format("thread entry {:#x} outside code", t));
}

std::optional<Address> BinaryImage::symbol(const std::string& name) const {
    auto it = symbols.find(name);
    if (it == symbols.end()) return std::nullopt;
    return it->second;
}

Address BinaryImage::require_symbol(const std::string& name) const {
    auto a = symbol(name);
    if (!a) throw ImageError("missing symbol: " + name);
    return *a;
}

std::optional<Instruction> decode_at(const BinaryImage& image, Address addr) {
    if (!image.code.contains(addr)) return std::nullopt;
    std::span<const std::uint8_t> bytes(image.code.bytes);
    return isa::decode(bytes.subspan(addr - image.code.base));
}

std::vector<DecodedInstruction> linear_sweep(const BinaryImage& image) {
    std::vector<DecodedInstruction> out;
    Address pc = image.code.base;
    while (pc < image.code.end()) {
        auto insn = decode_at(image, pc);
        if (!insn) throw ImageError(fmt::format("undecodable byte at {:#x}", pc));
        out.push_back({pc, *insn});
        pc += insn->length;
    }
    return out;
}

std::uint32_t read_le32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return static_cast<std::uint32_t>(bytes[offset]) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 3]) << 24);
}

void write_le32(std::span<std::uint8_t> bytes, std::size_t offset, std::uint32_t value) {
    for (int i = 0; i < 4; ++i) bytes[offset + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::vector<std::uint8_t> serialize(const ImageFile& file) {
    const BinaryImage& img = file.image;
    Writer w;
    w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("HCIC"), 4));
    w.u8(kImageVersion);

    auto region = [](const Region& r) {
        Writer s;
        s.u32(r.base);
        s.bytes(r.bytes);
        return s.take();
    };
    section(w, 0x01, region(img.code));
    section(w, 0x02, region(img.data));
    {
        Writer s;
        s.u32(img.stack.base);
        s.u32(img.stack.limit);
        section(w, 0x03, s.take());
    }
    {
        Writer s;
        s.u32(img.entry_point);
        section(w, 0x04, s.take());
    }
    {
        Writer s;
        s.u32(static_cast<std::uint32_t>(img.symbols.size()));
        for (const auto& [name, addr] : img.symbols) {
            if (name.size() > 0xFFFF) throw ImageError("symbol name too long");
            s.u16(static_cast<std::uint16_t>(name.size()));
            s.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()));
            s.u32(addr);
        }
        section(w, 0x05, s.take());
    }
    section(w, 0x06, address_list(img.relocations));
    section(w, 0x07, address_list(img.thread_entries));
    for (const auto& [tag, payload] : file.extensions) {
        if (tag < kFirstExtensionTag) throw ImageError("extension tag collides with core sections");
        section(w, tag, payload);
    }
    return w.take();
}

ImageFile deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.bytes(4);
    if (std::memcmp(magic.data(), "HCIC", 4) != 0) throw ImageError("bad magic");
    if (r.u8() != kImageVersion) throw ImageError("unsupported image version");

    ImageFile file;
    BinaryImage& img = file.image;
    bool seen[8] = {};
    while (!r.done()) {
        std::uint8_t tag = r.u8();
        std::uint32_t len = r.u32();
        Reader s(r.bytes(len));
        if (tag >= kFirstExtensionTag) {
            auto payload = s.bytes(len);
            file.extensions[tag].assign(payload.begin(), payload.end());
            continue;
        }
        if (tag == 0 || tag > 7) throw ImageError(fmt::format("unknown section tag {:#x}", tag));
        if (seen[tag]) throw ImageError(fmt::format("duplicate section tag {:#x}", tag));
        seen[tag] = true;
        switch (tag) {
            case 0x01:
            case 0x02: {
                Region& reg = tag == 0x01 ? img.code : img.data;
                reg.base = s.u32();
                auto b = s.bytes(len - 4);
                reg.bytes.assign(b.begin(), b.end());
                break;
            }
            case 0x03:
                img.stack.base = s.u32();
                img.stack.limit = s.u32();
                break;
            case 0x04:
                img.entry_point = s.u32();
                break;
            case 0x05: {
                std::uint32_t n = s.u32();
                for (std::uint32_t i = 0; i < n; ++i) {
                    std::uint16_t nl = s.u16();
                    auto name = s.bytes(nl);
                    img.symbols[std::string(name.begin(), name.end())] = s.u32();
                }
                break;
            }
            case 0x06:
                img.relocations = read_address_list(s.bytes(len));
                break;
            case 0x07:
                img.thread_entries = read_address_list(s.bytes(len));
                break;
        }
        if (!s.done()) throw ImageError(fmt::format("trailing bytes in section {:#x}", tag));
    }
    for (int t = 1; t <= 4; ++t)
        if (!seen[t]) throw ImageError(fmt::format("missing required section {:#x}", t));
    img.validate();
    return file;
}

void save_image(const std::filesystem::path& path, const ImageFile& file) {
    auto bytes = serialize(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageFile load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace hcic

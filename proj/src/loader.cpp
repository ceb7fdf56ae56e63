#include "hcic/loader.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "hcic/cpu.hpp"

namespace hcic::loader {

using isa::Opcode;
using nlohmann::json;

std::set<Address> TargetSet::all_targets() const {
    std::set<Address> out = call_targets;
    out.insert(jmp_targets.begin(), jmp_targets.end());
    return out;
}

std::set<Address> TargetSet::conflicts() const {
    std::set<Address> out = fallthrough_conflicts;
    out.insert(return_site_conflicts.begin(), return_site_conflicts.end());
    return out;
}

namespace {

json hex_list(const std::set<Address>& s) {
    json arr = json::array();
    for (Address a : s) arr.push_back(fmt::format("{:#010x}", a));
    return arr;
}

std::set<Address> parse_hex_list(const json& j) {
    std::set<Address> out;
    for (const auto& v : j) {
        if (v.is_number_unsigned()) {
            out.insert(v.get<Address>());
            continue;
        }
        auto s = v.get<std::string>();
        std::size_t used = 0;
        unsigned long val = std::stoul(s, &used, 0);
        if (used != s.size() || val > 0xFFFFFFFFul) throw std::invalid_argument("bad address: " + s);
        out.insert(static_cast<Address>(val));
    }
    return out;
}

json hex_map(const std::map<Address, Address>& m) {
    json obj = json::object();
    for (auto [k, v] : m) obj[fmt::format("{:#010x}", k)] = fmt::format("{:#010x}", v);
    return obj;
}

std::map<Address, Address> parse_hex_map(const json& j) {
    std::map<Address, Address> out;
    for (const auto& [k, v] : j.items())
        out[static_cast<Address>(std::stoul(k, nullptr, 0))] = static_cast<Address>(std::stoul(v.get<std::string>(), nullptr, 0));
    return out;
}

}  // namespace

json to_json(const TargetSet& t) {
    return json{{"call_targets", hex_list(t.call_targets)},
                {"jmp_targets", hex_list(t.jmp_targets)},
                {"fallthrough_conflicts", hex_list(t.fallthrough_conflicts)},
                {"return_site_conflicts", hex_list(t.return_site_conflicts)}};
}

TargetSet target_set_from_json(const json& j) {
    TargetSet t;
    auto get = [&](const char* key) { return j.contains(key) ? parse_hex_list(j.at(key)) : std::set<Address>{}; };
    t.call_targets = get("call_targets");
    t.jmp_targets = get("jmp_targets");
    t.fallthrough_conflicts = get("fallthrough_conflicts");
    t.return_site_conflicts = get("return_site_conflicts");
    return t;
}

TargetSet static_targets(const BinaryImage& image) {
    TargetSet t;
    auto sweep = linear_sweep(image);
    for (const auto& d : sweep) {
        if (!isa::is_direct_branch(d.insn.opcode)) continue;
        Address target = isa::branch_target(d.insn, d.addr);
        if (!image.code.contains(target)) continue;
        (d.insn.opcode == Opcode::Call ? t.call_targets : t.jmp_targets).insert(target);
    }
    return t;
}

namespace {

// Adds the conflicts visible from the canonical layout: targets preceded by
// a falling-through instruction or by a call, and targets that are context
// entries.
void classify_static(const BinaryImage& image, TargetSet& t) {
    const auto targets = t.all_targets();
    auto sweep = linear_sweep(image);
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        if (!targets.count(sweep[i].addr)) continue;
        const auto& prev = sweep[i - 1].insn;
        if (isa::is_call(prev.opcode)) t.return_site_conflicts.insert(sweep[i].addr);
        else if (isa::falls_through(prev)) t.fallthrough_conflicts.insert(sweep[i].addr);
    }
    if (targets.count(image.entry_point)) t.fallthrough_conflicts.insert(image.entry_point);
    for (Address a : image.thread_entries)
        if (targets.count(a)) t.fallthrough_conflicts.insert(a);
}

}  // namespace

ProfileReport profile_targets(const BinaryImage& image, const std::vector<std::vector<std::uint8_t>>& inputs,
                              std::uint64_t max_steps) {
    ProfileReport report;
    report.targets = static_targets(image);
    std::set<Address> sequential, returned;

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        TargetSet seen;
        std::set<Address> seq, ret;
        cpu::MachineOptions opts;
        opts.input = cpu::stream_input(inputs[i]);
        opts.observer = [&](const cpu::Event& ev) {
            switch (ev.type) {
                case cpu::EventType::Call: seen.call_targets.insert(ev.target); break;
                case cpu::EventType::Jump: seen.jmp_targets.insert(ev.target); break;
                case cpu::EventType::Fetch:
                    if (ev.entry == cpu::EntryKind::Sequential || ev.entry == cpu::EntryKind::Start) seq.insert(ev.pc);
                    else if (ev.entry == cpu::EntryKind::Return) ret.insert(ev.pc);
                    break;
                default: break;
            }
        };
        auto out = cpu::run_image(image, cpu::HcicConfig::disabled(), max_steps, std::move(opts));
        if (!out.exited()) {
            report.skipped.push_back(fmt::format("input {}: {}", i, cpu::describe(out.terminal)));
            continue;
        }
        report.runs_used++;
        report.targets.call_targets.insert(seen.call_targets.begin(), seen.call_targets.end());
        report.targets.jmp_targets.insert(seen.jmp_targets.begin(), seen.jmp_targets.end());
        sequential.insert(seq.begin(), seq.end());
        returned.insert(ret.begin(), ret.end());
    }

    auto& t = report.targets;
    for (Address a : t.all_targets()) {
        if (sequential.count(a)) t.fallthrough_conflicts.insert(a);
        if (returned.count(a)) t.return_site_conflicts.insert(a);
    }
    classify_static(image, t);
    return report;
}

namespace {

struct Item {
    Address orig = 0;          // original address; for a trampoline, that of the instruction it guards
    bool trampoline = false;
    Instruction insn;
    Address new_addr = 0;
};

}  // namespace

RelinkedImage relink(const BinaryImage& image, const TargetSet& targets) {
    auto sweep = linear_sweep(image);
    const auto conflicts = targets.conflicts();
    const auto all = targets.all_targets();

    std::map<Address, std::size_t> index;  // original address -> item index of the instruction
    for (std::size_t i = 0; i < sweep.size(); ++i) index[sweep[i].addr] = i;
    for (Address a : all)
        if (!index.count(a))
            throw ImageError(fmt::format("target {:#010x} is not an instruction boundary", a));
    for (Address a : conflicts)
        if (!index.count(a))
            throw ImageError(fmt::format("conflict {:#010x} is not an instruction boundary", a));

    std::vector<Item> items;
    items.reserve(sweep.size() + conflicts.size());
    std::map<Address, std::size_t> insn_item, tramp_item;
    for (const auto& d : sweep) {
        if (conflicts.count(d.addr)) {
            tramp_item[d.addr] = items.size();
            items.push_back({d.addr, true, isa::make_branch(Opcode::Jmp, 0), 0});
        }
        insn_item[d.addr] = items.size();
        items.push_back({d.addr, false, d.insn, 0});
    }

    Address at = image.code.base;
    for (auto& it : items) {
        it.new_addr = at;
        at += isa::info(it.insn.opcode).length;
    }
    const Address new_end = at;

    // Reference into original code -> relinked address. Exact instruction
    // starts go to the instruction itself; interior bytes keep their offset.
    auto remap_ref = [&](Address v) -> Address {
        if (v == image.code.end()) return new_end;
        auto ub = insn_item.upper_bound(v);
        if (ub == insn_item.begin()) return v;
        --ub;
        const Item& it = items[ub->second];
        return it.new_addr + (v - it.orig);
    };
    // Entries reached without a taken transfer go through the trampoline.
    auto remap_entry = [&](Address v) -> Address {
        auto t = tramp_item.find(v);
        return t != tramp_item.end() ? items[t->second].new_addr : remap_ref(v);
    };

    RelinkedImage out;
    BinaryImage& img = out.image;
    img = image;
    img.code.bytes.clear();

    for (auto& it : items) {
        Instruction insn = it.insn;
        if (it.trampoline) {
            insn.disp = 0;  // falls onto the guarded instruction
        } else if (isa::is_direct_branch(insn.opcode)) {
            Address target = isa::branch_target(insn, it.orig);
            Address new_target = image.code.contains(target) ? remap_ref(target) : target;
            std::int64_t rel = static_cast<std::int64_t>(new_target) -
                               (static_cast<std::int64_t>(it.new_addr) + isa::info(insn.opcode).length);
            if (rel < -32768 || rel > 32767)
                throw RelocationOverflow(fmt::format("branch at {:#010x} cannot reach {:#010x} after relinking",
                                                     it.new_addr, new_target));
            insn.disp = static_cast<std::int32_t>(rel);
        }
        isa::encode_into(insn, img.code.bytes);
    }

    // Absolute pointers.
    img.relocations.clear();
    for (Address loc : image.relocations) {
        Address new_loc = loc;
        if (image.code.contains(loc)) new_loc = remap_ref(loc);
        img.relocations.push_back(new_loc);
        std::uint32_t value = 0;
        if (image.code.contains(loc, 4)) value = read_le32(image.code.bytes, loc - image.code.base);
        else if (image.data.contains(loc, 4)) value = read_le32(image.data.bytes, loc - image.data.base);
        else throw ImageError(fmt::format("relocation {:#010x} outside code and data", loc));
        if (!(image.code.contains(value) || value == image.code.end())) continue;
        const std::uint32_t new_value = remap_ref(value);
        if (image.code.contains(loc)) write_le32(img.code.bytes, new_loc - img.code.base, new_value);
        else write_le32(img.data.bytes, loc - img.data.base, new_value);
    }

    for (auto& [name, addr] : img.symbols)
        if (image.code.contains(addr) || addr == image.code.end()) addr = remap_ref(addr);
    img.entry_point = remap_entry(image.entry_point);
    for (auto& t : img.thread_entries) t = remap_entry(t);

    for (Address a : all) out.encryption_sites.insert(items[insn_item.at(a)].new_addr);
    for (auto [a, i] : tramp_item) out.trampoline_map[a] = items[i].new_addr;
    for (auto [a, i] : insn_item) out.address_map[a] = items[i].new_addr;
    out.size_overhead_bytes = static_cast<std::uint32_t>(img.code.bytes.size() - image.code.bytes.size());

    try {
        img.validate();
    } catch (const ImageError& e) {
        throw RelocationOverflow(std::string("relinked image invalid: ") + e.what());
    }
    return out;
}

HardenedImage encrypt(const RelinkedImage& r, std::uint8_t key_1) {
    HardenedImage h;
    h.image = r.image;
    h.encrypted_addrs = r.encryption_sites;
    h.trampoline_map = r.trampoline_map;
    h.address_map = r.address_map;
    h.size_overhead_bytes = r.size_overhead_bytes;
    for (Address a : r.encryption_sites) h.image.code.bytes[a - h.image.code.base] ^= key_1;
    if (key_1 == 0) h.warnings.push_back("key_1 is zero: instruction encryption is the identity and gives no JOP protection");
    return h;
}

HardenedImage harden(const BinaryImage& image, const TargetSet& targets, std::uint8_t key_1) {
    return encrypt(relink(image, targets), key_1);
}

BinaryImage decrypt_image_for_audit(const HardenedImage& h, std::uint8_t key_1) {
    BinaryImage img = h.image;
    for (Address a : h.encrypted_addrs) img.code.bytes[a - img.code.base] ^= key_1;
    return img;
}

ImageFile to_image_file(const RelinkedImage& r) {
    json meta{{"encryption_sites", hex_list(r.encryption_sites)},
              {"trampoline_map", hex_map(r.trampoline_map)},
              {"address_map", hex_map(r.address_map)},
              {"size_overhead_bytes", r.size_overhead_bytes}};
    auto text = meta.dump();
    ImageFile f{r.image, {}};
    f.extensions[kLoaderMetadataTag] = std::vector<std::uint8_t>(text.begin(), text.end());
    return f;
}

std::optional<RelinkedImage> relinked_from_image_file(const ImageFile& f) {
    auto it = f.extensions.find(kLoaderMetadataTag);
    if (it == f.extensions.end()) return std::nullopt;
    json meta;
    try {
        meta = json::parse(it->second.begin(), it->second.end());
    } catch (const json::exception& e) {
        throw ImageError(std::string("bad loader metadata: ") + e.what());
    }
    RelinkedImage r;
    r.image = f.image;
    r.encryption_sites = parse_hex_list(meta.at("encryption_sites"));
    r.trampoline_map = parse_hex_map(meta.at("trampoline_map"));
    r.address_map = parse_hex_map(meta.at("address_map"));
    r.size_overhead_bytes = meta.at("size_overhead_bytes").get<std::uint32_t>();
    for (Address a : r.encryption_sites)
        if (!r.image.code.contains(a)) throw ImageError(fmt::format("encryption site {:#010x} outside code", a));
    return r;
}

}  // namespace hcic::loader

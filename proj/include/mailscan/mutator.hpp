#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "asm_parser.hpp"
#include "asm_tables.hpp"
#include "asm_types.hpp"
#include "detail/rng.hpp"
#include "errors.hpp"
#include "eval.hpp"

namespace mailscan {

enum class ObfuscationKind : std::uint8_t {
    NopInsert,
    JunkInsert,
    CallIndirect,
    FuncIndirect,
    RegisterRename,
    BlockReorder,
    GotoHeavy, // deliberately rewrites branch structure
};

inline constexpr std::size_t kObfuscationKindCount = 7;

inline std::string_view obfuscation_kind_name(ObfuscationKind k) {
    switch (k) {
        case ObfuscationKind::NopInsert: return "nop-insert";
        case ObfuscationKind::JunkInsert: return "junk-insert";
        case ObfuscationKind::CallIndirect: return "call-indirect";
        case ObfuscationKind::FuncIndirect: return "func-indirect";
        case ObfuscationKind::RegisterRename: return "register-rename";
        case ObfuscationKind::BlockReorder: return "block-reorder";
        case ObfuscationKind::GotoHeavy: return "goto-heavy";
    }
    return "nop-insert";
}

inline std::optional<ObfuscationKind> obfuscation_kind_from_name(std::string_view s) {
    for (std::size_t i = 0; i < kObfuscationKindCount; ++i) {
        auto k = static_cast<ObfuscationKind>(i);
        if (s == obfuscation_kind_name(k)) return k;
    }
    return std::nullopt;
}

struct MutationResult {
    AsmProgram program;
    // RegisterRename only: original register family -> renamed family.
    std::map<int, int> reg_map;
};

namespace detail {

inline MnemonicClass class_of(const AsmInstruction& insn) {
    const auto& t = mnemonic_table(insn.arch);
    auto it = t.find(insn.mnemonic);
    return it == t.end() ? MnemonicClass::Assign : it->second;
}

inline bool ends_straight_line(const AsmInstruction& insn) {
    switch (class_of(insn)) {
        case MnemonicClass::Jump:
        case MnemonicClass::Return:
        case MnemonicClass::Halt:
            return true;
        default:
            return false;
    }
}

inline std::size_t mutation_quota(double intensity, std::size_t sites) {
    auto k = static_cast<std::size_t>(std::ceil(intensity * static_cast<double>(sites)));
    return std::min(std::max<std::size_t>(k, 1), sites);
}

// Seeded choice of `quota` site positions, reported in ascending order.
inline std::vector<std::size_t> pick_sites(std::vector<std::size_t> sites, std::size_t quota,
                                           Rng& rng) {
    rng.shuffle(sites);
    sites.resize(quota);
    std::sort(sites.begin(), sites.end());
    return sites;
}

inline std::string fresh_label(const std::set<std::string>& taken, const std::string& stem) {
    if (!taken.count(stem)) return stem;
    for (std::size_t i = 2;; ++i) {
        std::string cand = stem + "_" + std::to_string(i);
        if (!taken.count(cand)) return cand;
    }
}

inline void check_intensity(double intensity) {
    if (!(intensity > 0.0) || intensity > 1.0)
        throw Error("intensity must lie in (0, 1], got " + std::to_string(intensity));
}

// --- padding insertion (NopInsert / JunkInsert) -----------------------------

inline AsmProgram insert_padding(const AsmProgram& p, std::uint64_t seed, double intensity,
                                 bool varied) {
    // A site is a free address directly after an instruction.
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i < p.instructions.size(); ++i) {
        std::uint64_t next = i + 1 < p.instructions.size() ? p.instructions[i + 1].address
                                                           : p.instructions[i].address + 2;
        if (next - p.instructions[i].address >= 2) sites.push_back(i);
    }
    if (sites.empty())
        throw NotApplicableError("no address gap admits an inserted instruction");

    Rng rng(seed);
    std::vector<std::size_t> chosen = pick_sites(sites, mutation_quota(intensity, sites.size()), rng);

    const bool x86 = p.arch == Arch::X86;
    const std::vector<std::string> filler =
        x86 ? std::vector<std::string>{"NOP", "PAUSE", "FNOP"}
            : std::vector<std::string>{"NOP", "YIELD"};

    AsmProgram out = p;
    for (std::size_t idx : chosen) {
        AsmInstruction pad;
        pad.address = p.instructions[idx].address + 1;
        pad.mnemonic = varied ? filler[static_cast<std::size_t>(rng.below(filler.size()))] : "NOP";
        pad.arch = p.arch;
        out.instructions.push_back(std::move(pad));
    }
    rebuild_indices(out);
    return out;
}

// --- call indirection --------------------------------------------------------

inline AsmProgram call_indirect(const AsmProgram& p, std::uint64_t seed, double intensity) {
    std::set<std::string> defined;
    for (const auto& [addr, name] : p.labels) defined.insert(name);
    std::set<std::uint64_t> addresses;
    for (const AsmInstruction& insn : p.instructions) addresses.insert(insn.address);

    // Only calls that land inside the program can gain a thunk; external
    // targets (library symbols, unmapped addresses) keep their direct form.
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i < p.instructions.size(); ++i) {
        const AsmInstruction& insn = p.instructions[i];
        if (class_of(insn) != MnemonicClass::Call || insn.operands.size() != 1) continue;
        const Operand& op = insn.operands[0];
        bool internal = (op.kind == OperandKind::Label && defined.count(op.label)) ||
                        (op.kind == OperandKind::Immediate &&
                         addresses.count(static_cast<std::uint64_t>(op.imm)));
        if (internal) sites.push_back(i);
    }
    if (sites.empty()) throw NotApplicableError("program has no direct internal call to indirect");

    Rng rng(seed);
    std::vector<std::size_t> chosen = pick_sites(sites, mutation_quota(intensity, sites.size()), rng);

    std::set<std::string> taken;
    for (const auto& [addr, name] : p.labels) taken.insert(name);

    AsmProgram out = p;
    std::uint64_t next_addr = p.instructions.back().address + 4;
    const std::string jump = p.arch == Arch::X86 ? "JMP" : "B";
    for (std::size_t n = 0; n < chosen.size(); ++n) {
        std::string label = fresh_label(taken, "__thunk" + std::to_string(n));
        taken.insert(label);

        AsmInstruction hop;
        hop.address = next_addr;
        hop.mnemonic = jump;
        hop.operands.push_back(out.instructions[chosen[n]].operands[0]);
        hop.arch = p.arch;
        out.instructions.push_back(std::move(hop));
        out.labels.emplace_back(next_addr, label);
        next_addr += 4;

        out.instructions[chosen[n]].operands[0] = Operand::make_label(label);
    }
    rebuild_indices(out);
    return out;
}

// --- function indirection ----------------------------------------------------

inline AsmProgram func_indirect(const AsmProgram& p, std::uint64_t seed, double intensity) {
    if (p.labels.empty()) throw NotApplicableError("program has no labels to indirect");

    std::set<std::string> taken;
    for (const auto& [addr, name] : p.labels) taken.insert(name);

    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i < p.labels.size(); ++i)
        if (!taken.count(p.labels[i].second + "__impl")) sites.push_back(i);
    if (sites.empty()) throw NotApplicableError("every label already has an __impl twin");

    Rng rng(seed);
    std::vector<std::size_t> chosen = pick_sites(sites, mutation_quota(intensity, sites.size()), rng);

    AsmProgram out = p;
    std::uint64_t next_addr = p.instructions.back().address + 4;
    const std::string jump = p.arch == Arch::X86 ? "JMP" : "B";
    for (std::size_t idx : chosen) {
        const std::string original = out.labels[idx].second;
        const std::string impl = original + "__impl";
        out.labels[idx].second = impl;

        AsmInstruction hop;
        hop.address = next_addr;
        hop.mnemonic = jump;
        hop.operands.push_back(Operand::make_label(impl));
        hop.arch = p.arch;
        out.instructions.push_back(std::move(hop));
        out.labels.emplace_back(next_addr, original); // references keep resolving
        next_addr += 4;
    }
    rebuild_indices(out);
    return out;
}

// --- register renaming ---------------------------------------------------------

inline const std::vector<std::vector<int>>& rename_pools(Arch arch) {
    using namespace regfam;
    static const std::vector<std::vector<int>> x86 = {
        {RAX, RBX, RCX, RDX},
        {RSI, RDI},
        {R8, R9, R10, R11, R12, R13, R14, R15},
    };
    static const std::vector<std::vector<int>> arm = {
        {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12},
    };
    return arch == Arch::X86 ? x86 : arm;
}

inline AsmProgram register_rename(const AsmProgram& p, std::uint64_t seed, double intensity,
                                  std::map<int, int>& reg_map) {
    const auto& table = register_table(p.arch);
    auto family_of = [&](const std::string& name) -> std::optional<RegInfo> {
        auto it = table.find(name);
        if (it == table.end() || it->second.cls != RegClass::General) return std::nullopt;
        return it->second;
    };

    std::set<int> used;
    for (const AsmInstruction& insn : p.instructions)
        for (const Operand& op : insn.operands) {
            if (op.kind == OperandKind::Register) {
                if (auto ri = family_of(op.reg)) used.insert(ri->family);
            } else if (op.kind == OperandKind::MemoryRef) {
                if (op.mem.base)
                    if (auto ri = family_of(*op.mem.base)) used.insert(ri->family);
                if (op.mem.index)
                    if (auto ri = family_of(*op.mem.index)) used.insert(ri->family);
            }
        }

    Rng rng(seed);
    std::vector<std::vector<int>> applicable;
    for (const auto& pool : rename_pools(p.arch)) {
        std::vector<int> pool_used;
        for (int fam : pool)
            if (used.count(fam)) pool_used.push_back(fam);
        if (!pool_used.empty()) applicable.push_back(pool_used);
    }
    if (applicable.empty())
        throw NotApplicableError("program uses no renameable general registers");

    const std::size_t pools_to_touch = mutation_quota(intensity, applicable.size());
    const auto& pools = rename_pools(p.arch);
    for (std::size_t pi = 0; pi < pools_to_touch; ++pi) {
        const std::vector<int>& pool_used = applicable[pi];
        if (pool_used.size() >= 2) {
            std::size_t r = 1 + static_cast<std::size_t>(rng.below(pool_used.size() - 1));
            for (std::size_t i = 0; i < pool_used.size(); ++i)
                reg_map[pool_used[i]] = pool_used[(i + r) % pool_used.size()];
        } else {
            // Lone register: shift it onto an unused neighbour in its pool.
            int fam = pool_used[0];
            for (const auto& pool : pools) {
                auto it = std::find(pool.begin(), pool.end(), fam);
                if (it == pool.end()) continue;
                std::size_t at = static_cast<std::size_t>(it - pool.begin());
                reg_map[fam] = pool[(at + 1) % pool.size()];
                break;
            }
        }
    }

    auto rename = [&](std::string& name) {
        auto it = table.find(name);
        if (it == table.end() || it->second.cls != RegClass::General) return;
        auto mapped = reg_map.find(it->second.family);
        if (mapped == reg_map.end()) return;
        name = canonical_register_name(p.arch, mapped->second, it->second.width,
                                       it->second.high_byte);
    };

    AsmProgram out = p;
    for (AsmInstruction& insn : out.instructions)
        for (Operand& op : insn.operands) {
            if (op.kind == OperandKind::Register) rename(op.reg);
            else if (op.kind == OperandKind::MemoryRef) {
                if (op.mem.base) rename(*op.mem.base);
                if (op.mem.index) rename(*op.mem.index);
            }
        }
    return out;
}

// --- function reordering --------------------------------------------------------

struct FunctionRange {
    std::size_t first = 0; // instruction index range [first, last)
    std::size_t last = 0;
};

inline AsmProgram block_reorder(const AsmProgram& p, std::uint64_t seed, double intensity) {
    if (p.function_bounds.size() < 2)
        throw NotApplicableError("fewer than two labelled functions to reorder");

    auto index_of_addr = [&](std::uint64_t addr) {
        auto it = std::lower_bound(p.instructions.begin(), p.instructions.end(), addr,
                                   [](const AsmInstruction& a, std::uint64_t v) {
                                       return a.address < v;
                                   });
        return static_cast<std::size_t>(it - p.instructions.begin());
    };

    std::vector<FunctionRange> funcs;
    for (const auto& [start, end] : p.function_bounds)
        funcs.push_back({index_of_addr(start), index_of_addr(end)});
    const std::size_t preamble_end = funcs.front().first;

    // Relocation only preserves traces when no unit can fall off its end.
    for (const FunctionRange& f : funcs)
        if (f.last == f.first || !ends_straight_line(p.instructions[f.last - 1]))
            throw NotApplicableError("a function may fall through; relocation would change traces");
    if (preamble_end > 0 && !ends_straight_line(p.instructions[preamble_end - 1]))
        throw NotApplicableError("the preamble may fall through; relocation would change traces");

    Rng rng(seed);
    std::size_t quota = std::max<std::size_t>(2, mutation_quota(intensity, funcs.size()));
    quota = std::min(quota, funcs.size());

    std::vector<std::size_t> all(funcs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<std::size_t> moved = pick_sites(all, quota, rng);

    // Rotate the chosen functions through each other's positions.
    std::vector<std::size_t> order(funcs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t shift = 1 + static_cast<std::size_t>(rng.below(moved.size() - 1));
    for (std::size_t i = 0; i < moved.size(); ++i)
        order[moved[i]] = moved[(i + shift) % moved.size()];

    // New instruction sequence: preamble, then functions in their new order.
    std::vector<std::size_t> sequence;
    for (std::size_t i = 0; i < preamble_end; ++i) sequence.push_back(i);
    for (std::size_t slot = 0; slot < order.size(); ++slot)
        for (std::size_t i = funcs[order[slot]].first; i < funcs[order[slot]].last; ++i)
            sequence.push_back(i);

    const std::uint64_t base = p.instructions.front().address;
    std::map<std::uint64_t, std::uint64_t> new_addr;
    for (std::size_t pos = 0; pos < sequence.size(); ++pos)
        new_addr[p.instructions[sequence[pos]].address] = base + 4 * pos;

    AsmProgram out = p;
    out.instructions.clear();
    for (std::size_t idx : sequence) {
        AsmInstruction insn = p.instructions[idx];
        insn.address = new_addr.at(p.instructions[idx].address);
        switch (class_of(insn)) {
            case MnemonicClass::CondBranch:
            case MnemonicClass::Jump:
            case MnemonicClass::Call:
                for (Operand& op : insn.operands)
                    if (op.kind == OperandKind::Immediate) {
                        auto it = new_addr.find(static_cast<std::uint64_t>(op.imm));
                        if (it != new_addr.end()) op.imm = static_cast<std::int64_t>(it->second);
                    }
                break;
            default:
                break;
        }
        out.instructions.push_back(std::move(insn));
    }
    for (auto& [addr, name] : out.labels) {
        auto it = new_addr.find(addr);
        if (it != new_addr.end()) addr = it->second;
    }
    rebuild_indices(out);
    return out;
}

// --- heavy goto insertion ---------------------------------------------------------

inline AsmProgram goto_heavy(const AsmProgram& p, std::uint64_t seed, double intensity) {
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i + 1 < p.instructions.size(); ++i)
        if (!mnemonic_is_control_transfer(p.arch, p.instructions[i].mnemonic))
            sites.push_back(i);
    if (sites.empty())
        throw NotApplicableError("no straight-line instruction to split after");

    Rng rng(seed);
    std::vector<std::size_t> chosen = pick_sites(sites, mutation_quota(intensity, sites.size()), rng);

    // Widen the address space so every split point has a free slot.
    std::map<std::uint64_t, std::uint64_t> new_addr;
    for (const AsmInstruction& insn : p.instructions) new_addr[insn.address] = insn.address * 8;

    AsmProgram out = p;
    for (AsmInstruction& insn : out.instructions) {
        insn.address = new_addr.at(insn.address);
        switch (class_of(insn)) {
            case MnemonicClass::CondBranch:
            case MnemonicClass::Jump:
            case MnemonicClass::Call:
                for (Operand& op : insn.operands)
                    if (op.kind == OperandKind::Immediate) {
                        auto it = new_addr.find(static_cast<std::uint64_t>(op.imm));
                        if (it != new_addr.end()) op.imm = static_cast<std::int64_t>(it->second);
                    }
                break;
            default:
                break;
        }
    }
    for (auto& [addr, name] : out.labels) {
        auto it = new_addr.find(addr);
        if (it != new_addr.end()) addr = it->second;
    }

    const std::string jump = p.arch == Arch::X86 ? "JMP" : "B";
    for (std::size_t idx : chosen) {
        AsmInstruction hop;
        hop.address = new_addr.at(p.instructions[idx].address) + 4;
        hop.mnemonic = jump;
        hop.operands.push_back(
            Operand::make_imm(static_cast<std::int64_t>(new_addr.at(p.instructions[idx + 1].address))));
        hop.arch = p.arch;
        out.instructions.push_back(std::move(hop));
    }
    rebuild_indices(out);
    return out;
}

} // namespace detail

// Deterministic source-level obfuscation. Every kind except GotoHeavy keeps
// the observable control-flow semantics of the input; GotoHeavy splits
// straight-line runs with jumps to the fall-through address on purpose.
inline MutationResult mutate_ex(const AsmProgram& p, ObfuscationKind kind, std::uint64_t seed,
                                double intensity) {
    detail::check_intensity(intensity);
    if (p.instructions.empty()) throw EmptyProgramError();

    MutationResult res;
    switch (kind) {
        case ObfuscationKind::NopInsert:
            res.program = detail::insert_padding(p, seed, intensity, false);
            break;
        case ObfuscationKind::JunkInsert:
            res.program = detail::insert_padding(p, seed, intensity, true);
            break;
        case ObfuscationKind::CallIndirect:
            res.program = detail::call_indirect(p, seed, intensity);
            break;
        case ObfuscationKind::FuncIndirect:
            res.program = detail::func_indirect(p, seed, intensity);
            break;
        case ObfuscationKind::RegisterRename:
            res.program = detail::register_rename(p, seed, intensity, res.reg_map);
            break;
        case ObfuscationKind::BlockReorder:
            res.program = detail::block_reorder(p, seed, intensity);
            break;
        case ObfuscationKind::GotoHeavy:
            res.program = detail::goto_heavy(p, seed, intensity);
            break;
    }
    res.program.name = p.name + "#" + std::string(obfuscation_kind_name(kind));
    return res;
}

inline AsmProgram mutate(const AsmProgram& p, ObfuscationKind kind, std::uint64_t seed,
                         double intensity) {
    return mutate_ex(p, kind, seed, intensity).program;
}

// --- corpus generation --------------------------------------------------------

struct VariantRecord {
    std::string variant_path;
    std::string base_path;
    ObfuscationKind kind = ObfuscationKind::NopInsert;
    std::uint64_t seed = 0;
    double intensity = 0.0;
};

struct VariantCorpus {
    LabeledDataset dataset;             // one item per generated variant
    std::vector<VariantRecord> records; // manifest rows
    std::vector<std::string> skipped;   // inapplicable (base, kind) pairs
    std::string manifest_path;
};

inline VariantCorpus generate_variant_corpus(const LabeledDataset& bases,
                                             const std::vector<ObfuscationKind>& kinds,
                                             const std::vector<std::uint64_t>& seeds,
                                             double intensity, const std::string& out_dir) {
    if (bases.items.empty()) throw EmptyCorpusError("variant generation needs base listings");
    detail::check_intensity(intensity);
    std::filesystem::create_directories(out_dir);

    VariantCorpus out;
    for (const DatasetItem& base : bases.items) {
        AsmProgram parsed = base.text.empty()
                                ? parse_listing_file(base.path, base.arch)
                                : parse_listing(base.text, base.arch, base.path);
        std::string stem = std::filesystem::path(base.path).stem().string();
        for (ObfuscationKind kind : kinds) {
            for (std::uint64_t seed : seeds) {
                std::string text;
                try {
                    text = to_listing(mutate(parsed, kind, seed, intensity));
                } catch (const NotApplicableError& e) {
                    out.skipped.push_back(std::string(obfuscation_kind_name(kind)) + " on " +
                                          base.path + ": " + e.what());
                    continue;
                }
                std::string fname = stem + "__" + std::string(obfuscation_kind_name(kind)) +
                                    "_s" + std::to_string(seed) + ".lst";
                std::string path = (std::filesystem::path(out_dir) / fname).string();
                std::ofstream f(path, std::ios::binary);
                if (!f) throw IoError("cannot write variant: " + path);
                f << text;
                f.close();

                DatasetItem item;
                item.path = path;
                item.label = base.label;
                item.family = base.family;
                item.arch = base.arch;
                out.dataset.items.push_back(std::move(item));
                out.records.push_back({path, base.path, kind, seed, intensity});
            }
        }
    }

    out.manifest_path = (std::filesystem::path(out_dir) / "manifest.csv").string();
    std::ofstream mf(out.manifest_path, std::ios::binary);
    if (!mf) throw IoError("cannot write manifest: " + out.manifest_path);
    mf << "variant_path,base_path,kind,seed,intensity\n";
    for (const VariantRecord& r : out.records) {
        std::ostringstream row;
        row << r.variant_path << ',' << r.base_path << ',' << obfuscation_kind_name(r.kind) << ','
            << r.seed << ',' << std::fixed << std::setprecision(3) << r.intensity;
        mf << row.str() << '\n';
    }
    return out;
}

} // namespace mailscan

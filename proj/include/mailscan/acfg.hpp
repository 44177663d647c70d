#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lift.hpp"
#include "mail.hpp"

namespace mailscan {

struct Block {
    std::uint32_t id = 0;
    std::vector<MailStatement> statements;   // non-empty
    std::vector<MailPattern> pattern_seq;    // parallel to statements

    bool operator==(const Block&) const = default;
};

struct Acfg {
    std::vector<Block> blocks;                        // ids dense 0..n-1
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges; // sorted, unique
    std::uint32_t entry = 0;
    std::optional<std::string> function_label;

    bool operator==(const Acfg&) const = default;
};

struct ProgramSignatureAcfg {
    std::vector<Acfg> acfgs; // non-empty for any non-empty program
    std::string provenance;

    bool operator==(const ProgramSignatureAcfg&) const = default;
};

namespace detail {

struct RawBlock {
    std::uint64_t start_addr = 0;
    std::size_t first_stmt = 0, stmt_count = 0;
    std::size_t region = 0;
};

// Extract one Acfg as the reachable closure of `root` over `succs`.
inline Acfg extract_region(const std::vector<RawBlock>& raw,
                           const std::vector<MailStatement>& stmts,
                           const std::vector<std::vector<std::uint32_t>>& succs,
                           std::uint32_t root, std::vector<bool>& covered,
                           std::optional<std::string> label) {
    std::vector<std::uint32_t> order;
    std::set<std::uint32_t> seen{root};
    std::vector<std::uint32_t> queue{root};
    while (!queue.empty()) {
        std::uint32_t b = queue.back();
        queue.pop_back();
        order.push_back(b);
        for (std::uint32_t s : succs[b])
            if (seen.insert(s).second) queue.push_back(s);
    }
    std::sort(order.begin(), order.end()); // deterministic: by global block index
    std::map<std::uint32_t, std::uint32_t> local;
    for (std::uint32_t i = 0; i < order.size(); ++i) local[order[i]] = i;

    Acfg g;
    g.function_label = std::move(label);
    g.entry = local.at(root);
    for (std::uint32_t gb : order) {
        covered[gb] = true;
        Block blk;
        blk.id = local.at(gb);
        const RawBlock& rb = raw[gb];
        blk.statements.assign(stmts.begin() + static_cast<std::ptrdiff_t>(rb.first_stmt),
                              stmts.begin() + static_cast<std::ptrdiff_t>(rb.first_stmt + rb.stmt_count));
        for (const auto& s : blk.statements) blk.pattern_seq.push_back(s.pattern);
        g.blocks.push_back(std::move(blk));
        for (std::uint32_t s : succs[gb])
            g.edges.emplace_back(local.at(gb), local.at(s));
    }
    std::sort(g.edges.begin(), g.edges.end());
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
    return g;
}

} // namespace detail

// Leader analysis over the statement stream, then per-region graph extraction.
// With function bounds: one graph per function range (plus one for any
// preamble before the first label). Without: one graph per entry point's
// reachable region. Statements left uncovered root their own graph.
inline ProgramSignatureAcfg build_acfgs(const MailProgram& m) {
    if (m.statements.empty()) throw EmptyProgramError("cannot build graphs for an empty program");

    ProgramSignatureAcfg sig;
    sig.provenance = m.provenance.name;

    const auto& stmts = m.statements;
    auto leaders = leader_addresses(stmts, m.entry_points);

    // Regions: half-open address ranges. Index 0.. for bounds mode; one
    // catch-all region otherwise.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> regions;
    const std::uint64_t first_addr = stmts.front().origin_address;
    if (!m.function_bounds.empty()) {
        if (first_addr < m.function_bounds.front().first)
            regions.emplace_back(first_addr, m.function_bounds.front().first);
        for (auto& fb : m.function_bounds) regions.push_back(fb);
    } else {
        regions.emplace_back(first_addr, stmts.back().origin_address + 1);
    }
    auto region_of = [&](std::uint64_t addr) -> std::size_t {
        for (std::size_t i = 0; i < regions.size(); ++i)
            if (addr >= regions[i].first && addr < regions[i].second) return i;
        return SIZE_MAX;
    };

    // Carve raw blocks. A block starts at a leader instruction or a region
    // boundary and ends after a terminator statement (always the last
    // statement of its instruction's expansion).
    std::vector<detail::RawBlock> raw;
    std::map<std::uint64_t, std::uint32_t> block_at; // start addr -> raw index
    {
        bool open = false;
        for (std::size_t i = 0; i < stmts.size(); ++i) {
            const auto& s = stmts[i];
            bool new_insn = i == 0 || s.origin_address != stmts[i - 1].origin_address;
            bool start = !open || (new_insn && leaders.count(s.origin_address) > 0);
            if (!start && new_insn && !raw.empty() &&
                region_of(s.origin_address) != raw.back().region)
                start = true;
            if (start) {
                detail::RawBlock rb;
                rb.start_addr = s.origin_address;
                rb.first_stmt = i;
                rb.region = region_of(s.origin_address);
                block_at[rb.start_addr] = static_cast<std::uint32_t>(raw.size());
                raw.push_back(rb);
                open = true;
            }
            raw.back().stmt_count = i - raw.back().first_stmt + 1;
            bool last_of_insn =
                i + 1 == stmts.size() || stmts[i + 1].origin_address != s.origin_address;
            if (last_of_insn && is_block_terminator(s.kind)) open = false;
        }
    }

    // Successors. Edges never cross regions; unknown targets contribute none.
    std::vector<std::vector<std::uint32_t>> succs(raw.size());
    for (std::uint32_t b = 0; b < raw.size(); ++b) {
        const detail::RawBlock& rb = raw[b];
        const MailStatement& last = stmts[rb.first_stmt + rb.stmt_count - 1];
        auto add_edge = [&](std::uint64_t target) {
            auto it = block_at.find(target);
            if (it == block_at.end()) return;
            if (raw[it->second].region != rb.region) return;
            succs[b].push_back(it->second);
        };
        bool fallthrough = false;
        switch (last.kind) {
            case StatementKind::Jump:
                if (last.target && !last.stack_effect) add_edge(*last.target);
                break;
            case StatementKind::ControlTransferConditional:
                if (last.target) add_edge(*last.target);
                fallthrough = true;
                break;
            case StatementKind::Halt:
                break;
            default:
                fallthrough = true; // block ended because the next one is a leader
                break;
        }
        if (fallthrough && b + 1 < raw.size() && raw[b + 1].region == rb.region)
            succs[b].push_back(b + 1);
        std::sort(succs[b].begin(), succs[b].end());
        succs[b].erase(std::unique(succs[b].begin(), succs[b].end()), succs[b].end());
    }

    // Region roots, then coverage closure for anything unreachable.
    std::vector<bool> covered(raw.size(), false);
    std::map<std::uint64_t, std::string> first_label_at;
    for (const auto& [addr, name] : m.labels) first_label_at.emplace(addr, name);

    if (!m.function_bounds.empty()) {
        for (const auto& region : regions) {
            auto it = block_at.find(region.first);
            if (it == block_at.end()) continue;
            std::optional<std::string> label;
            if (auto lit = first_label_at.find(region.first); lit != first_label_at.end())
                label = lit->second;
            sig.acfgs.push_back(
                detail::extract_region(raw, stmts, succs, it->second, covered, label));
        }
    } else {
        for (std::uint64_t ep : m.entry_points) {
            auto it = block_at.find(ep);
            if (it == block_at.end()) continue;
            std::optional<std::string> label;
            if (auto lit = first_label_at.find(ep); lit != first_label_at.end())
                label = lit->second;
            sig.acfgs.push_back(
                detail::extract_region(raw, stmts, succs, it->second, covered, label));
        }
    }
    for (std::uint32_t b = 0; b < raw.size(); ++b)
        if (!covered[b])
            sig.acfgs.push_back(
                detail::extract_region(raw, stmts, succs, b, covered, std::nullopt));
    return sig;
}

// Fuse every A->B where B is A's unique successor and A is B's unique
// predecessor (A != B, B not the entry), to fixpoint. Statement traces are
// preserved: fused jump statements stay in place inside the merged block.
inline Acfg merge_blocks(const Acfg& g) {
    std::vector<Block> blocks = g.blocks;
    std::vector<std::set<std::uint32_t>> succ(blocks.size()), pred(blocks.size());
    for (auto [a, b] : g.edges) {
        succ[a].insert(b);
        pred[b].insert(a);
    }
    std::vector<bool> dead(blocks.size(), false);
    std::uint32_t entry = g.entry;

    bool changed = true;
    while (changed) {
        changed = false;
        for (std::uint32_t a = 0; a < blocks.size(); ++a) {
            if (dead[a] || succ[a].size() != 1) continue;
            std::uint32_t b = *succ[a].begin();
            if (b == a || b == entry || dead[b]) continue;
            if (pred[b].size() != 1) continue;
            // fuse b into a
            blocks[a].statements.insert(blocks[a].statements.end(),
                                        blocks[b].statements.begin(), blocks[b].statements.end());
            blocks[a].pattern_seq.insert(blocks[a].pattern_seq.end(),
                                         blocks[b].pattern_seq.begin(), blocks[b].pattern_seq.end());
            succ[a] = succ[b];
            for (std::uint32_t s : succ[b]) {
                pred[s].erase(b);
                pred[s].insert(a);
            }
            succ[b].clear();
            pred[b].clear();
            dead[b] = true;
            changed = true;
        }
    }

    Acfg out;
    out.function_label = g.function_label;
    std::map<std::uint32_t, std::uint32_t> local;
    for (std::uint32_t i = 0; i < blocks.size(); ++i) {
        if (dead[i]) continue;
        std::uint32_t id = static_cast<std::uint32_t>(out.blocks.size());
        local[i] = id;
        Block blk = std::move(blocks[i]);
        blk.id = id;
        out.blocks.push_back(std::move(blk));
    }
    for (std::uint32_t i = 0; i < succ.size(); ++i) {
        if (dead[i]) continue;
        for (std::uint32_t s : succ[i]) out.edges.emplace_back(local.at(i), local.at(s));
    }
    std::sort(out.edges.begin(), out.edges.end());
    out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
    out.entry = local.at(entry);
    return out;
}

inline ProgramSignatureAcfg merge_blocks(const ProgramSignatureAcfg& sig) {
    ProgramSignatureAcfg out;
    out.provenance = sig.provenance;
    for (const auto& g : sig.acfgs) out.acfgs.push_back(merge_blocks(g));
    return out;
}

// Pattern-level structural equality: what detection actually sees.
// Addresses, sketches and labels are irrelevant here.
inline bool signature_equal(const Acfg& a, const Acfg& b) {
    if (a.entry != b.entry || a.edges != b.edges || a.blocks.size() != b.blocks.size())
        return false;
    for (std::size_t i = 0; i < a.blocks.size(); ++i)
        if (a.blocks[i].pattern_seq != b.blocks[i].pattern_seq) return false;
    return true;
}

inline bool signature_equal(const ProgramSignatureAcfg& a, const ProgramSignatureAcfg& b) {
    if (a.acfgs.size() != b.acfgs.size()) return false;
    for (std::size_t i = 0; i < a.acfgs.size(); ++i)
        if (!signature_equal(a.acfgs[i], b.acfgs[i])) return false;
    return true;
}

// Textual dump: per graph a header, BLOCK lines in id order, then EDGE lines.
inline std::string dump_acfg(const ProgramSignatureAcfg& sig) {
    std::string out;
    for (std::size_t i = 0; i < sig.acfgs.size(); ++i) {
        const Acfg& g = sig.acfgs[i];
        out += "ACFG " + std::to_string(i) + " entry=" + std::to_string(g.entry);
        if (g.function_label) out += " label=" + *g.function_label;
        out += '\n';
        for (const auto& b : g.blocks) {
            out += "BLOCK " + std::to_string(b.id) + ":";
            for (std::size_t j = 0; j < b.pattern_seq.size(); ++j) {
                out += j ? "," : " ";
                out += pattern_name(b.pattern_seq[j]);
            }
            out += '\n';
        }
        for (auto [a, b] : g.edges)
            out += "EDGE " + std::to_string(a) + " -> " + std::to_string(b) + "\n";
    }
    return out;
}

} // namespace mailscan

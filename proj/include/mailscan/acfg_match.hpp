#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "acfg.hpp"
#include "errors.hpp"

namespace mailscan {

enum class RejectReason : std::uint8_t {
    None,            // matched
    NoIsomorphism,   // no structural embedding at all
    PatternMismatch, // embedding exists structurally, but block patterns differ
    SizeBound,       // template above the size ceiling, or search budget hit
};

inline std::string_view reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::None: return "None";
        case RejectReason::NoIsomorphism: return "NoIsomorphism";
        case RejectReason::PatternMismatch: return "PatternMismatch";
        case RejectReason::SizeBound: return "SizeBound";
    }
    return "";
}

struct MatchResult {
    bool matched = false;
    // mapping[i] = candidate block id for template block i (when matched)
    std::vector<std::uint32_t> mapping;
    RejectReason reject_reason = RejectReason::None;
};

struct MatchOptions {
    std::uint32_t size_bound = 256;   // template block-count ceiling
    std::uint64_t step_budget = 1u << 22; // backtracking nodes per search
};

struct SimilarityScore {
    std::uint32_t matched_count = 0;
    std::uint32_t template_count = 0;
    double value = 0.0;

    bool operator==(const SimilarityScore&) const = default;
};

namespace detail {

struct MatchGraph {
    std::size_t n = 0;
    std::vector<std::vector<std::uint32_t>> succ, pred;
    std::vector<std::uint64_t> pattern_hash;
    const Acfg* src = nullptr;

    explicit MatchGraph(const Acfg& g) : n(g.blocks.size()), succ(n), pred(n), src(&g) {
        for (auto [a, b] : g.edges) {
            succ[a].push_back(b);
            pred[b].push_back(a);
        }
        for (auto& v : succ) std::sort(v.begin(), v.end());
        for (auto& v : pred) std::sort(v.begin(), v.end());
        pattern_hash.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t h = 1469598103934665603ull;
            for (MailPattern p : g.blocks[i].pattern_seq) {
                h ^= static_cast<std::uint64_t>(p) + 1;
                h *= 1099511628211ull;
            }
            pattern_hash[i] = h;
        }
    }
    bool has_edge(std::uint32_t a, std::uint32_t b) const {
        return std::binary_search(succ[a].begin(), succ[a].end(), b);
    }
};

struct MatchSearch {
    const MatchGraph& t;
    const MatchGraph& c;
    bool check_patterns;
    std::uint64_t budget;
    bool budget_hit = false;
    std::vector<std::uint32_t> order;       // template nodes, most-constrained first
    std::vector<std::uint32_t> assignment;  // template node -> candidate node
    std::vector<bool> used;                 // candidate node taken

    MatchSearch(const MatchGraph& tmpl, const MatchGraph& cand, bool patterns,
                std::uint64_t step_budget)
        : t(tmpl), c(cand), check_patterns(patterns), budget(step_budget),
          assignment(tmpl.n, UINT32_MAX), used(cand.n, false) {
        // Order: nodes connected to already-ordered ones first, then by the
        // rarity of their pattern among candidate blocks, then by degree.
        std::vector<std::uint32_t> remaining(t.n);
        for (std::uint32_t i = 0; i < t.n; ++i) remaining[i] = i;
        std::vector<std::size_t> rarity(t.n, 0);
        if (check_patterns)
            for (std::uint32_t i = 0; i < t.n; ++i)
                for (std::uint32_t j = 0; j < c.n; ++j)
                    if (t.pattern_hash[i] == c.pattern_hash[j]) ++rarity[i];
        std::vector<bool> placed(t.n, false);
        while (order.size() < t.n) {
            std::uint32_t best = UINT32_MAX;
            bool best_conn = false;
            for (std::uint32_t v : remaining) {
                if (placed[v]) continue;
                bool conn = false;
                for (std::uint32_t u : order)
                    if (t.has_edge(u, v) || t.has_edge(v, u)) {
                        conn = true;
                        break;
                    }
                if (best == UINT32_MAX || (conn && !best_conn) ||
                    (conn == best_conn &&
                     (check_patterns ? rarity[v] < rarity[best]
                                     : t.succ[v].size() + t.pred[v].size() >
                                           t.succ[best].size() + t.pred[best].size()))) {
                    best = v;
                    best_conn = conn;
                }
            }
            placed[best] = true;
            order.push_back(best);
        }
    }

    bool compatible(std::uint32_t tv, std::uint32_t cv) const {
        if (check_patterns) {
            if (t.pattern_hash[tv] != c.pattern_hash[cv]) return false;
            if (t.src->blocks[tv].pattern_seq != c.src->blocks[cv].pattern_seq) return false;
        }
        return t.succ[tv].size() <= c.succ[cv].size() && t.pred[tv].size() <= c.pred[cv].size();
    }

    bool run(std::size_t depth) {
        if (budget-- == 0) {
            budget_hit = true;
            return false;
        }
        if (depth == order.size()) return true;
        std::uint32_t tv = order[depth];
        for (std::uint32_t cv = 0; cv < c.n; ++cv) {
            if (used[cv] || !compatible(tv, cv)) continue;
            bool ok = true;
            for (std::uint32_t u : order) {
                if (assignment[u] == UINT32_MAX) continue;
                if (t.has_edge(u, tv) && !c.has_edge(assignment[u], cv)) { ok = false; break; }
                if (t.has_edge(tv, u) && !c.has_edge(cv, assignment[u])) { ok = false; break; }
            }
            if (!ok) continue;
            assignment[tv] = cv;
            used[cv] = true;
            if (run(depth + 1)) return true;
            assignment[tv] = UINT32_MAX;
            used[cv] = false;
            if (budget_hit) return false;
        }
        return false;
    }
};

} // namespace detail

// Does the template embed in the candidate? Injective block mapping, every
// template edge preserved (extra candidate blocks/edges are fine), block
// compatibility is exact pattern-sequence equality.
inline MatchResult match_acfg(const Acfg& tmpl, const Acfg& cand, const MatchOptions& opts = {}) {
    MatchResult r;
    if (tmpl.blocks.size() > opts.size_bound) {
        r.reject_reason = RejectReason::SizeBound;
        return r;
    }
    if (tmpl.blocks.empty() || tmpl.blocks.size() > cand.blocks.size()) {
        r.reject_reason = RejectReason::NoIsomorphism;
        return r;
    }
    detail::MatchGraph tg(tmpl), cg(cand);
    detail::MatchSearch full(tg, cg, /*patterns=*/true, opts.step_budget);
    if (full.run(0)) {
        r.matched = true;
        r.mapping = full.assignment;
        return r;
    }
    if (full.budget_hit) {
        r.reject_reason = RejectReason::SizeBound;
        return r;
    }
    // Distinguish "wrong shape" from "right shape, wrong patterns".
    detail::MatchSearch structural(tg, cg, /*patterns=*/false, opts.step_budget);
    if (structural.run(0)) {
        r.reject_reason = RejectReason::PatternMismatch;
        return r;
    }
    r.reject_reason =
        structural.budget_hit ? RejectReason::SizeBound : RejectReason::NoIsomorphism;
    return r;
}

// Fraction of template graphs that embed somewhere in the program's graphs.
// Templates over the size bound are excluded from the denominator (warned).
inline SimilarityScore similarity(const ProgramSignatureAcfg& tmpl,
                                  const ProgramSignatureAcfg& prog,
                                  const MatchOptions& opts = {},
                                  std::vector<std::string>* warnings = nullptr) {
    if (tmpl.acfgs.empty() || prog.acfgs.empty()) throw EmptySignatureError();
    SimilarityScore sc;
    std::vector<detail::MatchGraph> prog_graphs;
    prog_graphs.reserve(prog.acfgs.size());
    for (const Acfg& p : prog.acfgs) prog_graphs.emplace_back(p);
    for (std::size_t i = 0; i < tmpl.acfgs.size(); ++i) {
        const Acfg& t = tmpl.acfgs[i];
        if (t.blocks.size() > opts.size_bound) {
            if (warnings)
                warnings->push_back("template graph " + std::to_string(i) + " of " +
                                    tmpl.provenance + " exceeds size bound (" +
                                    std::to_string(t.blocks.size()) + " blocks), skipped");
            continue;
        }
        ++sc.template_count;
        detail::MatchGraph tg(t);
        for (const detail::MatchGraph& pg : prog_graphs) {
            if (tg.n > pg.n) continue;
            detail::MatchSearch search(tg, pg, /*patterns=*/true, opts.step_budget);
            if (search.run(0)) {
                ++sc.matched_count;
                break;
            }
        }
    }
    sc.value = sc.template_count ? static_cast<double>(sc.matched_count) /
                                       static_cast<double>(sc.template_count)
                                 : 0.0;
    return sc;
}

} // namespace mailscan

#pragma once

// Independent re-implementations used as test oracles. Everything here is
// written straight from the documented definitions and favours obviousness
// over speed; none of it shares code with the library under test.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <unordered_set>
#include <vector>

#include "mailscan/acfg.hpp"
#include "mailscan/detail/rng.hpp"
#include "mailscan/mail.hpp"
#include "mailscan/swod.hpp"

namespace testsupport {

// --- subgraph-embedding oracle ---------------------------------------------
// Plain enumeration of injective block mappings. A mapping is accepted when
// every mapped pair has byte-equal pattern sequences and every template edge
// lands on a candidate edge. Feasible for graphs of at most ~8 blocks.
inline bool brute_force_embeds(const mailscan::Acfg& tmpl, const mailscan::Acfg& cand) {
    const std::size_t tn = tmpl.blocks.size();
    const std::size_t cn = cand.blocks.size();
    if (tn == 0 || tn > cn) return false;

    std::set<std::pair<std::uint32_t, std::uint32_t>> cand_edges(cand.edges.begin(),
                                                                 cand.edges.end());
    std::vector<std::uint32_t> map(tn, 0);
    std::vector<bool> used(cn, false);

    std::function<bool(std::size_t)> place = [&](std::size_t i) -> bool {
        if (i == tn) return true;
        for (std::uint32_t cv = 0; cv < cn; ++cv) {
            if (used[cv]) continue;
            if (tmpl.blocks[i].pattern_seq != cand.blocks[cv].pattern_seq) continue;
            // Check edges between i and the blocks already placed, both ways.
            bool ok = true;
            for (auto [a, b] : tmpl.edges) {
                if (a == i && b < i && !cand_edges.count({cv, map[b]})) ok = false;
                if (b == i && a < i && !cand_edges.count({map[a], cv})) ok = false;
                if (!ok) break;
            }
            if (!ok) continue;
            map[i] = cv;
            used[cv] = true;
            if (place(i + 1)) return true;
            used[cv] = false;
        }
        return false;
    };
    return place(0);
}

// --- random graph generation -------------------------------------------------

// A block whose pattern sequence is filled directly; statements carry just
// enough to keep downstream consumers (merge, cfweight) honest.
inline mailscan::Block synthetic_block(std::uint32_t id,
                                       std::vector<mailscan::MailPattern> seq) {
    mailscan::Block b;
    b.id = id;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        mailscan::MailStatement s;
        s.uid = id * 1000 + static_cast<std::uint32_t>(i);
        s.origin_address = id * 1000 + i;
        s.pattern = seq[i];
        s.kind = mailscan::StatementKind::Assignment;
        b.statements.push_back(std::move(s));
    }
    b.pattern_seq = std::move(seq);
    return b;
}

// Random graph over a small pattern alphabet. Edges are generated in sorted
// order and deduplicated, entry is block 0. Not necessarily connected — the
// matcher does not require it.
inline mailscan::Acfg random_acfg(mailscan::detail::Rng& rng, std::size_t max_blocks,
                                  std::size_t alphabet, std::size_t max_seq_len,
                                  double edge_prob) {
    static const mailscan::MailPattern kAlphabet[] = {
        mailscan::MailPattern::ASSIGN,        mailscan::MailPattern::ASSIGN_CONSTANT,
        mailscan::MailPattern::TEST_CONSTANT, mailscan::MailPattern::CONTROL_CONSTANT,
        mailscan::MailPattern::JUMP_STACK,    mailscan::MailPattern::CALL_CONSTANT,
    };
    mailscan::Acfg g;
    const std::size_t n = 1 + rng.below(max_blocks);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<mailscan::MailPattern> seq;
        const std::size_t len = 1 + rng.below(max_seq_len);
        for (std::size_t j = 0; j < len; ++j)
            seq.push_back(kAlphabet[rng.below(alphabet)]);
        g.blocks.push_back(synthetic_block(i, std::move(seq)));
    }
    for (std::uint32_t a = 0; a < n; ++a)
        for (std::uint32_t b = 0; b < n; ++b)
            if (a != b && rng.unit() < edge_prob) g.edges.emplace_back(a, b);
    return g;
}

// Template drawn as a (not necessarily induced) subgraph of `cand`, with block
// ids renumbered. By construction it embeds into `cand`.
inline mailscan::Acfg subgraph_of(mailscan::detail::Rng& rng, const mailscan::Acfg& cand) {
    const std::size_t cn = cand.blocks.size();
    std::vector<std::uint32_t> picked;
    for (std::uint32_t i = 0; i < cn; ++i)
        if (rng.unit() < 0.6) picked.push_back(i);
    if (picked.empty()) picked.push_back(static_cast<std::uint32_t>(rng.below(cn)));
    rng.shuffle(picked); // renumbering should not matter

    std::map<std::uint32_t, std::uint32_t> renum;
    mailscan::Acfg t;
    for (std::uint32_t new_id = 0; new_id < picked.size(); ++new_id) {
        renum[picked[new_id]] = new_id;
        t.blocks.push_back(synthetic_block(new_id, cand.blocks[picked[new_id]].pattern_seq));
    }
    for (auto [a, b] : cand.edges) {
        auto ia = renum.find(a), ib = renum.find(b);
        if (ia == renum.end() || ib == renum.end()) continue;
        if (rng.unit() < 0.85) t.edges.emplace_back(ia->second, ib->second);
    }
    std::sort(t.edges.begin(), t.edges.end());
    t.edges.erase(std::unique(t.edges.begin(), t.edges.end()), t.edges.end());
    return t;
}

// Reachable random graph: a random parent tree guarantees every block is on a
// path from block 0, then extra edges are sprinkled on top. Suitable for
// merge_blocks, which assumes build_acfgs-style reachability.
inline mailscan::Acfg random_reachable_acfg(mailscan::detail::Rng& rng, std::size_t max_blocks,
                                            std::size_t alphabet, std::size_t max_seq_len,
                                            double extra_edge_prob) {
    mailscan::Acfg g = random_acfg(rng, max_blocks, alphabet, max_seq_len, 0.0);
    const std::size_t n = g.blocks.size();
    std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (std::uint32_t b = 1; b < n; ++b)
        edges.emplace(static_cast<std::uint32_t>(rng.below(b)), b);
    for (std::uint32_t a = 0; a < n; ++a)
        for (std::uint32_t b = 0; b < n; ++b)
            if (a != b && rng.unit() < extra_edge_prob) edges.emplace(a, b);
    g.edges.assign(edges.begin(), edges.end());
    return g;
}

// --- trace oracle for merge_blocks -------------------------------------------
// Maximal pattern-sequence paths from the entry, cutting each cycle at the
// first revisit. merge_blocks must leave this multiset untouched.
inline std::multiset<std::vector<mailscan::MailPattern>> trace_multiset(const mailscan::Acfg& g) {
    std::multiset<std::vector<mailscan::MailPattern>> out;
    std::vector<std::vector<std::uint32_t>> succ(g.blocks.size());
    for (auto [a, b] : g.edges) succ[a].push_back(b);

    std::vector<bool> on_path(g.blocks.size(), false);
    std::vector<mailscan::MailPattern> trace;
    std::function<void(std::uint32_t)> walk = [&](std::uint32_t v) {
        if (on_path[v]) {
            out.insert(trace);
            return;
        }
        const auto& seq = g.blocks[v].pattern_seq;
        trace.insert(trace.end(), seq.begin(), seq.end());
        if (succ[v].empty()) {
            out.insert(trace);
        } else {
            on_path[v] = true;
            for (std::uint32_t s : succ[v]) walk(s);
            on_path[v] = false;
        }
        trace.resize(trace.size() - seq.size());
    };
    walk(g.entry);
    return out;
}

// --- SWOD recomputation oracle ------------------------------------------------
// Re-derives the index array from scratch: per-statement total = control-flow
// weight + pattern weight, totals sorted ascending, summed into `len`
// equal-count buckets of size floor(n/len) with the remainder in the last.
inline std::vector<std::int64_t> recompute_index_array(const mailscan::MailProgram& m,
                                                       const mailscan::ProgramSignatureAcfg& sig,
                                                       const mailscan::PatternWeights& w,
                                                       std::size_t len) {
    std::vector<std::int64_t> totals;
    std::unordered_set<std::uint32_t> seen;
    for (const mailscan::Acfg& g : sig.acfgs) {
        std::map<std::uint32_t, std::int64_t> in_degree, out_degree;
        for (auto [a, b] : g.edges) {
            ++out_degree[a];
            ++in_degree[b];
        }
        for (const mailscan::Block& blk : g.blocks) {
            for (std::size_t i = 0; i < blk.statements.size(); ++i) {
                const mailscan::MailStatement& s = blk.statements[i];
                if (!seen.insert(s.uid).second) continue;
                std::int64_t t = 0;
                switch (s.kind) {
                    case mailscan::StatementKind::Jump:
                    case mailscan::StatementKind::ControlTransferConditional:
                    case mailscan::StatementKind::Halt:
                    case mailscan::StatementKind::Call:
                    case mailscan::StatementKind::LibCall:
                        t += w.window.c_transfer;
                        break;
                    default:
                        break;
                }
                if (i == 0) t += w.window.c_in * in_degree[blk.id];
                if (i + 1 == blk.statements.size()) t += w.window.c_out * out_degree[blk.id];
                t += w.weight[static_cast<std::size_t>(s.pattern)];
                totals.push_back(t);
            }
        }
    }
    (void)m;
    std::sort(totals.begin(), totals.end());

    std::vector<std::int64_t> index(len, 0);
    const std::size_t n = totals.size();
    const std::size_t q = n / len;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t bucket = (q == 0) ? len - 1 : std::min(i / q, len - 1);
        index[bucket] += totals[i];
    }
    return index;
}

// Pairwise AUC estimator: P(score_mal > score_ben) + 0.5 * P(equal).
inline double pairwise_auc(const std::vector<double>& mal, const std::vector<double>& ben) {
    double num = 0.0;
    for (double m : mal)
        for (double b : ben) {
            if (m > b) num += 1.0;
            else if (m == b) num += 0.5;
        }
    return num / (static_cast<double>(mal.size()) * static_cast<double>(ben.size()));
}

} // namespace testsupport

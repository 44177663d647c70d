#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "acfg.hpp"
#include "errors.hpp"
#include "mail.hpp"

namespace mailscan {

// Weight-derivation configuration. width/stride describe the sampling window
// and are recorded for provenance; the default derivation integrates over the
// whole corpus distribution. c_transfer/c_in/c_out are the control-flow
// weight coefficients.
struct WindowConfig {
    std::int32_t scale = 100;  // S
    std::int32_t clamp = 50;   // W: weights live in [-W, +W]
    std::int32_t width = 0;    // 0 = whole-corpus
    std::int32_t stride = 0;
    std::int32_t c_transfer = 4;
    std::int32_t c_in = 2;
    std::int32_t c_out = 2;

    bool operator==(const WindowConfig&) const = default;
};

struct PatternWeights {
    std::array<std::int32_t, kPatternCount> weight{}; // indexed by MailPattern
    WindowConfig window;
    std::string provenance;

    std::int32_t of(MailPattern p) const { return weight[static_cast<std::size_t>(p)]; }

    bool operator==(const PatternWeights&) const = default;
};

struct SwodSignature {
    std::vector<std::int64_t> weights_sorted; // ascending, one entry per statement
    std::vector<std::int64_t> index_array;    // bucket sums, fixed length
    std::string provenance;

    bool operator==(const SwodSignature&) const = default;
};

// Relative frequency of each pattern across every statement of the corpus.
inline std::array<double, kPatternCount> pattern_distribution(
    const std::vector<MailProgram>& corpus) {
    std::array<double, kPatternCount> d{};
    std::size_t total = 0;
    for (const auto& m : corpus)
        for (const auto& s : m.statements) {
            ++d[static_cast<std::size_t>(s.pattern)];
            ++total;
        }
    if (total == 0) throw EmptyCorpusError();
    for (auto& v : d) v /= static_cast<double>(total);
    return d;
}

// weight(p) = round(S * (mal(p) - ben(p))), clamped to [-W, +W].
inline PatternWeights compute_swod_weights(const std::array<double, kPatternCount>& mal,
                                           const std::array<double, kPatternCount>& ben,
                                           const WindowConfig& cfg = {}) {
    PatternWeights w;
    w.window = cfg;
    for (std::size_t i = 0; i < kPatternCount; ++i) {
        double raw = static_cast<double>(cfg.scale) * (mal[i] - ben[i]);
        auto v = static_cast<std::int64_t>(std::llround(raw));
        v = std::clamp<std::int64_t>(v, -cfg.clamp, cfg.clamp);
        w.weight[i] = static_cast<std::int32_t>(v);
    }
    return w;
}

// Control-flow weight of the statement at (block_id, index) in g:
//   c_transfer if it is a control transfer
// + c_in * in-degree  if it leads its block
// + c_out * out-degree if it terminates its block
inline std::int64_t cfweight_at(const Acfg& g, std::uint32_t block_id, std::size_t stmt_index,
                                const WindowConfig& cfg = {}) {
    if (block_id >= g.blocks.size() || stmt_index >= g.blocks[block_id].statements.size())
        throw StatementNotInGraphError();
    const Block& b = g.blocks[block_id];
    const MailStatement& s = b.statements[stmt_index];
    std::int64_t w = 0;
    if (is_control_transfer(s.kind)) w += cfg.c_transfer;
    if (stmt_index == 0) {
        std::int64_t in = 0;
        for (const auto& e : g.edges)
            if (e.second == block_id) ++in;
        w += cfg.c_in * in;
    }
    if (stmt_index + 1 == b.statements.size()) {
        std::int64_t out = 0;
        for (const auto& e : g.edges)
            if (e.first == block_id) ++out;
        w += cfg.c_out * out;
    }
    return w;
}

// Convenience wrapper locating s in g by value (first occurrence).
inline std::int64_t cfweight(const MailStatement& s, const Acfg& g, const WindowConfig& cfg = {}) {
    for (const Block& b : g.blocks)
        for (std::size_t i = 0; i < b.statements.size(); ++i)
            if (b.statements[i] == s) return cfweight_at(g, b.id, i, cfg);
    throw StatementNotInGraphError();
}

// Per-statement totals (control-flow weight + pattern weight), sorted
// ascending, summed into `index_len` equal-count buckets; the last bucket
// takes the remainder.
inline SwodSignature build_swod_signature(const MailProgram& m, const ProgramSignatureAcfg& g,
                                          const PatternWeights& w, std::size_t index_len = 16) {
    if (m.statements.empty()) throw EmptyProgramError("cannot build a signature for an empty program");
    if (index_len == 0) throw Error("index length must be positive");

    SwodSignature sig;
    sig.provenance = m.provenance.name;

    // Each statement counts once; with overlapping graphs the first containing
    // graph (in signature order) supplies its control-flow role.
    std::set<std::uint32_t> seen;
    for (const Acfg& acfg : g.acfgs) {
        for (const Block& b : acfg.blocks) {
            for (std::size_t i = 0; i < b.statements.size(); ++i) {
                const MailStatement& s = b.statements[i];
                if (!seen.insert(s.uid).second) continue;
                std::int64_t total = cfweight_at(acfg, b.id, i, w.window) + w.of(s.pattern);
                sig.weights_sorted.push_back(total);
            }
        }
    }
    std::sort(sig.weights_sorted.begin(), sig.weights_sorted.end());

    const std::size_t n = sig.weights_sorted.size();
    const std::size_t q = n / index_len;
    sig.index_array.assign(index_len, 0);
    std::size_t pos = 0;
    for (std::size_t bkt = 0; bkt < index_len; ++bkt) {
        std::size_t take = (bkt + 1 == index_len) ? n - pos : q;
        for (std::size_t k = 0; k < take; ++k) sig.index_array[bkt] += sig.weights_sorted[pos++];
    }
    return sig;
}

// At least k positions of the index arrays agree exactly.
inline bool match_swod(const SwodSignature& a, const SwodSignature& b, std::uint32_t k = 11) {
    if (a.index_array.size() != b.index_array.size())
        throw LengthMismatchError(a.index_array.size(), b.index_array.size());
    std::uint32_t equal = 0;
    for (std::size_t i = 0; i < a.index_array.size(); ++i)
        if (a.index_array[i] == b.index_array[i]) ++equal;
    return equal >= k;
}

inline std::string dump_swod(const SwodSignature& sig) {
    std::string out = "SWOD n=" + std::to_string(sig.weights_sorted.size()) +
                      " len=" + std::to_string(sig.index_array.size()) + "\n";
    out += "WEIGHTS ";
    for (std::size_t i = 0; i < sig.weights_sorted.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(sig.weights_sorted[i]);
    }
    out += "\nINDEX ";
    for (std::size_t i = 0; i < sig.index_array.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(sig.index_array[i]);
    }
    out += '\n';
    return out;
}

} // namespace mailscan

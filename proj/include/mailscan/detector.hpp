#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acfg.hpp"
#include "acfg_match.hpp"
#include "asm_parser.hpp"
#include "errors.hpp"
#include "lift.hpp"
#include "mail.hpp"
#include "swod.hpp"
#include "template_db.hpp"

namespace mailscan {

// Everything the matchers need to know about one listing, computed once.
struct ProgramAnalysis {
    std::string name;
    Arch arch = Arch::X86;
    MailProgram mail;
    ProgramSignatureAcfg acfg; // merged
    double parse_ms = 0.0;
    double translate_ms = 0.0;
    double acfg_ms = 0.0;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration<double, std::milli>(dt).count();
}

} // namespace detail

struct AnalyzeOptions {
    NormalizeOptions normalize;
    LiftOptions lift;
};

inline ProgramAnalysis analyze_program(const AsmProgram& p, const AnalyzeOptions& opts = {}) {
    ProgramAnalysis a;
    a.name = p.name;
    a.arch = p.arch;

    auto t0 = std::chrono::steady_clock::now();
    AsmProgram clean = normalize(p, opts.normalize);
    a.mail = translate(clean, opts.lift);
    a.translate_ms = detail::ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    a.acfg = merge_blocks(build_acfgs(a.mail));
    a.acfg_ms = detail::ms_since(t0);
    return a;
}

inline ProgramAnalysis analyze_listing(std::string_view text, Arch arch,
                                       std::string name = "<listing>",
                                       const AnalyzeOptions& opts = {}) {
    auto t0 = std::chrono::steady_clock::now();
    AsmProgram p = parse_listing(text, arch, std::move(name));
    double parse_ms = detail::ms_since(t0);
    ProgramAnalysis a = analyze_program(p, opts);
    a.parse_ms = parse_ms;
    return a;
}

inline ProgramAnalysis analyze_listing_file(const std::string& path, Arch arch,
                                            const AnalyzeOptions& opts = {}) {
    auto t0 = std::chrono::steady_clock::now();
    AsmProgram p = parse_listing_file(path, arch);
    double parse_ms = detail::ms_since(t0);
    ProgramAnalysis a = analyze_program(p, opts);
    a.parse_ms = parse_ms;
    return a;
}

// --- Training -------------------------------------------------------------

struct TrainSample {
    std::string family; // empty for benign samples
    ProgramAnalysis analysis;
};

struct TrainConfig {
    bool calibrate = true;
    double default_threshold = 0.70;
    std::uint32_t default_k = 11;
    std::uint32_t index_len = 16;
    WindowConfig window;
    Combinator combinator = Combinator::Either;
    MatchOptions match;
    // Candidate similarity thresholds swept during calibration.
    double sweep_lo = 0.50;
    double sweep_hi = 0.95;
    double sweep_step = 0.05;
};

struct TrainResult {
    TemplateDb db;
    std::vector<std::string> warnings;
    bool calibrated = false;
    double chosen_threshold = 0.0;
    std::uint32_t chosen_k = 0;
};

namespace detail {

inline std::array<double, kPatternCount> distribution_of(
    const std::vector<const ProgramAnalysis*>& items) {
    std::vector<MailProgram> corpus;
    corpus.reserve(items.size());
    for (const auto* a : items) corpus.push_back(a->mail);
    return pattern_distribution(corpus);
}

inline double best_similarity(const ProgramSignatureAcfg& prog,
                              const std::vector<AcfgTemplate>& templates,
                              const MatchOptions& opts) {
    double best = 0.0;
    for (const auto& t : templates) {
        if (t.signature.acfgs.empty() || prog.acfgs.empty()) continue;
        best = std::max(best, similarity(t.signature, prog, opts).value);
    }
    return best;
}

} // namespace detail

// Builds the template database from labelled corpora. When calibration is
// feasible (at least four samples of each class) the similarity threshold and
// the index-match count k are swept against a held-out trailing quarter of
// each corpus; otherwise defaults apply and a warning is recorded.
inline TrainResult train(const std::vector<TrainSample>& malware,
                         const std::vector<TrainSample>& benign,
                         const TrainConfig& cfg = {}) {
    if (malware.empty()) throw EmptyCorpusError("training requires at least one malware sample");

    TrainResult res;
    res.db.index_len = cfg.index_len;
    res.db.combinator = cfg.combinator;
    res.chosen_threshold = cfg.default_threshold;
    res.chosen_k = cfg.default_k;

    const bool feasible = cfg.calibrate && malware.size() >= 4 && benign.size() >= 4;
    if (cfg.calibrate && !feasible)
        res.warnings.push_back(
            "calibration skipped: need at least 4 samples of each class; using defaults");

    if (feasible) {
        // Leading three quarters build trial templates, the rest scores them.
        const std::size_t mal_fit = malware.size() - malware.size() / 4;
        const std::size_t ben_fit = benign.size() - benign.size() / 4;

        std::vector<const ProgramAnalysis*> fit_mal, fit_ben;
        for (std::size_t i = 0; i < mal_fit; ++i) fit_mal.push_back(&malware[i].analysis);
        for (std::size_t i = 0; i < ben_fit; ++i) fit_ben.push_back(&benign[i].analysis);

        std::vector<AcfgTemplate> trial_acfg;
        for (std::size_t i = 0; i < mal_fit; ++i)
            trial_acfg.push_back({malware[i].family, malware[i].analysis.acfg});

        PatternWeights trial_w =
            compute_swod_weights(detail::distribution_of(fit_mal), detail::distribution_of(fit_ben),
                                 cfg.window);
        std::vector<SwodSignature> trial_swod;
        for (std::size_t i = 0; i < mal_fit; ++i)
            trial_swod.push_back(build_swod_signature(malware[i].analysis.mail,
                                                      malware[i].analysis.acfg, trial_w,
                                                      cfg.index_len));

        // Held-out scores, computed once per sample.
        std::vector<double> mal_scores, ben_scores;
        std::vector<std::uint32_t> mal_equal, ben_equal;
        auto eval_holdout = [&](const TrainSample& s, std::vector<double>& scores,
                                std::vector<std::uint32_t>& equals) {
            scores.push_back(detail::best_similarity(s.analysis.acfg, trial_acfg, cfg.match));
            SwodSignature sig = build_swod_signature(s.analysis.mail, s.analysis.acfg, trial_w,
                                                     cfg.index_len);
            std::uint32_t best = 0;
            for (const auto& t : trial_swod) {
                std::uint32_t eq = 0;
                for (std::size_t i = 0; i < cfg.index_len; ++i)
                    if (sig.index_array[i] == t.index_array[i]) ++eq;
                best = std::max(best, eq);
            }
            equals.push_back(best);
        };
        for (std::size_t i = mal_fit; i < malware.size(); ++i)
            eval_holdout(malware[i], mal_scores, mal_equal);
        for (std::size_t i = ben_fit; i < benign.size(); ++i)
            eval_holdout(benign[i], ben_scores, ben_equal);

        // Threshold sweep: maximise detection, then minimise false positives,
        // then prefer the strictest (highest) threshold.
        double best_theta = cfg.default_threshold;
        double best_dr = -1.0, best_fpr = 2.0;
        for (double theta = cfg.sweep_lo; theta <= cfg.sweep_hi + 1e-9; theta += cfg.sweep_step) {
            std::size_t tp = 0, fp = 0;
            for (double s : mal_scores)
                if (s >= theta - 1e-12) ++tp;
            for (double s : ben_scores)
                if (s >= theta - 1e-12) ++fp;
            double dr = mal_scores.empty() ? 0.0 : static_cast<double>(tp) / mal_scores.size();
            double fpr = ben_scores.empty() ? 0.0 : static_cast<double>(fp) / ben_scores.size();
            if (dr > best_dr + 1e-12 || (std::abs(dr - best_dr) <= 1e-12 && fpr < best_fpr - 1e-12) ||
                (std::abs(dr - best_dr) <= 1e-12 && std::abs(fpr - best_fpr) <= 1e-12 &&
                 theta > best_theta)) {
                best_dr = dr;
                best_fpr = fpr;
                best_theta = theta;
            }
        }
        res.chosen_threshold = best_theta;

        // k sweep over the upper half of possible index positions.
        std::uint32_t best_k = cfg.default_k;
        best_dr = -1.0;
        best_fpr = 2.0;
        std::uint32_t k_lo = (cfg.index_len + 1) / 2;
        for (std::uint32_t k = k_lo; k <= cfg.index_len; ++k) {
            std::size_t tp = 0, fp = 0;
            for (std::uint32_t e : mal_equal)
                if (e >= k) ++tp;
            for (std::uint32_t e : ben_equal)
                if (e >= k) ++fp;
            double dr = mal_equal.empty() ? 0.0 : static_cast<double>(tp) / mal_equal.size();
            double fpr = ben_equal.empty() ? 0.0 : static_cast<double>(fp) / ben_equal.size();
            if (dr > best_dr + 1e-12 || (std::abs(dr - best_dr) <= 1e-12 && fpr < best_fpr - 1e-12) ||
                (std::abs(dr - best_dr) <= 1e-12 && std::abs(fpr - best_fpr) <= 1e-12 &&
                 k > best_k)) {
                best_dr = dr;
                best_fpr = fpr;
                best_k = k;
            }
        }
        res.chosen_k = best_k;
        res.calibrated = true;
    }

    // Final templates and weights come from the full corpora.
    std::vector<const ProgramAnalysis*> all_mal, all_ben;
    for (const auto& s : malware) all_mal.push_back(&s.analysis);
    for (const auto& s : benign) all_ben.push_back(&s.analysis);

    std::array<double, kPatternCount> ben_dist{};
    if (!benign.empty()) ben_dist = detail::distribution_of(all_ben);
    res.db.pattern_weights =
        compute_swod_weights(detail::distribution_of(all_mal), ben_dist, cfg.window);
    res.db.pattern_weights.provenance =
        std::to_string(malware.size()) + " malware / " + std::to_string(benign.size()) + " benign";

    for (const auto& s : malware) {
        res.db.acfg_templates.push_back({s.family, s.analysis.acfg});
        res.db.swod_templates.push_back(
            {s.family, build_swod_signature(s.analysis.mail, s.analysis.acfg,
                                            res.db.pattern_weights, cfg.index_len)});
    }
    res.db.acfg_threshold = res.chosen_threshold;
    res.db.swod_k = res.chosen_k;
    return res;
}

// --- Classification --------------------------------------------------------

struct StageTimings {
    double parse_ms = 0.0;
    double translate_ms = 0.0;
    double acfg_ms = 0.0;
    double swod_ms = 0.0;
    double match_ms = 0.0;

    double total_ms() const { return parse_ms + translate_ms + acfg_ms + swod_ms + match_ms; }
};

struct FamilyScore {
    std::string family;
    SimilarityScore score;
};

struct Verdict {
    std::string name;
    bool is_malware = false;
    std::string matched_family;

    bool acfg_hit = false;
    double acfg_score = 0.0; // best similarity over all graph templates
    bool swod_hit = false;
    std::uint32_t swod_equal = 0; // best equal-position count over signatures

    std::vector<FamilyScore> family_scores;
    StageTimings timings;
    std::vector<std::string> warnings;
};

inline Verdict classify_analysis(const ProgramAnalysis& a, const TemplateDb& db,
                                 const MatchOptions& opts = {}) {
    Verdict v;
    v.name = a.name;
    v.timings.parse_ms = a.parse_ms;
    v.timings.translate_ms = a.translate_ms;
    v.timings.acfg_ms = a.acfg_ms;

    auto t0 = std::chrono::steady_clock::now();
    for (const AcfgTemplate& t : db.acfg_templates) {
        if (t.signature.acfgs.empty() || a.acfg.acfgs.empty()) continue;
        SimilarityScore sc = similarity(t.signature, a.acfg, opts, &v.warnings);
        v.family_scores.push_back({t.family, sc});
        if (sc.value > v.acfg_score) v.acfg_score = sc.value;
    }
    v.acfg_hit = !db.acfg_templates.empty() && v.acfg_score >= db.acfg_threshold - 1e-12;
    v.timings.match_ms = detail::ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::string swod_family;
    if (!db.swod_templates.empty()) {
        SwodSignature sig =
            build_swod_signature(a.mail, a.acfg, db.pattern_weights, db.index_len);
        for (const SwodTemplate& t : db.swod_templates) {
            std::uint32_t eq = 0;
            for (std::size_t i = 0; i < sig.index_array.size(); ++i)
                if (i < t.signature.index_array.size() &&
                    sig.index_array[i] == t.signature.index_array[i])
                    ++eq;
            if (eq > v.swod_equal) v.swod_equal = eq;
            if (eq >= db.swod_k && swod_family.empty()) swod_family = t.family;
        }
        v.swod_hit = v.swod_equal >= db.swod_k;
    }
    v.timings.swod_ms = detail::ms_since(t0);

    switch (db.combinator) {
        case Combinator::Either: v.is_malware = v.acfg_hit || v.swod_hit; break;
        case Combinator::Both: v.is_malware = v.acfg_hit && v.swod_hit; break;
        case Combinator::AcfgOnly: v.is_malware = v.acfg_hit; break;
        case Combinator::SwodOnly: v.is_malware = v.swod_hit; break;
    }

    if (v.acfg_hit) {
        // Highest-scoring family; ties resolve to the lexicographically first.
        const FamilyScore* best = nullptr;
        for (const auto& fs : v.family_scores) {
            if (fs.score.value < db.acfg_threshold - 1e-12) continue;
            if (!best || fs.score.value > best->score.value + 1e-12 ||
                (std::abs(fs.score.value - best->score.value) <= 1e-12 &&
                 fs.family < best->family))
                best = &fs;
        }
        if (best) v.matched_family = best->family;
    } else if (v.swod_hit) {
        v.matched_family = swod_family;
    }
    return v;
}

inline Verdict classify_text(std::string_view text, Arch arch, const TemplateDb& db,
                             std::string name = "<listing>", const AnalyzeOptions& aopts = {},
                             const MatchOptions& mopts = {}) {
    return classify_analysis(analyze_listing(text, arch, std::move(name), aopts), db, mopts);
}

inline Verdict classify_file(const std::string& path, Arch arch, const TemplateDb& db,
                             const AnalyzeOptions& aopts = {}, const MatchOptions& mopts = {}) {
    return classify_analysis(analyze_listing_file(path, arch, aopts), db, mopts);
}

} // namespace mailscan

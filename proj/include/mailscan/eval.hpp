#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "detail/parallel.hpp"
#include "detail/rng.hpp"
#include "detector.hpp"
#include "errors.hpp"

namespace mailscan {

enum class Label : std::uint8_t { Benign = 0, Malware = 1 };

inline std::string_view label_name(Label l) { return l == Label::Malware ? "Malware" : "Benign"; }

struct DatasetItem {
    std::string path;
    Label label = Label::Benign;
    std::string family; // empty for benign
    Arch arch = Arch::X86;
    std::string text; // when non-empty, used instead of reading `path`
};

struct LabeledDataset {
    std::vector<DatasetItem> items;
};

// Manifest rows: `path,label,family[,arch]` — label is malware/benign
// (case-insensitive), family may be empty, arch defaults to the argument.
// Lines starting with `#` and a leading `path,...` header are skipped.
inline LabeledDataset load_dataset_manifest(const std::string& path, Arch default_arch = Arch::X86) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    LabeledDataset d;
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = line;
        trimmed.erase(0, trimmed.find_first_not_of(" \t"));
        if (trimmed.empty() || trimmed[0] == '#') continue;

        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() < 2) throw MalformedLineError(lineno, "manifest row needs path,label");
        if (lineno == 1 && cols[0] == "path") continue;

        DatasetItem item;
        item.path = cols[0];
        std::string lab = cols[1];
        std::transform(lab.begin(), lab.end(), lab.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (lab == "malware") item.label = Label::Malware;
        else if (lab == "benign") item.label = Label::Benign;
        else throw MalformedLineError(lineno, "label must be malware or benign: " + cols[1]);
        if (cols.size() > 2) item.family = cols[2];
        item.arch = default_arch;
        if (cols.size() > 3 && !cols[3].empty()) {
            auto a = arch_from_name(cols[3]);
            if (!a) throw MalformedLineError(lineno, "unknown architecture: " + cols[3]);
            item.arch = *a;
        }
        if (!seen.insert(item.path).second)
            throw MalformedLineError(lineno, "duplicate path in manifest: " + item.path);
        d.items.push_back(std::move(item));
    }
    return d;
}

struct Metrics {
    std::uint64_t tp = 0, fn = 0, fp = 0, tn = 0;
    double dr = 0.0;
    double fpr = 0.0;
    std::vector<Metrics> per_fold;

    void finalize() {
        dr = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        fpr = (fp + tn) ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
    }
};

// Stratified split: each class is shuffled and dealt round-robin, the second
// class starting where the first left off so fold sizes stay within one item.
inline std::vector<std::vector<std::size_t>> nfold_split(const LabeledDataset& d, std::size_t n,
                                                         std::uint64_t seed) {
    if (n < 2) throw TooFewItemsError("need at least 2 folds");
    if (d.items.size() < n)
        throw TooFewItemsError("dataset has " + std::to_string(d.items.size()) +
                               " items, fewer than " + std::to_string(n) + " folds");

    std::vector<std::size_t> mal, ben;
    for (std::size_t i = 0; i < d.items.size(); ++i)
        (d.items[i].label == Label::Malware ? mal : ben).push_back(i);

    detail::Rng rng(seed);
    rng.shuffle(mal);
    rng.shuffle(ben);

    std::vector<std::vector<std::size_t>> folds(n);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < mal.size(); ++i) folds[cursor++ % n].push_back(mal[i]);
    cursor %= n;
    for (std::size_t i = 0; i < ben.size(); ++i) folds[cursor++ % n].push_back(ben[i]);
    return folds;
}

struct ScoredSample {
    double score = 0.0; // best graph-similarity value
    Label label = Label::Benign;
};

struct CvResult {
    Metrics metrics;                  // pooled counts, per_fold filled in
    std::vector<ScoredSample> scores; // one per item, fold order
};

inline CvResult run_cv(const LabeledDataset& d, std::size_t n, std::uint64_t seed,
                       const TrainConfig& cfg = {}, const AnalyzeOptions& aopts = {},
                       const MatchOptions& mopts = {}, std::size_t jobs = 1) {
    auto folds = nfold_split(d, n, seed);

    // Each listing is analyzed exactly once and reused across folds.
    std::vector<ProgramAnalysis> analyses(d.items.size());
    detail::parallel_for(d.items.size(), jobs, [&](std::size_t i) {
        const DatasetItem& item = d.items[i];
        analyses[i] = !item.text.empty()
                          ? analyze_listing(item.text, item.arch, item.path, aopts)
                          : analyze_listing_file(item.path, item.arch, aopts);
    });

    CvResult res;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<bool> held(d.items.size(), false);
        for (std::size_t idx : folds[f]) held[idx] = true;

        std::vector<TrainSample> mal, ben;
        for (std::size_t i = 0; i < d.items.size(); ++i) {
            if (held[i]) continue;
            if (d.items[i].label == Label::Malware)
                mal.push_back({d.items[i].family, analyses[i]});
            else
                ben.push_back({"", analyses[i]});
        }
        TrainResult tr = train(mal, ben, cfg);

        Metrics fold;
        for (std::size_t idx : folds[f]) {
            Verdict v = classify_analysis(analyses[idx], tr.db, mopts);
            if (d.items[idx].label == Label::Malware)
                (v.is_malware ? fold.tp : fold.fn)++;
            else
                (v.is_malware ? fold.fp : fold.tn)++;
            res.scores.push_back({v.acfg_score, d.items[idx].label});
        }
        fold.finalize();
        res.metrics.tp += fold.tp;
        res.metrics.fn += fold.fn;
        res.metrics.fp += fold.fp;
        res.metrics.tn += fold.tn;
        res.metrics.per_fold.push_back(std::move(fold));
    }
    res.metrics.finalize();
    return res;
}

// --- ROC / AUC --------------------------------------------------------------

struct RocPoint {
    double fpr = 0.0;
    double dr = 0.0;
    double threshold = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

// Threshold sweep over the distinct scores, descending; equal scores step
// together. AUC by trapezoidal integration, which equals the pairwise
// estimator P(s_mal > s_ben) + ½·P(s_mal = s_ben).
inline RocCurve roc_and_auc(const std::vector<ScoredSample>& scores) {
    std::uint64_t pos = 0, neg = 0;
    for (const auto& s : scores) (s.label == Label::Malware ? pos : neg)++;
    if (pos == 0 || neg == 0) throw SingleClassError("ROC needs both labels present");

    std::vector<ScoredSample> sorted = scores;
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        double t = sorted[i].score;
        while (i < sorted.size() && sorted[i].score == t) {
            (sorted[i].label == Label::Malware ? tp : fp)++;
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos), t});
    }

    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const RocPoint& a = curve.points[k - 1];
        const RocPoint& b = curve.points[k];
        curve.auc += (b.fpr - a.fpr) * (a.dr + b.dr) / 2.0;
    }
    return curve;
}

// --- Reports ----------------------------------------------------------------

namespace detail {

inline std::string json_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

inline std::string fmt_fraction(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(6) << v;
    return ss.str();
}

} // namespace detail

inline void write_report_csv(const Metrics& m, std::ostream& os) {
    os << "fold,tp,fn,fp,tn,dr,fpr\n";
    for (std::size_t i = 0; i < m.per_fold.size(); ++i) {
        const Metrics& f = m.per_fold[i];
        os << i << ',' << f.tp << ',' << f.fn << ',' << f.fp << ',' << f.tn << ','
           << detail::fmt_fraction(f.dr) << ',' << detail::fmt_fraction(f.fpr) << '\n';
    }
    os << "total," << m.tp << ',' << m.fn << ',' << m.fp << ',' << m.tn << ','
       << detail::fmt_fraction(m.dr) << ',' << detail::fmt_fraction(m.fpr) << '\n';
}

// Summary object; the curve (scored by graph similarity) is optional.
inline void write_report_json(const Metrics& m, const RocCurve* roc, std::ostream& os) {
    os << "{\"tp\":" << m.tp << ",\"fn\":" << m.fn << ",\"fp\":" << m.fp << ",\"tn\":" << m.tn
       << ",\"dr\":" << detail::fmt_fraction(m.dr) << ",\"fpr\":" << detail::fmt_fraction(m.fpr);
    os << ",\"folds\":[";
    for (std::size_t i = 0; i < m.per_fold.size(); ++i) {
        const Metrics& f = m.per_fold[i];
        if (i) os << ',';
        os << "{\"fold\":" << i << ",\"tp\":" << f.tp << ",\"fn\":" << f.fn << ",\"fp\":" << f.fp
           << ",\"tn\":" << f.tn << ",\"dr\":" << detail::fmt_fraction(f.dr)
           << ",\"fpr\":" << detail::fmt_fraction(f.fpr) << "}";
    }
    os << "]";
    if (roc) {
        os << ",\"auc\":" << detail::fmt_fraction(roc->auc) << ",\"roc\":[";
        for (std::size_t i = 0; i < roc->points.size(); ++i) {
            const RocPoint& p = roc->points[i];
            if (i) os << ',';
            os << "{\"fpr\":" << detail::fmt_fraction(p.fpr)
               << ",\"dr\":" << detail::fmt_fraction(p.dr) << "}";
        }
        os << "]";
    }
    os << "}\n";
}

inline void write_roc_svg(const RocCurve& roc, std::ostream& os) {
    constexpr int kSize = 440, kMargin = 40, kPlot = kSize - 2 * kMargin;
    auto px = [&](double fpr) { return kMargin + fpr * kPlot; };
    auto py = [&](double dr) { return kSize - kMargin - dr * kPlot; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
       << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n";
    os << "<rect width=\"" << kSize << "\" height=\"" << kSize << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
       << py(0) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(0) << "\" y2=\""
       << py(1) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
       << py(1) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < roc.points.size(); ++i) {
        if (i) os << ' ';
        os << detail::fmt_fraction(px(roc.points[i].fpr)) << ','
           << detail::fmt_fraction(py(roc.points[i].dr));
    }
    os << "\"/>\n";
    os << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize - 8
       << "\" text-anchor=\"middle\" font-size=\"14\">false positive rate</text>\n";
    os << "<text x=\"14\" y=\"" << kSize / 2
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 14 " << kSize / 2
       << ")\">detection rate</text>\n";
    os << "<text x=\"" << kSize - kMargin << "\" y=\"" << kMargin
       << "\" text-anchor=\"end\" font-size=\"14\">AUC = " << detail::fmt_fraction(roc.auc)
       << "</text>\n";
    os << "</svg>\n";
}

} // namespace mailscan

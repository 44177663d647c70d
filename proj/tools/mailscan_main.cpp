// mailscan — static listing analyzer and variant-detection toolkit.
//
// Subcommands:
//   translate  lift a listing and print its MAIL / ACFG / SWOD dump
//   train      build a template database from malware and benign directories
//   scan       classify listings against a database (JSON-lines verdicts)
//   eval       n-fold cross validation over a dataset manifest
//   mutate     generate obfuscated variants of listings
//
// A key=value config file may be supplied with --config or the
// MAILSCAN_CONFIG environment variable; command-line flags win over the
// file, the file wins over built-in defaults.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mailscan/detail/parallel.hpp"
#include "mailscan/mailscan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string arch = "x86";
    std::string junk_path;
    std::string libsyms_path;

    // Loaded lists must outlive the option structs that point at them.
    std::set<std::string> junk;
    std::set<std::string> libsyms;

    mailscan::Arch arch_value() const {
        auto a = mailscan::arch_from_name(arch);
        if (!a) throw mailscan::Error("unknown architecture: " + arch);
        return *a;
    }

    mailscan::AnalyzeOptions analyze_options() {
        mailscan::AnalyzeOptions opts;
        if (!junk_path.empty()) {
            junk = mailscan::load_junk_list(junk_path);
            opts.normalize.junk = &junk;
        }
        if (!libsyms_path.empty()) {
            libsyms = mailscan::load_library_symbols(libsyms_path);
            opts.lift.library_symbols = &libsyms;
        }
        return opts;
    }
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--arch", c.arch, "Instruction set of the listings")
        ->check(CLI::IsMember({"x86", "arm"}))
        ->capture_default_str();
    cmd->add_option("--junk", c.junk_path, "File listing junk mnemonics to strip (one per line)");
    cmd->add_option("--libsyms", c.libsyms_path, "File listing library symbols (one per line)");
}

std::vector<std::string> listing_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw mailscan::IoError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".lst") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

// Variants are named <base>__<kind>_s<seed>.lst; the family is the base stem.
std::string family_of_path(const std::string& path) {
    std::string stem = fs::path(path).stem().string();
    auto sep = stem.find("__");
    return sep == std::string::npos ? stem : stem.substr(0, sep);
}

json verdict_to_json(const mailscan::Verdict& v, const std::string& path) {
    json stages;
    stages["parse"] = v.timings.parse_ms;
    stages["translate"] = v.timings.translate_ms;
    stages["acfg"] = v.timings.acfg_ms;
    stages["swod"] = v.timings.swod_ms;
    stages["match"] = v.timings.match_ms;

    json o;
    o["path"] = path;
    o["label"] = v.is_malware ? "Malware" : "Benign";
    o["family"] = v.matched_family;
    o["acfg_score"] = v.acfg_score;
    o["swod_matched"] = v.swod_hit;
    o["ms_per_stage"] = stages;
    return o;
}

// --- translate --------------------------------------------------------------

struct TranslateOpts {
    CommonOpts common;
    std::string input;
    std::string dump = "mail";
    std::string db_path;
};

int run_translate(TranslateOpts& o) {
    mailscan::AnalyzeOptions aopts = o.common.analyze_options();
    mailscan::ProgramAnalysis a =
        mailscan::analyze_listing_file(o.input, o.common.arch_value(), aopts);

    if (o.dump == "mail") {
        std::cout << mailscan::dump_mail(a.mail);
    } else if (o.dump == "acfg") {
        std::cout << mailscan::dump_acfg(a.acfg);
    } else {
        mailscan::PatternWeights weights; // zero weights unless a db supplies them
        std::size_t index_len = 16;
        if (!o.db_path.empty()) {
            mailscan::TemplateDb db = mailscan::load_db(o.db_path);
            weights = db.pattern_weights;
            index_len = db.index_len;
        }
        std::cout << mailscan::dump_swod(
            mailscan::build_swod_signature(a.mail, a.acfg, weights, index_len));
    }
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string malware_dir;
    std::string benign_dir;
    std::string out_path;
    bool no_calibrate = false;
    double threshold = 0.70;
    std::uint32_t k = 11;
    std::uint32_t index_len = 16;
    std::string combinator = "either";
};

int run_train(TrainOpts& o) {
    mailscan::AnalyzeOptions aopts = o.common.analyze_options();
    mailscan::Arch arch = o.common.arch_value();

    std::vector<mailscan::TrainSample> malware, benign;
    for (const std::string& path : listing_files(o.malware_dir))
        malware.push_back({family_of_path(path), mailscan::analyze_listing_file(path, arch, aopts)});
    for (const std::string& path : listing_files(o.benign_dir))
        benign.push_back({"", mailscan::analyze_listing_file(path, arch, aopts)});

    mailscan::TrainConfig cfg;
    cfg.calibrate = !o.no_calibrate;
    cfg.default_threshold = o.threshold;
    cfg.default_k = o.k;
    cfg.index_len = o.index_len;
    cfg.combinator = mailscan::combinator_from_name(o.combinator);

    mailscan::TrainResult res = mailscan::train(malware, benign, cfg);
    mailscan::save_db(res.db, o.out_path);

    for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "trained " << res.db.acfg_templates.size() << " template(s) from "
              << malware.size() << " malware / " << benign.size() << " benign listings\n";
    std::cout << "acfg_threshold=" << res.db.acfg_threshold << " swod_k=" << res.db.swod_k << "/"
              << res.db.index_len << (res.calibrated ? " (calibrated)" : " (defaults)") << "\n";
    std::cout << "database written to " << o.out_path << "\n";
    return 0;
}

// --- scan ---------------------------------------------------------------------

struct ScanOpts {
    CommonOpts common;
    std::string db_path;
    std::vector<std::string> inputs;
    std::size_t jobs = 1;
};

int run_scan(ScanOpts& o) {
    mailscan::TemplateDb db = mailscan::load_db(o.db_path);
    mailscan::AnalyzeOptions aopts = o.common.analyze_options();
    mailscan::Arch arch = o.common.arch_value();

    std::vector<mailscan::Verdict> verdicts(o.inputs.size());
    mailscan::detail::parallel_for(o.inputs.size(), o.jobs, [&](std::size_t i) {
        verdicts[i] = mailscan::classify_file(o.inputs[i], arch, db, aopts);
    });

    std::size_t hits = 0;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        if (verdicts[i].is_malware) ++hits;
        for (const std::string& w : verdicts[i].warnings) std::cerr << "warning: " << w << "\n";
        std::cout << verdict_to_json(verdicts[i], o.inputs[i]).dump() << "\n";
    }
    std::cout << "summary: " << o.inputs.size() << " scanned, " << hits << " malware, "
              << (o.inputs.size() - hits) << " benign\n";
    return hits > 0 ? 1 : 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalOpts {
    CommonOpts common;
    std::string dataset;
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    std::string out_prefix = "eval_report";
    std::string svg_path;
    std::size_t jobs = 1;
    bool no_calibrate = false;
};

int run_eval(EvalOpts& o) {
    mailscan::AnalyzeOptions aopts = o.common.analyze_options();
    mailscan::LabeledDataset d =
        mailscan::load_dataset_manifest(o.dataset, o.common.arch_value());

    mailscan::TrainConfig cfg;
    cfg.calibrate = !o.no_calibrate;
    mailscan::CvResult res = mailscan::run_cv(d, o.folds, o.seed, cfg, aopts, {}, o.jobs);
    mailscan::RocCurve roc = mailscan::roc_and_auc(res.scores);

    std::ofstream csv(o.out_prefix + ".csv");
    if (!csv) throw mailscan::IoError("cannot write " + o.out_prefix + ".csv");
    mailscan::write_report_csv(res.metrics, csv);

    std::ofstream js(o.out_prefix + ".json");
    if (!js) throw mailscan::IoError("cannot write " + o.out_prefix + ".json");
    mailscan::write_report_json(res.metrics, &roc, js);

    if (!o.svg_path.empty()) {
        std::ofstream svg(o.svg_path);
        if (!svg) throw mailscan::IoError("cannot write " + o.svg_path);
        mailscan::write_roc_svg(roc, svg);
    }

    std::cout << "folds=" << o.folds << " dr=" << res.metrics.dr << " fpr=" << res.metrics.fpr
              << " auc=" << roc.auc << "\n";
    std::cout << "reports: " << o.out_prefix << ".csv, " << o.out_prefix << ".json";
    if (!o.svg_path.empty()) std::cout << ", " << o.svg_path;
    std::cout << "\n";
    return 0;
}

// --- mutate --------------------------------------------------------------------

struct MutateOpts {
    CommonOpts common;
    std::string input;
    std::string out_path;
    std::string kind = "nop-insert";
    std::uint64_t seed = 1;
    double intensity = 0.5;
    std::string in_dir;
    std::string out_dir;
    std::string kinds_csv;
    std::string seeds_csv = "1";
};

std::vector<mailscan::ObfuscationKind> parse_kinds(const std::string& csv) {
    std::vector<mailscan::ObfuscationKind> kinds;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (tok == "all") {
            for (std::size_t i = 0; i < mailscan::kObfuscationKindCount; ++i)
                kinds.push_back(static_cast<mailscan::ObfuscationKind>(i));
            continue;
        }
        auto k = mailscan::obfuscation_kind_from_name(tok);
        if (!k) throw mailscan::Error("unknown obfuscation kind: " + tok);
        kinds.push_back(*k);
    }
    if (kinds.empty()) throw mailscan::Error("no obfuscation kinds given");
    return kinds;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        seeds.push_back(std::stoull(tok));
    }
    if (seeds.empty()) throw mailscan::Error("no seeds given");
    return seeds;
}

int run_mutate(MutateOpts& o) {
    mailscan::Arch arch = o.common.arch_value();
    const bool corpus_mode = !o.in_dir.empty() || !o.out_dir.empty();

    if (corpus_mode) {
        if (o.in_dir.empty() || o.out_dir.empty())
            throw mailscan::Error("corpus mode needs both --in-dir and --out-dir");

        mailscan::LabeledDataset bases;
        for (const std::string& path : listing_files(o.in_dir)) {
            mailscan::DatasetItem item;
            item.path = path;
            item.label = mailscan::Label::Malware;
            item.family = family_of_path(path);
            item.arch = arch;
            bases.items.push_back(std::move(item));
        }
        std::vector<mailscan::ObfuscationKind> kinds =
            parse_kinds(o.kinds_csv.empty() ? "all" : o.kinds_csv);
        mailscan::VariantCorpus corpus = mailscan::generate_variant_corpus(
            bases, kinds, parse_seeds(o.seeds_csv), o.intensity, o.out_dir);

        for (const std::string& s : corpus.skipped) std::cerr << "skipped: " << s << "\n";
        std::cout << "generated " << corpus.dataset.items.size() << " variant(s), skipped "
                  << corpus.skipped.size() << "\n";
        std::cout << "manifest: " << corpus.manifest_path << "\n";
        return 0;
    }

    if (o.input.empty()) throw mailscan::Error("single mode needs an input listing");
    auto kind = mailscan::obfuscation_kind_from_name(o.kind);
    if (!kind) throw mailscan::Error("unknown obfuscation kind: " + o.kind);

    mailscan::AsmProgram p = mailscan::parse_listing_file(o.input, arch);
    std::string text = mailscan::to_listing(mailscan::mutate(p, *kind, o.seed, o.intensity));
    if (o.out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(o.out_path, std::ios::binary);
        if (!f) throw mailscan::IoError("cannot write " + o.out_path);
        f << text;
        std::cout << "variant written to " << o.out_path << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"static listing analyzer and variant-detection toolkit"};
    app.set_config("--config", "", "key=value config file")->envname("MAILSCAN_CONFIG");
    app.require_subcommand(1);

    TranslateOpts t;
    CLI::App* cmd_translate = app.add_subcommand("translate", "Lift a listing and print a dump");
    cmd_translate->add_option("input", t.input, "Listing file")->required();
    cmd_translate->add_option("--dump", t.dump, "Dump to print")
        ->check(CLI::IsMember({"mail", "acfg", "swod"}))
        ->capture_default_str();
    cmd_translate->add_option("--db", t.db_path, "Database supplying weights for --dump swod");
    add_common(cmd_translate, t.common);

    TrainOpts tr;
    CLI::App* cmd_train = app.add_subcommand("train", "Build a template database");
    cmd_train->add_option("--malware", tr.malware_dir, "Directory of malware listings (*.lst)")
        ->required();
    cmd_train->add_option("--benign", tr.benign_dir, "Directory of benign listings (*.lst)")
        ->required();
    cmd_train->add_option("--out", tr.out_path, "Output database path")->required();
    cmd_train->add_flag("--no-calibrate", tr.no_calibrate, "Skip threshold calibration");
    cmd_train->add_option("--threshold", tr.threshold, "Fallback similarity threshold")
        ->capture_default_str();
    cmd_train->add_option("--k", tr.k, "Fallback index-match count")->capture_default_str();
    cmd_train->add_option("--index-len", tr.index_len, "Index array length")
        ->capture_default_str();
    cmd_train->add_option("--combinator", tr.combinator, "Engine combination rule")
        ->check(CLI::IsMember({"either", "both", "acfg-only", "swod-only"}))
        ->capture_default_str();
    add_common(cmd_train, tr.common);

    ScanOpts sc;
    CLI::App* cmd_scan = app.add_subcommand("scan", "Classify listings against a database");
    cmd_scan->add_option("--db", sc.db_path, "Template database")->required();
    cmd_scan->add_option("inputs", sc.inputs, "Listing files")->required();
    cmd_scan->add_option("--jobs", sc.jobs, "Worker threads")->capture_default_str();
    add_common(cmd_scan, sc.common);

    EvalOpts ev;
    CLI::App* cmd_eval = app.add_subcommand("eval", "n-fold cross validation");
    cmd_eval->add_option("--dataset", ev.dataset, "Manifest CSV: path,label[,family[,arch]]")
        ->required();
    cmd_eval->add_option("--folds", ev.folds, "Fold count")->capture_default_str();
    cmd_eval->add_option("--seed", ev.seed, "Split seed")->capture_default_str();
    cmd_eval->add_option("--out-prefix", ev.out_prefix, "Report file prefix")
        ->capture_default_str();
    cmd_eval->add_option("--svg", ev.svg_path, "Also write the ROC curve as SVG");
    cmd_eval->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str();
    cmd_eval->add_flag("--no-calibrate", ev.no_calibrate, "Skip threshold calibration");
    add_common(cmd_eval, ev.common);

    MutateOpts mu;
    CLI::App* cmd_mutate = app.add_subcommand("mutate", "Generate obfuscated variants");
    cmd_mutate->add_option("--in", mu.input, "Input listing (single mode)");
    cmd_mutate->add_option("--out", mu.out_path, "Output listing (single mode; stdout if absent)");
    cmd_mutate->add_option("--kind", mu.kind, "Obfuscation kind (single mode)")
        ->capture_default_str();
    cmd_mutate->add_option("--seed", mu.seed, "Mutation seed")->capture_default_str();
    cmd_mutate->add_option("--intensity", mu.intensity, "Fraction of sites to rewrite, (0,1]")
        ->capture_default_str();
    cmd_mutate->add_option("--in-dir", mu.in_dir, "Directory of base listings (corpus mode)");
    cmd_mutate->add_option("--out-dir", mu.out_dir, "Variant output directory (corpus mode)");
    cmd_mutate->add_option("--kinds", mu.kinds_csv, "Comma list of kinds, or 'all' (corpus mode)");
    cmd_mutate->add_option("--seeds", mu.seeds_csv, "Comma list of seeds (corpus mode)")
        ->capture_default_str();
    add_common(cmd_mutate, mu.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_translate->parsed()) return run_translate(t);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_scan->parsed()) return run_scan(sc);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_mutate->parsed()) return run_mutate(mu);
    } catch (const mailscan::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mailscan/acfg.hpp"
#include "mailscan/acfg_match.hpp"
#include "mailscan/lift.hpp"
#include "mailscan/mutator.hpp"
#include "mailscan/swod.hpp"

#include "../support/corpus.hpp"
#include "../support/interpreter.hpp"
#include "../support/listing_builder.hpp"
#include "../support/proc.hpp"

using namespace mailscan;
using Catch::Matchers::ContainsSubstring;

namespace {

AsmProgram parse_base(int i, const std::string& name = "base") {
    return parse_listing(testsupport::make_family_base(i), Arch::X86, name);
}

struct Analyzed {
    MailProgram mail;
    ProgramSignatureAcfg sig;
};

Analyzed analyzed(const AsmProgram& p) {
    Analyzed a;
    a.mail = translate(normalize(p));
    a.sig = build_acfgs(a.mail);
    for (auto& g : a.sig.acfgs) g = merge_blocks(g);
    return a;
}

std::vector<ObfuscationKind> all_kinds() {
    std::vector<ObfuscationKind> ks;
    for (std::size_t i = 0; i < kObfuscationKindCount; ++i)
        ks.push_back(static_cast<ObfuscationKind>(i));
    return ks;
}

std::uint64_t address_of_label(const AsmProgram& p, const std::string& name) {
    for (const auto& [addr, label] : p.labels)
        if (label == name) return addr;
    FAIL("label not found: " << name);
    return 0;
}

std::vector<std::string> labels_by_address(const AsmProgram& p) {
    auto sorted = p.labels;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::string> names;
    for (const auto& [addr, name] : sorted) names.push_back(name);
    return names;
}

} // namespace

TEST_CASE("obfuscation kinds are named and counted") {
    REQUIRE(kObfuscationKindCount == 7);
    const std::vector<std::string> expected = {
        "nop-insert",      "junk-insert",  "call-indirect", "func-indirect",
        "register-rename", "block-reorder", "goto-heavy",
    };
    for (std::size_t i = 0; i < kObfuscationKindCount; ++i) {
        auto k = static_cast<ObfuscationKind>(i);
        REQUIRE(std::string(obfuscation_kind_name(k)) == expected[i]);
        auto back = obfuscation_kind_from_name(expected[i]);
        REQUIRE(back.has_value());
        REQUIRE(*back == k);
    }
    REQUIRE_FALSE(obfuscation_kind_from_name("copy-paste").has_value());
    REQUIRE_FALSE(obfuscation_kind_from_name("").has_value());
    REQUIRE_FALSE(obfuscation_kind_from_name("NOP-INSERT").has_value());
}

TEST_CASE("intensity outside (0, 1] is rejected") {
    AsmProgram p = parse_base(0);
    for (double bad : {0.0, -0.25, 1.0001, 2.0}) {
        REQUIRE_THROWS_AS(mutate(p, ObfuscationKind::NopInsert, 1, bad), Error);
        REQUIRE_THROWS_WITH(mutate(p, ObfuscationKind::NopInsert, 1, bad),
                            ContainsSubstring("intensity must lie in (0, 1]"));
    }
    REQUIRE_NOTHROW(mutate(p, ObfuscationKind::NopInsert, 1, 1.0));
    REQUIRE_NOTHROW(mutate(p, ObfuscationKind::NopInsert, 1, 0.001));
}

TEST_CASE("the empty program cannot be mutated") {
    AsmProgram p;
    p.arch = Arch::X86;
    for (ObfuscationKind k : all_kinds())
        REQUIRE_THROWS_AS(mutate(p, k, 1, 0.5), EmptyProgramError);
}

TEST_CASE("mutation is deterministic in the seed") {
    AsmProgram base = parse_base(3);
    for (ObfuscationKind k : all_kinds()) {
        INFO("kind " << obfuscation_kind_name(k));
        std::string once = to_listing(mutate(base, k, 9, 0.5));
        std::string twice = to_listing(mutate(base, k, 9, 0.5));
        REQUIRE(once == twice);
    }
    // Different seeds pick different insertion sites essentially always.
    std::string first = to_listing(mutate(base, ObfuscationKind::NopInsert, 1, 0.3));
    bool any_differs = false;
    for (std::uint64_t seed = 2; seed <= 6; ++seed)
        any_differs |= to_listing(mutate(base, ObfuscationKind::NopInsert, seed, 0.3)) != first;
    REQUIRE(any_differs);
}

TEST_CASE("every kind yields a listing that parses and lifts") {
    for (int i : {0, 2, 5}) {
        AsmProgram base = parse_base(i, "b" + std::to_string(i));
        for (ObfuscationKind k : all_kinds()) {
            INFO("base " << i << ", kind " << obfuscation_kind_name(k));
            MutationResult res = mutate_ex(base, k, 4, 0.5);
            REQUIRE(res.program.name ==
                    base.name + "#" + std::string(obfuscation_kind_name(k)));

            AsmProgram round = parse_listing(to_listing(res.program), Arch::X86, res.program.name);
            REQUIRE(round.instructions == res.program.instructions);

            Analyzed a = analyzed(round);
            REQUIRE_FALSE(a.mail.statements.empty());
            REQUIRE_FALSE(a.sig.acfgs.empty());
        }
    }
}

TEST_CASE("padding insertion adds only filler and normalization strips it") {
    AsmProgram base = parse_base(1);
    const std::size_t n = base.instructions.size();
    std::set<std::uint64_t> base_addrs;
    for (const auto& insn : base.instructions) base_addrs.insert(insn.address);

    AsmProgram nops = mutate(base, ObfuscationKind::NopInsert, 5, 1.0);
    REQUIRE(nops.instructions.size() == 2 * n);
    for (const auto& insn : nops.instructions)
        if (!base_addrs.count(insn.address)) REQUIRE(insn.mnemonic == "NOP");

    AsmProgram junk = mutate(base, ObfuscationKind::JunkInsert, 5, 1.0);
    REQUIRE(junk.instructions.size() == 2 * n);
    const std::set<std::string> filler = {"NOP", "PAUSE", "FNOP"};
    bool saw_varied = false;
    for (const auto& insn : junk.instructions)
        if (!base_addrs.count(insn.address)) {
            REQUIRE(filler.count(insn.mnemonic) == 1);
            saw_varied |= insn.mnemonic != "NOP";
        }
    REQUIRE(saw_varied);

    REQUIRE(normalize(nops).instructions == normalize(base).instructions);
    REQUIRE(normalize(junk).instructions == normalize(base).instructions);
}

TEST_CASE("padding and renaming leave both signature kinds unchanged") {
    PatternWeights w;
    for (std::size_t p = 0; p < kPatternCount; ++p)
        w.weight[p] = static_cast<std::int64_t>(p % 7) - 3;

    for (int i : {0, 1, 2}) {
        AsmProgram base = parse_base(i);
        Analyzed b = analyzed(base);
        SwodSignature sb = build_swod_signature(b.mail, b.sig, w);

        for (ObfuscationKind k : {ObfuscationKind::NopInsert, ObfuscationKind::JunkInsert,
                                  ObfuscationKind::RegisterRename}) {
            INFO("base " << i << ", kind " << obfuscation_kind_name(k));
            AsmProgram var = mutate(base, k, 7, 0.8);
            Analyzed v = analyzed(var);

            // The lifted statement stream is bit-for-bit the same, so both the
            // graph signatures and the statistical signature must agree.
            REQUIRE(v.mail.statements == b.mail.statements);
            REQUIRE(v.sig.acfgs.size() == b.sig.acfgs.size());
            for (std::size_t g = 0; g < b.sig.acfgs.size(); ++g)
                REQUIRE(signature_equal(b.sig.acfgs[g], v.sig.acfgs[g]));

            SwodSignature sv = build_swod_signature(v.mail, v.sig, w);
            REQUIRE(sv.weights_sorted == sb.weights_sorted);
            REQUIRE(sv.index_array == sb.index_array);
        }
    }
}

TEST_CASE("call indirection reroutes internal calls through fresh thunks") {
    AsmProgram base = parse_base(2);
    AsmProgram var = mutate(base, ObfuscationKind::CallIndirect, 3, 1.0);

    // base 2 has exactly four internal calls (main -> fa..fd).
    REQUIRE(var.instructions.size() == base.instructions.size() + 4);
    REQUIRE(var.labels.size() == base.labels.size() + 4);
    std::size_t thunks = 0;
    for (const auto& [addr, name] : var.labels)
        if (name.rfind("__thunk", 0) == 0) ++thunks;
    REQUIRE(thunks == 4);

    // Every rerouted call now names a thunk, and each thunk jumps onward.
    std::size_t thunk_calls = 0;
    for (const auto& insn : var.instructions)
        if (insn.mnemonic == "CALL" && insn.operands.size() == 1 &&
            insn.operands[0].kind == OperandKind::Label &&
            insn.operands[0].label.rfind("__thunk", 0) == 0)
            ++thunk_calls;
    REQUIRE(thunk_calls == 4);

    // The original function graphs survive unchanged; the thunks append
    // single-jump graphs after them.
    Analyzed b = analyzed(base);
    Analyzed v = analyzed(var);
    REQUIRE(v.sig.acfgs.size() == b.sig.acfgs.size() + 4);
    for (std::size_t g = 0; g < b.sig.acfgs.size(); ++g)
        REQUIRE(signature_equal(b.sig.acfgs[g], v.sig.acfgs[g]));
    for (std::size_t g = b.sig.acfgs.size(); g < v.sig.acfgs.size(); ++g) {
        REQUIRE(v.sig.acfgs[g].blocks.size() == 1);
        REQUIRE(v.sig.acfgs[g].blocks[0].pattern_seq ==
                std::vector<MailPattern>{MailPattern::JUMP_CONSTANT});
    }

    AsmProgram external = parse_listing("0: call printf\n4: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(external, ObfuscationKind::CallIndirect, 1, 0.5),
                        ContainsSubstring("no direct internal call"));
    AsmProgram benign = parse_listing(testsupport::make_benign(0), Arch::X86);
    REQUIRE_THROWS_AS(mutate(benign, ObfuscationKind::CallIndirect, 1, 0.5), NotApplicableError);
}

TEST_CASE("function indirection moves entry labels onto trampolines") {
    AsmProgram base = parse_base(0);
    AsmProgram var = mutate(base, ObfuscationKind::FuncIndirect, 2, 1.0);

    REQUIRE(var.labels.size() == 2 * base.labels.size());
    const std::uint64_t old_end = base.instructions.back().address;
    for (const std::string name : {"main", "fa", "fb", "fc", "fd"}) {
        // The implementation stays at the original address; the public name
        // now marks a fresh jump stub past the end of the base listing.
        REQUIRE(address_of_label(var, name + "__impl") == address_of_label(base, name));
        REQUIRE(address_of_label(var, name) > old_end);
    }

    AsmProgram unlabeled = parse_listing("0: mov rax, 0x1\n4: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(unlabeled, ObfuscationKind::FuncIndirect, 1, 0.5),
                        ContainsSubstring("no labels to indirect"));
}

TEST_CASE("register renaming is a fixpoint-free permutation of used families") {
    AsmProgram base = parse_base(4);
    MutationResult res = mutate_ex(base, ObfuscationKind::RegisterRename, 6, 1.0);

    REQUIRE_FALSE(res.reg_map.empty());
    std::set<int> images;
    for (const auto& [from, to] : res.reg_map) {
        REQUIRE(from != to);
        images.insert(to);
    }
    REQUIRE(images.size() == res.reg_map.size());
    REQUIRE(to_listing(res.program) != to_listing(base));

    // Other kinds report an empty map.
    REQUIRE(mutate_ex(base, ObfuscationKind::NopInsert, 6, 1.0).reg_map.empty());

    AsmProgram regless = parse_listing("0: push 0x5\n4: hlt\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(regless, ObfuscationKind::RegisterRename, 1, 0.5),
                        ContainsSubstring("no renameable general registers"));
}

TEST_CASE("block reorder permutes labelled functions") {
    AsmProgram base = parse_base(5);
    AsmProgram var = mutate(base, ObfuscationKind::BlockReorder, 8, 1.0);

    std::vector<std::string> before = labels_by_address(base);
    std::vector<std::string> after = labels_by_address(var);
    REQUIRE(before == std::vector<std::string>{"main", "fa", "fb", "fc", "fd"});
    REQUIRE(after != before);
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());
    REQUIRE(after == before);

    AsmProgram single = parse_listing("f:\n0: mov rax, 0x1\n4: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(single, ObfuscationKind::BlockReorder, 1, 0.5),
                        ContainsSubstring("fewer than two labelled functions"));

    AsmProgram fallthrough = parse_listing("f:\n0: mov rax, 0x1\ng:\n4: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(fallthrough, ObfuscationKind::BlockReorder, 1, 0.5),
                        ContainsSubstring("fall through"));

    AsmProgram preamble =
        parse_listing("0: mov rax, 0x1\nf:\n4: ret\ng:\n8: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(preamble, ObfuscationKind::BlockReorder, 1, 0.5),
                        ContainsSubstring("fall through"));
}

TEST_CASE("goto-heavy splitting defeats graph self-matching") {
    AsmProgram base = parse_base(1);
    AsmProgram var = mutate(base, ObfuscationKind::GotoHeavy, 9, 1.0);
    REQUIRE(var.instructions.size() > base.instructions.size());

    Analyzed b = analyzed(base);
    Analyzed v = analyzed(var);
    SimilarityScore sim = similarity(b.sig, v.sig);
    REQUIRE(sim.template_count == b.sig.acfgs.size());
    REQUIRE(sim.matched_count == 0);
    REQUIRE(sim.value == 0.0);

    AsmProgram only_jumps = parse_listing("0: jmp 0x4\n4: ret\n", Arch::X86);
    REQUIRE_THROWS_WITH(mutate(only_jumps, ObfuscationKind::GotoHeavy, 1, 0.5),
                        ContainsSubstring("no straight-line instruction"));
}

TEST_CASE("every kind preserves the interpreted machine state") {
    for (int i = 0; i < 6; ++i) {
        AsmProgram base = parse_base(i);
        testsupport::MachineState want = testsupport::run_listing(base);
        REQUIRE(want.halted);

        for (ObfuscationKind k : all_kinds()) {
            INFO("base " << i << ", kind " << obfuscation_kind_name(k));
            MutationResult res = mutate_ex(base, k, 11 + static_cast<std::uint64_t>(i), 0.6);
            testsupport::MachineState got = testsupport::run_listing(res.program);
            REQUIRE(testsupport::states_equal_under_renaming(want, got, res.reg_map));
        }
    }
}

TEST_CASE("variant corpora are generated with manifest bookkeeping") {
    testsupport::TempDir td("variants");
    LabeledDataset bases;
    bases.items.push_back({"alpha.lst", Label::Malware, "famA", Arch::X86,
                           testsupport::make_family_base(0)});
    bases.items.push_back({"beta.lst", Label::Malware, "famB", Arch::X86,
                           testsupport::make_family_base(1)});

    const std::vector<ObfuscationKind> kinds = {ObfuscationKind::NopInsert,
                                                ObfuscationKind::RegisterRename};
    VariantCorpus out =
        generate_variant_corpus(bases, kinds, {1, 2}, 0.5, td.path("out"));

    REQUIRE(out.dataset.items.size() == 8);
    REQUIRE(out.records.size() == 8);
    REQUIRE(out.skipped.empty());

    const std::string first =
        (std::filesystem::path(td.path("out")) / "alpha__nop-insert_s1.lst").string();
    REQUIRE(out.dataset.items[0].path == first);
    REQUIRE(std::filesystem::exists(first));
    REQUIRE_NOTHROW(parse_listing_file(first, Arch::X86));

    for (std::size_t i = 0; i < out.dataset.items.size(); ++i) {
        const DatasetItem& item = out.dataset.items[i];
        REQUIRE(item.label == Label::Malware);
        REQUIRE(item.family == (i < 4 ? "famA" : "famB"));
        REQUIRE(item.arch == Arch::X86);
        REQUIRE(item.text.empty()); // items point at the files on disk
    }
    REQUIRE(out.records[0].base_path == "alpha.lst");
    REQUIRE(out.records[0].kind == ObfuscationKind::NopInsert);
    REQUIRE(out.records[0].seed == 1);
    REQUIRE(out.records[3].kind == ObfuscationKind::RegisterRename);
    REQUIRE(out.records[3].seed == 2);

    std::string manifest = testsupport::read_file(out.manifest_path);
    REQUIRE(manifest.rfind("variant_path,base_path,kind,seed,intensity\n", 0) == 0);
    REQUIRE(manifest.find("alpha__nop-insert_s1.lst,alpha.lst,nop-insert,1,0.500\n") !=
            std::string::npos);
    REQUIRE(std::count(manifest.begin(), manifest.end(), '\n') == 9);

    SECTION("inapplicable kinds are skipped, not fatal") {
        LabeledDataset plain;
        plain.items.push_back(
            {"plain.lst", Label::Malware, "famP", Arch::X86, "0: mov rax, 0x1\n4: ret\n"});
        VariantCorpus partial = generate_variant_corpus(
            plain, {ObfuscationKind::BlockReorder, ObfuscationKind::NopInsert}, {1}, 0.5,
            td.path("partial"));
        REQUIRE(partial.dataset.items.size() == 1);
        REQUIRE(partial.skipped.size() == 1);
        REQUIRE_THAT(partial.skipped[0], ContainsSubstring("block-reorder"));
        REQUIRE_THAT(partial.skipped[0], ContainsSubstring("plain.lst"));
    }

    SECTION("an empty base corpus is an error") {
        REQUIRE_THROWS_WITH(
            generate_variant_corpus({}, kinds, {1}, 0.5, td.path("none")),
            ContainsSubstring("variant generation needs base listings"));
    }
}

// Lifting tests: instruction -> statement expansion, pattern assignment,
// canonical operand sketches, and the invariants the matcher relies on
// (totality, determinism, rename invariance, constant/pattern agreement).
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include <mailscan/mailscan.hpp>

#include "../support/corpus.hpp"
#include "../support/listing_builder.hpp"

using namespace mailscan;

namespace {

MailProgram lift_text(const std::string& body, Arch arch = Arch::X86) {
    return translate(parse_listing(body, arch));
}

// Lift a bare instruction (address 0) and return all statements it produced.
std::vector<MailStatement> lift_insn(const std::string& insn, Arch arch = Arch::X86) {
    return lift_text("0: " + insn + "\n", arch).statements;
}

MailStatement lift_single(const std::string& insn, Arch arch = Arch::X86) {
    auto stmts = lift_insn(insn, arch);
    REQUIRE(stmts.size() == 1);
    return stmts[0];
}

bool ends_with_constant(MailPattern p) {
    std::string_view n = pattern_name(p);
    constexpr std::string_view suffix = "_CONSTANT";
    return n.size() >= suffix.size() && n.substr(n.size() - suffix.size()) == suffix;
}

} // namespace

TEST_CASE("pattern vocabulary is fixed") {
    CHECK(kPatternCount == 21);
    CHECK(kStatementKindCount == 11);
    CHECK(pattern_name(MailPattern::ASSIGN) == "ASSIGN");
    CHECK(pattern_name(MailPattern::JUMP_STACK) == "JUMP_STACK");
    CHECK(pattern_name(MailPattern::NOTDEFINED) == "NOTDEFINED");
}

TEST_CASE("x86 single-instruction patterns") {
    struct Row {
        const char* insn;
        MailPattern expected;
    };
    const Row rows[] = {
        {"mov eax, 0x1", MailPattern::ASSIGN_CONSTANT},
        {"mov eax, ebx", MailPattern::ASSIGN},
        {"add eax, 0x2", MailPattern::ASSIGN_CONSTANT},
        {"xor eax, eax", MailPattern::ASSIGN},
        {"lea eax, [ebx + 0x4]", MailPattern::ASSIGN},
        {"cmp eax, 0x1", MailPattern::TEST_CONSTANT},
        {"test eax, ebx", MailPattern::TEST},
        {"jne 0x10", MailPattern::CONTROL_CONSTANT},
        {"jmp 0x680376", MailPattern::JUMP_CONSTANT},
        {"jmp eax", MailPattern::JUMP},
        {"jmp [eax + ecx + 0x10]", MailPattern::JUMP},
        {"ret", MailPattern::JUMP_STACK},
        {"call 0x20", MailPattern::CALL_CONSTANT},
        {"call eax", MailPattern::CALL},
        {"call printf", MailPattern::LIBCALL},
        {"call printf, 0x5", MailPattern::LIBCALL_CONSTANT},
        {"call mystery_helper", MailPattern::CALL},
        {"push ebx", MailPattern::STACK},
        {"push 0x5", MailPattern::STACK_CONSTANT},
        {"pop ebx", MailPattern::STACK},
        {"pushf", MailPattern::FLAG_STACK},
        {"popf", MailPattern::FLAG_STACK},
        {"clc", MailPattern::FLAG},
        {"lahf", MailPattern::FLAG},
        {"hlt", MailPattern::HALT},
        {"int 0x80", MailPattern::CALL},
        {"frob eax, 0x5", MailPattern::UNKNOWN},
        {"movsb", MailPattern::ASSIGN},
        {"cmpsb", MailPattern::TEST},
    };
    for (const auto& row : rows) {
        INFO(row.insn);
        auto s = lift_single(row.insn);
        CHECK(s.pattern == row.expected);
    }
}

TEST_CASE("arm single-instruction patterns") {
    struct Row {
        const char* insn;
        MailPattern expected;
    };
    const Row rows[] = {
        {"mov r0, #5", MailPattern::ASSIGN_CONSTANT},
        {"add r0, r1, r2", MailPattern::ASSIGN},
        {"ldr r0, [r1, #4]", MailPattern::ASSIGN},
        {"cmp r0, #0", MailPattern::TEST_CONSTANT},
        {"bne 0x8", MailPattern::CONTROL_CONSTANT},
        {"b 0x10", MailPattern::JUMP_CONSTANT},
        {"bx lr", MailPattern::JUMP_STACK},
        {"mov pc, lr", MailPattern::JUMP_STACK},
        {"mov pc, r3", MailPattern::JUMP},
        {"bl 0x40", MailPattern::CALL_CONSTANT},
        {"bl memcpy", MailPattern::LIBCALL},
        {"bl secret_fn", MailPattern::CALL},
        {"msr cpsr, r0", MailPattern::FLAG},
        {"mrs r0, cpsr", MailPattern::ASSIGN},
        {"svc #0", MailPattern::CALL},
        {"udf", MailPattern::HALT},
    };
    for (const auto& row : rows) {
        INFO(row.insn);
        auto s = lift_single(row.insn, Arch::Arm);
        CHECK(s.pattern == row.expected);
    }
}

TEST_CASE("transfer targets resolve through labels") {
    const std::string body =
        "0: cmp eax, 0x1\n"
        "4: je done\n"
        "8: mov ebx, eax\n"
        "done:\n"
        "c: ret\n";
    auto m = lift_text(body);
    REQUIRE(m.statements.size() == 4);
    CHECK(m.statements[1].pattern == MailPattern::CONTROL_CONSTANT);
    REQUIRE(m.statements[1].target.has_value());
    CHECK(*m.statements[1].target == 0xc);
    // The resolved address is carried as a constant in the sketch.
    REQUIRE(m.statements[1].operand_sketch.size() == 1);
    CHECK(std::holds_alternative<SketchImm>(m.statements[1].operand_sketch[0]));

    // An unresolved symbol stays symbolic: no target, no constant.
    auto s = lift_single("jmp nowhere");
    CHECK(s.pattern == MailPattern::JUMP);
    CHECK_FALSE(s.target.has_value());
    REQUIRE(s.operand_sketch.size() == 1);
    CHECK(std::holds_alternative<SketchSym>(s.operand_sketch[0]));
}

TEST_CASE("multi-effect instructions expand") {
    SECTION("pusha and popa become eight stack statements") {
        for (const char* insn : {"pusha", "popa"}) {
            auto stmts = lift_insn(insn);
            REQUIRE(stmts.size() == 8);
            for (const auto& s : stmts) {
                CHECK(s.pattern == MailPattern::STACK);
                REQUIRE(s.operand_sketch.size() == 1);
                CHECK(std::holds_alternative<SketchSlot>(s.operand_sketch[0]));
            }
            // Eight distinct registers -> slots 0..7 in first-use order.
            for (std::size_t i = 0; i < 8; ++i)
                CHECK(std::get<SketchSlot>(stmts[i].operand_sketch[0]).index == i);
        }
    }
    SECTION("xchg is a pair of assignments") {
        auto stmts = lift_insn("xchg eax, ebx");
        REQUIRE(stmts.size() == 2);
        CHECK(stmts[0].pattern == MailPattern::ASSIGN);
        CHECK(stmts[1].pattern == MailPattern::ASSIGN);
        CHECK(stmts[0].operand_sketch !=
              stmts[1].operand_sketch); // directions differ
    }
    SECTION("arm register lists expand per register") {
        auto stmts = lift_insn("push {r0-r2}", Arch::Arm);
        REQUIRE(stmts.size() == 3);
        for (const auto& s : stmts) CHECK(s.pattern == MailPattern::STACK);

        auto pop = lift_insn("pop {r0, pc}", Arch::Arm);
        REQUIRE(pop.size() == 2);
        CHECK(pop[0].pattern == MailPattern::STACK);
        CHECK(pop[1].pattern == MailPattern::JUMP_STACK); // return effect last
    }
    SECTION("load/store-multiple against sp is stack traffic") {
        auto stmts = lift_insn("ldmia sp!, {r4, pc}", Arch::Arm);
        REQUIRE(stmts.size() == 2);
        CHECK(stmts[0].pattern == MailPattern::STACK);
        CHECK(stmts[1].pattern == MailPattern::JUMP_STACK);

        auto stores = lift_insn("stmdb sp!, {r0, r1}", Arch::Arm);
        REQUIRE(stores.size() == 2);
        for (const auto& s : stores) CHECK(s.pattern == MailPattern::STACK);
    }
    SECTION("load-multiple off a plain base is memory assignment") {
        auto stmts = lift_insn("ldmia r2, {r3, r4}", Arch::Arm);
        REQUIRE(stmts.size() == 2);
        for (const auto& s : stmts) {
            CHECK(s.pattern == MailPattern::ASSIGN);
            REQUIRE(s.operand_sketch.size() == 2);
            CHECK(std::holds_alternative<SketchMem>(s.operand_sketch[1]));
        }
    }
    SECTION("lock prefix emits a lock statement before the operation") {
        auto stmts = lift_insn("lock add [ebx], eax");
        REQUIRE(stmts.size() == 2);
        CHECK(stmts[0].pattern == MailPattern::LOCK);
        CHECK(stmts[1].pattern == MailPattern::ASSIGN);
    }
}

TEST_CASE("plain calls carry no constant arguments") {
    // Non-target immediates are only meaningful for library calls; an
    // indirect call with a constant argument must stay CALL, not gain a
    // *_CONSTANT variant through its arguments.
    auto s = lift_single("call eax, 0x5");
    CHECK(s.pattern == MailPattern::CALL);
    for (const auto& e : s.operand_sketch) CHECK_FALSE(std::holds_alternative<SketchImm>(e));
}

TEST_CASE("unknown mnemonics never masquerade as constants") {
    auto s = lift_single("frob eax, 0x5, [ebx + 0x8]");
    CHECK(s.pattern == MailPattern::UNKNOWN);
    CHECK_FALSE(sketch_has_immediate(s.operand_sketch));
    // Non-immediate shape is preserved.
    REQUIRE(s.operand_sketch.size() == 2);
    CHECK(std::holds_alternative<SketchSlot>(s.operand_sketch[0]));
    CHECK(std::holds_alternative<SketchMem>(s.operand_sketch[1]));
}

TEST_CASE("library symbol table is configurable") {
    std::set<std::string> custom = {"evil_entry"};
    LiftOptions opts;
    opts.library_symbols = &custom;

    auto p = parse_listing("0: call evil_entry\n4: call printf\n", Arch::X86);
    auto m = translate(p, opts);
    REQUIRE(m.statements.size() == 2);
    CHECK(m.statements[0].pattern == MailPattern::LIBCALL);
    CHECK(m.statements[1].pattern == MailPattern::CALL); // defaults replaced

    // A locally defined label shadows the library name.
    const std::string shadow =
        "0: call printf\n"
        "printf:\n"
        "4: ret\n";
    auto ms = lift_text(shadow);
    CHECK(ms.statements[0].pattern == MailPattern::CALL_CONSTANT);
    CHECK(*ms.statements[0].target == 4);
}

TEST_CASE("memory displacement is not a constant operand") {
    auto s = lift_single("mov eax, [ebx + ecx*4 + 0x10]");
    CHECK(s.pattern == MailPattern::ASSIGN);
    REQUIRE(s.operand_sketch.size() == 2);
    auto mem = std::get<SketchMem>(s.operand_sketch[1]);
    REQUIRE(mem.disp.has_value());
    CHECK(*mem.disp == 0x10);
}

TEST_CASE("lifting is total, ordered and deterministic") {
    std::vector<AsmProgram> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(parse_listing(testsupport::make_family_base(i), Arch::X86));
    for (int j = 0; j < 6; ++j) corpus.push_back(parse_listing(testsupport::make_benign(j), Arch::X86));

    for (const auto& p : corpus) {
        auto m = translate(p);
        // Total: at least one statement per instruction, none dropped.
        CHECK(m.statements.size() >= p.instructions.size());
        std::set<std::uint64_t> stmt_addrs;
        for (const auto& s : m.statements) stmt_addrs.insert(s.origin_address);
        for (const auto& insn : p.instructions) CHECK(stmt_addrs.count(insn.address) == 1);

        // Statements keep listing order and dense uids.
        for (std::size_t i = 1; i < m.statements.size(); ++i)
            CHECK(m.statements[i - 1].origin_address <= m.statements[i].origin_address);
        for (std::uint32_t i = 0; i < m.statements.size(); ++i)
            CHECK(m.statements[i].uid == i);

        // Deterministic.
        CHECK(translate(p) == m);

        // Every pattern is final and consistent with its own statement.
        for (const auto& s : m.statements) {
            CHECK(s.pattern != MailPattern::NOTDEFINED);
            CHECK(s.pattern == assign_pattern(s));
        }
    }
}

TEST_CASE("constant variants agree with sketch contents") {
    // Across a varied corpus: a statement's pattern carries the _CONSTANT
    // suffix exactly when its sketch holds an immediate.
    std::vector<std::string> sources;
    for (int i = 0; i < 10; ++i) sources.push_back(testsupport::make_family_base(i));
    for (int j = 0; j < 6; ++j) sources.push_back(testsupport::make_benign(j));
    sources.push_back(
        "0: mov eax, 0x1\n"
        "4: call printf, 0x5\n"
        "8: pusha\n"
        "c: jmp [eax + ecx + 0x10]\n"
        "10: frob eax, 0x5\n"
        "14: int 0x80\n"
        "18: ret\n");

    std::size_t checked = 0;
    for (const auto& src : sources) {
        auto m = lift_text(src);
        for (const auto& s : m.statements) {
            INFO("uid " << s.uid << " pattern " << pattern_name(s.pattern));
            CHECK(ends_with_constant(s.pattern) == sketch_has_immediate(s.operand_sketch));
            ++checked;
        }
    }
    CHECK(checked > 200);
}

TEST_CASE("histogram accounts for every statement") {
    auto m = lift_text(testsupport::make_family_base(3));
    auto h = pattern_histogram(m);
    std::size_t total = 0;
    for (auto c : h) total += c;
    CHECK(total == m.statements.size());
    CHECK(h[static_cast<std::size_t>(MailPattern::NOTDEFINED)] == 0);
    CHECK(h[static_cast<std::size_t>(MailPattern::ASSIGN_CONSTANT)] > 0);
    CHECK(h[static_cast<std::size_t>(MailPattern::JUMP_STACK)] > 0);
}

TEST_CASE("consistent register renaming leaves sketches unchanged") {
    const std::string base =
        "0: mov eax, ebx\n"
        "4: add eax, 0x2\n"
        "8: cmp eax, ebx\n"
        "c: jne 0x14\n"
        "10: push eax\n"
        "14: mov ecx, eax\n"
        "18: ret\n";
    // eax<->esi, ebx<->edi, ecx<->edx applied consistently.
    const std::string renamed =
        "0: mov esi, edi\n"
        "4: add esi, 0x2\n"
        "8: cmp esi, edi\n"
        "c: jne 0x14\n"
        "10: push esi\n"
        "14: mov edx, esi\n"
        "18: ret\n";
    auto a = lift_text(base);
    auto b = lift_text(renamed);
    REQUIRE(a.statements.size() == b.statements.size());
    CHECK(a.statements == b.statements); // canonical slots erase the naming
}

TEST_CASE("slot numbering restarts at block leaders") {
    // Both blocks use two fresh registers; first-use numbering makes their
    // sketches identical even though the concrete registers differ.
    const std::string body =
        "0: mov ecx, edx\n"
        "4: ret\n"
        "next:\n"
        "8: mov edi, esi\n"
        "c: ret\n";
    auto m = lift_text(body);
    REQUIRE(m.statements.size() == 4);
    CHECK(m.statements[0].operand_sketch == m.statements[2].operand_sketch);
}

TEST_CASE("textual dump is stable and readable") {
    auto m = lift_text(
        "0: mov eax, 0x1\n"
        "4: call printf\n"
        "8: ret\n");
    auto text = dump_mail(m);
    CHECK(text == dump_mail(m));
    CHECK(text.find("ASSIGN_CONSTANT") != std::string::npos);
    CHECK(text.find("LIBCALL") != std::string::npos);
    CHECK(text.find("JUMP_STACK") != std::string::npos);
}

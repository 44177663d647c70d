#pragma once

#include <cassert>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "asm_parser.hpp"
#include "asm_tables.hpp"
#include "asm_types.hpp"
#include "errors.hpp"
#include "mail.hpp"

namespace mailscan {

// Calls whose target resolves to one of these names lift to LIBCALL.
// config/library_symbols.conf ships the same defaults for CLI overrides.
inline const std::set<std::string>& default_library_symbols() {
    static const std::set<std::string> syms = {
        "memcpy",  "memmove", "memset",  "memcmp",  "strcpy",  "strncpy", "strcat", "strncat",
        "strcmp",  "strncmp", "strlen",  "strchr",  "strrchr", "strstr",  "malloc", "calloc",
        "realloc", "free",    "printf",  "fprintf", "sprintf", "snprintf", "puts",  "putchar",
        "getchar", "gets",    "scanf",   "sscanf",  "open",    "close",   "read",   "write",
        "lseek",   "fopen",   "fclose",  "fread",   "fwrite",  "exit",    "abort",  "atoi",
        "atol",    "rand",    "srand",   "qsort",   "bsearch", "pow",     "sqrt",   "sin",
        "cos",     "tan",     "log",     "exp",     "floor",   "ceil",    "fabs",   "abs",
        "compare",
    };
    return syms;
}

inline std::set<std::string> load_library_symbols(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open library-symbol table: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto t = detail::trim(line);
        if (!t.empty()) out.emplace(t);
    }
    return out;
}

struct LiftOptions {
    const std::set<std::string>* library_symbols = nullptr; // nullptr -> defaults
};

namespace detail {

struct LiftContext {
    Arch arch;
    const std::unordered_map<std::string, RegInfo>* regs;
    const std::map<std::string, std::uint64_t>* label_addr;
    const std::set<std::string>* lib_syms;
};

// During lifting, SketchSlot.index temporarily holds the register *family*;
// the second pass rewrites families to first-use slots per block.
inline SketchElement lift_element(const Operand& op, const LiftContext& cx) {
    switch (op.kind) {
        case OperandKind::Register: {
            const RegInfo& ri = cx.regs->at(op.reg);
            if (ri.cls == RegClass::Flags)
                return SketchFlag{cx.arch == Arch::X86 ? "eflags" : "cpsr"};
            return SketchSlot{static_cast<std::uint16_t>(ri.family)};
        }
        case OperandKind::Immediate:
            return SketchImm{op.imm};
        case OperandKind::MemoryRef: {
            SketchMem m;
            if (op.mem.base) m.base = static_cast<std::uint16_t>(cx.regs->at(*op.mem.base).family);
            if (op.mem.index) m.index = static_cast<std::uint16_t>(cx.regs->at(*op.mem.index).family);
            m.disp = op.mem.disp;
            return m;
        }
        case OperandKind::Label:
            return SketchSym{op.label};
    }
    return SketchSym{};
}

inline void strip_immediates(OperandSketch& sk) {
    std::erase_if(sk, [](const SketchElement& e) { return std::holds_alternative<SketchImm>(e); });
}

inline MailStatement make_stmt(const AsmInstruction& insn, StatementKind kind) {
    MailStatement s;
    s.origin_address = insn.address;
    s.kind = kind;
    return s;
}

// Branch-style target resolution shared by jumps, conditional transfers and calls.
struct TargetInfo {
    std::optional<std::uint64_t> target;
    OperandSketch sketch; // element representing the target operand
    bool is_library = false;
    std::string symbol;
};

inline TargetInfo resolve_target(const Operand& op, const LiftContext& cx) {
    TargetInfo t;
    switch (op.kind) {
        case OperandKind::Immediate:
            t.target = static_cast<std::uint64_t>(op.imm);
            t.sketch.push_back(SketchImm{op.imm});
            break;
        case OperandKind::Label: {
            auto it = cx.label_addr->find(op.label);
            if (it != cx.label_addr->end()) {
                t.target = it->second;
                t.sketch.push_back(SketchImm{static_cast<std::int64_t>(it->second)});
            } else {
                t.symbol = op.label;
                t.is_library = cx.lib_syms->count(op.label) > 0;
                t.sketch.push_back(SketchSym{op.label});
            }
            break;
        }
        default:
            t.sketch.push_back(lift_element(op, cx));
            break;
    }
    return t;
}

inline bool reg_is(const Operand& op, const LiftContext& cx, RegClass cls) {
    return op.kind == OperandKind::Register && cx.regs->at(op.reg).cls == cls;
}

// The per-instruction expansion table. One instruction yields one or more
// statements; multi-effect forms (PUSHA, STMDB, XCHG, reg-list pops) expand,
// and a control-transfer effect is always emitted last.
inline void lift_instruction(const AsmInstruction& insn, const LiftContext& cx,
                             std::vector<MailStatement>& out) {
    for (const auto& pre : insn.prefixes)
        if (pre == "LOCK") out.push_back(make_stmt(insn, StatementKind::Lock));

    auto& mt = mnemonic_table(cx.arch);
    auto found = mt.find(insn.mnemonic);
    if (found == mt.end()) {
        // Unknown-class fallback: keep the operand shape, drop constants so the
        // UNKNOWN pattern never masquerades as a *_CONSTANT one.
        MailStatement s = make_stmt(insn, StatementKind::Unknown);
        for (const auto& op : insn.operands) s.operand_sketch.push_back(lift_element(op, cx));
        strip_immediates(s.operand_sketch);
        out.push_back(std::move(s));
        return;
    }
    const MnemonicClass cls = found->second;
    const auto& ops = insn.operands;

    auto emit_plain = [&](StatementKind kind) {
        MailStatement s = make_stmt(insn, kind);
        for (const auto& op : ops) s.operand_sketch.push_back(lift_element(op, cx));
        out.push_back(std::move(s));
    };

    switch (cls) {
        case MnemonicClass::Assign: {
            // Writes to the program counter are jumps in disguise (ARM idioms).
            if (!ops.empty() && reg_is(ops[0], cx, RegClass::ProgramCounter)) {
                if (ops.size() == 2 && reg_is(ops[1], cx, RegClass::LinkRegister)) {
                    MailStatement s = make_stmt(insn, StatementKind::Jump);
                    s.stack_effect = true; // return idiom
                    out.push_back(std::move(s));
                    return;
                }
                if (ops.size() == 2 && ops[1].kind == OperandKind::Immediate) {
                    MailStatement s = make_stmt(insn, StatementKind::Jump);
                    s.target = static_cast<std::uint64_t>(ops[1].imm);
                    s.operand_sketch.push_back(SketchImm{ops[1].imm});
                    out.push_back(std::move(s));
                    return;
                }
                MailStatement s = make_stmt(insn, StatementKind::Jump);
                for (std::size_t i = 1; i < ops.size(); ++i)
                    s.operand_sketch.push_back(lift_element(ops[i], cx));
                strip_immediates(s.operand_sketch);
                out.push_back(std::move(s));
                return;
            }
            emit_plain(StatementKind::Assignment);
            return;
        }
        case MnemonicClass::Test:
            emit_plain(StatementKind::Test);
            return;
        case MnemonicClass::CondBranch: {
            MailStatement s = make_stmt(insn, StatementKind::ControlTransferConditional);
            if (!ops.empty()) {
                TargetInfo t = resolve_target(ops[0], cx);
                s.target = t.target;
                s.operand_sketch = std::move(t.sketch);
            }
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Jump: {
            if (cx.arch == Arch::Arm && insn.mnemonic == "BX" && !ops.empty() &&
                reg_is(ops[0], cx, RegClass::LinkRegister)) {
                MailStatement s = make_stmt(insn, StatementKind::Jump);
                s.stack_effect = true;
                out.push_back(std::move(s));
                return;
            }
            MailStatement s = make_stmt(insn, StatementKind::Jump);
            if (!ops.empty()) {
                TargetInfo t = resolve_target(ops[0], cx);
                s.target = t.target;
                s.operand_sketch = std::move(t.sketch);
            }
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Call: {
            MailStatement s = make_stmt(insn, StatementKind::Call);
            if (!ops.empty()) {
                TargetInfo t = resolve_target(ops[0], cx);
                if (t.is_library) s.kind = StatementKind::LibCall;
                s.target = t.target;
                s.operand_sketch = std::move(t.sketch);
                // Extra operands are arguments; constants among them are only
                // meaningful for library calls (LIBCALL_CONSTANT).
                for (std::size_t i = 1; i < ops.size(); ++i)
                    s.operand_sketch.push_back(lift_element(ops[i], cx));
                if (s.kind == StatementKind::Call) {
                    OperandSketch args(s.operand_sketch.begin() + 1, s.operand_sketch.end());
                    strip_immediates(args);
                    s.operand_sketch.resize(1);
                    s.operand_sketch.insert(s.operand_sketch.end(), args.begin(), args.end());
                }
            }
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Return: {
            MailStatement s = make_stmt(insn, StatementKind::Jump);
            s.stack_effect = true; // RET imm16 adjustment is not retained
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Push:
        case MnemonicClass::Pop: {
            bool is_pop = cls == MnemonicClass::Pop;
            std::vector<MailStatement> stmts;
            MailStatement ret_stmt;
            bool has_ret = false;
            for (const auto& op : ops) {
                if (is_pop && reg_is(op, cx, RegClass::ProgramCounter)) {
                    ret_stmt = make_stmt(insn, StatementKind::Jump);
                    ret_stmt.stack_effect = true; // POP {.., PC} returns
                    has_ret = true;
                    continue;
                }
                MailStatement s = make_stmt(insn, StatementKind::Stack);
                s.operand_sketch.push_back(lift_element(op, cx));
                stmts.push_back(std::move(s));
            }
            if (stmts.empty() && !has_ret) stmts.push_back(make_stmt(insn, StatementKind::Stack));
            for (auto& s : stmts) out.push_back(std::move(s));
            if (has_ret) out.push_back(std::move(ret_stmt));
            return;
        }
        case MnemonicClass::PushAll:
        case MnemonicClass::PopAll: {
            // PUSHA pushes EAX,ECX,EDX,EBX,ESP,EBP,ESI,EDI; POPA reads the
            // eight slots back in reverse.
            static constexpr int push_order[8] = {regfam::RAX, regfam::RCX, regfam::RDX,
                                                  regfam::RBX, regfam::RSP, regfam::RBP,
                                                  regfam::RSI, regfam::RDI};
            for (int i = 0; i < 8; ++i) {
                int fam = cls == MnemonicClass::PushAll ? push_order[i] : push_order[7 - i];
                MailStatement s = make_stmt(insn, StatementKind::Stack);
                s.operand_sketch.push_back(SketchSlot{static_cast<std::uint16_t>(fam)});
                out.push_back(std::move(s));
            }
            return;
        }
        case MnemonicClass::PushFlags:
        case MnemonicClass::PopFlags: {
            MailStatement s = make_stmt(insn, StatementKind::Flag);
            s.stack_effect = true;
            s.operand_sketch.push_back(SketchFlag{"eflags"});
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::FlagSet: {
            MailStatement s = make_stmt(insn, StatementKind::Flag);
            const std::string& m = insn.mnemonic;
            std::string flag = "eflags";
            if (m == "CLC" || m == "STC" || m == "CMC") flag = "cf";
            else if (m == "CLD" || m == "STD") flag = "df";
            else if (m == "CLI" || m == "STI") flag = "if";
            if (m == "LAHF" || m == "SAHF")
                s.operand_sketch.push_back(SketchSlot{regfam::RAX});
            s.operand_sketch.push_back(SketchFlag{flag});
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::FlagWrite: { // MSR
            MailStatement s = make_stmt(insn, StatementKind::Flag);
            s.operand_sketch.push_back(SketchFlag{"cpsr"});
            for (std::size_t i = 1; i < ops.size(); ++i)
                s.operand_sketch.push_back(lift_element(ops[i], cx));
            strip_immediates(s.operand_sketch);
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::MoveFromFlags: { // MRS
            MailStatement s = make_stmt(insn, StatementKind::Assignment);
            if (!ops.empty()) s.operand_sketch.push_back(lift_element(ops[0], cx));
            s.operand_sketch.push_back(SketchFlag{"cpsr"});
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Halt:
            out.push_back(make_stmt(insn, StatementKind::Halt));
            return;
        case MnemonicClass::Lock:
            out.push_back(make_stmt(insn, StatementKind::Lock));
            return;
        case MnemonicClass::Interrupt: {
            // Vector numbers are not code addresses; the target stays unknown.
            MailStatement s = make_stmt(insn, StatementKind::Call);
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::StringAssign: {
            MailStatement s = make_stmt(insn, StatementKind::Assignment);
            char k = insn.mnemonic[0]; // M(OVS)/S(TOS)/L(ODS)
            SketchMem src{.base = static_cast<std::uint16_t>(regfam::RSI), .index = {}, .disp = {}};
            SketchMem dst{.base = static_cast<std::uint16_t>(regfam::RDI), .index = {}, .disp = {}};
            if (k == 'M') s.operand_sketch = {dst, src};
            else if (k == 'S') s.operand_sketch = {dst, SketchSlot{regfam::RAX}};
            else s.operand_sketch = {SketchSlot{regfam::RAX}, src};
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::StringTest: {
            MailStatement s = make_stmt(insn, StatementKind::Test);
            SketchMem src{.base = static_cast<std::uint16_t>(regfam::RSI), .index = {}, .disp = {}};
            SketchMem dst{.base = static_cast<std::uint16_t>(regfam::RDI), .index = {}, .disp = {}};
            if (insn.mnemonic[0] == 'C') s.operand_sketch = {src, dst};
            else s.operand_sketch = {SketchSlot{regfam::RAX}, dst};
            out.push_back(std::move(s));
            return;
        }
        case MnemonicClass::Xchg: {
            if (ops.size() == 2) {
                MailStatement a = make_stmt(insn, StatementKind::Assignment);
                a.operand_sketch = {lift_element(ops[0], cx), lift_element(ops[1], cx)};
                MailStatement b = make_stmt(insn, StatementKind::Assignment);
                b.operand_sketch = {lift_element(ops[1], cx), lift_element(ops[0], cx)};
                out.push_back(std::move(a));
                out.push_back(std::move(b));
            } else {
                emit_plain(StatementKind::Assignment);
            }
            return;
        }
        case MnemonicClass::LoadMulti:
        case MnemonicClass::StoreMulti: {
            bool is_load = cls == MnemonicClass::LoadMulti;
            bool sp_base = !ops.empty() && reg_is(ops[0], cx, RegClass::StackPointer);
            const std::size_t emitted_before = out.size();
            MailStatement ret_stmt;
            bool has_ret = false;
            for (std::size_t i = 1; i < ops.size(); ++i) {
                const auto& op = ops[i];
                if (is_load && reg_is(op, cx, RegClass::ProgramCounter)) {
                    ret_stmt = make_stmt(insn, StatementKind::Jump);
                    if (sp_base) ret_stmt.stack_effect = true;
                    has_ret = true;
                    continue;
                }
                if (sp_base) {
                    MailStatement s = make_stmt(insn, StatementKind::Stack);
                    s.operand_sketch.push_back(lift_element(op, cx));
                    out.push_back(std::move(s));
                } else {
                    MailStatement s = make_stmt(insn, StatementKind::Assignment);
                    SketchMem mem;
                    if (ops[0].kind == OperandKind::Register)
                        mem.base = static_cast<std::uint16_t>(cx.regs->at(ops[0].reg).family);
                    if (is_load) s.operand_sketch = {lift_element(op, cx), mem};
                    else s.operand_sketch = {mem, lift_element(op, cx)};
                    out.push_back(std::move(s));
                }
            }
            if (has_ret) out.push_back(std::move(ret_stmt));
            if (out.size() == emitted_before)
                emit_plain(sp_base ? StatementKind::Stack : StatementKind::Assignment);
            return;
        }
        case MnemonicClass::Hint: {
            // Only reachable when translate() runs on an un-normalized program.
            MailStatement s = make_stmt(insn, StatementKind::Assignment);
            out.push_back(std::move(s));
            return;
        }
    }
}

} // namespace detail

// Leader addresses: entry points, constant transfer targets, and the first
// instruction after any block terminator. Shared by translate (slot resets)
// and build_acfgs (block boundaries), so the two always agree.
inline std::set<std::uint64_t> leader_addresses(const std::vector<MailStatement>& stmts,
                                                const std::vector<std::uint64_t>& entry_points) {
    std::set<std::uint64_t> insn_addrs;
    for (const auto& s : stmts) insn_addrs.insert(s.origin_address);

    std::set<std::uint64_t> leaders(entry_points.begin(), entry_points.end());
    for (std::size_t i = 0; i < stmts.size(); ++i) {
        const auto& s = stmts[i];
        if (s.target &&
            (s.kind == StatementKind::Jump || s.kind == StatementKind::ControlTransferConditional ||
             s.kind == StatementKind::Call || s.kind == StatementKind::LibCall) &&
            insn_addrs.count(*s.target))
            leaders.insert(*s.target);
        if (is_block_terminator(s.kind)) {
            // Next distinct instruction address begins a new block.
            std::size_t j = i + 1;
            while (j < stmts.size() && stmts[j].origin_address == s.origin_address) ++j;
            if (j < stmts.size()) leaders.insert(stmts[j].origin_address);
        }
    }
    return leaders;
}

// Lift a (normalized) program into the intermediate form. Total: every
// instruction yields at least one statement, in listing order.
inline MailProgram translate(const AsmProgram& p, const LiftOptions& opts = {}) {
    if (p.instructions.empty()) throw EmptyProgramError();

    detail::LiftContext cx;
    cx.arch = p.arch;
    cx.regs = &register_table(p.arch);
    std::map<std::string, std::uint64_t> label_addr;
    for (const auto& [addr, name] : p.labels) label_addr.emplace(name, addr);
    cx.label_addr = &label_addr;
    cx.lib_syms = opts.library_symbols ? opts.library_symbols : &default_library_symbols();

    MailProgram m;
    m.entry_points = p.entry_points;
    m.function_bounds = p.function_bounds;
    m.labels = p.labels;
    m.provenance = {p.name, p.arch};

    for (const auto& insn : p.instructions) detail::lift_instruction(insn, cx, m.statements);

    // Second pass: canonicalize register families to slots in first-use order,
    // restarting at every block leader so renaming cannot perturb sketches.
    auto leaders = leader_addresses(m.statements, m.entry_points);
    std::unordered_map<std::uint16_t, std::uint16_t> slot_of;
    std::uint16_t next_slot = 0;
    std::uint64_t prev_addr = 0;
    bool first = true;
    auto slot_for = [&](std::uint16_t family) {
        auto it = slot_of.find(family);
        if (it != slot_of.end()) return it->second;
        slot_of.emplace(family, next_slot);
        return next_slot++;
    };
    for (auto& s : m.statements) {
        if ((first || s.origin_address != prev_addr) && leaders.count(s.origin_address)) {
            slot_of.clear();
            next_slot = 0;
        }
        first = false;
        prev_addr = s.origin_address;
        for (auto& e : s.operand_sketch) {
            if (auto* slot = std::get_if<SketchSlot>(&e)) {
                slot->index = slot_for(slot->index);
            } else if (auto* mem = std::get_if<SketchMem>(&e)) {
                if (mem->base) mem->base = slot_for(*mem->base);
                if (mem->index) mem->index = slot_for(*mem->index);
            }
        }
        s.pattern = assign_pattern(s);
        assert(s.pattern != MailPattern::NOTDEFINED);
    }
    for (std::uint32_t i = 0; i < m.statements.size(); ++i) m.statements[i].uid = i;
    return m;
}

} // namespace mailscan

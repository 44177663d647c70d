#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>

#include "asm_types.hpp"

namespace mailscan {

enum class RegClass : std::uint8_t {
    General,
    StackPointer,
    Flags,
    ProgramCounter,
    LinkRegister,
};

struct RegInfo {
    int family = 0;        // one id per architectural register, shared by width aliases
    std::uint8_t width = 0; // bits
    bool high_byte = false; // AH/BH/CH/DH
    RegClass cls = RegClass::General;
};

namespace regfam {
// x86 families
inline constexpr int RAX = 0, RBX = 1, RCX = 2, RDX = 3, RSI = 4, RDI = 5, RBP = 6, RSP = 7,
                     R8 = 8, R9 = 9, R10 = 10, R11 = 11, R12 = 12, R13 = 13, R14 = 14, R15 = 15,
                     RIP = 16, RFLAGS = 17;
// ARM families: R0..R12 are 0..12
inline constexpr int ARM_SP = 13, ARM_LR = 14, ARM_PC = 15, ARM_CPSR = 16;
} // namespace regfam

inline const std::unordered_map<std::string, RegInfo>& register_table(Arch arch) {
    using namespace regfam;
    static const std::unordered_map<std::string, RegInfo> x86 = [] {
        std::unordered_map<std::string, RegInfo> t;
        auto fam = [&](int family, const char* n64, const char* n32, const char* n16,
                       const char* n8, const char* n8h, RegClass cls = RegClass::General) {
            t[n64] = {family, 64, false, cls};
            t[n32] = {family, 32, false, cls};
            t[n16] = {family, 16, false, cls};
            if (n8) t[n8] = {family, 8, false, cls};
            if (n8h) t[n8h] = {family, 8, true, cls};
        };
        fam(RAX, "RAX", "EAX", "AX", "AL", "AH");
        fam(RBX, "RBX", "EBX", "BX", "BL", "BH");
        fam(RCX, "RCX", "ECX", "CX", "CL", "CH");
        fam(RDX, "RDX", "EDX", "DX", "DL", "DH");
        fam(RSI, "RSI", "ESI", "SI", "SIL", nullptr);
        fam(RDI, "RDI", "EDI", "DI", "DIL", nullptr);
        fam(RBP, "RBP", "EBP", "BP", "BPL", nullptr);
        fam(RSP, "RSP", "ESP", "SP", "SPL", nullptr, RegClass::StackPointer);
        for (int i = 8; i <= 15; ++i) {
            std::string b = "R" + std::to_string(i);
            t[b] = {i, 64, false, RegClass::General};
            t[b + "D"] = {i, 32, false, RegClass::General};
            t[b + "W"] = {i, 16, false, RegClass::General};
            t[b + "B"] = {i, 8, false, RegClass::General};
        }
        t["RIP"] = {RIP, 64, false, RegClass::ProgramCounter};
        t["EIP"] = {RIP, 32, false, RegClass::ProgramCounter};
        t["RFLAGS"] = {RFLAGS, 64, false, RegClass::Flags};
        t["EFLAGS"] = {RFLAGS, 32, false, RegClass::Flags};
        return t;
    }();
    static const std::unordered_map<std::string, RegInfo> arm = [] {
        std::unordered_map<std::string, RegInfo> t;
        for (int i = 0; i <= 12; ++i)
            t["R" + std::to_string(i)] = {i, 32, false, RegClass::General};
        t["R13"] = {ARM_SP, 32, false, RegClass::StackPointer};
        t["SP"] = {ARM_SP, 32, false, RegClass::StackPointer};
        t["R14"] = {ARM_LR, 32, false, RegClass::LinkRegister};
        t["LR"] = {ARM_LR, 32, false, RegClass::LinkRegister};
        t["R15"] = {ARM_PC, 32, false, RegClass::ProgramCounter};
        t["PC"] = {ARM_PC, 32, false, RegClass::ProgramCounter};
        // Common aliases.
        t["SL"] = {10, 32, false, RegClass::General};
        t["FP"] = {11, 32, false, RegClass::General};
        t["IP"] = {12, 32, false, RegClass::General};
        for (const char* n : {"CPSR", "CPSR_F", "CPSR_S", "CPSR_C", "CPSR_X", "SPSR"})
            t[n] = {ARM_CPSR, 32, false, RegClass::Flags};
        return t;
    }();
    return arch == Arch::X86 ? x86 : arm;
}

// Preferred spelling per (family, width) — used when rewriting register names.
inline std::string canonical_register_name(Arch arch, int family, std::uint8_t width, bool high_byte) {
    if (arch == Arch::Arm) return "R" + std::to_string(family);
    static const char* n64[] = {"RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "RSP"};
    static const char* n32[] = {"EAX", "EBX", "ECX", "EDX", "ESI", "EDI", "EBP", "ESP"};
    static const char* n16[] = {"AX", "BX", "CX", "DX", "SI", "DI", "BP", "SP"};
    static const char* n8[] = {"AL", "BL", "CL", "DL", "SIL", "DIL", "BPL", "SPL"};
    static const char* n8h[] = {"AH", "BH", "CH", "DH"};
    if (family >= 8 && family <= 15) {
        std::string b = "R" + std::to_string(family);
        switch (width) {
            case 64: return b;
            case 32: return b + "D";
            case 16: return b + "W";
            default: return b + "B";
        }
    }
    if (high_byte && family <= 3) return n8h[family];
    switch (width) {
        case 64: return n64[family];
        case 32: return n32[family];
        case 16: return n16[family];
        default: return n8[family];
    }
}

// Instruction grouping: functionally equivalent mnemonics share one class,
// and the lifter works from classes, never from raw spellings.
enum class MnemonicClass : std::uint8_t {
    Assign,       // data movement / arithmetic / logic
    Test,         // compare-style flag producers
    CondBranch,   // conditional control transfer
    Jump,         // unconditional jump
    Call,         // procedure call
    Return,       // return jump through the stack
    Push,         // single push
    Pop,          // single pop
    PushAll,      // x86 PUSHA family
    PopAll,       // x86 POPA family
    PushFlags,    // flags to stack
    PopFlags,     // flags from stack
    FlagSet,      // direct flag manipulation
    FlagWrite,    // ARM MSR
    MoveFromFlags,// ARM MRS
    Halt,         // halting / trapping
    Lock,         // bus-lock marker
    Interrupt,    // software interrupt / system call
    StringAssign, // x86 string moves
    StringTest,   // x86 string compares
    Xchg,         // exchange (two effects)
    LoadMulti,    // ARM LDM family
    StoreMulti,   // ARM STM family
    Hint,         // no architectural effect relevant to analysis
};

inline const std::unordered_map<std::string, MnemonicClass>& mnemonic_table(Arch arch) {
    static const std::unordered_map<std::string, MnemonicClass> x86 = [] {
        std::unordered_map<std::string, MnemonicClass> t;
        auto add = [&](MnemonicClass c, std::initializer_list<const char*> names) {
            for (auto n : names) t[n] = c;
        };
        add(MnemonicClass::Assign,
            {"MOV", "MOVZX", "MOVSX", "LEA", "ADD", "ADC", "SUB", "SBB", "MUL", "IMUL", "DIV",
             "IDIV", "INC", "DEC", "NEG", "AND", "OR", "XOR", "NOT", "SHL", "SAL", "SHR", "SAR",
             "ROL", "ROR", "BSWAP", "CDQ", "CWDE"});
        add(MnemonicClass::Test, {"CMP", "TEST"});
        add(MnemonicClass::CondBranch,
            {"JE", "JNE", "JZ", "JNZ", "JG", "JGE", "JL", "JLE", "JA", "JAE", "JB", "JBE", "JS",
             "JNS", "JO", "JNO", "JC", "JNC", "LOOP", "LOOPE", "LOOPNE", "JECXZ", "JRCXZ"});
        add(MnemonicClass::Jump, {"JMP"});
        add(MnemonicClass::Call, {"CALL"});
        add(MnemonicClass::Return, {"RET", "RETN", "RETF"});
        add(MnemonicClass::Push, {"PUSH"});
        add(MnemonicClass::Pop, {"POP"});
        add(MnemonicClass::PushAll, {"PUSHA", "PUSHAD"});
        add(MnemonicClass::PopAll, {"POPA", "POPAD"});
        add(MnemonicClass::PushFlags, {"PUSHF", "PUSHFD", "PUSHFQ"});
        add(MnemonicClass::PopFlags, {"POPF", "POPFD", "POPFQ"});
        add(MnemonicClass::FlagSet, {"CLC", "STC", "CMC", "CLD", "STD", "CLI", "STI", "LAHF", "SAHF"});
        add(MnemonicClass::Halt, {"HLT", "UD2"});
        add(MnemonicClass::Lock, {"LOCK"});
        add(MnemonicClass::Interrupt, {"INT", "INT3", "SYSCALL", "SYSENTER"});
        add(MnemonicClass::StringAssign,
            {"MOVSB", "MOVSW", "MOVSD", "MOVSQ", "STOSB", "STOSW", "STOSD", "LODSB", "LODSW", "LODSD"});
        add(MnemonicClass::StringTest, {"CMPSB", "CMPSW", "SCASB", "SCASW", "SCASD"});
        add(MnemonicClass::Xchg, {"XCHG"});
        add(MnemonicClass::Hint,
            {"NOP", "PAUSE", "FNOP", "PREFETCH", "PREFETCHT0", "PREFETCHT1", "PREFETCHT2",
             "PREFETCHNTA"});
        return t;
    }();
    static const std::unordered_map<std::string, MnemonicClass> arm = [] {
        std::unordered_map<std::string, MnemonicClass> t;
        auto add = [&](MnemonicClass c, std::initializer_list<const char*> names) {
            for (auto n : names) t[n] = c;
        };
        add(MnemonicClass::Assign,
            {"MOV", "MVN", "MOVW", "MOVT", "LDR", "LDRB", "LDRH", "LDRSB", "LDRSH", "STR", "STRB",
             "STRH", "ADD", "ADC", "SUB", "SBC", "RSB", "RSC", "MUL", "MLA", "UMULL", "SMULL",
             "SDIV", "UDIV", "AND", "ORR", "EOR", "BIC", "LSL", "LSR", "ASR", "ROR"});
        add(MnemonicClass::Test, {"CMP", "CMN", "TST", "TEQ"});
        add(MnemonicClass::CondBranch,
            {"BEQ", "BNE", "BGT", "BGE", "BLT", "BLE", "BHI", "BHS", "BLO", "BLS", "BMI", "BPL",
             "BCS", "BCC", "BVS", "BVC"});
        add(MnemonicClass::Jump, {"B", "BX"});
        add(MnemonicClass::Call, {"BL", "BLX"});
        add(MnemonicClass::Push, {"PUSH"});
        add(MnemonicClass::Pop, {"POP"});
        add(MnemonicClass::LoadMulti, {"LDM", "LDMIA", "LDMFD", "LDMDB", "LDMEA"});
        add(MnemonicClass::StoreMulti, {"STM", "STMIA", "STMEA", "STMDB", "STMFD"});
        add(MnemonicClass::FlagWrite, {"MSR"});
        add(MnemonicClass::MoveFromFlags, {"MRS"});
        add(MnemonicClass::Interrupt, {"SVC", "SWI"});
        add(MnemonicClass::Halt, {"UDF"});
        add(MnemonicClass::Hint, {"NOP", "PRFM", "PLD", "PLI", "YIELD", "WFE", "WFI", "SEV"});
        return t;
    }();
    return arch == Arch::X86 ? x86 : arm;
}

// Prefix handling: LOCK is kept (it carries meaning downstream), REP-style
// prefixes are dropped by normalize().
inline const std::set<std::string>& prefix_table(Arch arch) {
    static const std::set<std::string> x86 = {"LOCK", "REP", "REPE", "REPZ", "REPNE", "REPNZ"};
    static const std::set<std::string> none = {};
    return arch == Arch::X86 ? x86 : none;
}

inline bool prefix_is_dropped(const std::string& p) { return p != "LOCK"; }

// Instructions with no effect on the analysis; removed by normalize().
// config/junk_instructions.conf ships the same list for CLI overrides.
inline const std::set<std::string>& default_junk_mnemonics() {
    static const std::set<std::string> junk = {
        "NOP", "PAUSE", "FNOP", "PREFETCH", "PREFETCHT0", "PREFETCHT1", "PREFETCHT2",
        "PREFETCHNTA", "PRFM", "PLD", "PLI", "YIELD", "WFE", "WFI", "SEV",
    };
    return junk;
}

inline bool mnemonic_is_control_transfer(Arch arch, const std::string& m) {
    auto& t = mnemonic_table(arch);
    auto it = t.find(m);
    if (it == t.end()) return false;
    switch (it->second) {
        case MnemonicClass::CondBranch:
        case MnemonicClass::Jump:
        case MnemonicClass::Call:
        case MnemonicClass::Return:
        case MnemonicClass::Halt:
        case MnemonicClass::Interrupt:
            return true;
        default:
            return false;
    }
}

} // namespace mailscan

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mailscan {

enum class Arch : std::uint8_t { X86, Arm };

inline std::string_view arch_name(Arch a) {
    return a == Arch::X86 ? "x86" : "arm";
}

inline std::optional<Arch> arch_from_name(std::string_view s) {
    if (s == "x86" || s == "X86") return Arch::X86;
    if (s == "arm" || s == "ARM" || s == "Arm") return Arch::Arm;
    return std::nullopt;
}

enum class OperandKind : std::uint8_t { Register, Immediate, MemoryRef, Label };

// Address expression inside [...]: base register, optional scaled index,
// optional signed displacement. At least one component is present.
struct MemoryExpr {
    std::optional<std::string> base;
    std::optional<std::string> index;
    int scale = 1;
    std::optional<std::int64_t> disp;
    bool writeback = false; // ARM "[Rn, #off]!"

    bool operator==(const MemoryExpr&) const = default;
};

struct Operand {
    OperandKind kind = OperandKind::Register;
    std::string reg;        // Register: canonical upper-case name
    bool writeback = false; // Register: ARM "Rn!"
    std::int64_t imm = 0;   // Immediate
    MemoryExpr mem;         // MemoryRef
    std::string label;      // Label: symbolic target / identifier

    bool operator==(const Operand&) const = default;

    static Operand make_reg(std::string name, bool wb = false) {
        Operand o;
        o.kind = OperandKind::Register;
        o.reg = std::move(name);
        o.writeback = wb;
        return o;
    }
    static Operand make_imm(std::int64_t v) {
        Operand o;
        o.kind = OperandKind::Immediate;
        o.imm = v;
        return o;
    }
    static Operand make_mem(MemoryExpr m) {
        Operand o;
        o.kind = OperandKind::MemoryRef;
        o.mem = std::move(m);
        return o;
    }
    static Operand make_label(std::string name) {
        Operand o;
        o.kind = OperandKind::Label;
        o.label = std::move(name);
        return o;
    }
};

struct AsmInstruction {
    std::uint64_t address = 0;
    std::string mnemonic;               // upper-case
    std::vector<std::string> prefixes;  // e.g. LOCK, REP (upper-case)
    std::vector<Operand> operands;
    // Index of the first operand that came from an ARM {reg-list}; SIZE_MAX when none.
    std::size_t reglist_start = SIZE_MAX;
    Arch arch = Arch::X86;
    std::string raw_text; // original line, informational only

    // raw_text is presentation, not meaning; equality ignores it.
    friend bool operator==(const AsmInstruction& a, const AsmInstruction& b) {
        return a.address == b.address && a.mnemonic == b.mnemonic && a.prefixes == b.prefixes &&
               a.operands == b.operands && a.reglist_start == b.reglist_start && a.arch == b.arch;
    }
};

struct AsmProgram {
    std::vector<AsmInstruction> instructions; // strictly increasing addresses
    Arch arch = Arch::X86;
    std::vector<std::uint64_t> entry_points;  // sorted, unique, each an instruction address
    // Half-open [start, end) address ranges, one per labelled function; empty when unlabelled.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> function_bounds;
    std::vector<std::pair<std::uint64_t, std::string>> labels; // in file order
    std::string name = "<listing>";

    friend bool operator==(const AsmProgram& a, const AsmProgram& b) {
        return a.instructions == b.instructions && a.arch == b.arch &&
               a.entry_points == b.entry_points && a.function_bounds == b.function_bounds &&
               a.labels == b.labels;
    }
};

} // namespace mailscan

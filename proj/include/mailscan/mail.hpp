#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "asm_types.hpp"
#include "errors.hpp"

namespace mailscan {

// The complete pattern alphabet. NOTDEFINED is a construction-time placeholder
// and never appears in a finalized program.
enum class MailPattern : std::uint8_t {
    ASSIGN,
    ASSIGN_CONSTANT,
    CONTROL,
    CONTROL_CONSTANT,
    CALL,
    CALL_CONSTANT,
    FLAG,
    FLAG_STACK,
    HALT,
    JUMP,
    JUMP_CONSTANT,
    JUMP_STACK,
    LIBCALL,
    LIBCALL_CONSTANT,
    LOCK,
    STACK,
    STACK_CONSTANT,
    TEST,
    TEST_CONSTANT,
    UNKNOWN,
    NOTDEFINED,
};

inline constexpr std::size_t kPatternCount = 21;

inline std::string_view pattern_name(MailPattern p) {
    static constexpr std::string_view names[] = {
        "ASSIGN",  "ASSIGN_CONSTANT", "CONTROL", "CONTROL_CONSTANT", "CALL",
        "CALL_CONSTANT", "FLAG", "FLAG_STACK", "HALT", "JUMP", "JUMP_CONSTANT",
        "JUMP_STACK", "LIBCALL", "LIBCALL_CONSTANT", "LOCK", "STACK",
        "STACK_CONSTANT", "TEST", "TEST_CONSTANT", "UNKNOWN", "NOTDEFINED",
    };
    return names[static_cast<std::size_t>(p)];
}

enum class StatementKind : std::uint8_t {
    Assignment,
    ControlTransferConditional,
    Jump,
    Call,
    LibCall,
    Stack,
    Test,
    Flag,
    Halt,
    Lock,
    Unknown,
};

inline constexpr std::size_t kStatementKindCount = 11;

inline std::string_view statement_kind_name(StatementKind k) {
    static constexpr std::string_view names[] = {
        "Assignment", "ControlTransferConditional", "Jump", "Call", "LibCall",
        "Stack", "Test", "Flag", "Halt", "Lock", "Unknown",
    };
    return names[static_cast<std::size_t>(k)];
}

// --- Operand sketch -----------------------------------------------------
// Registers are abstracted to slot indices assigned in first-use order within
// a block, constants keep their values, memory expressions keep their shape.
// A displacement inside SketchMem is part of the address expression and does
// NOT make the statement a *_CONSTANT one; only a top-level SketchImm does.

struct SketchSlot {
    std::uint16_t index = 0;
    bool operator==(const SketchSlot&) const = default;
};
struct SketchImm {
    std::int64_t value = 0;
    bool operator==(const SketchImm&) const = default;
};
struct SketchMem {
    std::optional<std::uint16_t> base;
    std::optional<std::uint16_t> index;
    std::optional<std::int64_t> disp;
    bool operator==(const SketchMem&) const = default;
};
struct SketchFlag {
    // cf/zf/df/if/eflags/cpsr — which flag or flag register is touched
    std::string flag = "eflags";
    bool operator==(const SketchFlag&) const = default;
};
struct SketchSym {
    std::string name;
    bool operator==(const SketchSym&) const = default;
};

using SketchElement = std::variant<SketchSlot, SketchImm, SketchMem, SketchFlag, SketchSym>;
using OperandSketch = std::vector<SketchElement>;

inline bool sketch_has_immediate(const OperandSketch& s) {
    for (const auto& e : s)
        if (std::holds_alternative<SketchImm>(e)) return true;
    return false;
}

struct MailStatement {
    std::uint32_t uid = 0; // dense program-wide id, assigned by translate()
    std::uint64_t origin_address = 0;
    StatementKind kind = StatementKind::Unknown;
    MailPattern pattern = MailPattern::NOTDEFINED;
    OperandSketch operand_sketch;
    std::optional<std::uint64_t> target; // constant transfer target, if known
    bool stack_effect = false;           // return jumps, flag pushes/pops

    bool operator==(const MailStatement&) const = default;
};

struct MailProvenance {
    std::string name = "<listing>";
    Arch arch = Arch::X86;
    bool operator==(const MailProvenance&) const = default;
};

struct MailProgram {
    std::vector<MailStatement> statements; // ordered by origin address
    std::vector<std::uint64_t> entry_points;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> function_bounds;
    std::vector<std::pair<std::uint64_t, std::string>> labels;
    MailProvenance provenance;

    bool operator==(const MailProgram&) const = default;
};

// Pattern from statement shape. Encodes the whole classification rule:
// kind picks the family, stack involvement and constant operands pick the
// variant. Total — every statement receives exactly one pattern.
inline MailPattern assign_pattern(const MailStatement& s) {
    const bool has_const = sketch_has_immediate(s.operand_sketch);
    switch (s.kind) {
        case StatementKind::Assignment:
            return has_const ? MailPattern::ASSIGN_CONSTANT : MailPattern::ASSIGN;
        case StatementKind::ControlTransferConditional:
            return s.target ? MailPattern::CONTROL_CONSTANT : MailPattern::CONTROL;
        case StatementKind::Jump:
            if (s.stack_effect) return MailPattern::JUMP_STACK;
            return s.target ? MailPattern::JUMP_CONSTANT : MailPattern::JUMP;
        case StatementKind::Call:
            return s.target ? MailPattern::CALL_CONSTANT : MailPattern::CALL;
        case StatementKind::LibCall:
            return has_const ? MailPattern::LIBCALL_CONSTANT : MailPattern::LIBCALL;
        case StatementKind::Stack:
            return has_const ? MailPattern::STACK_CONSTANT : MailPattern::STACK;
        case StatementKind::Test:
            return has_const ? MailPattern::TEST_CONSTANT : MailPattern::TEST;
        case StatementKind::Flag:
            return s.stack_effect ? MailPattern::FLAG_STACK : MailPattern::FLAG;
        case StatementKind::Halt:
            return MailPattern::HALT;
        case StatementKind::Lock:
            return MailPattern::LOCK;
        case StatementKind::Unknown:
            return MailPattern::UNKNOWN;
    }
    return MailPattern::NOTDEFINED;
}

inline bool is_block_terminator(StatementKind k) {
    return k == StatementKind::Jump || k == StatementKind::ControlTransferConditional ||
           k == StatementKind::Halt;
}

// Control transfer in the machine sense (wider than block terminators: calls
// transfer control but do not end blocks).
inline bool is_control_transfer(StatementKind k) {
    return is_block_terminator(k) || k == StatementKind::Call || k == StatementKind::LibCall;
}

inline std::array<std::size_t, kPatternCount> pattern_histogram(const MailProgram& m) {
    std::array<std::size_t, kPatternCount> h{};
    for (const auto& s : m.statements) ++h[static_cast<std::size_t>(s.pattern)];
    return h;
}

namespace detail {
inline std::string sketch_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    do { s.insert(s.begin(), digits[v & 0xf]); v >>= 4; } while (v);
    return s;
}
inline std::string sketch_imm_str(std::int64_t v) {
    return v < 0 ? "-0x" + sketch_hex(static_cast<std::uint64_t>(-v))
                 : "0x" + sketch_hex(static_cast<std::uint64_t>(v));
}
} // namespace detail

inline std::string sketch_to_string(const OperandSketch& sk) {
    if (sk.empty()) return "-";
    std::string out;
    bool first = true;
    for (const auto& e : sk) {
        if (!first) out += ',';
        first = false;
        if (auto* s = std::get_if<SketchSlot>(&e)) {
            out += 'r';
            out += std::to_string(s->index);
        } else if (auto* i = std::get_if<SketchImm>(&e)) {
            out += detail::sketch_imm_str(i->value);
        } else if (auto* m = std::get_if<SketchMem>(&e)) {
            out += '[';
            bool f2 = true;
            if (m->base) {
                out += 'r' + std::to_string(*m->base);
                f2 = false;
            }
            if (m->index) {
                if (!f2) out += '+';
                out += 'r' + std::to_string(*m->index);
                f2 = false;
            }
            if (m->disp) {
                if (!f2 && *m->disp >= 0) out += '+';
                out += detail::sketch_imm_str(*m->disp);
            }
            out += ']';
        } else if (auto* fl = std::get_if<SketchFlag>(&e)) {
            out += fl->flag;
        } else if (auto* sy = std::get_if<SketchSym>(&e)) {
            out += '@';
            out += sy->name;
        }
    }
    return out;
}

// One line per statement: <addr> <PATTERN> <kind> <sketch>
inline std::string dump_mail(const MailProgram& m) {
    std::string out;
    for (const auto& s : m.statements) {
        out += detail::sketch_hex(s.origin_address);
        out += ' ';
        out += pattern_name(s.pattern);
        out += ' ';
        out += statement_kind_name(s.kind);
        out += ' ';
        out += sketch_to_string(s.operand_sketch);
        out += '\n';
    }
    return out;
}

} // namespace mailscan

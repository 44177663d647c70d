#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "asm_tables.hpp"
#include "asm_types.hpp"
#include "errors.hpp"

namespace mailscan {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::string upper(std::string_view s) {
    std::string r(s);
    std::transform(r.begin(), r.end(), r.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return r;
}

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

inline bool is_word(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), is_word_char);
}

inline bool is_hex(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isxdigit(static_cast<unsigned char>(c));
    });
}

inline bool is_dec(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c));
    });
}

inline std::optional<std::uint64_t> parse_hex_u64(std::string_view s) {
    if (!is_hex(s) || s.size() > 16) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else v |= static_cast<std::uint64_t>(c - 'A' + 10);
    }
    return v;
}

// Immediate grammar: ['#'] ['-'] ( '0x' hex | dec )
inline std::optional<std::int64_t> parse_immediate(std::string_view s) {
    if (!s.empty() && s.front() == '#') s.remove_prefix(1);
    bool neg = false;
    if (!s.empty() && s.front() == '-') {
        neg = true;
        s.remove_prefix(1);
    }
    std::uint64_t mag = 0;
    if (s.size() > 2 && (s.substr(0, 2) == "0x" || s.substr(0, 2) == "0X")) {
        auto v = parse_hex_u64(s.substr(2));
        if (!v) return std::nullopt;
        mag = *v;
    } else if (is_dec(s)) {
        std::uint64_t v = 0;
        for (char c : s) {
            if (v > (UINT64_MAX - 9) / 10) return std::nullopt;
            v = v * 10 + static_cast<std::uint64_t>(c - '0');
        }
        mag = v;
    } else {
        return std::nullopt;
    }
    auto sv = static_cast<std::int64_t>(mag);
    return neg ? -sv : sv;
}

// Split on commas that sit outside [...] and {...}.
inline std::vector<std::string_view> split_toplevel_commas(std::string_view s) {
    std::vector<std::string_view> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c == '[' || c == '{') ++depth;
        else if (c == ']' || c == '}') --depth;
        else if (c == ',' && depth == 0) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(s.substr(start));
    return out;
}

} // namespace detail

struct NormalizeOptions {
    // Mnemonics to drop; nullptr means default_junk_mnemonics().
    const std::set<std::string>* junk = nullptr;
};

// Loads one mnemonic per line; '#' starts a comment.
inline std::set<std::string> load_junk_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open junk-instruction list: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto t = detail::trim(line);
        if (!t.empty()) out.insert(detail::upper(t));
    }
    return out;
}

namespace detail {

inline Operand parse_register_token(std::string_view tok, Arch arch, std::size_t lineno) {
    bool wb = false;
    if (!tok.empty() && tok.back() == '!') {
        wb = true;
        tok.remove_suffix(1);
        tok = trim(tok);
    }
    std::string name = upper(tok);
    if (!register_table(arch).count(name))
        throw MalformedLineError(lineno, "unknown register '" + std::string(tok) + "'");
    return Operand::make_reg(std::move(name), wb);
}

inline Operand parse_memref(std::string_view body, Arch arch, std::size_t lineno, bool writeback) {
    MemoryExpr m;
    m.writeback = writeback;
    // Terms separated by '+', '-' or ',' (ARM style); '-' negates an immediate term.
    std::size_t i = 0;
    int sign = 1;
    bool expect_term = true;
    auto take_term = [&](std::string_view term) {
        term = trim(term);
        if (term.empty()) throw MalformedLineError(lineno, "empty term in memory operand");
        // Scaled index: REG*k
        auto star = term.find('*');
        if (star != std::string_view::npos) {
            auto regtok = trim(term.substr(0, star));
            auto scaletok = trim(term.substr(star + 1));
            auto sc = parse_immediate(scaletok);
            if (!sc || (*sc != 1 && *sc != 2 && *sc != 4 && *sc != 8))
                throw MalformedLineError(lineno, "bad scale in memory operand");
            auto r = parse_register_token(regtok, arch, lineno);
            if (m.index) throw MalformedLineError(lineno, "more than one index register");
            m.index = r.reg;
            m.scale = static_cast<int>(*sc);
            return;
        }
        char c0 = term.front();
        if (c0 == '#' || c0 == '-' || std::isdigit(static_cast<unsigned char>(c0))) {
            auto v = parse_immediate(term);
            if (!v) throw MalformedLineError(lineno, "bad displacement '" + std::string(term) + "'");
            m.disp = m.disp.value_or(0) + sign * *v;
            return;
        }
        auto r = parse_register_token(term, arch, lineno);
        if (sign < 0) throw MalformedLineError(lineno, "cannot subtract a register");
        if (!m.base) m.base = r.reg;
        else if (!m.index) m.index = r.reg;
        else throw MalformedLineError(lineno, "too many registers in memory operand");
    };
    std::size_t start = 0;
    for (i = 0; i <= body.size(); ++i) {
        if (i == body.size() || body[i] == '+' || body[i] == ',' ||
            (body[i] == '-' && !expect_term)) {
            auto piece = body.substr(start, i - start);
            if (!trim(piece).empty()) {
                take_term(piece);
                expect_term = false;
            } else if (i < body.size()) {
                throw MalformedLineError(lineno, "empty term in memory operand");
            }
            if (i < body.size()) sign = (body[i] == '-') ? -1 : 1;
            start = i + 1;
            if (i < body.size()) expect_term = true;
        } else if (!std::isspace(static_cast<unsigned char>(body[i])) && body[i] != '#') {
            // '#' keeps expect_term set so the '-' in "#-4" binds to the
            // immediate instead of splitting the term.
            expect_term = false;
        }
    }
    if (!m.base && !m.index && !m.disp)
        throw MalformedLineError(lineno, "empty memory operand");
    return Operand::make_mem(std::move(m));
}

inline void parse_reglist(std::string_view body, Arch arch, std::size_t lineno,
                          std::vector<Operand>& out) {
    for (auto part : split_toplevel_commas(body)) {
        part = trim(part);
        if (part.empty()) throw MalformedLineError(lineno, "empty entry in register list");
        auto dash = part.find('-');
        if (dash != std::string_view::npos) {
            auto lo = parse_register_token(trim(part.substr(0, dash)), arch, lineno);
            auto hi = parse_register_token(trim(part.substr(dash + 1)), arch, lineno);
            auto& tab = register_table(arch);
            int f0 = tab.at(lo.reg).family, f1 = tab.at(hi.reg).family;
            if (f1 < f0) throw MalformedLineError(lineno, "descending register range");
            for (int f = f0; f <= f1; ++f)
                out.push_back(Operand::make_reg(canonical_register_name(arch, f, 32, false)));
        } else {
            out.push_back(parse_register_token(part, arch, lineno));
        }
    }
}

inline void parse_operand(std::string_view tok, Arch arch, std::size_t lineno,
                          AsmInstruction& insn) {
    tok = trim(tok);
    if (tok.empty()) throw MalformedLineError(lineno, "empty operand");
    char c0 = tok.front();
    if (c0 == '{') {
        if (tok.back() != '}') throw MalformedLineError(lineno, "unterminated register list");
        if (insn.reglist_start == SIZE_MAX) insn.reglist_start = insn.operands.size();
        parse_reglist(tok.substr(1, tok.size() - 2), arch, lineno, insn.operands);
        return;
    }
    if (c0 == '[') {
        bool wb = false;
        if (tok.back() == '!') {
            wb = true;
            tok.remove_suffix(1);
            tok = trim(tok);
        }
        if (tok.back() != ']') throw MalformedLineError(lineno, "unterminated memory operand");
        insn.operands.push_back(parse_memref(tok.substr(1, tok.size() - 2), arch, lineno, wb));
        return;
    }
    if (c0 == '#' || c0 == '-' || std::isdigit(static_cast<unsigned char>(c0))) {
        auto v = parse_immediate(tok);
        if (!v) throw MalformedLineError(lineno, "bad immediate '" + std::string(tok) + "'");
        insn.operands.push_back(Operand::make_imm(*v));
        return;
    }
    bool wb = tok.back() == '!';
    std::string_view core = wb ? trim(tok.substr(0, tok.size() - 1)) : tok;
    if (!is_word(core))
        throw MalformedLineError(lineno, "unparseable operand '" + std::string(tok) + "'");
    if (register_table(arch).count(upper(core))) {
        insn.operands.push_back(parse_register_token(tok, arch, lineno));
        return;
    }
    if (wb)
        throw MalformedLineError(lineno, "writeback on non-register '" + std::string(tok) + "'");
    insn.operands.push_back(Operand::make_label(std::string(tok)));
}

inline void rebuild_indices(AsmProgram& p) {
    std::stable_sort(p.instructions.begin(), p.instructions.end(),
                     [](const AsmInstruction& a, const AsmInstruction& b) {
                         return a.address < b.address;
                     });
    for (std::size_t i = 1; i < p.instructions.size(); ++i)
        if (p.instructions[i].address == p.instructions[i - 1].address)
            throw DuplicateAddressError(p.instructions[i].address);

    p.entry_points.clear();
    p.function_bounds.clear();
    if (p.instructions.empty()) throw EmptyProgramError();

    p.entry_points.push_back(p.instructions.front().address);
    std::set<std::uint64_t> label_addrs;
    for (auto& [addr, name] : p.labels) {
        (void)name;
        label_addrs.insert(addr);
        p.entry_points.push_back(addr);
    }
    std::sort(p.entry_points.begin(), p.entry_points.end());
    p.entry_points.erase(std::unique(p.entry_points.begin(), p.entry_points.end()),
                         p.entry_points.end());

    if (!label_addrs.empty()) {
        std::uint64_t end_sentinel = p.instructions.back().address + 1;
        std::vector<std::uint64_t> starts(label_addrs.begin(), label_addrs.end());
        for (std::size_t i = 0; i < starts.size(); ++i) {
            std::uint64_t end = (i + 1 < starts.size()) ? starts[i + 1] : end_sentinel;
            p.function_bounds.emplace_back(starts[i], end);
        }
    }
}

} // namespace detail

// Listing grammar, line by line (blank lines skipped):
//   instruction:  ^([0-9a-fA-F]+):\s+(\w+)(\s+.*)?$
//   label:        ^\w+:$
// A '#' starts a comment running to end of line unless it introduces an
// immediate, i.e. is directly followed by a digit or '-' (as in ARM "#5",
// "[r1, #-4]").
inline AsmProgram parse_listing(std::string_view text, Arch arch,
                                std::string name = "<listing>") {
    AsmProgram p;
    p.arch = arch;
    p.name = std::move(name);

    std::vector<std::string> pending_labels;
    std::set<std::string> seen_labels;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                              : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++lineno;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] != '#') continue;
            bool imm = i + 1 < line.size() &&
                       (std::isdigit(static_cast<unsigned char>(line[i + 1])) ||
                        line[i + 1] == '-');
            if (!imm) {
                line = line.substr(0, i);
                break;
            }
        }
        line = detail::trim(line);
        if (line.empty()) continue;

        auto colon = line.find(':');
        if (colon == std::string_view::npos)
            throw MalformedLineError(lineno, "expected '<addr>: <mnemonic>' or '<label>:'");
        std::string_view head = line.substr(0, colon);
        std::string_view rest = line.substr(colon + 1);

        if (rest.empty()) { // label line: ^\w+:$
            if (!detail::is_word(head))
                throw MalformedLineError(lineno, "bad label '" + std::string(head) + "'");
            std::string lname(head);
            if (!seen_labels.insert(lname).second)
                throw MalformedLineError(lineno, "duplicate label '" + lname + "'");
            pending_labels.push_back(std::move(lname));
            continue;
        }

        // Instruction line.
        auto addr = detail::parse_hex_u64(head);
        if (!addr)
            throw MalformedLineError(lineno, "bad address '" + std::string(head) + "'");
        if (rest.front() != ' ' && rest.front() != '\t')
            throw MalformedLineError(lineno, "missing whitespace after address");
        rest = detail::trim(rest);
        std::size_t mend = 0;
        while (mend < rest.size() && detail::is_word_char(rest[mend])) ++mend;
        if (mend == 0) throw MalformedLineError(lineno, "missing mnemonic");

        AsmInstruction insn;
        insn.address = *addr;
        insn.arch = arch;
        insn.raw_text = std::string(line);
        std::string mnemonic = detail::upper(rest.substr(0, mend));
        std::string_view tail = detail::trim(rest.substr(mend));

        // Peel prefixes as long as another mnemonic-looking token follows.
        auto& prefixes = prefix_table(arch);
        while (prefixes.count(mnemonic) && !tail.empty() &&
               std::isalpha(static_cast<unsigned char>(tail.front()))) {
            insn.prefixes.push_back(mnemonic);
            std::size_t e = 0;
            while (e < tail.size() && detail::is_word_char(tail[e])) ++e;
            mnemonic = detail::upper(tail.substr(0, e));
            tail = detail::trim(tail.substr(e));
        }
        insn.mnemonic = std::move(mnemonic);

        if (!tail.empty())
            for (auto tok : detail::split_toplevel_commas(tail))
                detail::parse_operand(tok, arch, lineno, insn);

        for (auto& l : pending_labels) p.labels.emplace_back(insn.address, l);
        pending_labels.clear();
        p.instructions.push_back(std::move(insn));
    }

    detail::rebuild_indices(p);
    return p;
}

inline AsmProgram parse_listing_file(const std::string& path, Arch arch) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open listing: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_listing(ss.str(), arch, path);
}

// Drops junk instructions and REP-style prefixes. Keeps addresses untouched,
// never removes a control transfer, and is idempotent.
inline AsmProgram normalize(const AsmProgram& p, const NormalizeOptions& opts = {}) {
    const std::set<std::string>& junk = opts.junk ? *opts.junk : default_junk_mnemonics();
    AsmProgram out;
    out.arch = p.arch;
    out.name = p.name;
    out.labels = p.labels;
    for (const auto& insn : p.instructions) {
        if (junk.count(insn.mnemonic) && !mnemonic_is_control_transfer(p.arch, insn.mnemonic))
            continue;
        AsmInstruction copy = insn;
        std::erase_if(copy.prefixes, prefix_is_dropped);
        out.instructions.push_back(std::move(copy));
    }
    if (out.instructions.empty()) throw EmptyProgramError("normalization removed every instruction");
    // A label whose instruction was removed re-binds to the next surviving one.
    for (auto& [addr, name] : out.labels) {
        (void)name;
        auto it = std::lower_bound(out.instructions.begin(), out.instructions.end(), addr,
                                   [](const AsmInstruction& a, std::uint64_t v) {
                                       return a.address < v;
                                   });
        if (it == out.instructions.end()) it = std::prev(out.instructions.end());
        addr = it->address;
    }
    out.labels.erase(std::unique(out.labels.begin(), out.labels.end(),
                                 [](auto& a, auto& b) { return a.first == b.first && a.second == b.second; }),
                     out.labels.end());
    detail::rebuild_indices(out);
    return out;
}

namespace detail {

inline std::string hex_str(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    do { s.insert(s.begin(), digits[v & 0xf]); v >>= 4; } while (v);
    return s;
}

inline std::string imm_str(std::int64_t v) {
    if (v < 0) return "-0x" + hex_str(static_cast<std::uint64_t>(-v));
    return "0x" + hex_str(static_cast<std::uint64_t>(v));
}

inline std::string operand_str(const Operand& o) {
    switch (o.kind) {
        case OperandKind::Register:
            return o.reg + (o.writeback ? "!" : "");
        case OperandKind::Immediate:
            return imm_str(o.imm);
        case OperandKind::Label:
            return o.label;
        case OperandKind::MemoryRef: {
            std::string s = "[";
            bool first = true;
            if (o.mem.base) {
                s += *o.mem.base;
                first = false;
            }
            if (o.mem.index) {
                if (!first) s += " + ";
                s += *o.mem.index;
                if (o.mem.scale != 1) s += "*" + std::to_string(o.mem.scale);
                first = false;
            }
            if (o.mem.disp) {
                std::int64_t d = *o.mem.disp;
                if (first) s += imm_str(d);
                else if (d < 0) s += " - " + imm_str(-d).substr(0);
                else s += " + " + imm_str(d);
            }
            s += "]";
            if (o.mem.writeback) s += "!";
            return s;
        }
    }
    return "";
}

} // namespace detail

// Deterministic textual form; parse_listing(to_listing(p)) reproduces p.
inline std::string to_listing(const AsmProgram& p) {
    std::map<std::uint64_t, std::vector<std::string>> labels_at;
    for (const auto& [addr, name] : p.labels) labels_at[addr].push_back(name);
    std::string out;
    for (const auto& insn : p.instructions) {
        if (auto it = labels_at.find(insn.address); it != labels_at.end())
            for (const auto& l : it->second) {
                out += l;
                out += ":\n";
            }
        out += detail::hex_str(insn.address);
        out += ": ";
        for (const auto& pre : insn.prefixes) {
            out += pre;
            out += ' ';
        }
        out += insn.mnemonic;
        for (std::size_t i = 0; i < insn.operands.size(); ++i) {
            bool in_list = insn.reglist_start != SIZE_MAX && i >= insn.reglist_start;
            if (in_list && i == insn.reglist_start) {
                out += " {";
                bool first = true;
                for (std::size_t j = insn.reglist_start; j < insn.operands.size(); ++j) {
                    if (!first) out += ", ";
                    out += detail::operand_str(insn.operands[j]);
                    first = false;
                }
                out += "}";
                break;
            }
            out += (i == 0) ? " " : ", ";
            out += detail::operand_str(insn.operands[i]);
        }
        out += '\n';
    }
    return out;
}

} // namespace mailscan

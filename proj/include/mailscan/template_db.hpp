#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acfg.hpp"
#include "errors.hpp"
#include "mail.hpp"
#include "swod.hpp"

namespace mailscan {

inline constexpr std::uint32_t kDbFormatVersion = 1;
inline constexpr std::string_view kDbMagic = "MAILDB01";

// How the two matchers combine into a verdict.
enum class Combinator : std::uint8_t {
    Either = 0, // graph match OR statistical match
    Both = 1,
    AcfgOnly = 2,
    SwodOnly = 3,
};

inline std::string_view combinator_name(Combinator c) {
    switch (c) {
        case Combinator::Either: return "either";
        case Combinator::Both: return "both";
        case Combinator::AcfgOnly: return "acfg-only";
        case Combinator::SwodOnly: return "swod-only";
    }
    return "either";
}

inline Combinator combinator_from_name(std::string_view s) {
    if (s == "either") return Combinator::Either;
    if (s == "both") return Combinator::Both;
    if (s == "acfg-only") return Combinator::AcfgOnly;
    if (s == "swod-only") return Combinator::SwodOnly;
    throw Error("unknown combinator: " + std::string(s));
}

struct AcfgTemplate {
    std::string family;
    ProgramSignatureAcfg signature;
    bool operator==(const AcfgTemplate&) const = default;
};

struct SwodTemplate {
    std::string family;
    SwodSignature signature;
    bool operator==(const SwodTemplate&) const = default;
};

struct TemplateDb {
    std::uint32_t format_version = kDbFormatVersion;
    std::vector<AcfgTemplate> acfg_templates;
    std::vector<SwodTemplate> swod_templates;
    PatternWeights pattern_weights;
    double acfg_threshold = 0.70;
    std::uint32_t swod_k = 11;
    std::uint32_t index_len = 16;
    Combinator combinator = Combinator::Either;

    bool operator==(const TemplateDb&) const = default;
};

namespace detail {

// CRC-32 (reflected, polynomial 0xEDB88320), as used by zip/png.
inline std::uint32_t crc32(const std::string& data) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffu;
    for (unsigned char byte : data) crc = table[(crc ^ byte) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

// Little-endian byte writer/reader so databases are portable between hosts.
class DbWriter {
public:
    std::string out;

    void u8(std::uint8_t v) { out.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { emit(v, 2); }
    void u32(std::uint32_t v) { emit(v, 4); }
    void u64(std::uint64_t v) { emit(v, 8); }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void boolean(bool v) { u8(v ? 1 : 0); }
    void str(const std::string& s) {
        u64(s.size());
        out.append(s);
    }

    template <class T>
    void opt(const std::optional<T>& o, void (DbWriter::*put)(T)) {
        boolean(o.has_value());
        if (o) (this->*put)(*o);
    }

private:
    void emit(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
};

class DbReader {
public:
    explicit DbReader(std::string_view data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(gather(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(gather(4)); }
    std::uint64_t u64() { return gather(8); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    bool boolean() { return u8() != 0; }
    std::string str() {
        std::uint64_t n = u64();
        if (n > remaining()) throw CorruptDbError("truncated string");
        std::string_view v = take(static_cast<std::size_t>(n));
        return std::string(v);
    }

    template <class T, class F>
    std::optional<T> opt(F get) {
        if (!boolean()) return std::nullopt;
        return (this->*get)();
    }

    std::uint64_t count() {
        std::uint64_t n = u64();
        // Every element costs at least one byte; a larger claim is corruption.
        if (n > remaining()) throw CorruptDbError("element count exceeds payload size");
        return n;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view take(std::size_t n) {
        if (n > remaining()) throw CorruptDbError("unexpected end of payload");
        std::string_view v = data_.substr(pos_, n);
        pos_ += n;
        return v;
    }
    std::uint64_t gather(int bytes) {
        std::string_view v = take(static_cast<std::size_t>(bytes));
        std::uint64_t r = 0;
        for (int i = 0; i < bytes; ++i)
            r |= static_cast<std::uint64_t>(static_cast<unsigned char>(v[i])) << (8 * i);
        return r;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline void put_sketch_element(DbWriter& w, const SketchElement& e) {
    if (const auto* slot = std::get_if<SketchSlot>(&e)) {
        w.u8(0);
        w.u16(slot->index);
    } else if (const auto* imm = std::get_if<SketchImm>(&e)) {
        w.u8(1);
        w.i64(imm->value);
    } else if (const auto* mem = std::get_if<SketchMem>(&e)) {
        w.u8(2);
        w.opt(mem->base, &DbWriter::u16);
        w.opt(mem->index, &DbWriter::u16);
        w.opt(mem->disp, &DbWriter::i64);
    } else if (const auto* fl = std::get_if<SketchFlag>(&e)) {
        w.u8(3);
        w.str(fl->flag);
    } else {
        w.u8(4);
        w.str(std::get<SketchSym>(e).name);
    }
}

inline SketchElement get_sketch_element(DbReader& r) {
    switch (r.u8()) {
        case 0: return SketchSlot{r.u16()};
        case 1: return SketchImm{r.i64()};
        case 2: {
            SketchMem m;
            m.base = r.opt<std::uint16_t>(&DbReader::u16);
            m.index = r.opt<std::uint16_t>(&DbReader::u16);
            m.disp = r.opt<std::int64_t>(&DbReader::i64);
            return m;
        }
        case 3: return SketchFlag{r.str()};
        case 4: return SketchSym{r.str()};
        default: throw CorruptDbError("unknown sketch element tag");
    }
}

inline void put_statement(DbWriter& w, const MailStatement& s) {
    w.u32(s.uid);
    w.u64(s.origin_address);
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(static_cast<std::uint8_t>(s.pattern));
    w.u64(s.operand_sketch.size());
    for (const auto& e : s.operand_sketch) put_sketch_element(w, e);
    w.opt(s.target, &DbWriter::u64);
    w.boolean(s.stack_effect);
}

inline MailStatement get_statement(DbReader& r) {
    MailStatement s;
    s.uid = r.u32();
    s.origin_address = r.u64();
    std::uint8_t kind = r.u8();
    if (kind >= kStatementKindCount) throw CorruptDbError("bad statement kind");
    s.kind = static_cast<StatementKind>(kind);
    std::uint8_t pattern = r.u8();
    if (pattern >= kPatternCount) throw CorruptDbError("bad pattern id");
    s.pattern = static_cast<MailPattern>(pattern);
    std::uint64_t n = r.count();
    s.operand_sketch.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) s.operand_sketch.push_back(get_sketch_element(r));
    s.target = r.opt<std::uint64_t>(&DbReader::u64);
    s.stack_effect = r.boolean();
    return s;
}

inline void put_acfg(DbWriter& w, const Acfg& g) {
    w.u64(g.blocks.size());
    for (const Block& b : g.blocks) {
        w.u32(b.id);
        w.u64(b.statements.size());
        for (const auto& s : b.statements) put_statement(w, s);
        w.u64(b.pattern_seq.size());
        for (MailPattern p : b.pattern_seq) w.u8(static_cast<std::uint8_t>(p));
    }
    w.u64(g.edges.size());
    for (auto [a, b] : g.edges) {
        w.u32(a);
        w.u32(b);
    }
    w.u32(g.entry);
    w.boolean(g.function_label.has_value());
    if (g.function_label) w.str(*g.function_label);
}

inline Acfg get_acfg(DbReader& r) {
    Acfg g;
    std::uint64_t nb = r.count();
    g.blocks.reserve(static_cast<std::size_t>(nb));
    for (std::uint64_t i = 0; i < nb; ++i) {
        Block b;
        b.id = r.u32();
        std::uint64_t ns = r.count();
        b.statements.reserve(static_cast<std::size_t>(ns));
        for (std::uint64_t k = 0; k < ns; ++k) b.statements.push_back(get_statement(r));
        std::uint64_t np = r.count();
        b.pattern_seq.reserve(static_cast<std::size_t>(np));
        for (std::uint64_t k = 0; k < np; ++k) {
            std::uint8_t p = r.u8();
            if (p >= kPatternCount) throw CorruptDbError("bad pattern id");
            b.pattern_seq.push_back(static_cast<MailPattern>(p));
        }
        g.blocks.push_back(std::move(b));
    }
    std::uint64_t ne = r.count();
    g.edges.reserve(static_cast<std::size_t>(ne));
    for (std::uint64_t i = 0; i < ne; ++i) {
        std::uint32_t a = r.u32();
        std::uint32_t b = r.u32();
        g.edges.emplace_back(a, b);
    }
    g.entry = r.u32();
    if (r.boolean()) g.function_label = r.str();
    return g;
}

inline void put_signature_acfg(DbWriter& w, const ProgramSignatureAcfg& sig) {
    w.u64(sig.acfgs.size());
    for (const Acfg& g : sig.acfgs) put_acfg(w, g);
    w.str(sig.provenance);
}

inline ProgramSignatureAcfg get_signature_acfg(DbReader& r) {
    ProgramSignatureAcfg sig;
    std::uint64_t n = r.count();
    sig.acfgs.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) sig.acfgs.push_back(get_acfg(r));
    sig.provenance = r.str();
    return sig;
}

inline void put_swod_signature(DbWriter& w, const SwodSignature& sig) {
    w.u64(sig.weights_sorted.size());
    for (std::int64_t v : sig.weights_sorted) w.i64(v);
    w.u64(sig.index_array.size());
    for (std::int64_t v : sig.index_array) w.i64(v);
    w.str(sig.provenance);
}

inline SwodSignature get_swod_signature(DbReader& r) {
    SwodSignature sig;
    std::uint64_t nw = r.count();
    sig.weights_sorted.reserve(static_cast<std::size_t>(nw));
    for (std::uint64_t i = 0; i < nw; ++i) sig.weights_sorted.push_back(r.i64());
    std::uint64_t ni = r.count();
    sig.index_array.reserve(static_cast<std::size_t>(ni));
    for (std::uint64_t i = 0; i < ni; ++i) sig.index_array.push_back(r.i64());
    sig.provenance = r.str();
    return sig;
}

inline void put_pattern_weights(DbWriter& w, const PatternWeights& pw) {
    for (std::int32_t v : pw.weight) w.i32(v);
    w.i32(pw.window.scale);
    w.i32(pw.window.clamp);
    w.i32(pw.window.width);
    w.i32(pw.window.stride);
    w.i32(pw.window.c_transfer);
    w.i32(pw.window.c_in);
    w.i32(pw.window.c_out);
    w.str(pw.provenance);
}

inline PatternWeights get_pattern_weights(DbReader& r) {
    PatternWeights pw;
    for (auto& v : pw.weight) v = r.i32();
    pw.window.scale = r.i32();
    pw.window.clamp = r.i32();
    pw.window.width = r.i32();
    pw.window.stride = r.i32();
    pw.window.c_transfer = r.i32();
    pw.window.c_in = r.i32();
    pw.window.c_out = r.i32();
    pw.provenance = r.str();
    return pw;
}

} // namespace detail

inline std::string serialize_db(const TemplateDb& db) {
    detail::DbWriter w;
    w.u64(db.acfg_templates.size());
    for (const AcfgTemplate& t : db.acfg_templates) {
        w.str(t.family);
        detail::put_signature_acfg(w, t.signature);
    }
    w.u64(db.swod_templates.size());
    for (const SwodTemplate& t : db.swod_templates) {
        w.str(t.family);
        detail::put_swod_signature(w, t.signature);
    }
    detail::put_pattern_weights(w, db.pattern_weights);
    w.f64(db.acfg_threshold);
    w.u32(db.swod_k);
    w.u32(db.index_len);
    w.u8(static_cast<std::uint8_t>(db.combinator));

    std::string payload = std::move(w.out);
    detail::DbWriter out;
    out.out.append(kDbMagic);
    out.u32(kDbFormatVersion);
    out.u64(payload.size());
    out.out.append(payload);
    out.u32(detail::crc32(payload));
    return std::move(out.out);
}

inline TemplateDb deserialize_db(std::string_view data) {
    if (data.size() < kDbMagic.size() + 4 + 8 + 4) throw CorruptDbError("file too short");
    if (data.substr(0, kDbMagic.size()) != kDbMagic) throw CorruptDbError("bad magic");
    detail::DbReader header(data.substr(kDbMagic.size()));
    std::uint32_t version = header.u32();
    if (version != kDbFormatVersion) throw IncompatibleDbVersionError(version, kDbFormatVersion);
    std::uint64_t payload_len = header.u64();
    if (payload_len != header.remaining() - 4) throw CorruptDbError("payload length mismatch");

    std::string_view payload = data.substr(kDbMagic.size() + 12, static_cast<std::size_t>(payload_len));
    detail::DbReader tail(data.substr(kDbMagic.size() + 12 + static_cast<std::size_t>(payload_len)));
    std::uint32_t want_crc = tail.u32();
    if (detail::crc32(std::string(payload)) != want_crc) throw CorruptDbError("checksum mismatch");

    detail::DbReader r(payload);
    TemplateDb db;
    db.format_version = version;
    std::uint64_t na = r.count();
    db.acfg_templates.reserve(static_cast<std::size_t>(na));
    for (std::uint64_t i = 0; i < na; ++i) {
        AcfgTemplate t;
        t.family = r.str();
        t.signature = detail::get_signature_acfg(r);
        db.acfg_templates.push_back(std::move(t));
    }
    std::uint64_t ns = r.count();
    db.swod_templates.reserve(static_cast<std::size_t>(ns));
    for (std::uint64_t i = 0; i < ns; ++i) {
        SwodTemplate t;
        t.family = r.str();
        t.signature = detail::get_swod_signature(r);
        db.swod_templates.push_back(std::move(t));
    }
    db.pattern_weights = detail::get_pattern_weights(r);
    db.acfg_threshold = r.f64();
    db.swod_k = r.u32();
    db.index_len = r.u32();
    std::uint8_t comb = r.u8();
    if (comb > 3) throw CorruptDbError("bad combinator id");
    db.combinator = static_cast<Combinator>(comb);
    if (!r.done()) throw CorruptDbError("trailing bytes after payload");
    return db;
}

inline void save_db(const TemplateDb& db, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    std::string blob = serialize_db(db);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline TemplateDb load_db(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_db(data);
}

} // namespace mailscan

// Database serialization: byte-exact layout header, structural round-trips,
// and corruption detection (magic, truncation, checksum, version, enums).
#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "mailscan/template_db.hpp"

#include "../support/corpus.hpp"
#include "../support/proc.hpp"

using namespace mailscan;

namespace {

MailProgram lift_text(const std::string& body, Arch arch = Arch::X86) {
    return translate(normalize(parse_listing(body, arch)));
}

// A database touching every serialized field kind: both architectures, all
// sketch element shapes, labels, optional fields, negative weights.
TemplateDb make_rich_db() {
    const std::string x86 =
        "entry:\n"
        "0: mov eax, [ebx + ecx*2 + 0x10]\n"
        "4: mov edx, [ebx]\n"
        "8: pushf\n"
        "c: call somewhere_unseen\n"
        "10: call printf, 0x5\n"
        "14: cmp eax, 0x1\n"
        "18: je 0x20\n"
        "1c: mov esi, edi\n"
        "20: hlt\n";
    const std::string arm =
        "fn:\n"
        "0: ldr r0, [r1, #4]\n"
        "4: push {r0, r1}\n"
        "8: msr cpsr, r2\n"
        "c: bl memcpy\n"
        "10: bx lr\n";

    auto mx = lift_text(x86);
    auto ma = lift_text(arm, Arch::Arm);
    auto gx = build_acfgs(mx);
    auto ga = build_acfgs(ma);

    TemplateDb db;
    db.acfg_templates.push_back({"familyA", gx});
    db.acfg_templates.push_back({"familyB", merge_blocks(ga)});

    PatternWeights w;
    w.weight[static_cast<std::size_t>(MailPattern::ASSIGN_CONSTANT)] = 17;
    w.weight[static_cast<std::size_t>(MailPattern::TEST)] = -23;
    w.window.scale = 150;
    w.window.clamp = 40;
    w.provenance = "2 malware / 2 benign";
    db.pattern_weights = w;

    db.swod_templates.push_back({"familyA", build_swod_signature(mx, gx, w)});
    db.swod_templates.push_back({"familyB", build_swod_signature(ma, ga, w)});

    db.acfg_threshold = 0.85;
    db.swod_k = 13;
    db.index_len = 16;
    db.combinator = Combinator::Both;
    return db;
}

} // namespace

TEST_CASE("combinator names round-trip") {
    for (Combinator c : {Combinator::Either, Combinator::Both, Combinator::AcfgOnly,
                         Combinator::SwodOnly})
        CHECK(combinator_from_name(combinator_name(c)) == c);
    CHECK(combinator_name(Combinator::AcfgOnly) == "acfg-only");
    CHECK_THROWS_AS(combinator_from_name("sometimes"), Error);
}

TEST_CASE("serialization round-trips structurally and byte-wise") {
    TemplateDb db = make_rich_db();
    std::string blob = serialize_db(db);

    // Fixed header: magic, then the little-endian format version.
    REQUIRE(blob.size() > 12);
    CHECK(blob.substr(0, 8) == kDbMagic);
    CHECK(static_cast<unsigned char>(blob[8]) == kDbFormatVersion);
    CHECK(static_cast<unsigned char>(blob[9]) == 0);

    TemplateDb back = deserialize_db(blob);
    CHECK(back == db);
    CHECK(serialize_db(back) == blob); // stable bytes

    SECTION("defaults survive too") {
        TemplateDb empty;
        TemplateDb back2 = deserialize_db(serialize_db(empty));
        CHECK(back2 == empty);
        CHECK(back2.acfg_threshold == 0.70);
        CHECK(back2.swod_k == 11);
        CHECK(back2.index_len == 16);
        CHECK(back2.combinator == Combinator::Either);
    }
}

TEST_CASE("file save and load round-trip") {
    testsupport::TempDir dir("dbtest");
    TemplateDb db = make_rich_db();
    const std::string path = dir.path("templates.db");
    save_db(db, path);
    CHECK(load_db(path) == db);

    CHECK_THROWS_AS(load_db(dir.path("missing.db")), IoError);
    CHECK_THROWS_AS(save_db(db, dir.path("no_such_dir/templates.db")), IoError);
}

TEST_CASE("corruption is detected, not misread") {
    TemplateDb db = make_rich_db();
    const std::string blob = serialize_db(db);

    SECTION("bad magic") {
        std::string bad = blob;
        bad[0] = 'X';
        CHECK_THROWS_AS(deserialize_db(bad), CorruptDbError);
    }
    SECTION("truncation at any boundary") {
        for (std::size_t keep :
             {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{20},
              blob.size() / 2, blob.size() - 5, blob.size() - 1})
            CHECK_THROWS_AS(deserialize_db(blob.substr(0, keep)), CorruptDbError);
    }
    SECTION("payload byte flip fails the checksum") {
        std::string bad = blob;
        bad[25] = static_cast<char>(bad[25] ^ 0x40);
        CHECK_THROWS_AS(deserialize_db(bad), CorruptDbError);
    }
    SECTION("flipped checksum itself") {
        std::string bad = blob;
        bad.back() = static_cast<char>(bad.back() ^ 0x01);
        CHECK_THROWS_AS(deserialize_db(bad), CorruptDbError);
    }
    SECTION("trailing bytes") {
        CHECK_THROWS_AS(deserialize_db(blob + "extra"), CorruptDbError);
    }
    SECTION("unsupported version") {
        std::string bad = blob;
        bad[8] = 2;
        CHECK_THROWS_AS(deserialize_db(bad), IncompatibleDbVersionError);
    }
    SECTION("bad enum value behind a valid checksum") {
        // Re-sign the payload so only the combinator byte is invalid.
        std::string payload = blob.substr(20, blob.size() - 24);
        payload.back() = 7;
        std::string bad = blob.substr(0, 20) + payload;
        mailscan::detail::DbWriter crc;
        crc.u32(mailscan::detail::crc32(payload));
        bad += crc.out;
        CHECK_THROWS_AS(deserialize_db(bad), CorruptDbError);
    }
}

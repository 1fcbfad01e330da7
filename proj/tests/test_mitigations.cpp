#include <random>

#include "doctest.h"
#include "gpuhammer/mitigations.hpp"

using namespace gpuhammer;

namespace {
DramTiming tm16() {
    DramTiming t;
    t.refs_per_window = 16;
    return t;
}
}  // namespace

TEST_CASE("TRR sampler keeps the first `capacity` distinct rows") {
    TrrSampler s({TrrPolicy::fifo_per_ref, 3, 2}, 64);
    for (std::uint32_t r : {5u, 9u, 5u, 20u, 30u, 40u}) s.observe_act(r);
    CHECK(s.entries() == std::vector<std::uint32_t>{5, 9, 20});
}

TEST_CASE("TRR refreshes blast-radius neighbours and clears") {
    DramGeometry g{1, 1, 64, 256, 256};
    CellVulnerability c;
    c.name = "v";
    c.row = 12;
    c.trh = 3;
    c.critical_deltas = {3};
    BankState b(tm16(), g, 0, {c});
    attach_mitigations(b, {TrrPolicy::fifo_per_ref, 16, 2}, {});
    Time t = 0;
    // Aggressor at +3 is tracked but lies outside the blast radius: no protection.
    for (int i = 0; i < 2; ++i, t += 45) b.activate(15, t);
    b.refresh(t);
    t += 250;
    b.activate(15, t);
    CHECK(b.collect_flips().size() == 1);

    BankState b2(tm16(), g, 0, {c});
    attach_mitigations(b2, {TrrPolicy::fifo_per_ref, 16, 2}, {});
    auto* hook = dynamic_cast<TrrSampler*>(b2.refresh_hook());
    REQUIRE(hook);
    t = 0;
    b2.activate(15, t);
    b2.activate(14, t += 45);  // tracked, 2 away from the victim
    b2.activate(15, t += 45);
    const auto rows = b2.refresh(t += 45);
    CHECK(std::find(rows.begin(), rows.end(), 12u) != rows.end());
    CHECK(hook->entries().empty());
    b2.activate(15, t += 250);
    b2.activate(15, t += 45);
    CHECK(b2.collect_flips().empty());
}

TEST_CASE("sampler state repeats under a fixed per-tREFI pattern") {
    TrrSampler s({TrrPolicy::fifo_per_ref, 16, 2}, 1024);
    DramGeometry g{1, 1, 1024, 2048, 256};
    BankState b(DramTiming{}, g, 0, {});
    std::vector<std::uint32_t> first;
    for (int i = 0; i < 5; ++i) {
        for (std::uint32_t r = 0; r < 24; ++r) s.observe_act(100 + 4 * r);
        REQUIRE(s.entries().size() <= 16);
        if (i == 0) first = s.entries();
        CHECK(s.entries() == first);
        s.on_ref(b);
    }
}

TEST_CASE("SEC-DED: every single-bit error in the 72-bit codeword is corrected") {
    SecDed codec;
    std::mt19937_64 rng(7);
    for (int w = 0; w < 32; ++w) {
        const std::uint64_t data = w == 0 ? 0 : rng();
        const std::uint8_t chk = codec.encode(data);
        CHECK(codec.decode(data, chk).status == EccStatus::clean);
        for (int bit = 0; bit < 64; ++bit) {
            const auto d = codec.decode(data ^ (std::uint64_t(1) << bit), chk);
            CHECK(d.status == EccStatus::corrected);
            CHECK(d.data == data);
        }
        for (int bit = 0; bit < 8; ++bit) {
            const auto d = codec.decode(data, std::uint8_t(chk ^ (1u << bit)));
            CHECK(d.status == EccStatus::corrected);
            CHECK(d.data == data);
        }
    }
}

TEST_CASE("SEC-DED: sampled double-bit errors are detected, never miscorrected silently") {
    SecDed codec;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20000; ++i) {
        const std::uint64_t data = rng();
        const std::uint8_t chk = codec.encode(data);
        const int a = int(rng() % 72);
        int b2 = int(rng() % 71);
        if (b2 >= a) ++b2;
        std::uint64_t d = data;
        std::uint8_t c = chk;
        for (int p : {a, b2}) {
            if (p < 64)
                d ^= std::uint64_t(1) << p;
            else
                c ^= std::uint8_t(1u << (p - 64));
        }
        CHECK(codec.decode(d, c).status == EccStatus::uncorrectable);
    }
}

TEST_CASE("ECC hides a single flipped cell and logs the correction") {
    DramGeometry g{1, 1, 64, 256, 256};
    CellVulnerability c;
    c.name = "v";
    c.row = 10;
    c.trh = 2;
    c.critical_deltas = {1};
    BankState b(tm16(), g, 0, {c});
    attach_mitigations(b, {TrrPolicy::off, 16, 2}, {true});
    b.fill_row(10, 0x00);
    b.activate(11, 0);
    b.activate(11, 45);
    CHECK(b.collect_raw_flips().size() == 1);
    CHECK(b.collect_flips().empty());
    CHECK(b.read(10, 0, 8) == std::vector<std::uint8_t>(8, 0));
    CHECK(b.ecc_log().corrected >= 1);
}

TEST_CASE("codeword helpers") {
    const auto cw = ecc_store(0x0123456789ABCDEFull);
    auto bad = cw;
    bad.data ^= 1ull << 40;
    const auto d = ecc_load(bad);
    CHECK(d.status == EccStatus::corrected);
    CHECK(d.data == cw.data);
    CHECK(parse_trr_policy("off") == TrrPolicy::off);
    CHECK_THROWS_AS(parse_trr_policy("para"), ConfigError);
}

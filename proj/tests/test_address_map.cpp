#include <set>
#include <vector>

#include "doctest.h"
#include "gpuhammer/address_map.hpp"
#include "support.hpp"

using namespace gpuhammer;

namespace {

// Every chunk of the device lands on a distinct (bank, row, slot).
void check_bijective(const AddressMap& m) {
    const auto& g = m.geometry();
    const std::uint64_t chunks = g.capacity() / g.chunk_bytes;
    std::vector<bool> seen(chunks, false);
    for (std::uint64_t c = 0; c < chunks; ++c) {
        const auto loc = m.translate(c * g.chunk_bytes);
        REQUIRE(loc.byte_in_chunk == 0);
        const std::uint64_t key =
            (std::uint64_t(loc.global_bank(g)) * g.rows_per_bank + loc.row) * g.slots_per_row() +
            loc.slot;
        REQUIRE(key < chunks);
        REQUIRE_FALSE(seen[key]);
        seen[key] = true;
    }
}

}  // namespace

TEST_CASE("desk map is a bijection onto (bank, row, slot)") {
    const auto c = testsupport::desk_engine();
    SUBCASE("mixed") { check_bijective(AddressMap(c.geometry, MapMode::mixed, c.map_seed)); }
    SUBCASE("mixed, salted") {
        check_bijective(AddressMap(c.geometry, MapMode::mixed, c.map_seed, 0xabcdef));
    }
    SUBCASE("linear") { check_bijective(AddressMap(c.geometry, MapMode::linear, c.map_seed)); }
}

TEST_CASE("bytes inside a chunk stay in the chunk") {
    const auto c = testsupport::desk_engine();
    AddressMap m(c.geometry, MapMode::mixed, c.map_seed);
    const auto base = m.translate(256 * 777);
    for (std::uint32_t b = 1; b < 256; b += 17) {
        const auto loc = m.translate(256 * 777 + b);
        CHECK(loc.global_bank(c.geometry) == base.global_bank(c.geometry));
        CHECK(loc.row == base.row);
        CHECK(loc.slot == base.slot);
        CHECK(loc.byte_in_chunk == b);
    }
}

TEST_CASE("neighbouring chunks never share a bank in mixed mode") {
    const auto c = testsupport::desk_engine();
    AddressMap m(c.geometry, MapMode::mixed, c.map_seed);
    const std::uint64_t chunks = c.geometry.capacity() / 256;
    for (std::uint64_t i = 0; i + 1 < chunks; i += 7) {
        CHECK(m.translate(i * 256).global_bank(c.geometry) !=
              m.translate((i + 1) * 256).global_bank(c.geometry));
    }
}

TEST_CASE("enumerate_row inverts translate") {
    const auto c = testsupport::desk_engine();
    AddressMap m(c.geometry, MapMode::mixed, c.map_seed);
    for (std::uint32_t gb : {0u, 5u, 31u})
        for (std::uint32_t row : {0u, 1u, 511u, 1023u}) {
            const auto offs = m.enumerate_row(gb, row);
            REQUIRE(offs.size() == c.geometry.slots_per_row());
            std::set<std::uint32_t> slots;
            for (auto o : offs) {
                const auto loc = m.translate(o);
                CHECK(loc.global_bank(c.geometry) == gb);
                CHECK(loc.row == row);
                slots.insert(loc.slot);
            }
            CHECK(slots.size() == offs.size());
        }
    CHECK_THROWS_AS(m.enumerate_row(32, 0), OutOfRange);
    CHECK_THROWS_AS(m.enumerate_row(0, 1024), OutOfRange);
}

TEST_CASE("channel latencies") {
    const auto c = testsupport::desk_engine();
    AddressMap m(c.geometry, MapMode::mixed, c.map_seed);
    CHECK(m.channel_latency(0) == 320);
    CHECK(m.channel_latency(1) == 300);
    CHECK_THROWS_AS(m.channel_latency(2), OutOfRange);
    const auto a6 = make_preset("a6000").engine;
    AddressMap big(a6.geometry, MapMode::mixed, a6.map_seed);
    for (std::uint32_t ch = 0; ch < a6.geometry.channels; ++ch) {
        CHECK(big.channel_latency(ch) >= 280);
        CHECK(big.channel_latency(ch) <= 370);
    }
    const std::uint64_t off = 256 * 12345;
    CHECK(m.base_latency(off) == m.channel_latency(m.translate(off).channel));
}

TEST_CASE("salt and seed determinism") {
    const auto c = testsupport::desk_engine();
    AddressMap a(c.geometry, MapMode::mixed, c.map_seed, 1);
    AddressMap b(c.geometry, MapMode::mixed, c.map_seed, 1);
    AddressMap d(c.geometry, MapMode::mixed, c.map_seed, 2);
    int differ = 0;
    for (std::uint64_t i = 0; i < 4096; ++i) {
        const auto la = a.translate(i * 256), lb = b.translate(i * 256), ld = d.translate(i * 256);
        CHECK(la.row == lb.row);
        CHECK(la.global_bank(c.geometry) == lb.global_bank(c.geometry));
        differ += la.global_bank(c.geometry) != ld.global_bank(c.geometry) || la.row != ld.row;
    }
    CHECK(differ > 1000);
}

TEST_CASE("out of range offsets and modes") {
    const auto c = testsupport::desk_engine();
    AddressMap m(c.geometry, MapMode::mixed, c.map_seed);
    CHECK_NOTHROW(m.translate(c.geometry.capacity() - 1));
    CHECK_THROWS_AS(m.translate(c.geometry.capacity()), OutOfRange);
    CHECK(parse_map_mode("linear") == MapMode::linear);
    CHECK_THROWS_AS(parse_map_mode("hashed"), ConfigError);
}

#include <algorithm>
#include <set>

#include "doctest.h"
#include "gpuhammer/reveng.hpp"
#include "support.hpp"

using namespace gpuhammer;

TEST_CASE("desk reverse engineering recovers every row of a bank exactly") {
    Engine e(testsupport::desk_engine());
    for (std::uint32_t bank : {0u, 1u, 16u}) {
        const auto r = run_reveng(e, bank);
        CHECK(r.report.precision == 1.0);
        CHECK(r.report.coverage == 1.0);
        CHECK(r.rows.reps.size() == 1024);
        CHECK(r.rows.reps.front() == reference_for_bank(e.map(), bank));
        for (std::uint32_t id = 0; id < r.rows.reps.size(); ++id) {
            REQUIRE(r.rows.rowset_vec[id].size() == 8);
            const auto row = e.map().translate(r.rows.reps[id]).row;
            for (auto o : r.rows.rowset_vec[id]) {
                const auto loc = e.map().translate(o);
                CHECK(loc.global_bank(e.config().geometry) == bank);
                CHECK(loc.row == row);
            }
        }
    }
}

TEST_CASE("finer stride lists every sub-chunk offset") {
    Engine e(testsupport::desk_engine());
    const auto r = run_reveng(e, 1, 64);
    CHECK(r.report.precision == 1.0);
    CHECK(r.report.coverage == 1.0);
    CHECK(r.rows.rowset_vec[5].size() == 32);
    CHECK_THROWS_AS(run_reveng(e, 1, 96), ConfigError);
}

TEST_CASE("filter and conflict set") {
    Engine e(testsupport::desk_engine());
    const auto ref = reference_for_bank(e.map(), 3);
    const auto cand = candidate_offsets(e.map());
    const auto filtered = numa_filter(e, ref, cand);
    for (auto o : filtered) CHECK(e.map().translate(o).channel == 0);
    CHECK(filtered.size() == cand.size() / 2);
    const auto cs = build_conflict_set(e, ref, filtered);
    CHECK(cs.threshold_ns == 350);
    // Conflicts are exactly the other rows of the reference bank.
    CHECK(cs.members.size() == std::size_t(1023) * 8);
    for (auto o : cs.members) CHECK(e.map().translate(o).global_bank(e.config().geometry) == 3);
}

TEST_CASE("too high a threshold leaves nothing to group") {
    Engine e(testsupport::desk_engine());
    CHECK_THROWS_AS(run_reveng(e, 0, 256, 500), EmptyResult);
}

TEST_CASE("row-set files round trip and are deterministic") {
    const auto dir = testsupport::scratch_dir("reveng");
    RowSet first;
    for (int run = 0; run < 2; ++run) {
        Engine e(testsupport::desk_engine());
        const auto r = run_reveng(e, 2);
        const auto base = dir / ("run" + std::to_string(run));
        write_row_set(base.string() + ".txt", r.rows);
        write_rowset_vec_csv(base.string() + ".csv", r.rows);
        if (run == 0) first = r.rows;
    }
    CHECK(testsupport::slurp(dir / "run0.txt") == testsupport::slurp(dir / "run1.txt"));
    CHECK(testsupport::slurp(dir / "run0.csv") == testsupport::slurp(dir / "run1.csv"));
    const auto back = read_row_set((dir / "run0.txt").string(), (dir / "run0.csv").string());
    CHECK(back.bank == first.bank);
    CHECK(back.reps == first.reps);
    CHECK(back.rowset_vec == first.rowset_vec);
    CHECK_THROWS_AS(read_row_set((dir / "nope.txt").string()), MissingInput);
}

TEST_CASE("a row set goes stale when the map is re-salted") {
    Engine e(testsupport::desk_engine());
    const auto r = run_reveng(e, 0);
    auto cfg = testsupport::desk_engine();
    cfg.map_salt = 0x5eed;
    Engine salted(cfg);
    const auto rep = verify_row_set(salted.map(), r.rows, 0);
    CHECK(rep.precision < 0.5);
}

TEST_CASE("oracle row set matches the map") {
    const auto cfg = make_preset("a6000").engine;
    AddressMap m(cfg.geometry, cfg.map_mode, cfg.map_seed);
    const auto rs = oracle_row_set(m, 5);
    CHECK(rs.reps.size() == cfg.geometry.rows_per_bank);
    const auto rep = verify_row_set(m, rs, 5);
    CHECK(rep.precision == 1.0);
    CHECK(rep.coverage == 1.0);
}

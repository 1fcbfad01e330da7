#include <fstream>

#include "doctest.h"
#include "gpuhammer/config.hpp"
#include "support.hpp"

using namespace gpuhammer;

TEST_CASE("presets") {
    const auto desk = make_preset("desk");
    CHECK(desk.engine.geometry.capacity() == 64ull << 20);
    CHECK(desk.engine.profile.size() == 8);
    CHECK(desk.bank_of("A") == 1);
    CHECK(desk.bank_of("B") == 5);
    CHECK(desk.bank_of("C") == 9);
    CHECK(desk.bank_of("D") == 13);
    CHECK_THROWS_AS(desk.bank_of("E"), ConfigError);

    const auto a6 = make_preset("a6000");
    CHECK(a6.engine.geometry.rows_per_bank == 65536);
    REQUIRE(a6.engine.profile.size() == 8);
    const auto& a1 = a6.engine.profile.front();
    CHECK(a1.name == "A1");
    CHECK(a1.trh == 12300);
    CHECK(a1.byte_off == 452);
    CHECK(a1.bit == 4);
    CHECK(a1.direction == FlipDirection::one_to_zero);
    // desk thresholds are the a6000 ones scaled down by 16
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(desk.engine.profile[i].trh == (a6.engine.profile[i].trh + 8) / 16);
        CHECK(desk.engine.profile[i].critical_deltas == a6.engine.profile[i].critical_deltas);
    }
    CHECK(make_preset("a100").engine.profile.empty());
    CHECK(make_preset("rtx3080").engine.profile.empty());
    CHECK_THROWS_AS(make_preset("h100"), ConfigError);
}

TEST_CASE("JSON overrides apply on top of the preset") {
    auto cfg = make_preset("desk");
    apply_json(cfg, R"({"seed": 7, "trr": {"capacity": 8}, "ecc": {"enabled": true},
                        "map": {"salt": 99}, "engine": {"jitter_sigma_ns": 1.5}})");
    CHECK(cfg.seed == 7);
    CHECK(cfg.engine.trr.capacity == 8);
    CHECK(cfg.engine.trr.blast_radius == 2);
    CHECK(cfg.engine.ecc.enabled);
    CHECK(cfg.engine.map_salt == 99);
    CHECK(cfg.engine.params.jitter_sigma_ns == 1.5);
    CHECK(cfg.engine.geometry.rows_per_bank == 1024);

    apply_json(cfg, R"({"profile": [{"name": "X1", "bank": 1, "row": 40, "byte_off": 3, "bit": 1,
                        "direction": "one_to_zero", "trh": 500, "critical_deltas": [-1, 1],
                        "data_rule": "always"}], "banks": {"Q": 3}})");
    REQUIRE(cfg.engine.profile.size() == 1);
    CHECK(cfg.engine.profile[0].critical_deltas == std::vector<int>{-1, 1});
    CHECK(cfg.bank_of("Q") == 3);
}

TEST_CASE("unknown keys and bad values are rejected") {
    auto cfg = make_preset("desk");
    CHECK_THROWS_AS(apply_json(cfg, R"({"sed": 1})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"trr": {"size": 4}})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"trr": {"policy": "para"}})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"seed": "x"})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"preset": "a6000"})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"geometry": {"channels": 3}})"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, "{not json"), ConfigError);
    CHECK_THROWS_AS(apply_json(cfg, R"({"profile": [{"name": "bad", "row": 5, "trh": 1,
                                        "critical_deltas": [7]}]})"),
                    ConfigError);
}

TEST_CASE("config files: preset named in the file, then overrides") {
    const auto dir = testsupport::scratch_dir("config");
    const auto path = (dir / "c.json").string();
    std::ofstream(path) << R"({"preset": "a100", "seed": 3})";
    const auto cfg = load_config_file(path, "desk");
    CHECK(cfg.preset == "a100");
    CHECK(cfg.seed == 3);
    std::ofstream(path) << R"({"seed": 4})";
    CHECK(load_config_file(path, "desk").preset == "desk");
    CHECK_THROWS_AS(load_config_file((dir / "none.json").string(), "desk"), MissingInput);
}

TEST_CASE("to_json round trips") {
    auto cfg = make_preset("desk");
    cfg.seed = 42;
    cfg.engine.trr.policy = TrrPolicy::off;
    cfg.engine.map_salt = 5;
    auto back = make_preset("desk");
    apply_json(back, to_json(cfg));
    CHECK(back.seed == 42);
    CHECK(back.engine.trr.policy == TrrPolicy::off);
    CHECK(back.engine.map_salt == 5);
    CHECK(back.engine.profile.size() == cfg.engine.profile.size());
    CHECK(to_json(back) == to_json(cfg));
}

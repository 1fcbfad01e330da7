#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "doctest.h"
#include "gpuhammer/exploit.hpp"
#include "support.hpp"

using namespace gpuhammer;

namespace {

const ToyModel& model() {
    static const ToyModel m = ToyModel::make();
    return m;
}

void check_disjoint(const ArenaAllocator& a) {
    std::uint64_t end = a.base();
    for (const auto& [off, size] : a.live()) {
        CHECK(off >= end);
        CHECK(off % ArenaAllocator::kGranule == 0);
        CHECK(size % ArenaAllocator::kGranule == 0);
        end = off + size;
    }
    CHECK(end <= a.base() + a.size());
    for (const auto& b : a.free_blocks())
        for (const auto& [off, size] : a.live()) CHECK((b.off + b.size <= off || off + size <= b.off));
}

}  // namespace

TEST_CASE("allocator: rounding, bump and immediate reuse") {
    ArenaAllocator a(4096, 4096);
    const auto x = a.alloc(100);
    const auto y = a.alloc(300);
    CHECK(x == 4096);
    CHECK(y == 4096 + 256);
    CHECK(a.live().at(y) == 512);
    a.free(y);
    CHECK(a.alloc(256) == y);          // most recent free block, split from the front
    CHECK(a.alloc(256) == y + 256);
    CHECK(a.top() == 4096 + 768);
    a.free(x);
    CHECK_THROWS_AS(a.free(x), DoubleFree);
    CHECK_THROWS_AS(a.free(12345), DoubleFree);
    CHECK_THROWS_AS(a.alloc(8192), OutOfMemory);
    CHECK_THROWS_AS(a.alloc(0), ConfigError);
    CHECK_THROWS_AS(ArenaAllocator(0, 100), ConfigError);
}

TEST_CASE("allocator: quarantine delays reuse by k frees") {
    ArenaAllocator a(0, 1 << 20, AllocatorPolicy::parse("quarantine:2"));
    std::vector<std::uint64_t> b;
    for (int i = 0; i < 4; ++i) b.push_back(a.alloc(256));
    a.free(b[0]);
    CHECK(a.alloc(256) == 1024);  // b[0] still quarantined
    a.free(b[1]);
    a.free(b[2]);                 // b[0] released
    CHECK(a.alloc(256) == b[0]);
}

TEST_CASE("allocator policy parsing") {
    CHECK(AllocatorPolicy::parse("immediate_reuse").kind == AllocatorPolicy::Kind::immediate_reuse);
    const auto q = AllocatorPolicy::parse("quarantine");
    CHECK(q.kind == AllocatorPolicy::Kind::quarantine);
    CHECK(q.k == 8);
    CHECK(AllocatorPolicy::parse("quarantine:3").k == 3);
    CHECK(AllocatorPolicy::parse("quarantine:3").str() == "quarantine:3");
    CHECK_THROWS_AS(AllocatorPolicy::parse("quarantine:0"), ConfigError);
    CHECK_THROWS_AS(AllocatorPolicy::parse("slab"), ConfigError);
}

TEST_CASE("property: random traces keep live blocks disjoint") {
    std::mt19937_64 rng(5);
    for (const char* pol : {"immediate_reuse", "quarantine:4"}) {
        ArenaAllocator a(1 << 16, 1 << 20, AllocatorPolicy::parse(pol));
        std::vector<std::uint64_t> live;
        for (int step = 0; step < 3000; ++step) {
            if (!live.empty() && rng() % 2) {
                const auto i = rng() % live.size();
                a.free(live[i]);
                live.erase(live.begin() + std::ptrdiff_t(i));
            } else {
                try {
                    const std::uint64_t want = 1 + rng() % 3000;
                    const auto off = a.alloc(want);
                    CHECK(a.live().at(off) >= want);
                    live.push_back(off);
                } catch (const OutOfMemory&) {
                }
            }
            if (step % 100 == 0) check_disjoint(a);
        }
        CHECK(a.live().size() == live.size());
    }
}

TEST_CASE("massaging places the victim over the target") {
    ArenaAllocator a(0, 1 << 20);
    a.alloc(1 << 20);  // attacker owns the arena
    FlipTarget t{5 * 4096 + 1037, 6, FlipDirection::zero_to_one, Dtype::fp16};
    const auto plan = plan_massage(a, t, 1220, 1037);
    CHECK(execute_plan(a, plan) == 5 * 4096);
    CHECK(a.live().at(5 * 4096) >= 1220);

    ArenaAllocator q(0, 1 << 20, AllocatorPolicy::parse("quarantine:8"));
    q.alloc(1 << 20);
    CHECK_THROWS_AS(plan_massage(q, t, 1220, 1037), Infeasible);
    CHECK_THROWS_AS(plan_massage(a, t, 1220, 2000), Infeasible);  // outside the victim
    CHECK_THROWS_AS(plan_massage(a, t, 1220, 1036), Infeasible);  // misaligned
}

TEST_CASE("property: feasible massage plans are sound") {
    std::mt19937_64 rng(9);
    int feasible = 0;
    for (int trial = 0; trial < 300; ++trial) {
        ArenaAllocator a(0, 1 << 18);
        std::vector<std::uint64_t> live;
        for (int i = 0; i < 40; ++i) {
            if (!live.empty() && rng() % 3 == 0) {
                const auto k = rng() % live.size();
                a.free(live[k]);
                live.erase(live.begin() + std::ptrdiff_t(k));
            } else {
                live.push_back(a.alloc(256 * (1 + rng() % 12)));
            }
        }
        const std::uint64_t rel = 13 + 256 * (rng() % 5);
        const std::uint64_t victim_start = 256 * (rng() % 900);
        FlipTarget t{victim_start + rel, 0, FlipDirection::zero_to_one, Dtype::fp16};
        MassagePlan plan;
        try {
            plan = plan_massage(a, t, 1220, rel);
        } catch (const Infeasible&) {
            continue;
        }
        ++feasible;
        // Replaying the steps: every free targets a block the attacker holds at that point.
        ArenaAllocator replay = a;
        std::set<std::uint64_t> held;
        for (const auto& [off, size] : a.live()) held.insert(off);
        for (const auto& s : plan.steps) {
            if (s.kind == MassageStep::Kind::alloc) {
                held.insert(replay.alloc(s.value));
            } else {
                CHECK(held.erase(s.value) == 1);
                replay.free(s.value);
            }
        }
        const auto v = execute_plan(a, plan);
        CHECK(v == victim_start);
        CHECK(v + rel == t.offset);
        CHECK(a.live().at(v) >= 1220);
        check_disjoint(a);
        CHECK(!held.count(v));
    }
    CHECK(feasible > 50);
}

TEST_CASE("float field mapping is total") {
    std::multiset<std::string> f16, f32;
    for (int b = 0; b < 2; ++b)
        for (int bit = 0; bit < 8; ++bit) f16.insert(fp16_field_of(b, bit).str());
    for (int b = 0; b < 4; ++b)
        for (int bit = 0; bit < 8; ++bit) f32.insert(fp32_field_of(b, bit).str());
    std::multiset<std::string> want16{"sign"}, want32{"sign"};
    for (int i = 0; i < 5; ++i) want16.insert("E" + std::to_string(i));
    for (int i = 0; i < 10; ++i) want16.insert("M" + std::to_string(i));
    for (int i = 0; i < 8; ++i) want32.insert("E" + std::to_string(i));
    for (int i = 0; i < 23; ++i) want32.insert("M" + std::to_string(i));
    CHECK(f16 == want16);
    CHECK(f32 == want32);
    CHECK(fp16_field_of(1, 7).str() == "sign");
    CHECK(fp16_field_of(1, 6).str() == "E4");
    CHECK(fp16_field_of(0, 0).str() == "M0");
    CHECK(fp32_field_of(3, 6).str() == "E7");
    CHECK_THROWS_AS(fp16_field_of(2, 0), OutOfRange);
}

TEST_CASE("apply_flip on fp16 elements") {
    std::vector<std::uint8_t> buf{0x00, 0x38, 0x00, 0x38};  // two 0.5 halves
    auto fx = apply_flip(buf, 3, 6, FlipDirection::zero_to_one, Dtype::fp16);
    CHECK(fx.element == 1);
    CHECK(fx.old_bits == 0x3800);
    CHECK(fx.new_bits == 0x7800);
    CHECK(fx.field.str() == "E4");
    CHECK(half_to_float(0x7800) == 32768.0f);
    fx = apply_flip(buf, 0, 0, FlipDirection::zero_to_one, Dtype::fp16);
    CHECK(fx.new_bits == 0x3801);
    CHECK(fx.field.str() == "M0");
    CHECK_THROWS_AS(apply_flip(buf, 0, 0, FlipDirection::zero_to_one, Dtype::fp16),
                    DirectionMismatch);
    CHECK_THROWS_AS(apply_flip(buf, 4, 0, FlipDirection::zero_to_one, Dtype::fp16), OutOfRange);
    std::vector<std::uint8_t> f32(4);
    const float one = 1.0f;
    std::memcpy(f32.data(), &one, 4);
    fx = apply_flip(f32, 3, 6, FlipDirection::zero_to_one, Dtype::fp32);
    CHECK(fx.new_bits == 0x7F800000u);
    CHECK(fx.field.str() == "E7");
}

namespace {

// Value of a binary16 pattern straight from the format definition.
double half_oracle(std::uint16_t h) {
    const int sign = h >> 15, exp = (h >> 10) & 0x1F, mant = h & 0x3FF;
    double v;
    if (exp == 0x1F)
        v = mant ? std::nan("") : INFINITY;
    else if (exp == 0)
        v = std::ldexp(double(mant), -24);
    else
        v = std::ldexp(double(1024 + mant), exp - 25);
    return sign ? -v : v;
}

// Nearest binary16 by search over all finite positive patterns, ties to the even pattern.
std::uint16_t to_half_oracle(float f) {
    const std::uint16_t sign = std::signbit(f) ? 0x8000 : 0;
    const double a = std::fabs(double(f));
    if (std::isinf(f) || a >= 65520.0) return sign | 0x7C00;
    std::uint16_t lo = 0, hi = 0x7BFF;  // monotone in the pattern
    while (lo < hi) {
        const std::uint16_t mid = std::uint16_t((lo + hi + 1) / 2);
        if (half_oracle(mid) <= a) lo = mid; else hi = std::uint16_t(mid - 1);
    }
    if (lo == 0x7BFF || half_oracle(lo) == a) return sign | lo;
    const double dl = a - half_oracle(lo), dh = half_oracle(std::uint16_t(lo + 1)) - a;
    if (dl < dh || (dl == dh && lo % 2 == 0)) return sign | lo;
    return sign | std::uint16_t(lo + 1);
}

}  // namespace

TEST_CASE("half conversions agree with the binary16 definition") {
    for (std::uint32_t h = 0; h < 65536; ++h) {
        const double want = half_oracle(std::uint16_t(h));
        const float got = half_to_float(std::uint16_t(h));
        if (std::isnan(want))
            CHECK(std::isnan(got));
        else
            CHECK(double(got) == want);
    }
    std::mt19937 rng(3);
    for (int i = 0; i < 200000; ++i) {
        float f;
        if (i % 2) {
            const std::uint32_t u = rng();
            std::memcpy(&f, &u, 4);
        } else {
            f = std::ldexp(float(rng() % 100000) / 1000.0f, int(rng() % 40) - 30);  // half range
        }
        if (std::isnan(f)) continue;
        CHECK(float_to_half(f) == to_half_oracle(f));
    }
    // Exact round trip for every finite half.
    for (std::uint32_t h = 0; h < 65536; ++h) {
        if ((h & 0x7C00) == 0x7C00 && (h & 0x3FF)) continue;
        CHECK(float_to_half(half_to_float(std::uint16_t(h))) == h);
    }
    CHECK(float_to_half(1.0f + 1.0f / 2048) == 0x3C00);  // tie to even
    CHECK(float_to_half(1.0f + 3.0f / 2048) == 0x3C02);
}

TEST_CASE("toy model fixture") {
    const auto& m = model();
    CHECK(m.weight_count() == 610);
    CHECK(m.weight_bytes().size() == 1220);
    CHECK(m.baseline() == doctest::Approx(0.9825).epsilon(1e-9));
    CHECK(m.baseline() >= 0.95);
    CHECK(m.largest_first_layer() == 505);
    CHECK(half_to_float(m.weights()[505]) == doctest::Approx(0.856).epsilon(1e-3));
    CHECK(ToyModel::from_bytes(m.weight_bytes()) == m.weights());
    CHECK(evaluate_rad(m, m.weights()) == 0.0);
    // Determinism.
    CHECK(ToyModel::make().weights() == m.weights());
}

TEST_CASE("exponent MSB versus mantissa flips on the toy model") {
    const auto& m = model();
    auto w = m.weights();
    const auto i = m.largest_first_layer();
    w[i] |= 0x4000;
    const double rad = evaluate_rad(m, w);
    CHECK(rad == doctest::Approx(0.745547).epsilon(1e-4));
    CHECK(rad >= 0.5);
    double worst_mantissa = 0;
    for (std::size_t k = 0; k < m.weight_count(); ++k)
        for (int b = 0; b < 10; ++b) {
            auto t = m.weights();
            t[k] ^= std::uint16_t(1u << b);
            worst_mantissa = std::max(worst_mantissa, evaluate_rad(m, t));
        }
    CHECK(worst_mantissa < 0.05);
}

TEST_CASE("flip impact and the end-to-end attack on desk") {
    const auto cfg = make_preset("desk");
    Engine e(cfg.engine);
    std::map<std::uint32_t, RowSet> rows;
    std::vector<FlipRecord> flips;
    for (const auto& [bank, label] : cfg.bank_labels) {
        rows[bank] = oracle_row_set(e.map(), bank);
        const auto r = sweep_bank(e, rows[bank], CampaignConfig{});
        flips.insert(flips.end(), r.flips.begin(), r.flips.end());
    }
    name_flips(flips, cfg.bank_labels);
    REQUIRE(flips.size() == 8);

    const auto impact = flip_impact(model(), flips);
    REQUIRE(impact.size() == 8);
    for (const auto& r : impact) {
        CHECK(r.base_acc == doctest::Approx(model().baseline()));
        if (r.field.kind == Field::Kind::exponent && r.field.index == 4)
            CHECK(r.rad == doctest::Approx(0.745547).epsilon(1e-4));
        if (r.field.kind == Field::Kind::mantissa) CHECK(r.rad < 0.05);
    }

    const auto& d1 = *std::find_if(flips.begin(), flips.end(),
                                   [](const FlipRecord& f) { return f.name == "D1"; });
    AttackConfig ac;
    ac.attempts = 6;
    const auto res = run_attack(e, rows.at(d1.bank), d1, model(), ac);
    REQUIRE(res.rad.size() == 6);
    double mx = 0;
    for (std::size_t i = 0; i < res.rad.size(); ++i) {
        mx = std::max(mx, res.rad[i]);
        CHECK(res.running_max[i] == mx);
        CHECK(res.rel_offsets[i] % 256 == d1.offset % 256);
        CHECK(res.rel_offsets[i] < 1220);
    }
    CHECK(res.max_rad == mx);
    CHECK(res.max_rad == doctest::Approx(0.745547).epsilon(1e-4));

    auto ecc = cfg.engine;
    ecc.ecc.enabled = true;
    Engine protected_engine(ecc);
    const auto blocked = run_attack(protected_engine, rows.at(d1.bank), d1, model(), ac);
    CHECK(blocked.max_rad == 0.0);

    AttackConfig q = ac;
    q.policy = AllocatorPolicy::parse("quarantine:8");
    CHECK_THROWS_AS(run_attack(e, rows.at(d1.bank), d1, model(), q), Infeasible);
}

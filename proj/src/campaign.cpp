#include "gpuhammer/campaign.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>

#include "gpuhammer/csv.hpp"
#include "gpuhammer/parallel.hpp"

namespace gpuhammer {

std::string hex_byte(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02X", v & 0xFFu);
    return buf;
}

void CampaignConfig::validate() const {
    if (sides < 1) throw ConfigError("campaign: sides must be >= 1");
    if (distance < 1 || distance > 4) throw ConfigError("campaign: distance must be in 1..4");
    if (step < 1) throw ConfigError("campaign: step must be >= 1");
    if (duration_ns <= 0) throw ConfigError("campaign: duration must be positive");
    if (victim_fills.empty()) throw ConfigError("campaign: no victim fill");
}

std::vector<std::uint32_t> PatternRef::rowids() const {
    std::vector<std::uint32_t> r(sides);
    for (std::uint32_t i = 0; i < sides; ++i) r[i] = base + i * distance;
    return r;
}

namespace {

std::vector<std::uint64_t> offsets_of(const RowSet& rs, const std::vector<std::uint32_t>& ids) {
    std::vector<std::uint64_t> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        if (id >= rs.reps.size()) throw OutOfRange("RowID outside the row set");
        out.push_back(rs.reps[id]);
    }
    return out;
}

std::vector<std::uint64_t> chunks_of(const RowSet& rs, std::uint32_t id, std::uint64_t chunk) {
    std::vector<std::uint64_t> out;
    const auto& vec = id < rs.rowset_vec.size() && !rs.rowset_vec[id].empty()
                          ? rs.rowset_vec[id]
                          : std::vector<std::uint64_t>{rs.reps[id]};
    for (auto o : vec) out.push_back(o - o % chunk);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// Distinct random RowIDs outside [victim - 3, victim + 3].
std::vector<std::uint32_t> draw_dummies(std::mt19937_64& rng, std::size_t count,
                                        std::uint32_t rows, std::uint32_t victim,
                                        const std::set<std::uint32_t>& also_exclude = {}) {
    auto excluded = [&](std::uint32_t r) {
        return (r + 3 >= victim && r <= victim + 3) || also_exclude.count(r);
    };
    std::size_t avail = 0;
    for (std::uint32_t r = 0; r < rows && avail <= count; ++r) avail += !excluded(r);
    if (avail < count) throw ConfigError("not enough rows for dummy aggressors");
    std::uniform_int_distribution<std::uint32_t> pick(0, rows - 1);
    std::set<std::uint32_t> seen;
    std::vector<std::uint32_t> out;
    while (out.size() < count) {
        const auto r = pick(rng);
        if (excluded(r) || !seen.insert(r).second) continue;
        out.push_back(r);
    }
    return out;
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix64(seed ^ mix64((a << 32) ^ b ^ 0x5bd1e995ull));
}

}  // namespace

bool single_bank(const Engine& e, const std::vector<std::uint64_t>& offsets) {
    const auto& g = e.config().geometry;
    for (auto o : offsets)
        if (e.map().translate(o).global_bank(g) != e.map().translate(offsets.front()).global_bank(g))
            return false;
    return true;
}

void fill_rows(Engine& e, const RowSet& rs, const std::vector<std::uint32_t>& ids,
               std::uint8_t value) {
    const auto chunk = e.config().geometry.chunk_bytes;
    const std::vector<std::uint8_t> buf(chunk, value);
    for (auto id : ids)
        for (auto c : chunks_of(rs, id, chunk)) e.write_bytes(c, buf);
}

TrialOutcome run_trial(const Engine& base, const RowSet& rs, const Trial& t) {
    const std::uint32_t nrows = std::uint32_t(rs.reps.size());
    std::map<std::uint32_t, std::uint8_t> fills;  // RowID -> written byte
    for (auto a : t.aggressors) {
        const std::uint32_t lo = a >= 3 ? a - 3 : 0;
        const std::uint32_t hi = std::min(nrows - 1, a + 3);
        for (std::uint32_t r = lo; r <= hi; ++r) fills.emplace(r, t.victim_fill);
    }
    for (auto a : t.aggressors) fills[a] = t.aggressor_fill;
    for (auto d : t.dummies) fills[d] = t.aggressor_fill;

    Engine e(base);
    const auto& g = e.config().geometry;
    std::vector<std::uint8_t> buf(g.chunk_bytes);
    std::vector<std::pair<std::uint64_t, std::uint8_t>> written;
    for (auto [id, v] : fills) {
        std::fill(buf.begin(), buf.end(), v);
        for (auto c : chunks_of(rs, id, g.chunk_bytes)) {
            e.write_bytes(c, buf);
            written.emplace_back(c, v);
        }
    }

    SyncedHammer h;
    h.aggressors = offsets_of(rs, t.aggressors);
    h.dummies = offsets_of(rs, t.dummies);
    // A stale row set can scatter the pattern over several banks; none of them then sees
    // enough ACTs to matter.
    if (!single_bank(e, h.aggressors) || !single_bank(e, h.dummies) ||
        (!h.dummies.empty() && !single_bank(e, {h.aggressors.front(), h.dummies.front()})))
        return {};
    h.duration_ns = t.duration_ns;
    h.duty_x = t.duty_x;
    h.duty_y = t.duty_y;
    const auto res = e.hammer_synced(h);

    TrialOutcome out;
    out.hammered = true;
    auto& bank = e.bank(res.bank);
    out.raw_flip_bits = bank.collect_raw_flips().size();
    const EccLog before = bank.ecc_log();
    for (auto [c, v] : written) {
        const auto got = e.read_bytes(c, g.chunk_bytes);
        for (std::uint32_t i = 0; i < g.chunk_bytes; ++i) {
            const std::uint8_t diff = got[i] ^ v;
            if (!diff) continue;
            const auto loc = e.map().translate(c + i);
            for (int bit = 0; bit < 8; ++bit) {
                if (!((diff >> bit) & 1)) continue;
                FlipRecord f;
                f.bank = loc.global_bank(g);
                f.row = loc.row;
                f.byte_off = loc.byte_in_row(g);
                f.bit = std::uint8_t(bit);
                f.direction = ((v >> bit) & 1) ? FlipDirection::one_to_zero
                                               : FlipDirection::zero_to_one;
                f.original = v;
                f.flipped = got[i];
                f.offset = c + i;
                out.flips.push_back(f);
            }
        }
    }
    out.ecc.corrected = bank.ecc_log().corrected - before.corrected;
    out.ecc.uncorrectable = bank.ecc_log().uncorrectable - before.uncorrectable;
    std::map<std::uint32_t, std::uint32_t> rowid_of;  // physical row -> RowID
    for (const auto& [id, v] : fills) rowid_of.emplace(e.map().translate(rs.reps[id]).row, id);
    for (auto& f : out.flips) f.victim_rowid = rowid_of.at(f.row);
    return out;
}

bool trial_flips(const Engine& base, const RowSet& rs, const Trial& t, const FlipRecord& target) {
    for (const auto& f : run_trial(base, rs, t).flips)
        if (f.key() == target.key()) return true;
    return false;
}

SweepResult sweep_bank(const Engine& base, const RowSet& rs, const CampaignConfig& cfg) {
    cfg.validate();
    const std::uint32_t nrows = std::uint32_t(rs.reps.size());
    const std::uint64_t span = std::uint64_t(cfg.sides - 1) * cfg.distance;

    std::vector<PatternRef> todo;
    SweepResult res;
    Engine probe(base);
    for (auto fill : cfg.victim_fills) {
        for (std::uint64_t b = 0; b + span < nrows; b += cfg.step) {
            PatternRef p{cfg.sides, cfg.distance, std::uint32_t(b), fill};
            ++res.placements;
            if (!cfg.exhaustive) {
                const auto offs = offsets_of(rs, p.rowids());
                if (!probe.can_disturb(offs)) continue;
            }
            todo.push_back(p);
        }
    }
    res.simulated = todo.size();

    std::vector<TrialOutcome> outcomes(todo.size());
    parallel_for(todo.size(), cfg.threads, [&](unsigned, std::size_t i) {
        Trial t;
        t.aggressors = todo[i].rowids();
        t.victim_fill = todo[i].victim_fill;
        t.aggressor_fill = todo[i].aggressor_fill();
        t.duration_ns = cfg.duration_ns;
        outcomes[i] = run_trial(base, rs, t);
        for (auto& f : outcomes[i].flips) f.pattern = todo[i];
    });

    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint8_t>, FlipRecord>
        unique;
    for (auto& o : outcomes) {
        res.raw_flip_bits += o.raw_flip_bits;
        res.ecc.corrected += o.ecc.corrected;
        res.ecc.uncorrectable += o.ecc.uncorrectable;
        for (auto& f : o.flips) unique.emplace(f.key(), f);  // first placement wins
    }
    for (auto& [k, f] : unique) res.flips.push_back(f);
    return res;
}

void name_flips(std::vector<FlipRecord>& flips,
                const std::map<std::uint32_t, std::string>& bank_labels) {
    std::sort(flips.begin(), flips.end(),
              [](const FlipRecord& a, const FlipRecord& b) { return a.key() < b.key(); });
    std::map<std::uint32_t, int> seen;
    for (auto& f : flips) {
        auto it = bank_labels.find(f.bank);
        const std::string label = it != bank_labels.end() ? it->second : "bank" + std::to_string(f.bank) + "_";
        f.name = label + std::to_string(++seen[f.bank]);
    }
}

std::vector<int> find_critical_aggressors(const Engine& base, const RowSet& rs,
                                          const FlipRecord& flip, const CampaignConfig& cfg,
                                          std::uint64_t seed) {
    Trial t;
    t.aggressors = flip.pattern.rowids();
    t.victim_fill = flip.pattern.victim_fill;
    t.aggressor_fill = flip.pattern.aggressor_fill();
    t.duration_ns = cfg.duration_ns;
    if (!trial_flips(base, rs, t, flip))
        throw NotReproducible("flip " + flip.name + " does not reproduce with its pattern");

    const std::uint32_t nrows = std::uint32_t(rs.reps.size());
    const std::uint32_t v = flip.victim_rowid;
    const std::size_t n = std::max<std::size_t>(flip.pattern.sides, 1);
    std::vector<int> out;
    for (int d = -3; d <= 3; ++d) {
        if (d == 0) continue;
        const std::int64_t nb = std::int64_t(v) + d;
        if (nb < 0 || nb >= nrows) continue;
        std::mt19937_64 rng(trial_seed(seed, v, std::uint64_t(d + 8)));
        Trial probe = t;
        probe.aggressors = draw_dummies(rng, n - 1, nrows, v);
        probe.aggressors.push_back(std::uint32_t(nb));  // last: past the sampler
        if (trial_flips(base, rs, probe, flip)) out.push_back(d);
    }
    return out;
}

TrhEstimate estimate_trh(const Engine& base, const RowSet& rs, const FlipRecord& flip,
                         const CampaignConfig& cfg, std::uint32_t granularity,
                         std::uint64_t seed) {
    if (granularity < 2) throw ConfigError("estimate_trh: granularity must be >= 2");
    const std::uint32_t nrows = std::uint32_t(rs.reps.size());
    Trial t;
    t.aggressors = flip.pattern.rowids();
    t.victim_fill = flip.pattern.victim_fill;
    t.aggressor_fill = flip.pattern.aggressor_fill();
    t.duration_ns = cfg.duration_ns;
    std::mt19937_64 rng(trial_seed(seed, flip.victim_rowid, 0x77));
    const std::set<std::uint32_t> pattern(t.aggressors.begin(), t.aggressors.end());
    t.dummies = draw_dummies(rng, t.aggressors.size(), nrows, flip.victim_rowid, pattern);

    auto flips_at = [&](std::uint32_t x) {
        Trial d = t;
        d.duty_x = x;
        d.duty_y = granularity - x;
        if (d.duty_y == 0) d.dummies.clear();
        return trial_flips(base, rs, d, flip);
    };
    if (!flips_at(granularity)) throw NeverFlips("flip " + flip.name + " needs more than full duty");
    if (flips_at(1)) throw AlwaysFlips("flip " + flip.name + " flips at the lowest duty");
    std::uint32_t lo = 1, hi = granularity;  // lo never flips, hi flips
    while (hi - lo > 1) {
        const std::uint32_t mid = (lo + hi) / 2;
        (flips_at(mid) ? hi : lo) = mid;
    }
    const auto& e = base.config();
    const std::uint64_t interval =
        e.geometry.rows_per_bank / e.geometry.rows_per_ref(e.timing);  // tREFIs between refreshes
    return {(interval * hi + granularity / 2) / granularity, hi, granularity};
}

SamplerEstimate estimate_sampler_size(const Engine& base, const RowSet& rs,
                                      const FlipRecord& flip, int critical_delta,
                                      std::uint32_t n_lo, std::uint32_t n_hi,
                                      std::uint32_t trials, std::uint64_t seed,
                                      const CampaignConfig& cfg) {
    if (n_lo < 1 || n_hi < n_lo) throw ConfigError("sampler: bad n range");
    const std::uint32_t nrows = std::uint32_t(rs.reps.size());
    const std::int64_t crit = std::int64_t(flip.victim_rowid) + critical_delta;
    if (critical_delta == 0 || crit < 0 || crit >= nrows)
        throw ConfigError("sampler: critical aggressor outside the bank");

    struct Job { std::uint32_t n, k; };
    std::vector<Job> jobs;
    for (std::uint32_t n = n_lo; n <= n_hi; ++n)
        for (std::uint32_t k = 0; k < trials; ++k) jobs.push_back({n, k});
    std::vector<std::uint8_t> hit(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](unsigned, std::size_t i) {
        std::mt19937_64 rng(trial_seed(seed, jobs[i].n, jobs[i].k));
        Trial t;
        t.aggressors = draw_dummies(rng, jobs[i].n - 1, nrows, flip.victim_rowid);
        const auto pos = std::uniform_int_distribution<std::uint32_t>(0, jobs[i].n - 1)(rng);
        t.aggressors.insert(t.aggressors.begin() + pos, std::uint32_t(crit));
        t.victim_fill = flip.pattern.victim_fill;
        t.aggressor_fill = flip.pattern.aggressor_fill();
        t.duration_ns = cfg.duration_ns;
        hit[i] = trial_flips(base, rs, t, flip);
    });

    SamplerEstimate out;
    for (std::uint32_t n = n_lo; n <= n_hi; ++n) out.points.push_back({n, trials, 0});
    for (std::size_t i = 0; i < jobs.size(); ++i) out.points[jobs[i].n - n_lo].successes += hit[i];
    for (const auto& p : out.points) {
        if (p.successes) break;
        out.max_safe_n = p.n;
    }
    return out;
}

Heatmap data_pattern_heatmap(const Engine& base, const RowSet& rs, const FlipRecord& flip,
                             const CampaignConfig& cfg) {
    Heatmap grid{};
    parallel_for(256, cfg.threads, [&](unsigned, std::size_t i) {
        Trial t;
        t.aggressors = flip.pattern.rowids();
        t.victim_fill = std::uint8_t((i / 16) * 0x11);
        t.aggressor_fill = std::uint8_t((i % 16) * 0x11);
        t.duration_ns = cfg.duration_ns;
        grid[i / 16][i % 16] = trial_flips(base, rs, t, flip);
    });
    return grid;
}

DirectionReport direction_report(const std::vector<FlipRecord>& flips) {
    DirectionReport r;
    for (const auto& f : flips) {
        r.rows.push_back({f.name, f.original, f.flipped, f.direction, f.bit});
        (f.direction == FlipDirection::zero_to_one ? r.zero_to_one : r.one_to_zero)++;
    }
    std::sort(r.rows.begin(), r.rows.end(),
              [](const DirectionRow& a, const DirectionRow& b) { return a.name < b.name; });
    return r;
}

void write_table1(const std::string& path, const std::vector<Table1Row>& rows) {
    CsvWriter w(path, "sides,bank,flips");
    for (const auto& r : rows) w.row(r.sides, r.bank, r.flips);
}

void write_table2(const std::string& path, const std::vector<FlipRecord>& flips,
                  const std::vector<std::vector<int>>& deltas) {
    CsvWriter w(path, "flip,bank,row,r-3,r-2,r-1,r+1,r+2,r+3");
    for (std::size_t i = 0; i < flips.size(); ++i) {
        auto has = [&](int d) {
            return int(std::find(deltas[i].begin(), deltas[i].end(), d) != deltas[i].end());
        };
        w.row(flips[i].name, flips[i].bank, flips[i].row, has(-3), has(-2), has(-1), has(1),
              has(2), has(3));
    }
}

void write_table3(const std::string& path, const std::vector<FlipRecord>& flips) {
    CsvWriter w(path, "flip,bank,row,byte_off,bit,direction,original,flipped");
    for (const auto& f : flips)
        w.row(f.name, f.bank, f.row, f.byte_off, int(f.bit), to_string(f.direction),
              hex_byte(f.original), hex_byte(f.flipped));
}

void write_fig8(const std::string& path, const std::vector<FlipRecord>& flips,
                const std::vector<TrhEstimate>& est) {
    CsvWriter w(path, "flip,trh_estimate,duty_x,duty_period");
    for (std::size_t i = 0; i < flips.size(); ++i)
        w.row(flips[i].name, est[i].trh, est[i].x, est[i].period);
}

void write_fig9(const std::string& path, const SamplerEstimate& est) {
    CsvWriter w(path, "n,trials,successes,fraction");
    for (const auto& p : est.points) w.row(p.n, p.trials, p.successes, p.fraction());
}

void write_fig15(const std::string& path,
                 const std::vector<std::pair<std::string, Heatmap>>& maps) {
    CsvWriter w(path, "flip,victim,aggressor,flipped");
    for (const auto& [name, map] : maps)
        for (int v = 0; v < 16; ++v)
            for (int a = 0; a < 16; ++a)
                w.row(name, hex_byte(v * 0x11), hex_byte(a * 0x11), int(map[v][a]));
}

}  // namespace gpuhammer

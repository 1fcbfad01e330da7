#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "gpuhammer/campaign.hpp"
#include "gpuhammer/config.hpp"
#include "gpuhammer/csv.hpp"
#include "gpuhammer/exploit.hpp"

using namespace gpuhammer;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 1, kMissing = 2, kFailed = 3 };

struct ExperimentFailed : Error {
    using Error::Error;
};

struct Common {
    std::string preset = "desk";
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string trr;
    std::optional<std::uint32_t> trr_capacity;
    std::string ecc;
    std::optional<std::uint64_t> map_salt;
    bool randomize = false;
    std::optional<std::uint64_t> run_salt;
    unsigned threads = 1;
    std::string rowsets;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "a6000 | desk | a100 | rtx3080")
            ->check(CLI::IsMember({"a6000", "desk", "a100", "rtx3080"}));
        app->add_option("--config", config_file, "JSON configuration file");
        app->add_option("--seed", seed, "global seed");
        app->add_option("--out", out, "output directory");
        app->add_option("--trr", trr, "off | fifo_per_ref");
        app->add_option("--trr-capacity", trr_capacity);
        app->add_option("--ecc", ecc, "on | off")->check(CLI::IsMember({"on", "off"}));
        app->add_option("--map-salt", map_salt, "explicit address-map salt");
        app->add_flag("--randomize-per-run", randomize, "salt the address map for this run");
        app->add_option("--run-salt", run_salt, "salt used by --randomize-per-run");
        app->add_option("--threads", threads, "worker threads (0 = all cores)");
        app->add_option("--rowsets", rowsets,
                        "directory with rowset_bank<N>.txt / rowset_vec_bank<N>.csv");
    }

    // preset < file < flags
    RunConfig resolve() const {
        RunConfig c = config_file.empty() ? make_preset(preset) : load_config_file(config_file, preset);
        auto& e = c.engine;
        if (seed) c.seed = *seed;
        if (!out.empty()) c.out_dir = out;
        if (!trr.empty()) e.trr.policy = parse_trr_policy(trr);
        if (trr_capacity) e.trr.capacity = *trr_capacity;
        if (!ecc.empty()) e.ecc.enabled = ecc == "on";
        if (map_salt) e.map_salt = *map_salt;
        if (randomize) c.randomize_per_run = true;
        if (c.randomize_per_run)
            e.map_salt = run_salt ? *run_salt : (std::uint64_t(std::random_device{}()) << 32 | std::random_device{}());
        c.validate();
        fs::create_directories(c.out_dir);
        return c;
    }
};

std::string out_path(const RunConfig& c, const std::string& name) {
    return (fs::path(c.out_dir) / name).string();
}

std::string rowset_file(const std::string& dir, std::uint32_t bank) {
    return (fs::path(dir) / ("rowset_bank" + std::to_string(bank) + ".txt")).string();
}
std::string rowset_vec_file(const std::string& dir, std::uint32_t bank) {
    return (fs::path(dir) / ("rowset_vec_bank" + std::to_string(bank) + ".csv")).string();
}

// Row sets from --rowsets if given; otherwise profiled in-process on small banks and taken
// from the map on large ones.
RowSet row_set_for(Engine& e, const Common& opt, std::uint32_t bank) {
    if (!opt.rowsets.empty())
        return read_row_set(rowset_file(opt.rowsets, bank), rowset_vec_file(opt.rowsets, bank));
    if (e.config().geometry.rows_per_bank <= 4096) return run_reveng(e, bank).rows;
    return oracle_row_set(e.map(), bank);
}

struct Discovered {
    std::vector<FlipRecord> flips;
    std::map<std::uint32_t, RowSet> rows;
    SweepResult totals;
};

Discovered discover(Engine& e, const RunConfig& c, const Common& opt, const CampaignConfig& cc) {
    Discovered d;
    for (const auto& [bank, label] : c.bank_labels) {
        d.rows.emplace(bank, row_set_for(e, opt, bank));
        auto r = sweep_bank(e, d.rows.at(bank), cc);
        d.flips.insert(d.flips.end(), r.flips.begin(), r.flips.end());
        d.totals.placements += r.placements;
        d.totals.simulated += r.simulated;
        d.totals.raw_flip_bits += r.raw_flip_bits;
        d.totals.ecc.corrected += r.ecc.corrected;
        d.totals.ecc.uncorrectable += r.ecc.uncorrectable;
    }
    name_flips(d.flips, c.bank_labels);
    return d;
}

const FlipRecord& pick(const std::vector<FlipRecord>& flips, const std::string& name) {
    for (const auto& f : flips)
        if (f.name == name) return f;
    throw ExperimentFailed("flip " + name + " was not found by the 24-sided sweep");
}

std::vector<std::uint32_t> parse_list(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            out.push_back(std::uint32_t(std::stoul(tok)));
        } catch (const std::exception&) {
            throw ConfigError("bad list entry: " + tok);
        }
    }
    if (out.empty()) throw ConfigError("empty list");
    return out;
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) out.push_back(tok);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GDDR6 Rowhammer simulator"};
    app.require_subcommand(1);
    Common opt;

    // reveng
    auto* reveng = app.add_subcommand("reveng", "recover a bank's row set from timing");
    std::uint32_t rv_bank = 0;
    std::uint64_t rv_stride = 256;
    std::optional<std::int64_t> rv_threshold;
    std::string rv_verify;
    reveng->add_option("--bank", rv_bank, "global bank");
    reveng->add_option("--stride", rv_stride, "candidate stride in bytes");
    reveng->add_option("--threshold", rv_threshold, "conflict threshold in ns");
    reveng->add_option("--verify", rv_verify, "check an existing row-set file instead");
    opt.attach(reveng);

    // campaign
    auto* campaign = app.add_subcommand("campaign", "bank sweeps -> table1/2/3.csv");
    std::string cp_sides = "8,12,16,20,24";
    CampaignConfig cc;
    double duration_ms = 128;
    campaign->add_option("--sides", cp_sides, "comma-separated pattern sizes");
    campaign->add_option("--distance", cc.distance);
    campaign->add_option("--step", cc.step);
    campaign->add_option("--duration-ms", duration_ms);
    campaign->add_flag("--exhaustive", cc.exhaustive, "simulate placements that cannot flip");
    opt.attach(campaign);

    auto* trh = app.add_subcommand("trh", "duty-cycle threshold estimates -> fig8.csv");
    std::uint32_t granularity = 100;
    trh->add_option("--granularity", granularity);
    trh->add_option("--duration-ms", duration_ms);
    opt.attach(trh);

    auto* sampler = app.add_subcommand("sampler", "TRR sampler size -> fig9.csv");
    std::string flip_name = "A1";
    std::optional<int> delta;
    std::uint32_t n_min = 8, n_max = 24, trials = 50;
    sampler->add_option("--flip", flip_name);
    sampler->add_option("--delta", delta, "critical aggressor delta (default: first found)");
    sampler->add_option("--n-min", n_min);
    sampler->add_option("--n-max", n_max);
    sampler->add_option("--trials", trials);
    sampler->add_option("--duration-ms", duration_ms);
    opt.attach(sampler);

    auto* datapattern = app.add_subcommand("datapattern", "data-pattern heatmaps -> fig15.csv");
    std::string dp_flips = "A1,D1";
    datapattern->add_option("--flips", dp_flips, "comma-separated flip names");
    datapattern->add_option("--duration-ms", duration_ms);
    opt.attach(datapattern);

    auto* exploit = app.add_subcommand("exploit", "fp16 weight attack -> fig13.csv, table4.csv");
    std::string ex_flip = "D1", allocator = "immediate_reuse";
    std::uint32_t attempts = 50;
    exploit->add_option("--flip", ex_flip);
    exploit->add_option("--attempts", attempts);
    exploit->add_option("--allocator", allocator, "immediate_reuse | quarantine:K");
    exploit->add_option("--duration-ms", duration_ms);
    opt.attach(exploit);

    auto* hammer = app.add_subcommand("hammer", "activation rates and delay sweeps");
    std::string mode = "multi_warp";
    std::uint32_t warps = 1, tpw = 1, rounds = 1, row_base = 10, row_step = 4;
    std::optional<std::uint32_t> hm_bank, n_aggr;
    std::uint64_t delay = 0;
    double window_ms = 0, hm_duration_ms = 32;
    std::optional<std::int64_t> trefi;
    std::string sweep;
    hammer->add_option("--mode", mode, "single_thread | multi_thread | multi_warp");
    hammer->add_option("--warps", warps);
    hammer->add_option("--threads-per-warp", tpw);
    hammer->add_option("--aggressors", n_aggr, "single_thread: aggressors cycled");
    hammer->add_option("--rounds-per-sync", rounds);
    hammer->add_option("--delay", delay, "delay units per sync block");
    hammer->add_option("--bank", hm_bank, "global bank (default: first bank of channel 1)");
    hammer->add_option("--row-base", row_base);
    hammer->add_option("--row-step", row_step);
    hammer->add_option("--window-ms", window_ms, "normalization window (default: native)");
    hammer->add_option("--trefi-ns", trefi, "REF cadence for this run");
    hammer->add_option("--duration-ms", hm_duration_ms);
    hammer->add_option("--sweep", sweep, "delay sweep START:STOP:STEP");
    opt.attach(hammer);

    auto* mitigate = app.add_subcommand("mitigate", "rerun sweep and exploit per mitigation");
    std::string mt_allocator;
    mitigate->add_option("--allocator", mt_allocator, "also try this allocator policy");
    mitigate->add_option("--flip", ex_flip);
    mitigate->add_option("--attempts", attempts);
    opt.attach(mitigate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        const RunConfig c = opt.resolve();
        cc.threads = opt.threads;
        cc.duration_ns = Time(duration_ms * 1e6);
        Engine engine(c.engine);

        if (*reveng) {
            if (rv_bank >= c.engine.geometry.total_banks()) throw ConfigError("bank out of range");
            RowSet rs;
            VerifyReport rep;
            if (!rv_verify.empty()) {
                const fs::path p(rv_verify);
                const std::string stem = p.stem().string(), prefix = "rowset_bank";
                std::string vec;
                if (stem.rfind(prefix, 0) == 0)
                    vec = (p.parent_path() / ("rowset_vec_bank" + stem.substr(prefix.size()) + ".csv")).string();
                rs = read_row_set(rv_verify, !vec.empty() && fs::exists(vec) ? vec : "");
                rep = verify_row_set(engine.map(), rs, rs.bank);
            } else {
                auto r = run_reveng(engine, rv_bank, rv_stride, rv_threshold);
                rs = std::move(r.rows);
                rep = r.report;
                write_row_set(out_path(c, "rowset_bank" + std::to_string(rv_bank) + ".txt"), rs);
                write_rowset_vec_csv(out_path(c, "rowset_vec_bank" + std::to_string(rv_bank) + ".csv"), rs);
            }
            CsvWriter w(out_path(c, "reveng_report.csv"), "bank,precision,coverage,representatives,distinct_rows");
            w.row(rs.bank, rep.precision, rep.coverage, rep.representatives, rep.distinct_rows);
            std::printf("bank %u: precision %.4f coverage %.4f (%zu representatives, %zu rows)\n",
                        rs.bank, rep.precision, rep.coverage, rep.representatives, rep.distinct_rows);
            if (rep.precision != 1.0 || rep.coverage != 1.0)
                throw ExperimentFailed("row set does not match the address map");
            return kOk;
        }

        if (*campaign) {
            std::vector<Table1Row> t1;
            std::vector<FlipRecord> last;
            std::map<std::uint32_t, RowSet> rows;
            for (const auto& [bank, label] : c.bank_labels) rows.emplace(bank, row_set_for(engine, opt, bank));
            const auto sides = parse_list(cp_sides);
            for (auto n : sides) {
                CampaignConfig k = cc;
                k.sides = n;
                std::vector<FlipRecord> found;
                for (const auto& [bank, label] : c.bank_labels) {
                    auto r = sweep_bank(engine, rows.at(bank), k);
                    t1.push_back({n, label, r.flips.size()});
                    found.insert(found.end(), r.flips.begin(), r.flips.end());
                    std::printf("%u-sided bank %s: %zu flips\n", n, label.c_str(), r.flips.size());
                }
                if (n == *std::max_element(sides.begin(), sides.end())) last = found;
            }
            write_table1(out_path(c, "table1.csv"), t1);
            name_flips(last, c.bank_labels);
            std::vector<std::vector<int>> deltas;
            for (const auto& f : last)
                deltas.push_back(find_critical_aggressors(engine, rows.at(f.bank), f, cc, c.seed));
            write_table2(out_path(c, "table2.csv"), last, deltas);
            write_table3(out_path(c, "table3.csv"), last);
            const auto dir = direction_report(last);
            std::printf("directions: %zu zero_to_one, %zu one_to_zero\n", dir.zero_to_one, dir.one_to_zero);
            return kOk;
        }

        if (*trh) {
            auto d = discover(engine, c, opt, cc);
            std::vector<TrhEstimate> est;
            for (const auto& f : d.flips) {
                est.push_back(estimate_trh(engine, d.rows.at(f.bank), f, cc, granularity, c.seed));
                std::printf("%s: trh ~ %llu\n", f.name.c_str(), (unsigned long long)est.back().trh);
            }
            write_fig8(out_path(c, "fig8.csv"), d.flips, est);
            return kOk;
        }

        if (*sampler) {
            auto d = discover(engine, c, opt, cc);
            const auto& f = pick(d.flips, flip_name);
            const auto& rs = d.rows.at(f.bank);
            if (!delta) {
                const auto crit = find_critical_aggressors(engine, rs, f, cc, c.seed);
                if (crit.empty()) throw ExperimentFailed("no critical aggressor for " + f.name);
                delta = crit.front();
            }
            const auto est = estimate_sampler_size(engine, rs, f, *delta, n_min, n_max, trials, c.seed, cc);
            write_fig9(out_path(c, "fig9.csv"), est);
            std::printf("max safe n = %u\n", est.max_safe_n);
            return kOk;
        }

        if (*datapattern) {
            auto d = discover(engine, c, opt, cc);
            std::vector<std::pair<std::string, Heatmap>> maps;
            for (const auto& name : split_names(dp_flips)) {
                const auto& f = pick(d.flips, name);
                maps.emplace_back(f.name, data_pattern_heatmap(engine, d.rows.at(f.bank), f, cc));
            }
            write_fig15(out_path(c, "fig15.csv"), maps);
            return kOk;
        }

        if (*exploit) {
            CampaignConfig k = cc;
            k.duration_ns = cc.duration_ns;
            auto d = discover(engine, c, opt, k);
            const auto model = ToyModel::make();
            write_table4(out_path(c, "table4.csv"), flip_impact(model, d.flips));
            const auto& f = pick(d.flips, ex_flip);
            AttackConfig ac;
            ac.attempts = attempts;
            ac.seed = c.seed;
            ac.policy = AllocatorPolicy::parse(allocator);
            ac.duration_ns = cc.duration_ns;
            const auto r = run_attack(engine, d.rows.at(f.bank), f, model, ac);
            write_fig13(out_path(c, "fig13.csv"), r);
            std::printf("max RAD %.4f over %u attempts\n", r.max_rad, attempts);
            return kOk;
        }

        if (*hammer) {
            const auto& g = c.engine.geometry;
            const std::uint32_t bank = hm_bank ? *hm_bank : (g.channels > 1 ? g.banks_per_channel : 0);
            if (bank >= g.total_banks()) throw ConfigError("bank out of range");
            HammerKernelSpec s;
            s.mode = parse_kernel_mode(mode);
            s.warps = warps;
            s.threads_per_warp = tpw;
            s.rounds_per_sync = rounds;
            s.delay_units = delay;
            s.duration_ns = Time(hm_duration_ms * 1e6);
            const std::uint32_t n = n_aggr ? *n_aggr : warps * tpw;
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::uint64_t row = row_base + std::uint64_t(i) * row_step;
                if (row >= g.rows_per_bank) throw ConfigError("aggressor rows leave the bank");
                s.aggressors.push_back(engine.map().enumerate_row(bank, std::uint32_t(row)).front());
            }
            RunOptions ro;
            ro.window_ns = Time(window_ms * 1e6);
            if (trefi) ro.trefi_ns = *trefi;
            if (!sweep.empty()) {
                std::uint64_t a = 0, b = 0, st = 1;
                if (std::sscanf(sweep.c_str(), "%lu:%lu:%lu", &a, &b, &st) != 3 || st == 0 || b < a)
                    throw ConfigError("--sweep expects START:STOP:STEP");
                std::vector<std::uint64_t> delays;
                for (auto x = a; x <= b; x += st) delays.push_back(x);
                const auto pts = engine.sweep_delay(s, delays, ro);
                CsvWriter w(out_path(c, "sweep.csv"), "delay,mean_round_ns,total_acts,flips");
                for (const auto& p : pts) w.row(p.delay_units, p.mean_round_ns, p.total_acts, p.flips);
                for (const auto& p : find_plateaus(pts, 5))
                    std::printf("plateau: delay %llu..%llu at %.2f ns\n",
                                (unsigned long long)pts[p.first].delay_units,
                                (unsigned long long)pts[p.first + p.length - 1].delay_units, p.value_ns);
                return kOk;
            }
            const auto st = engine.run_hammer(s, ro);
            double mean_round = 0;
            for (auto t : st.time_per_round_ns) mean_round += t;
            if (!st.time_per_round_ns.empty()) mean_round /= double(st.time_per_round_ns.size());
            CsvWriter w(out_path(c, "hammer.csv"),
                        "mode,warps,threads_per_warp,aggressors,total_acts,acts_per_window,mean_round_ns,refs");
            w.row(mode, warps, tpw, n, st.total_acts, st.acts_per_window, mean_round, st.refs);
            std::printf("%s: %.0f ACTs per window\n", mode.c_str(), st.acts_per_window);
            return kOk;
        }

        if (*mitigate) {
            struct Variant {
                std::string name;
                RunConfig cfg;
                AllocatorPolicy policy;
                bool stale_rows = false;
            };
            std::vector<Variant> variants{{"baseline", c, {}, false}};
            auto with = [&](const std::string& name, auto tweak) {
                Variant v{name, c, {}, false};
                tweak(v);
                variants.push_back(v);
            };
            const bool all = opt.ecc.empty() && mt_allocator.empty() && !opt.randomize && opt.trr.empty();
            RunConfig plain = c;
            if (c.engine.ecc.enabled || !opt.trr.empty() || c.randomize_per_run) {
                // Baseline is always the unmitigated preset.
                plain = opt.config_file.empty() ? make_preset(opt.preset) : load_config_file(opt.config_file, opt.preset);
                plain.out_dir = c.out_dir;
                plain.seed = c.seed;
                variants[0].cfg = plain;
            }
            if (all || c.engine.ecc.enabled)
                with("ecc", [&](Variant& v) { v.cfg = plain; v.cfg.engine.ecc.enabled = true; });
            if (all || !mt_allocator.empty())
                with("allocator_" + (mt_allocator.empty() ? std::string("quarantine:8") : mt_allocator),
                     [&](Variant& v) { v.cfg = plain; v.policy = AllocatorPolicy::parse(mt_allocator.empty() ? "quarantine:8" : mt_allocator); });
            if (all || c.randomize_per_run)
                with("map_randomization", [&](Variant& v) {
                    v.cfg = plain;
                    v.cfg.engine.map_salt = c.randomize_per_run ? c.engine.map_salt : 0x5eed;
                    v.stale_rows = true;
                });
            if (!opt.trr.empty())
                with("trr_" + opt.trr, [&](Variant& v) { v.cfg = plain; v.cfg.engine.trr.policy = parse_trr_policy(opt.trr); });

            CsvWriter w(out_path(c, "mitigate.csv"), "mitigation,flips,raw_flip_bits,ecc_corrected,max_rad,massage");
            Engine clean(plain.engine);
            const auto model = ToyModel::make();
            CampaignConfig k = cc;
            k.sides = 24;
            // The attacker profiles once on the unsalted map; randomization makes that stale.
            const auto profiled = discover(clean, plain, opt, k);
            const auto& target = pick(profiled.flips, ex_flip);
            for (auto& v : variants) {
                Engine e(v.cfg.engine);
                Discovered d;
                if (v.stale_rows) {
                    for (const auto& [bank, rs] : profiled.rows) {
                        auto r = sweep_bank(e, rs, k);
                        d.flips.insert(d.flips.end(), r.flips.begin(), r.flips.end());
                        d.totals.raw_flip_bits += r.raw_flip_bits;
                        d.totals.ecc.corrected += r.ecc.corrected;
                    }
                    d.rows = profiled.rows;
                } else {
                    d = discover(e, v.cfg, opt, k);
                }
                std::string massage = "ok";
                double max_rad = 0;
                AttackConfig ac;
                ac.attempts = attempts;
                ac.seed = c.seed;
                ac.policy = v.policy;
                ac.duration_ns = cc.duration_ns;
                try {
                    max_rad = run_attack(e, d.rows.at(target.bank), target, model, ac).max_rad;
                } catch (const Infeasible&) {
                    massage = "infeasible";
                }
                w.row(v.name, d.flips.size(), d.totals.raw_flip_bits, d.totals.ecc.corrected, max_rad, massage);
                std::printf("%s: %zu flips, max RAD %.4f, massage %s\n", v.name.c_str(), d.flips.size(), max_rad, massage.c_str());
            }
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const MissingInput& e) {
        std::cerr << "missing input: " << e.what() << '\n';
        return kMissing;
    } catch (const Error& e) {
        std::cerr << "experiment failed: " << e.what() << '\n';
        return kFailed;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    }
    return kOk;
}

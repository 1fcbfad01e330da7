#include "gpuhammer/access_engine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <tuple>

namespace gpuhammer {

KernelMode parse_kernel_mode(const std::string& s) {
    if (s == "single_thread") return KernelMode::single_thread;
    if (s == "multi_thread") return KernelMode::multi_thread;
    if (s == "multi_warp") return KernelMode::multi_warp;
    throw ConfigError("unknown kernel mode: " + s);
}

const char* to_string(KernelMode m) {
    switch (m) {
        case KernelMode::single_thread: return "single_thread";
        case KernelMode::multi_thread: return "multi_thread";
        case KernelMode::multi_warp: return "multi_warp";
    }
    return "?";
}

void HammerKernelSpec::validate() const {
    if (aggressors.empty()) throw ConfigError("kernel: no aggressors");
    if (warps == 0 || threads_per_warp == 0) throw ConfigError("kernel: empty warp shape");
    if (rounds_per_sync == 0) throw ConfigError("kernel: rounds_per_sync must be >= 1");
    if (duration_ns <= 0) throw ConfigError("kernel: duration must be positive");
    switch (mode) {
        case KernelMode::single_thread:
            if (warps != 1 || threads_per_warp != 1)
                throw ConfigError("kernel: single_thread requires k = m = 1");
            break;
        case KernelMode::multi_thread:
            if (warps != 1) throw ConfigError("kernel: multi_thread requires k = 1");
            [[fallthrough]];
        case KernelMode::multi_warp:
            if (std::uint64_t(warps) * threads_per_warp != aggressors.size())
                throw ConfigError("kernel: k * m must equal the aggressor count");
            break;
    }
}

void EngineConfig::validate() const {
    timing.validate();
    geometry.validate(timing);
    for (const auto& c : profile) c.validate(geometry);
    if (trr.capacity == 0 && trr.policy != TrrPolicy::off)
        throw ConfigError("trr.capacity must be positive");
    if (params.unit_delay_ns < 0 || params.issue_epsilon_ns < 0 || params.lockstep_lane_ns < 0 ||
        params.ref_pullin_ns < 0 || params.sm_delay_slots == 0 || params.jitter_sigma_ns < 0)
        throw ConfigError("engine parameters out of range");
}

std::vector<Plateau> find_plateaus(const std::vector<SweepPoint>& sweep,
                                   std::size_t min_points) {
    std::vector<Plateau> out;
    std::size_t i = 0;
    while (i < sweep.size()) {
        if (!sweep[i].flat) {
            ++i;
            continue;
        }
        std::size_t j = i;
        double sum = 0;
        while (j < sweep.size() && sweep[j].flat &&
               sweep[j].rounds_per_trefi == sweep[i].rounds_per_trefi) {
            sum += sweep[j].mean_round_ns;
            ++j;
        }
        if (j - i >= min_points)
            out.push_back({i, j - i, sum / double(j - i), sweep[i].rounds_per_trefi});
        i = j;
    }
    return out;
}

Engine::Engine(EngineConfig cfg)
    : cfg_(std::move(cfg)),
      map_(cfg_.geometry, cfg_.map_mode, cfg_.map_seed, cfg_.map_salt),
      rng_(cfg_.params.jitter_seed) {
    cfg_.validate();
}

BankState& Engine::bank(std::uint32_t global_bank) {
    auto it = banks_.find(global_bank);
    if (it != banks_.end()) return it->second;
    if (global_bank >= cfg_.geometry.total_banks()) throw OutOfRange("bank id outside geometry");
    BankState b(cfg_.timing, cfg_.geometry, global_bank, cfg_.profile, cfg_.fill);
    attach_mitigations(b, cfg_.trr, cfg_.ecc);
    return banks_.emplace(global_bank, std::move(b)).first->second;
}

std::int64_t Engine::jitter() {
    if (cfg_.params.jitter_sigma_ns <= 0) return 0;
    std::normal_distribution<double> n(0.0, cfg_.params.jitter_sigma_ns);
    return std::llround(n(rng_));
}

std::int64_t Engine::measure_single(std::uint64_t offset) {
    return map_.base_latency(offset) + jitter();
}

std::int64_t Engine::measure_single_at(std::uint64_t offset, Time t) {
    const Time trefi = cfg_.timing.trefi_ns;
    const Time k = t / trefi;
    Time wait = 0;
    if (k >= 1 && t < k * trefi + cfg_.timing.trfc_ns) wait = k * trefi + cfg_.timing.trfc_ns - t;
    return map_.base_latency(offset) + wait + jitter();
}

std::int64_t Engine::measure_pair(std::uint64_t ref_offset, std::uint64_t probe_offset) {
    const auto a = map_.translate(ref_offset);
    const auto b = map_.translate(probe_offset);
    const auto la = map_.channel_latency(a.channel);
    const auto lb = map_.channel_latency(b.channel);
    const auto& g = cfg_.geometry;
    std::int64_t lat = std::max(la, lb);
    if (a.global_bank(g) == b.global_bank(g) && a.row != b.row)
        lat = la + cfg_.timing.conflict_extra_ns;
    return lat + jitter();
}

namespace {

constexpr Time kNever = std::numeric_limits<Time>::max() / 4;

struct Load {
    Time arrival;
    std::uint32_t warp;
    std::uint32_t slot;  // aggressor index
};

struct BankCtl {
    BankState* state = nullptr;
    std::deque<Load> queue;
    Time last_act = -kNever;
    Time ref_end = -kNever;
    std::int64_t refk = 1;
};

enum EvType : int { ev_return = 0, ev_issue = 1, ev_delay = 2 };

struct WarpEvent {
    Time t;
    int type;
    std::uint32_t warp;
    bool operator>(const WarpEvent& o) const {
        return std::tie(t, type, warp) > std::tie(o.t, o.type, o.warp);
    }
};

struct WarpState {
    std::uint32_t outstanding = 0;
    std::uint32_t phase = 0;
    std::uint64_t iters = 0;
    bool delaying = false;
    double remaining = 0;
};

}  // namespace

HammerStats Engine::run_hammer(const HammerKernelSpec& spec, const RunOptions& opts) {
    spec.validate();
    const auto& tm = cfg_.timing;
    const auto& prm = cfg_.params;
    const Time trefi = opts.trefi_ns > 0 ? opts.trefi_ns : tm.trefi_ns;
    const Time window = opts.window_ns > 0 ? opts.window_ns : tm.window_ns();
    if (tm.trfc_ns >= trefi) throw ConfigError("run: trefi must exceed trfc");

    const std::size_t n = spec.aggressors.size();
    const bool serial = spec.mode == KernelMode::single_thread;
    const std::uint32_t k = spec.warps;
    const std::uint32_t m = serial ? 1 : spec.threads_per_warp;
    const std::uint32_t steps = serial ? std::uint32_t(n) : 1;

    // Resolve aggressors to bank controllers.
    std::vector<std::uint32_t> agg_bank(n), agg_row(n);
    std::vector<Time> agg_lat(n);
    std::map<std::uint32_t, std::size_t> bank_index;
    std::vector<BankCtl> banks;
    for (std::size_t i = 0; i < n; ++i) {
        const auto loc = map_.translate(spec.aggressors[i]);
        const auto gb = loc.global_bank(cfg_.geometry);
        auto [it, fresh] = bank_index.emplace(gb, banks.size());
        if (fresh) {
            BankCtl ctl;
            ctl.state = &bank(gb);
            banks.push_back(std::move(ctl));
        }
        agg_bank[i] = std::uint32_t(it->second);
        agg_row[i] = loc.row;
        agg_lat[i] = map_.channel_latency(loc.channel);
    }

    const Time t0 = ((clock_ + trefi - 1) / trefi) * trefi;
    const Time t_end = t0 + spec.duration_ns;
    for (auto& b : banks) {
        b.last_act = b.state->last_act_ns();
        b.ref_end = t0;
    }

    HammerStats st;
    std::vector<std::uint64_t> per_slot(n, 0);
    std::vector<WarpState> warps(k);
    std::priority_queue<WarpEvent, std::vector<WarpEvent>, std::greater<>> events;
    for (std::uint32_t w = 0; w < k; ++w)
        events.push({t0 + Time(w) * prm.warmup_stagger_ns, ev_issue, w});

    std::vector<std::uint32_t> ps;  // warps in their delay loop
    double ps_t = double(t0);
    const double delay_work = double(spec.delay_units) * double(prm.unit_delay_ns);
    auto ps_rate = [&]() {
        return std::min(1.0, double(prm.sm_delay_slots) / double(ps.size()));
    };
    auto ps_advance = [&](Time to) {
        if (!ps.empty()) {
            const double r = ps_rate();
            for (auto w : ps) warps[w].remaining -= r * (double(to) - ps_t);
        }
        ps_t = double(to);
    };

    const Time H = prm.ref_pullin_ns;
    for (;;) {
        // 0: warp event, 1: delay completion, 2: bank service, 3: REF
        Time best_t = kNever;
        int best_kind = 4;
        std::size_t best_idx = 0;
        auto consider = [&](Time t, int kind, std::size_t idx) {
            if (std::tie(t, kind, idx) < std::tie(best_t, best_kind, best_idx)) {
                best_t = t;
                best_kind = kind;
                best_idx = idx;
            }
        };
        if (!events.empty()) consider(events.top().t, 0, 0);
        if (!ps.empty()) {
            std::uint32_t wmin = ps.front();
            for (auto w : ps)
                if (std::tie(warps[w].remaining, w) < std::tie(warps[wmin].remaining, wmin))
                    wmin = w;
            const double dt = std::max(0.0, warps[wmin].remaining) / ps_rate();
            consider(Time(std::ceil(ps_t + dt - 1e-9)), 1, wmin);
        }
        for (std::size_t bi = 0; bi < banks.size(); ++bi) {
            auto& b = banks[bi];
            const Time free = std::max(b.last_act + tm.trc_ns, b.ref_end);
            const Time due = t0 + b.refk * trefi;
            const bool has_head = !b.queue.empty();
            const Time sv = has_head ? std::max(b.queue.front().arrival, free) : kNever;
            const bool idle_tr = !has_head || b.queue.front().arrival > free;
            Time rt = (idle_tr && free >= due - H && free <= due) ? free : std::max(due, free);
            if (has_head && sv < rt)
                consider(sv, 2, bi);
            else
                consider(rt, 3, bi);
        }
        if (best_t > t_end) break;

        if (best_kind == 3) {
            auto& b = banks[best_idx];
            const Time free = std::max(b.last_act + tm.trc_ns, b.ref_end);
            if (best_t > free) st.mc_idle_ns += best_t - free;
            b.state->refresh(best_t);
            b.ref_end = best_t + tm.trfc_ns;
            ++b.refk;
            ++st.refs;
            continue;
        }
        if (best_kind == 2) {
            auto& b = banks[best_idx];
            const Time free = std::max(b.last_act + tm.trc_ns, b.ref_end);
            if (best_t > free) st.mc_idle_ns += best_t - free;
            const Load ld = b.queue.front();
            b.queue.pop_front();
            b.state->activate(agg_row[ld.slot], best_t);
            b.last_act = best_t;
            ++per_slot[ld.slot];
            ++st.total_acts;
            events.push({best_t + agg_lat[ld.slot], ev_return, ld.warp});
            continue;
        }
        if (best_kind == 1) {
            ps_advance(best_t);
            const auto w = std::uint32_t(best_idx);
            ps.erase(std::find(ps.begin(), ps.end(), w));
            warps[w].delaying = false;
            events.push({best_t + prm.issue_epsilon_ns, ev_issue, w});
            continue;
        }

        const WarpEvent ev = events.top();
        events.pop();
        auto& ws = warps[ev.warp];
        if (ev.type == ev_return) {
            if (--ws.outstanding > 0) continue;
            if (++ws.phase < steps) {
                events.push({ev.t + prm.issue_epsilon_ns, ev_issue, ev.warp});
                continue;
            }
            ws.phase = 0;
            ++ws.iters;
            const Time done = ev.t + Time(m - 1) * prm.lockstep_lane_ns;
            if (ws.iters % spec.rounds_per_sync == 0 && spec.delay_units > 0)
                events.push({done, ev_delay, ev.warp});
            else
                events.push({done + prm.issue_epsilon_ns, ev_issue, ev.warp});
        } else if (ev.type == ev_delay) {
            ps_advance(ev.t);
            ws.delaying = true;
            ws.remaining = delay_work;
            ps.push_back(ev.warp);
        } else {
            if (ev.warp == 0 && ws.phase == 0 && ws.iters % spec.rounds_per_sync == 0)
                st.round_starts_ns.push_back(ev.t);
            ws.outstanding = m;
            for (std::uint32_t lane = 0; lane < m; ++lane) {
                const std::uint32_t slot = serial ? ws.phase : ev.warp * m + lane;
                banks[agg_bank[slot]].queue.push_back({ev.t, ev.warp, slot});
            }
        }
    }

    clock_ = t_end;
    for (std::size_t i = 0; i < n; ++i) st.acts_per_aggressor[spec.aggressors[i]] += per_slot[i];
    st.acts_per_window = double(st.total_acts) * double(window) / double(spec.duration_ns);
    for (std::size_t i = 1; i < st.round_starts_ns.size(); ++i)
        st.time_per_round_ns.push_back(double(st.round_starts_ns[i] - st.round_starts_ns[i - 1]));
    for (auto& [gb, idx] : bank_index)
        for (const auto& f : banks[idx].state->collect_flips()) st.flips.push_back({gb, f});
    std::sort(st.flips.begin(), st.flips.end());
    return st;
}

std::vector<SweepPoint> Engine::sweep_delay(const HammerKernelSpec& spec,
                                            const std::vector<std::uint64_t>& delays,
                                            const RunOptions& opts) {
    const Time trefi = opts.trefi_ns > 0 ? opts.trefi_ns : cfg_.timing.trefi_ns;
    std::vector<SweepPoint> out;
    for (auto d : delays) {
        Engine e(*this);
        HammerKernelSpec s = spec;
        s.delay_units = d;
        const auto st = e.run_hammer(s, opts);
        SweepPoint p;
        p.delay_units = d;
        p.total_acts = st.total_acts;
        p.flips = st.flips.size();
        const auto& rs = st.round_starts_ns;
        const std::size_t skip = rs.size() / 3;
        if (rs.size() >= skip + 2)
            p.mean_round_ns =
                double(rs.back() - rs[skip]) / double(rs.size() - 1 - skip);
        for (std::uint32_t r = 1; r <= 4 && p.mean_round_ns > 0; ++r)
            if (std::abs(p.mean_round_ns * r - double(trefi)) <= 1.0) {
                p.flat = true;
                p.rounds_per_trefi = r;
                break;
            }
        out.push_back(p);
    }
    return out;
}

SyncedResult Engine::hammer_synced(const SyncedHammer& h) {
    const auto& tm = cfg_.timing;
    const auto& g = cfg_.geometry;
    if (h.aggressors.empty()) throw ConfigError("synced hammer: empty pattern");
    if (h.duty_x == 0 && h.duty_y == 0) throw ConfigError("synced hammer: empty duty cycle");
    if (h.duty_y > 0 && h.dummies.empty())
        throw ConfigError("synced hammer: dummy tREFIs need dummy rows");
    const std::size_t longest = std::max(h.aggressors.size(), h.dummies.size());
    if (tm.trfc_ns + Time(longest) * tm.trc_ns > tm.trefi_ns)
        throw ConfigError("synced hammer: round does not fit in one tREFI");

    const std::uint32_t gb = map_.translate(h.aggressors.front()).global_bank(g);
    auto resolve = [&](const std::vector<std::uint64_t>& offs) {
        std::vector<std::uint32_t> rows;
        for (auto o : offs) {
            const auto loc = map_.translate(o);
            if (loc.global_bank(g) != gb) throw ConfigError("synced hammer: mixed banks");
            rows.push_back(loc.row);
        }
        return rows;
    };
    const auto rows = resolve(h.aggressors);
    const auto dummy_rows = resolve(h.dummies);

    auto& b = bank(gb);
    const Time trefi = tm.trefi_ns;
    const Time t0 = ((std::max(clock_, b.last_act_ns() + tm.trc_ns) + trefi - 1) / trefi) * trefi;
    const std::uint64_t count = std::uint64_t(h.duration_ns / trefi);
    const std::uint64_t cycle = g.rows_per_bank / g.rows_per_ref(tm);
    const std::uint64_t period = std::uint64_t(h.duty_x) + h.duty_y;
    const bool periodic = h.duty_y == 0;

    SyncedResult res;
    res.bank = gb;
    std::uint64_t flips_at_cycle_start = b.flip_events();
    Time t = t0;
    for (std::uint64_t i = 0; i < count; ++i, t += trefi) {
        b.refresh(t);
        const auto& round = (i % period) < h.duty_x ? rows : dummy_rows;
        Time ta = t + tm.trfc_ns;
        for (auto r : round) {
            b.activate(r, ta);
            ta += tm.trc_ns;
        }
        res.total_acts += round.size();
        ++res.trefis;
        // A periodic pattern repeats the whole bank state every refresh cycle, so a full
        // cycle without new flips means none will follow.
        if (h.stop_at_steady_state && periodic && (i + 1) % cycle == 0) {
            const bool quiet = b.flip_events() == flips_at_cycle_start;
            flips_at_cycle_start = b.flip_events();
            if ((i + 1) / cycle >= 2 && quiet && i + 1 < count) {
                res.stopped_early = true;
                t += trefi;
                break;
            }
        }
    }
    clock_ = std::max(clock_, t);
    res.flips = b.collect_flips();
    return res;
}

bool Engine::can_disturb(std::span<const std::uint64_t> offsets) {
    const auto& g = cfg_.geometry;
    std::map<std::uint32_t, std::vector<std::uint32_t>> by_bank;
    for (auto o : offsets) {
        const auto loc = map_.translate(o);
        by_bank[loc.global_bank(g)].push_back(loc.row);
    }
    for (auto& [gb, rows] : by_bank)
        if (bank(gb).can_disturb(rows)) return true;
    return false;
}

void Engine::write_bytes(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    const auto& g = cfg_.geometry;
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto loc = map_.translate(offset + done);
        const std::size_t piece =
            std::min<std::size_t>(bytes.size() - done, g.chunk_bytes - loc.byte_in_chunk);
        bank(loc.global_bank(g)).write(loc.row, loc.byte_in_row(g), bytes.subspan(done, piece));
        done += piece;
    }
}

std::vector<std::uint8_t> Engine::read_bytes(std::uint64_t offset, std::size_t len) {
    const auto& g = cfg_.geometry;
    std::vector<std::uint8_t> out;
    out.reserve(len);
    std::size_t done = 0;
    while (done < len) {
        const auto loc = map_.translate(offset + done);
        const std::size_t piece =
            std::min<std::size_t>(len - done, g.chunk_bytes - loc.byte_in_chunk);
        auto part = bank(loc.global_bank(g)).read(loc.row, loc.byte_in_row(g),
                                                  std::uint32_t(piece));
        out.insert(out.end(), part.begin(), part.end());
        done += piece;
    }
    return out;
}

}  // namespace gpuhammer

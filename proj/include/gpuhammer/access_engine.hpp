#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gpuhammer/address_map.hpp"
#include "gpuhammer/dram_core.hpp"
#include "gpuhammer/mitigations.hpp"

namespace gpuhammer {

enum class KernelMode : std::uint8_t { single_thread, multi_thread, multi_warp };

KernelMode parse_kernel_mode(const std::string& s);
const char* to_string(KernelMode m);

struct HammerKernelSpec {
    KernelMode mode = KernelMode::multi_warp;
    std::uint32_t warps = 1;
    std::uint32_t threads_per_warp = 1;
    std::vector<std::uint64_t> aggressors;  // warp-major: aggressors[w * m + lane]
    std::uint32_t rounds_per_sync = 1;
    std::uint64_t delay_units = 0;
    Time duration_ns = 32'000'000;

    void validate() const;
};

struct RunOptions {
    Time window_ns = 0;  // normalization window for acts_per_window; 0 = native window
    Time trefi_ns = 0;   // REF cadence; 0 = timing.trefi_ns
};

struct BankFlip {
    std::uint32_t bank = 0;
    FlipEntry flip;

    auto operator<=>(const BankFlip&) const = default;
};

struct HammerStats {
    std::uint64_t total_acts = 0;
    std::map<std::uint64_t, std::uint64_t> acts_per_aggressor;
    double acts_per_window = 0;
    std::vector<double> time_per_round_ns;
    std::vector<Time> round_starts_ns;  // warp 0
    std::vector<BankFlip> flips;
    Time mc_idle_ns = 0;
    std::uint64_t refs = 0;
};

struct SweepPoint {
    std::uint64_t delay_units = 0;
    double mean_round_ns = 0;
    std::uint64_t total_acts = 0;
    std::size_t flips = 0;
    bool flat = false;        // mean round locked to trefi / r
    std::uint32_t rounds_per_trefi = 0;  // r when flat
};

struct Plateau {
    std::size_t first = 0;  // index into the sweep
    std::size_t length = 0;
    double value_ns = 0;    // mean round over the plateau
    std::uint32_t rounds_per_trefi = 0;
};

// Maximal runs of at least min_points consecutive flat points with the same r.
std::vector<Plateau> find_plateaus(const std::vector<SweepPoint>& sweep, std::size_t min_points);

struct EngineParams {
    Time unit_delay_ns = 2;
    Time issue_epsilon_ns = 0;
    Time lockstep_lane_ns = 8;       // per extra lane of a lockstep load batch
    std::uint32_t sm_delay_slots = 8;  // warps that can run delay loops at full rate
    Time ref_pullin_ns = 250;        // REF may start this early if the bank goes idle
    Time warmup_stagger_ns = 0;
    double jitter_sigma_ns = 0;
    std::uint64_t jitter_seed = 1;
};

struct EngineConfig {
    DramTiming timing;
    DramGeometry geometry;
    MapMode map_mode = MapMode::mixed;
    std::uint64_t map_seed = 0;
    std::uint64_t map_salt = 0;
    TrrConfig trr;
    EccConfig ecc;
    VulnerabilityProfile profile;
    EngineParams params;
    std::uint8_t fill = 0;

    void validate() const;
};

struct SyncedHammer {
    std::vector<std::uint64_t> aggressors;  // one round, in issue order; one bank
    Time duration_ns = 128'000'000;
    std::uint32_t duty_x = 1;               // hammer tREFIs per period
    std::uint32_t duty_y = 0;               // dummy tREFIs per period
    std::vector<std::uint64_t> dummies;
    bool stop_at_steady_state = true;
};

struct SyncedResult {
    std::uint64_t total_acts = 0;
    std::uint64_t trefis = 0;
    bool stopped_early = false;
    std::uint32_t bank = 0;
    std::vector<FlipEntry> flips;
};

class Engine {
public:
    explicit Engine(EngineConfig cfg);

    const EngineConfig& config() const { return cfg_; }
    const AddressMap& map() const { return map_; }
    BankState& bank(std::uint32_t global_bank);
    bool bank_materialized(std::uint32_t global_bank) const { return banks_.count(global_bank); }

    std::int64_t measure_single(std::uint64_t offset);
    std::int64_t measure_single_at(std::uint64_t offset, Time t);
    std::int64_t measure_pair(std::uint64_t ref_offset, std::uint64_t probe_offset);

    HammerStats run_hammer(const HammerKernelSpec& spec, const RunOptions& opts = {});
    std::vector<SweepPoint> sweep_delay(const HammerKernelSpec& spec,
                                        const std::vector<std::uint64_t>& delays,
                                        const RunOptions& opts = {});

    // One round of aggressors right after every REF: the steady state a synchronized
    // k-warp kernel locks into.
    SyncedResult hammer_synced(const SyncedHammer& h);
    // False when no ACT to these offsets can disturb any configured cell, so hammering
    // them cannot flip anything.
    bool can_disturb(std::span<const std::uint64_t> offsets);

    void write_bytes(std::uint64_t offset, std::span<const std::uint8_t> bytes);
    std::vector<std::uint8_t> read_bytes(std::uint64_t offset, std::size_t len);

private:
    std::int64_t jitter();

    EngineConfig cfg_;
    AddressMap map_;
    std::map<std::uint32_t, BankState> banks_;
    std::mt19937_64 rng_;
    Time clock_ = 0;
};

}  // namespace gpuhammer

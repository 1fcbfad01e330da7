#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gpuhammer/reveng.hpp"

namespace gpuhammer {

struct CampaignConfig {
    std::uint32_t sides = 24;
    std::uint32_t distance = 4;
    std::uint32_t step = 3;
    Time duration_ns = 128'000'000;
    std::vector<std::uint8_t> victim_fills{0x55, 0xAA};
    // Also run placements that cannot reach any configured cell (same result, much slower).
    bool exhaustive = false;
    unsigned threads = 0;  // 0 = hardware concurrency

    void validate() const;
};

// Placement that produced a flip: aggressor RowIDs base, base + d, ... base + (n-1)d.
struct PatternRef {
    std::uint32_t sides = 0;
    std::uint32_t distance = 0;
    std::uint32_t base = 0;
    std::uint8_t victim_fill = 0;

    std::vector<std::uint32_t> rowids() const;
    std::uint8_t aggressor_fill() const { return std::uint8_t(~victim_fill); }
};

struct FlipRecord {
    std::string name;
    std::uint32_t bank = 0;  // global
    std::uint32_t row = 0;
    std::uint32_t byte_off = 0;
    std::uint8_t bit = 0;
    FlipDirection direction = FlipDirection::zero_to_one;
    std::uint8_t original = 0;
    std::uint8_t flipped = 0;
    std::uint32_t victim_rowid = 0;
    std::uint64_t offset = 0;  // allocation offset of the flipped byte
    PatternRef pattern;

    auto key() const { return std::tuple(bank, row, byte_off, bit); }
};

struct SweepResult {
    std::vector<FlipRecord> flips;  // unique per cell, sorted by key
    std::uint64_t placements = 0;
    std::uint64_t simulated = 0;
    std::uint64_t raw_flip_bits = 0;  // stored-bit flips before any ECC correction
    EccLog ecc;                       // corrections seen while reading victims back
};

SweepResult sweep_bank(const Engine& base, const RowSet& rows, const CampaignConfig& cfg);

// Names flips "<label><k>" with k counting up by row inside each labelled bank.
void name_flips(std::vector<FlipRecord>& flips,
                const std::map<std::uint32_t, std::string>& bank_labels);

// Flips found by hammering the given aggressor RowIDs once (victim fill everywhere in the
// ±3 neighbourhood of the aggressors, inverted fill on aggressors).
struct Trial {
    std::vector<std::uint32_t> aggressors;  // issue order
    std::vector<std::uint32_t> dummies;
    std::uint32_t duty_x = 1;
    std::uint32_t duty_y = 0;
    std::uint8_t victim_fill = 0x55;
    std::uint8_t aggressor_fill = 0xAA;
    Time duration_ns = 128'000'000;
};

struct TrialOutcome {
    bool hammered = false;  // false when the aggressors did not share a bank
    std::vector<FlipRecord> flips;
    std::uint64_t raw_flip_bits = 0;
    EccLog ecc;
};

bool single_bank(const Engine& e, const std::vector<std::uint64_t>& offsets);

// Writes `value` over every chunk of the given rows.
void fill_rows(Engine& e, const RowSet& rows, const std::vector<std::uint32_t>& ids,
               std::uint8_t value);

TrialOutcome run_trial(const Engine& base, const RowSet& rows, const Trial& t);
bool trial_flips(const Engine& base, const RowSet& rows, const Trial& t, const FlipRecord& target);

std::vector<int> find_critical_aggressors(const Engine& base, const RowSet& rows,
                                          const FlipRecord& flip, const CampaignConfig& cfg,
                                          std::uint64_t seed);

struct TrhEstimate {
    std::uint64_t trh = 0;
    std::uint32_t x = 0;  // hammer tREFIs out of every `period`
    std::uint32_t period = 0;
};

TrhEstimate estimate_trh(const Engine& base, const RowSet& rows, const FlipRecord& flip,
                         const CampaignConfig& cfg, std::uint32_t granularity = 100,
                         std::uint64_t seed = 1);

struct SamplerPoint {
    std::uint32_t n = 0;
    std::uint32_t trials = 0;
    std::uint32_t successes = 0;
    double fraction() const { return trials ? double(successes) / trials : 0.0; }
};

struct SamplerEstimate {
    std::uint32_t max_safe_n = 0;  // largest n such that no n' <= n in range ever flipped
    std::vector<SamplerPoint> points;
};

SamplerEstimate estimate_sampler_size(const Engine& base, const RowSet& rows,
                                      const FlipRecord& flip, int critical_delta,
                                      std::uint32_t n_lo, std::uint32_t n_hi,
                                      std::uint32_t trials, std::uint64_t seed,
                                      const CampaignConfig& cfg);

using Heatmap = std::array<std::array<std::uint8_t, 16>, 16>;  // [victim / 0x11][aggressor / 0x11]

Heatmap data_pattern_heatmap(const Engine& base, const RowSet& rows, const FlipRecord& flip,
                             const CampaignConfig& cfg);

struct DirectionRow {
    std::string name;
    std::uint8_t original = 0;
    std::uint8_t flipped = 0;
    FlipDirection direction = FlipDirection::zero_to_one;
    std::uint8_t bit = 0;
};

struct DirectionReport {
    std::vector<DirectionRow> rows;
    std::size_t zero_to_one = 0;
    std::size_t one_to_zero = 0;
    FlipDirection majority() const {
        return zero_to_one >= one_to_zero ? FlipDirection::zero_to_one
                                          : FlipDirection::one_to_zero;
    }
};

DirectionReport direction_report(const std::vector<FlipRecord>& flips);

// CSV emitters. Every file starts with a header row.
struct Table1Row {
    std::uint32_t sides = 0;
    std::string bank;
    std::size_t flips = 0;
};
void write_table1(const std::string& path, const std::vector<Table1Row>& rows);
void write_table2(const std::string& path, const std::vector<FlipRecord>& flips,
                  const std::vector<std::vector<int>>& deltas);
void write_table3(const std::string& path, const std::vector<FlipRecord>& flips);
void write_fig8(const std::string& path, const std::vector<FlipRecord>& flips,
                const std::vector<TrhEstimate>& est);
void write_fig9(const std::string& path, const SamplerEstimate& est);
void write_fig15(const std::string& path,
                 const std::vector<std::pair<std::string, Heatmap>>& maps);

}  // namespace gpuhammer

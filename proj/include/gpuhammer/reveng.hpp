#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gpuhammer/access_engine.hpp"

namespace gpuhammer {

struct ConflictSet {
    std::uint64_t reference = 0;
    std::vector<std::uint64_t> members;
    std::int64_t threshold_ns = 0;
};

struct RowSet {
    std::uint32_t bank = 0;
    std::vector<std::uint64_t> reps;                     // index = RowID
    std::vector<std::vector<std::uint64_t>> rowset_vec;  // RowID -> offsets in that row
};

struct VerifyReport {
    double precision = 0;
    double coverage = 0;
    std::size_t representatives = 0;
    std::size_t distinct_rows = 0;
};

// Every stride-aligned offset of the device.
std::vector<std::uint64_t> candidate_offsets(const AddressMap& map, std::uint64_t stride = 256);

std::vector<std::uint64_t> numa_filter(Engine& e, std::uint64_t reference,
                                       const std::vector<std::uint64_t>& candidates,
                                       std::int64_t tolerance_ns = 10);

// threshold defaults to the reference latency + 30 ns.
ConflictSet build_conflict_set(Engine& e, std::uint64_t reference,
                               const std::vector<std::uint64_t>& filtered,
                               std::optional<std::int64_t> threshold_ns = std::nullopt);

// Greedy pass in offset order with the reference as RowID 0. If `filtered` is given, the
// reference row's bucket is completed by probing non-members against RowID 1.
RowSet build_row_set(Engine& e, const ConflictSet& cs,
                     const std::vector<std::uint64_t>* filtered = nullptr);

VerifyReport verify_row_set(const AddressMap& map, const RowSet& rs, std::uint32_t bank);

// Row set taken straight from the map, for geometries too large to profile.
RowSet oracle_row_set(const AddressMap& map, std::uint32_t bank);

// First chunk of the bank's first row; the attacker's choice of target bank.
std::uint64_t reference_for_bank(const AddressMap& map, std::uint32_t bank);

struct RevengResult {
    ConflictSet conflicts;
    RowSet rows;
    VerifyReport report;
};

RevengResult run_reveng(Engine& e, std::uint32_t bank, std::uint64_t stride = 256,
                        std::optional<std::int64_t> threshold_ns = std::nullopt);

void write_row_set(const std::string& path, const RowSet& rs);
void write_rowset_vec_csv(const std::string& path, const RowSet& rs);
RowSet read_row_set(const std::string& path, const std::string& vec_path = "");

}  // namespace gpuhammer

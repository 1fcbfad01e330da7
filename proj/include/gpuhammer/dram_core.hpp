#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gpuhammer/errors.hpp"

namespace gpuhammer {

using Time = std::int64_t;  // nanoseconds

struct DramTiming {
    std::int64_t trc_ns = 45;
    std::int64_t trefi_ns = 1407;
    std::int64_t refs_per_window = 16384;
    std::int64_t trfc_ns = 250;
    std::int64_t conflict_extra_ns = 45;

    void validate() const;
    std::int64_t window_ns() const { return trefi_ns * refs_per_window; }
};

struct DramGeometry {
    std::uint32_t channels = 2;
    std::uint32_t banks_per_channel = 16;
    std::uint32_t rows_per_bank = 1024;
    std::uint32_t row_bytes = 2048;
    std::uint32_t chunk_bytes = 256;

    void validate(const DramTiming& timing) const;
    std::uint32_t total_banks() const { return channels * banks_per_channel; }
    std::uint32_t slots_per_row() const { return row_bytes / chunk_bytes; }
    std::uint64_t capacity() const {
        return std::uint64_t(total_banks()) * rows_per_bank * row_bytes;
    }
    std::uint32_t rows_per_ref(const DramTiming& timing) const;
};

enum class FlipDirection : std::uint8_t { zero_to_one, one_to_zero };
enum class DataRule : std::uint8_t { always, adjacent_inverse, adjacent_or_diagonal };

const char* to_string(FlipDirection d);
const char* to_string(DataRule r);
FlipDirection parse_direction(const std::string& s);
DataRule parse_data_rule(const std::string& s);

inline int source_bit(FlipDirection d) { return d == FlipDirection::zero_to_one ? 0 : 1; }

// bank is the global bank index: channel * banks_per_channel + bank.
struct CellVulnerability {
    std::string name;
    std::uint32_t bank = 0;
    std::uint32_t row = 0;
    std::uint32_t byte_off = 0;
    std::uint8_t bit = 0;
    FlipDirection direction = FlipDirection::zero_to_one;
    std::uint64_t trh = 0;
    std::vector<int> critical_deltas;
    DataRule data_rule = DataRule::always;

    void validate(const DramGeometry& geom) const;
};

using VulnerabilityProfile = std::vector<CellVulnerability>;

struct FlipEntry {
    std::uint32_t row = 0;
    std::uint32_t byte_off = 0;
    std::uint8_t bit = 0;
    FlipDirection direction = FlipDirection::zero_to_one;

    auto operator<=>(const FlipEntry&) const = default;
};

enum class EccStatus : std::uint8_t { clean, corrected, uncorrectable };

struct EccDecoded {
    std::uint64_t data = 0;
    EccStatus status = EccStatus::clean;
};

// Out-of-band word codec (8 data bytes, 1 check byte).
class WordCodec {
public:
    virtual ~WordCodec() = default;
    virtual std::uint8_t encode(std::uint64_t data) const = 0;
    virtual EccDecoded decode(std::uint64_t data, std::uint8_t check) const = 0;
};

class BankState;

// Refresh-side mitigation attached to a bank (TRR lives in mitigations).
class RefreshHook {
public:
    virtual ~RefreshHook() = default;
    virtual void on_act(std::uint32_t row) = 0;
    // Refreshes extra victim rows through bank.refresh_row and appends them to out.
    virtual void on_ref(BankState& bank, std::vector<std::uint32_t>& out) = 0;
    virtual std::unique_ptr<RefreshHook> clone() const = 0;
};

struct CommandRecord {
    enum class Kind : std::uint8_t { act, ref };
    Kind kind = Kind::act;
    Time t = 0;
    std::uint32_t row = 0;                 // ACT: physical row
    std::vector<std::uint32_t> refreshed;  // REF: every row refreshed
};

struct EccLog {
    std::uint64_t corrected = 0;
    std::uint64_t uncorrectable = 0;
};

class BankState {
public:
    BankState(const DramTiming& timing, const DramGeometry& geom, std::uint32_t bank_id,
              const VulnerabilityProfile& profile, std::uint8_t fill = 0);

    BankState(const BankState& other);
    BankState& operator=(const BankState& other);
    BankState(BankState&&) noexcept = default;
    BankState& operator=(BankState&&) noexcept = default;

    Time activate(std::uint32_t row, Time t);
    const std::vector<std::uint32_t>& refresh(Time t);

    std::vector<std::uint8_t> read(std::uint32_t row, std::uint32_t byte_off, std::uint32_t len);
    void write(std::uint32_t row, std::uint32_t byte_off, std::span<const std::uint8_t> bytes);
    void fill_row(std::uint32_t row, std::uint8_t value);
    void clear_data();

    // Positions where the (ECC-corrected, if a codec is attached) content differs from
    // the last written content.
    std::vector<FlipEntry> collect_flips();
    std::vector<FlipEntry> collect_raw_flips() const;

    void refresh_row(std::uint32_t row);

    void set_refresh_hook(std::unique_ptr<RefreshHook> hook) { hook_ = std::move(hook); }
    RefreshHook* refresh_hook() { return hook_.get(); }
    void set_codec(std::shared_ptr<const WordCodec> codec);
    const EccLog& ecc_log() const { return ecc_log_; }

    // logical -> physical; empty means identity.
    void set_remap(std::vector<std::uint32_t> perm);
    std::uint32_t physical(std::uint32_t row) const { return remap_.empty() ? row : remap_[row]; }

    void enable_command_log(bool on) { log_on_ = on; }
    const std::vector<CommandRecord>& command_log() const { return log_; }

    bool has_cells() const { return !cells_.empty(); }
    // True if any ACT to one of these physical rows can disturb a configured cell.
    bool can_disturb(std::span<const std::uint32_t> rows) const;
    const std::vector<CellVulnerability>& cells() const { return cells_; }
    std::uint64_t disturbance(std::size_t cell_index) const { return counters_[cell_index]; }

    std::uint32_t id() const { return bank_id_; }
    std::int64_t open_row() const { return open_row_; }
    Time last_act_ns() const { return last_act_; }
    std::uint32_t next_ref_cursor() const { return cursor_; }
    std::uint64_t act_count() const { return acts_; }
    std::uint64_t flip_events() const { return flip_events_; }
    const DramGeometry& geometry() const { return geom_; }
    const DramTiming& timing() const { return timing_; }

private:
    struct Index {
        std::vector<std::uint32_t> agg_begin;  // CSR: aggressor row -> cells disturbed
        std::vector<std::uint32_t> agg_cells;
        std::vector<std::uint32_t> row_begin;  // CSR: victim row -> cells in row
        std::vector<std::uint32_t> row_cells;
    };

    std::vector<std::uint8_t>& materialize(std::uint32_t row);
    int bit_at(std::uint32_t row, std::uint32_t byte_off, int bit) const;
    bool rule_admits(const CellVulnerability& c, std::uint32_t aggressor, int victim_bit) const;
    void check_range(std::uint32_t row, std::uint64_t byte_off, std::uint64_t len) const;

    DramTiming timing_;
    DramGeometry geom_;
    std::uint32_t bank_id_;
    std::uint8_t fill_;
    std::uint32_t rows_per_ref_;

    std::vector<CellVulnerability> cells_;
    std::shared_ptr<const Index> index_;
    std::vector<std::uint64_t> counters_;

    std::int64_t open_row_ = -1;
    bool any_act_ = false;
    Time last_act_ = 0;
    Time ref_busy_until_ = 0;
    std::uint32_t cursor_ = 0;
    std::uint64_t acts_ = 0;
    std::uint64_t flip_events_ = 0;

    std::unordered_map<std::uint32_t, std::vector<std::uint8_t>> data_;
    std::unordered_map<std::uint32_t, std::vector<std::uint8_t>> pristine_;
    std::unordered_map<std::uint32_t, std::vector<std::uint8_t>> checks_;

    std::unique_ptr<RefreshHook> hook_;
    std::shared_ptr<const WordCodec> codec_;
    EccLog ecc_log_;
    std::vector<std::uint32_t> remap_;
    std::vector<std::uint32_t> refreshed_;

    bool log_on_ = false;
    std::vector<CommandRecord> log_;
};

}  // namespace gpuhammer

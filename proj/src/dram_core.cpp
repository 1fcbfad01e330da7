#include "gpuhammer/dram_core.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace gpuhammer {

namespace {

bool pow2(std::uint64_t v) { return v != 0 && std::has_single_bit(v); }

}  // namespace

void DramTiming::validate() const {
    if (trc_ns <= 0 || trefi_ns <= 0 || refs_per_window <= 0 || trfc_ns <= 0 ||
        conflict_extra_ns <= 0)
        throw ConfigError("timing: all durations must be positive");
    if (trfc_ns >= trefi_ns) throw ConfigError("timing: trfc_ns must be below trefi_ns");
}

void DramGeometry::validate(const DramTiming& timing) const {
    if (!pow2(channels) || !pow2(banks_per_channel) || !pow2(rows_per_bank) ||
        !pow2(row_bytes) || !pow2(chunk_bytes))
        throw ConfigError("geometry: counts must be powers of two");
    if (chunk_bytes != 256) throw ConfigError("geometry: chunk_bytes is fixed at 256");
    if (row_bytes % chunk_bytes != 0 || row_bytes < chunk_bytes)
        throw ConfigError("geometry: row_bytes must be a multiple of chunk_bytes");
    auto refs = static_cast<std::uint64_t>(timing.refs_per_window);
    if (rows_per_bank % refs != 0 && refs % rows_per_bank != 0)
        throw ConfigError("geometry: rows_per_bank and refs_per_window must divide");
}

std::uint32_t DramGeometry::rows_per_ref(const DramTiming& timing) const {
    auto refs = static_cast<std::uint64_t>(timing.refs_per_window);
    return static_cast<std::uint32_t>(std::max<std::uint64_t>(1, rows_per_bank / refs));
}

const char* to_string(FlipDirection d) {
    return d == FlipDirection::zero_to_one ? "zero_to_one" : "one_to_zero";
}

const char* to_string(DataRule r) {
    switch (r) {
        case DataRule::always: return "always";
        case DataRule::adjacent_inverse: return "adjacent_inverse";
        case DataRule::adjacent_or_diagonal: return "adjacent_or_diagonal";
    }
    return "?";
}

FlipDirection parse_direction(const std::string& s) {
    if (s == "zero_to_one" || s == "0->1") return FlipDirection::zero_to_one;
    if (s == "one_to_zero" || s == "1->0") return FlipDirection::one_to_zero;
    throw ConfigError("unknown flip direction: " + s);
}

DataRule parse_data_rule(const std::string& s) {
    if (s == "always") return DataRule::always;
    if (s == "adjacent_inverse") return DataRule::adjacent_inverse;
    if (s == "adjacent_or_diagonal") return DataRule::adjacent_or_diagonal;
    throw ConfigError("unknown data rule: " + s);
}

void CellVulnerability::validate(const DramGeometry& geom) const {
    if (trh == 0) throw ConfigError("cell " + name + ": trh must be positive");
    if (critical_deltas.empty()) throw ConfigError("cell " + name + ": no critical deltas");
    for (int d : critical_deltas)
        if (d == 0 || d < -3 || d > 3)
            throw ConfigError("cell " + name + ": deltas must lie in -3..-1, 1..3");
    if (bank >= geom.total_banks() || row >= geom.rows_per_bank || byte_off >= geom.row_bytes ||
        bit > 7)
        throw ConfigError("cell " + name + ": position outside geometry");
}

BankState::BankState(const DramTiming& timing, const DramGeometry& geom, std::uint32_t bank_id,
                     const VulnerabilityProfile& profile, std::uint8_t fill)
    : timing_(timing),
      geom_(geom),
      bank_id_(bank_id),
      fill_(fill),
      rows_per_ref_(geom.rows_per_ref(timing)) {
    for (const auto& c : profile)
        if (c.bank == bank_id) {
            c.validate(geom);
            cells_.push_back(c);
        }
    counters_.assign(cells_.size(), 0);
    if (cells_.empty()) return;

    auto idx = std::make_shared<Index>();
    const std::uint32_t rows = geom.rows_per_bank;
    std::vector<std::vector<std::uint32_t>> by_agg(rows), by_row(rows);
    for (std::uint32_t i = 0; i < cells_.size(); ++i) {
        const auto& c = cells_[i];
        by_row[c.row].push_back(i);
        for (int d : c.critical_deltas) {
            std::int64_t a = std::int64_t(c.row) + d;
            if (a >= 0 && a < rows) by_agg[a].push_back(i);
        }
    }
    auto flatten = [rows](const auto& lists, auto& begin, auto& flat) {
        begin.assign(rows + 1, 0);
        for (std::uint32_t r = 0; r < rows; ++r) {
            begin[r] = static_cast<std::uint32_t>(flat.size());
            flat.insert(flat.end(), lists[r].begin(), lists[r].end());
        }
        begin[rows] = static_cast<std::uint32_t>(flat.size());
    };
    flatten(by_agg, idx->agg_begin, idx->agg_cells);
    flatten(by_row, idx->row_begin, idx->row_cells);
    index_ = std::move(idx);
}

BankState::BankState(const BankState& o)
    : timing_(o.timing_),
      geom_(o.geom_),
      bank_id_(o.bank_id_),
      fill_(o.fill_),
      rows_per_ref_(o.rows_per_ref_),
      cells_(o.cells_),
      index_(o.index_),
      counters_(o.counters_),
      open_row_(o.open_row_),
      any_act_(o.any_act_),
      last_act_(o.last_act_),
      ref_busy_until_(o.ref_busy_until_),
      cursor_(o.cursor_),
      acts_(o.acts_),
      flip_events_(o.flip_events_),
      data_(o.data_),
      pristine_(o.pristine_),
      checks_(o.checks_),
      hook_(o.hook_ ? o.hook_->clone() : nullptr),
      codec_(o.codec_),
      ecc_log_(o.ecc_log_),
      remap_(o.remap_),
      log_on_(o.log_on_),
      log_(o.log_) {}

BankState& BankState::operator=(const BankState& o) {
    if (this != &o) {
        BankState tmp(o);
        *this = std::move(tmp);
    }
    return *this;
}

void BankState::set_remap(std::vector<std::uint32_t> perm) {
    if (!perm.empty()) {
        if (perm.size() != geom_.rows_per_bank) throw ConfigError("remap: wrong size");
        std::vector<bool> seen(perm.size(), false);
        for (auto p : perm) {
            if (p >= perm.size() || seen[p]) throw ConfigError("remap: not a permutation");
            seen[p] = true;
        }
    }
    remap_ = std::move(perm);
}

Time BankState::activate(std::uint32_t row, Time t) {
    if (row >= geom_.rows_per_bank) throw OutOfRange("activate: row out of range");
    if (any_act_ && t < last_act_ + timing_.trc_ns)
        throw TimingViolation("activate: ACT closer than tRC to the previous ACT");
    if (t < ref_busy_until_) throw TimingViolation("activate: bank is refreshing");

    const std::uint32_t phys = physical(row);
    open_row_ = row;
    any_act_ = true;
    last_act_ = t;
    ++acts_;
    if (log_on_) log_.push_back({CommandRecord::Kind::act, t, phys, {}});
    if (hook_) hook_->on_act(phys);

    if (index_) {
        const auto& idx = *index_;
        for (std::uint32_t k = idx.agg_begin[phys]; k < idx.agg_begin[phys + 1]; ++k) {
            const std::uint32_t ci = idx.agg_cells[k];
            const auto& c = cells_[ci];
            if (++counters_[ci] < c.trh) continue;
            const int cur = bit_at(c.row, c.byte_off, c.bit);
            if (cur != source_bit(c.direction)) continue;
            if (!rule_admits(c, phys, cur)) continue;
            materialize(c.row)[c.byte_off] ^= std::uint8_t(1u << c.bit);
            ++flip_events_;
        }
    }
    return t + timing_.trc_ns;
}

const std::vector<std::uint32_t>& BankState::refresh(Time t) {
    if (any_act_ && t < last_act_ + timing_.trc_ns)
        throw TimingViolation("refresh: bank not idle");
    if (t < ref_busy_until_) throw TimingViolation("refresh: previous REF still in progress");
    refreshed_.clear();
    for (std::uint32_t i = 0; i < rows_per_ref_; ++i) {
        refresh_row(cursor_);
        refreshed_.push_back(cursor_);
        cursor_ = (cursor_ + 1) % geom_.rows_per_bank;
    }
    if (hook_) hook_->on_ref(*this, refreshed_);
    open_row_ = -1;
    ref_busy_until_ = t + timing_.trfc_ns;
    if (log_on_) log_.push_back({CommandRecord::Kind::ref, t, 0, refreshed_});
    return refreshed_;
}

void BankState::refresh_row(std::uint32_t row) {
    if (!index_ || row >= geom_.rows_per_bank) return;
    const auto& idx = *index_;
    for (std::uint32_t k = idx.row_begin[row]; k < idx.row_begin[row + 1]; ++k)
        counters_[idx.row_cells[k]] = 0;
}

bool BankState::can_disturb(std::span<const std::uint32_t> rows) const {
    if (!index_) return false;
    for (auto r : rows) {
        const auto p = physical(r);
        if (index_->agg_begin[p] != index_->agg_begin[p + 1]) return true;
    }
    return false;
}

int BankState::bit_at(std::uint32_t row, std::uint32_t byte_off, int bit) const {
    auto it = data_.find(row);
    const std::uint8_t v = it == data_.end() ? fill_ : it->second[byte_off];
    return (v >> bit) & 1;
}

bool BankState::rule_admits(const CellVulnerability& c, std::uint32_t aggressor,
                            int victim_bit) const {
    if (c.data_rule == DataRule::always) return true;
    const int inverse = victim_bit ^ 1;
    if (bit_at(aggressor, c.byte_off, c.bit) == inverse) return true;
    if (c.data_rule == DataRule::adjacent_inverse) return false;
    const int lo = std::max(0, int(c.bit) - 1);
    const int hi = std::min(7, int(c.bit) + 1);
    return bit_at(aggressor, c.byte_off, lo) == inverse ||
           bit_at(aggressor, c.byte_off, hi) == inverse;
}

std::vector<std::uint8_t>& BankState::materialize(std::uint32_t row) {
    auto it = data_.find(row);
    if (it != data_.end()) return it->second;
    if (codec_) {
        std::uint64_t word;
        std::vector<std::uint8_t> fill_word(8, fill_);
        std::memcpy(&word, fill_word.data(), 8);
        checks_[row].assign(geom_.row_bytes / 8, codec_->encode(word));
    }
    return data_.emplace(row, std::vector<std::uint8_t>(geom_.row_bytes, fill_)).first->second;
}

void BankState::check_range(std::uint32_t row, std::uint64_t byte_off, std::uint64_t len) const {
    if (row >= geom_.rows_per_bank || byte_off + len > geom_.row_bytes)
        throw OutOfRange("bank access outside row bounds");
}

void BankState::set_codec(std::shared_ptr<const WordCodec> codec) {
    codec_ = std::move(codec);
    checks_.clear();
    if (!codec_) return;
    for (const auto& [row, bytes] : data_) {
        auto& chk = checks_[row];
        chk.resize(geom_.row_bytes / 8);
        for (std::uint32_t w = 0; w < chk.size(); ++w) {
            std::uint64_t word;
            std::memcpy(&word, bytes.data() + w * 8, 8);
            chk[w] = codec_->encode(word);
        }
    }
}

std::vector<std::uint8_t> BankState::read(std::uint32_t row, std::uint32_t byte_off,
                                          std::uint32_t len) {
    check_range(row, byte_off, len);
    const std::uint32_t phys = physical(row);
    std::vector<std::uint8_t> out(len, fill_);
    auto it = data_.find(phys);
    if (it == data_.end()) return out;
    if (!codec_) {
        std::memcpy(out.data(), it->second.data() + byte_off, len);
        return out;
    }
    const auto& chk = checks_.at(phys);
    const std::uint32_t w0 = byte_off / 8, w1 = (byte_off + len + 7) / 8;
    for (std::uint32_t w = w0; w < w1; ++w) {
        std::uint64_t word;
        std::memcpy(&word, it->second.data() + w * 8, 8);
        auto dec = codec_->decode(word, chk[w]);
        if (dec.status == EccStatus::corrected) ++ecc_log_.corrected;
        if (dec.status == EccStatus::uncorrectable) ++ecc_log_.uncorrectable;
        std::uint8_t bytes[8];
        std::memcpy(bytes, &dec.data, 8);
        for (int b = 0; b < 8; ++b) {
            const std::uint32_t pos = w * 8 + b;
            if (pos >= byte_off && pos < byte_off + len) out[pos - byte_off] = bytes[b];
        }
    }
    return out;
}

void BankState::write(std::uint32_t row, std::uint32_t byte_off,
                      std::span<const std::uint8_t> bytes) {
    check_range(row, byte_off, bytes.size());
    const std::uint32_t phys = physical(row);
    auto& d = materialize(phys);
    std::memcpy(d.data() + byte_off, bytes.data(), bytes.size());
    auto pit = pristine_.find(phys);
    if (pit == pristine_.end())
        pit = pristine_.emplace(phys, std::vector<std::uint8_t>(geom_.row_bytes, fill_)).first;
    std::memcpy(pit->second.data() + byte_off, bytes.data(), bytes.size());
    if (codec_) {
        auto& chk = checks_[phys];
        if (chk.empty()) {
            chk.resize(geom_.row_bytes / 8);
            for (std::uint32_t w = 0; w < chk.size(); ++w) {
                std::uint64_t word;
                std::memcpy(&word, d.data() + w * 8, 8);
                chk[w] = codec_->encode(word);
            }
        } else {
            const std::uint32_t w0 = byte_off / 8;
            const std::uint32_t w1 = (byte_off + std::uint32_t(bytes.size()) + 7) / 8;
            for (std::uint32_t w = w0; w < w1; ++w) {
                std::uint64_t word;
                std::memcpy(&word, d.data() + w * 8, 8);
                chk[w] = codec_->encode(word);
            }
        }
    }
}

void BankState::fill_row(std::uint32_t row, std::uint8_t value) {
    std::vector<std::uint8_t> buf(geom_.row_bytes, value);
    write(row, 0, buf);
}

void BankState::clear_data() {
    data_.clear();
    pristine_.clear();
    checks_.clear();
}

std::vector<FlipEntry> BankState::collect_raw_flips() const {
    std::vector<FlipEntry> out;
    for (const auto& [row, bytes] : data_) {
        auto pit = pristine_.find(row);
        for (std::uint32_t b = 0; b < geom_.row_bytes; ++b) {
            const std::uint8_t ref = pit == pristine_.end() ? fill_ : pit->second[b];
            const std::uint8_t diff = bytes[b] ^ ref;
            if (!diff) continue;
            for (int bit = 0; bit < 8; ++bit)
                if ((diff >> bit) & 1)
                    out.push_back({row, b, std::uint8_t(bit),
                                   ((ref >> bit) & 1) ? FlipDirection::one_to_zero
                                                      : FlipDirection::zero_to_one});
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<FlipEntry> BankState::collect_flips() {
    auto raw = collect_raw_flips();
    if (!codec_ || raw.empty()) return raw;
    std::vector<FlipEntry> out;
    // Re-derive each affected word through the decoder.
    for (std::size_t i = 0; i < raw.size();) {
        const std::uint32_t row = raw[i].row;
        const std::uint32_t word = raw[i].byte_off / 8;
        std::size_t j = i;
        while (j < raw.size() && raw[j].row == row && raw[j].byte_off / 8 == word) ++j;
        const auto& bytes = data_.at(row);
        auto pit = pristine_.find(row);
        std::uint64_t stored, orig;
        std::memcpy(&stored, bytes.data() + word * 8, 8);
        if (pit == pristine_.end())
            std::memset(&orig, fill_, 8);
        else
            std::memcpy(&orig, pit->second.data() + word * 8, 8);
        auto dec = codec_->decode(stored, checks_.at(row)[word]);
        if (dec.status == EccStatus::corrected) ++ecc_log_.corrected;
        if (dec.status == EccStatus::uncorrectable) ++ecc_log_.uncorrectable;
        const std::uint64_t diff = dec.data ^ orig;
        for (int b = 0; b < 64; ++b)
            if ((diff >> b) & 1)
                out.push_back({row, word * 8 + std::uint32_t(b / 8), std::uint8_t(b % 8),
                               ((orig >> b) & 1) ? FlipDirection::one_to_zero
                                                 : FlipDirection::zero_to_one});
        i = j;
    }
    return out;
}

}  // namespace gpuhammer

#include "gpuhammer/mitigations.hpp"

#include <algorithm>
#include <array>
#include <bit>

namespace gpuhammer {

TrrPolicy parse_trr_policy(const std::string& s) {
    if (s == "off") return TrrPolicy::off;
    if (s == "fifo_per_ref") return TrrPolicy::fifo_per_ref;
    throw ConfigError("unknown trr.policy: " + s);
}

const char* to_string(TrrPolicy p) { return p == TrrPolicy::off ? "off" : "fifo_per_ref"; }

TrrSampler::TrrSampler(const TrrConfig& cfg, std::uint32_t rows_per_bank)
    : cfg_(cfg), rows_(rows_per_bank) {
    entries_.reserve(cfg.capacity);
}

void TrrSampler::observe_act(std::uint32_t row) {
    if (cfg_.policy == TrrPolicy::off || entries_.size() >= cfg_.capacity) return;
    if (std::find(entries_.begin(), entries_.end(), row) == entries_.end())
        entries_.push_back(row);
}

void TrrSampler::on_ref(BankState& bank, std::vector<std::uint32_t>& out) {
    if (cfg_.policy == TrrPolicy::off) return;
    const std::int64_t radius = cfg_.blast_radius;
    for (auto r : entries_)
        for (std::int64_t d = -radius; d <= radius; ++d) {
            const std::int64_t v = std::int64_t(r) + d;
            if (d == 0 || v < 0 || v >= rows_) continue;
            bank.refresh_row(std::uint32_t(v));
            out.push_back(std::uint32_t(v));
        }
    entries_.clear();
}

std::vector<std::uint32_t> TrrSampler::on_ref(BankState& bank) {
    std::vector<std::uint32_t> out;
    on_ref(bank, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::unique_ptr<RefreshHook> TrrSampler::clone() const {
    return std::make_unique<TrrSampler>(*this);
}

namespace {

// Codeword positions 1..71; powers of two hold parity, the rest hold data bits in order.
struct Layout {
    std::array<std::uint8_t, 64> data_pos{};
    Layout() {
        int k = 0;
        for (int p = 1; p <= 71 && k < 64; ++p)
            if ((p & (p - 1)) != 0) data_pos[k++] = std::uint8_t(p);
    }
};

const Layout& layout() {
    static const Layout l;
    return l;
}

unsigned syndrome_of_data(std::uint64_t data) {
    unsigned s = 0;
    for (int i = 0; i < 64; ++i)
        if ((data >> i) & 1) s ^= layout().data_pos[i];
    return s;
}

}  // namespace

std::uint8_t SecDed::encode(std::uint64_t data) const {
    const unsigned hamming = syndrome_of_data(data) & 0x7F;
    const unsigned parity = (std::popcount(data) + std::popcount(hamming)) & 1;
    return std::uint8_t(hamming | (parity << 7));
}

EccDecoded SecDed::decode(std::uint64_t data, std::uint8_t check) const {
    const unsigned syndrome = (syndrome_of_data(data) ^ check) & 0x7F;
    const unsigned parity = (std::popcount(data) + std::popcount(unsigned(check))) & 1;
    if (syndrome == 0 && parity == 0) return {data, EccStatus::clean};
    if (parity == 0) return {data, EccStatus::uncorrectable};
    if (syndrome == 0 || (syndrome & (syndrome - 1)) == 0)
        return {data, EccStatus::corrected};  // a check bit flipped
    if (syndrome > 71) return {data, EccStatus::uncorrectable};
    const auto& pos = layout().data_pos;
    for (int i = 0; i < 64; ++i)
        if (pos[i] == syndrome) return {data ^ (std::uint64_t(1) << i), EccStatus::corrected};
    return {data, EccStatus::uncorrectable};
}

Codeword ecc_store(std::uint64_t word) { return {word, SecDed{}.encode(word)}; }

EccDecoded ecc_load(const Codeword& cw) { return SecDed{}.decode(cw.data, cw.check); }

void attach_mitigations(BankState& bank, const TrrConfig& trr, const EccConfig& ecc) {
    if (trr.policy != TrrPolicy::off)
        bank.set_refresh_hook(std::make_unique<TrrSampler>(trr, bank.geometry().rows_per_bank));
    else
        bank.set_refresh_hook(nullptr);
    static const auto codec = std::make_shared<const SecDed>();
    bank.set_codec(ecc.enabled ? codec : nullptr);
}

}  // namespace gpuhammer

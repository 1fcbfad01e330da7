#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gpuhammer/dram_core.hpp"

namespace gpuhammer {

enum class TrrPolicy : std::uint8_t { off, fifo_per_ref };

TrrPolicy parse_trr_policy(const std::string& s);
const char* to_string(TrrPolicy p);

struct TrrConfig {
    TrrPolicy policy = TrrPolicy::fifo_per_ref;
    std::uint32_t capacity = 16;
    std::uint32_t blast_radius = 2;
};

struct EccConfig {
    bool enabled = false;
};

// Tracks the first `capacity` distinct rows activated since the last REF.
class TrrSampler final : public RefreshHook {
public:
    TrrSampler(const TrrConfig& cfg, std::uint32_t rows_per_bank);

    void observe_act(std::uint32_t row);
    // Resets the neighbours of every tracked row, clears the sampler, returns those rows.
    std::vector<std::uint32_t> on_ref(BankState& bank);

    void on_act(std::uint32_t row) override { observe_act(row); }
    void on_ref(BankState& bank, std::vector<std::uint32_t>& out) override;
    std::unique_ptr<RefreshHook> clone() const override;

    const std::vector<std::uint32_t>& entries() const { return entries_; }
    const TrrConfig& config() const { return cfg_; }

private:
    TrrConfig cfg_;
    std::uint32_t rows_;
    std::vector<std::uint32_t> entries_;
};

// Hamming SEC-DED over 64 data bits: 7 position-parity bits plus one overall parity bit.
class SecDed final : public WordCodec {
public:
    std::uint8_t encode(std::uint64_t data) const override;
    EccDecoded decode(std::uint64_t data, std::uint8_t check) const override;
};

struct Codeword {
    std::uint64_t data = 0;
    std::uint8_t check = 0;
};

Codeword ecc_store(std::uint64_t word);
EccDecoded ecc_load(const Codeword& cw);

// Attach the configured mitigations to a bank.
void attach_mitigations(BankState& bank, const TrrConfig& trr, const EccConfig& ecc);

}  // namespace gpuhammer

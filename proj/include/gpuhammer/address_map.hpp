#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpuhammer/dram_core.hpp"

namespace gpuhammer {

enum class MapMode : std::uint8_t { linear, mixed };

MapMode parse_map_mode(const std::string& s);
const char* to_string(MapMode m);

struct Location {
    std::uint32_t channel = 0;
    std::uint32_t bank = 0;  // within channel
    std::uint32_t row = 0;
    std::uint32_t slot = 0;  // chunk index within the row
    std::uint32_t byte_in_chunk = 0;

    std::uint32_t global_bank(const DramGeometry& g) const {
        return channel * g.banks_per_channel + bank;
    }
    std::uint32_t byte_in_row(const DramGeometry& g) const {
        return slot * g.chunk_bytes + byte_in_chunk;
    }
};

// Chunk c = q * B + b, B = total banks. Mixed mode selects the bank as b ^ f(q) with
// f(q) < B/2 (so neighbouring chunks never share a bank, even across a q boundary) and
// walks each bank's rows in order, 8 chunks per row.
class AddressMap {
public:
    AddressMap(const DramGeometry& geom, MapMode mode, std::uint64_t seed, std::uint64_t salt = 0);

    Location translate(std::uint64_t offset) const;
    std::vector<std::uint64_t> enumerate_row(std::uint32_t global_bank, std::uint32_t row) const;

    // Per-channel NUMA base latency in [280, 370] ns.
    std::int64_t channel_latency(std::uint32_t channel) const;
    std::int64_t base_latency(std::uint64_t offset) const;

    const DramGeometry& geometry() const { return geom_; }
    MapMode mode() const { return mode_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t salt() const { return salt_; }

private:
    std::uint32_t bank_xor(std::uint64_t q) const;

    DramGeometry geom_;
    MapMode mode_;
    std::uint64_t seed_;
    std::uint64_t salt_;
    std::uint64_t key_;
    std::vector<std::int64_t> latency_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace gpuhammer

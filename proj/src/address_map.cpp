#include "gpuhammer/address_map.hpp"

namespace gpuhammer {

MapMode parse_map_mode(const std::string& s) {
    if (s == "linear") return MapMode::linear;
    if (s == "mixed") return MapMode::mixed;
    throw ConfigError("unknown map.mode: " + s);
}

const char* to_string(MapMode m) { return m == MapMode::linear ? "linear" : "mixed"; }

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

AddressMap::AddressMap(const DramGeometry& geom, MapMode mode, std::uint64_t seed,
                       std::uint64_t salt)
    : geom_(geom), mode_(mode), seed_(seed), salt_(salt), key_(mix64(seed ^ mix64(salt))) {
    latency_.resize(geom.channels);
    for (std::uint32_t c = 0; c < geom.channels; ++c)
        latency_[c] = 280 + std::int64_t(mix64(seed * 0x100000001B3ull + c) % 91);
}

std::uint32_t AddressMap::bank_xor(std::uint64_t q) const {
    const std::uint32_t banks = geom_.total_banks();
    if (banks < 2) return 0;
    // Fold the row-walk index into the bank selector.
    std::uint64_t h = mix64(key_ ^ (q * 0xD6E8FEB86659FD93ull));
    return std::uint32_t(h % (banks / 2));
}

Location AddressMap::translate(std::uint64_t offset) const {
    if (offset >= geom_.capacity()) throw OutOfRange("translate: offset beyond capacity");
    const std::uint64_t chunk = offset / geom_.chunk_bytes;
    const std::uint32_t slots = geom_.slots_per_row();
    const std::uint32_t banks = geom_.total_banks();
    Location loc;
    loc.byte_in_chunk = std::uint32_t(offset % geom_.chunk_bytes);
    std::uint32_t gbank;
    std::uint64_t q;
    if (mode_ == MapMode::linear) {
        const std::uint64_t per_bank = std::uint64_t(geom_.rows_per_bank) * slots;
        gbank = std::uint32_t(chunk / per_bank);
        q = chunk % per_bank;
    } else {
        q = chunk / banks;
        gbank = std::uint32_t(chunk % banks) ^ bank_xor(q);
    }
    loc.row = std::uint32_t(q / slots);
    loc.slot = std::uint32_t(q % slots);
    loc.channel = gbank / geom_.banks_per_channel;
    loc.bank = gbank % geom_.banks_per_channel;
    return loc;
}

std::vector<std::uint64_t> AddressMap::enumerate_row(std::uint32_t global_bank,
                                                     std::uint32_t row) const {
    if (global_bank >= geom_.total_banks() || row >= geom_.rows_per_bank)
        throw OutOfRange("enumerate_row: bank or row outside geometry");
    const std::uint32_t slots = geom_.slots_per_row();
    const std::uint32_t banks = geom_.total_banks();
    std::vector<std::uint64_t> out;
    out.reserve(slots);
    for (std::uint32_t s = 0; s < slots; ++s) {
        const std::uint64_t q = std::uint64_t(row) * slots + s;
        std::uint64_t chunk;
        if (mode_ == MapMode::linear)
            chunk = std::uint64_t(global_bank) * geom_.rows_per_bank * slots + q;
        else
            chunk = q * banks + (global_bank ^ bank_xor(q));
        out.push_back(chunk * geom_.chunk_bytes);
    }
    return out;
}

std::int64_t AddressMap::channel_latency(std::uint32_t channel) const {
    if (channel >= latency_.size()) throw OutOfRange("channel_latency: bad channel");
    return latency_[channel];
}

std::int64_t AddressMap::base_latency(std::uint64_t offset) const {
    return latency_[translate(offset).channel];
}

}  // namespace gpuhammer

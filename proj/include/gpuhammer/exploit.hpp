#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gpuhammer/campaign.hpp"

namespace gpuhammer {

struct AllocatorPolicy {
    enum class Kind : std::uint8_t { immediate_reuse, quarantine } kind = Kind::immediate_reuse;
    std::uint32_t k = 8;  // quarantine depth

    static AllocatorPolicy parse(const std::string& s);  // "immediate_reuse" | "quarantine:K"
    std::string str() const;
};

// 256-byte-granular arena without coalescing.
class ArenaAllocator {
public:
    static constexpr std::uint64_t kGranule = 256;

    ArenaAllocator(std::uint64_t base, std::uint64_t size, AllocatorPolicy policy = {});

    std::uint64_t alloc(std::uint64_t bytes);
    void free(std::uint64_t offset);

    const std::map<std::uint64_t, std::uint64_t>& live() const { return live_; }
    const AllocatorPolicy& policy() const { return policy_; }
    std::uint64_t base() const { return base_; }
    std::uint64_t size() const { return size_; }
    std::uint64_t top() const { return top_; }  // bump pointer

    struct Block {
        std::uint64_t off, size;
    };
    const std::vector<Block>& free_blocks() const { return free_; }

private:

    std::uint64_t base_, size_, top_;
    AllocatorPolicy policy_;
    std::vector<Block> free_;  // back = most recently freed
    std::deque<Block> quarantine_;
    std::map<std::uint64_t, std::uint64_t> live_;
};

enum class Dtype : std::uint8_t { fp16, fp32 };

struct FlipTarget {
    std::uint64_t offset = 0;  // allocation offset of the flippy byte
    std::uint8_t bit = 0;
    FlipDirection direction = FlipDirection::zero_to_one;
    Dtype dtype = Dtype::fp16;
};

struct MassageStep {
    enum class Kind : std::uint8_t { alloc, free } kind = Kind::alloc;
    std::uint64_t value = 0;  // bytes for alloc, offset for free
};

struct MassagePlan {
    std::vector<MassageStep> steps;
    std::uint64_t victim_bytes = 0;
    std::uint64_t victim_offset = 0;  // where the victim's block lands
};

// Treats every live block as the attacker's. The plan is checked by a dry run.
MassagePlan plan_massage(const ArenaAllocator& a, const FlipTarget& target,
                         std::uint64_t victim_bytes, std::uint64_t desired_rel_off);
// Runs the steps and then the victim's allocation; returns the victim offset.
std::uint64_t execute_plan(ArenaAllocator& a, const MassagePlan& plan);

struct Field {
    enum class Kind : std::uint8_t { sign, exponent, mantissa } kind = Kind::sign;
    int index = 0;

    bool operator==(const Field&) const = default;
    std::string str() const;  // "sign", "E4", "M0"
};

Field fp16_field_of(int byte_in_element, int bit);
Field fp32_field_of(int byte_in_element, int bit);

float half_to_float(std::uint16_t h);
std::uint16_t float_to_half(float f);  // round to nearest even

struct FlipEffect {
    std::size_t element = 0;
    std::uint32_t old_bits = 0;
    std::uint32_t new_bits = 0;
    Field field;
};

// rel_byte is the flippy byte's position inside the buffer.
FlipEffect apply_flip(std::span<std::uint8_t> buffer, std::uint64_t rel_byte, std::uint8_t bit,
                      FlipDirection direction, Dtype dtype);

struct Dataset {
    std::uint32_t dim = 0;
    std::vector<float> x;  // row-major
    std::vector<int> y;
    std::size_t size() const { return y.size(); }
};

// Two-layer ReLU perceptron with fp16 weights, trained deterministically on seeded blobs.
class ToyModel {
public:
    static constexpr std::uint32_t kIn = 16, kHidden = 32, kClasses = 2;
    static constexpr std::uint64_t kDefaultSeed = 19;

    static ToyModel make(std::uint64_t seed = kDefaultSeed);

    const std::vector<std::uint16_t>& weights() const { return weights_; }
    std::vector<std::uint8_t> weight_bytes() const;
    static std::vector<std::uint16_t> from_bytes(std::span<const std::uint8_t> bytes);
    std::size_t weight_count() const { return weights_.size(); }
    std::size_t first_layer_count() const { return std::size_t(kIn) * kHidden; }
    std::size_t largest_first_layer() const;
    const Dataset& eval_set() const { return eval_; }
    double baseline() const { return baseline_; }

    double accuracy(std::span<const std::uint16_t> w) const;

private:
    std::vector<std::uint16_t> weights_;  // W1[h][in], b1[h], W2[c][h], b2[c]
    Dataset eval_;
    double baseline_ = 0;
};

double evaluate_rad(const ToyModel& m, std::span<const std::uint16_t> tampered);

struct AttackConfig {
    std::uint32_t attempts = 50;
    std::uint64_t seed = 1;
    AllocatorPolicy policy;
    Time duration_ns = 128'000'000;
};

struct AttackResult {
    std::vector<double> rad;
    std::vector<double> running_max;
    std::vector<std::uint64_t> rel_offsets;
    double max_rad = 0;
};

AttackResult run_attack(const Engine& base, const RowSet& rows, const FlipRecord& flip,
                        const ToyModel& model, const AttackConfig& cfg);

struct Table4Row {
    std::string flip;
    Field field;
    double base_acc = 0;
    double degraded_acc = 0;
    double rad = 0;
};

// Effect of each flip on the model when it lands on the largest first-layer weight whose
// bit sits at the flip's source value.
std::vector<Table4Row> flip_impact(const ToyModel& m, const std::vector<FlipRecord>& flips);

void write_fig13(const std::string& path, const AttackResult& r);
void write_table4(const std::string& path, const std::vector<Table4Row>& rows);

}  // namespace gpuhammer

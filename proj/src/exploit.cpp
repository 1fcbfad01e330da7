#include "gpuhammer/exploit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "gpuhammer/csv.hpp"

namespace gpuhammer {

AllocatorPolicy AllocatorPolicy::parse(const std::string& s) {
    if (s == "immediate_reuse") return {};
    const std::string q = "quarantine";
    if (s.rfind(q, 0) == 0) {
        AllocatorPolicy p{Kind::quarantine, 8};
        if (s.size() > q.size()) {
            if (s[q.size()] != ':') throw ConfigError("bad allocator policy: " + s);
            try {
                p.k = std::uint32_t(std::stoul(s.substr(q.size() + 1)));
            } catch (const std::exception&) {
                throw ConfigError("bad quarantine depth: " + s);
            }
        }
        if (p.k == 0) throw ConfigError("quarantine depth must be positive");
        return p;
    }
    throw ConfigError("unknown allocator policy: " + s);
}

std::string AllocatorPolicy::str() const {
    return kind == Kind::immediate_reuse ? "immediate_reuse" : "quarantine:" + std::to_string(k);
}

ArenaAllocator::ArenaAllocator(std::uint64_t base, std::uint64_t size, AllocatorPolicy policy)
    : base_(base), size_(size), top_(base), policy_(policy) {
    if (base % kGranule || size % kGranule || size == 0)
        throw ConfigError("arena must be a non-empty multiple of 256 bytes");
}

std::uint64_t ArenaAllocator::alloc(std::uint64_t bytes) {
    if (bytes == 0) throw ConfigError("alloc of zero bytes");
    const std::uint64_t need = (bytes + kGranule - 1) / kGranule * kGranule;
    for (auto it = free_.rbegin(); it != free_.rend(); ++it) {
        if (it->size < need) continue;
        const std::uint64_t off = it->off;
        if (it->size == need) {
            free_.erase(std::next(it).base());
        } else {
            it->off += need;
            it->size -= need;
        }
        live_.emplace(off, need);
        return off;
    }
    if (need > base_ + size_ - top_) throw OutOfMemory("arena exhausted");
    const std::uint64_t off = top_;
    top_ += need;
    live_.emplace(off, need);
    return off;
}

void ArenaAllocator::free(std::uint64_t offset) {
    auto it = live_.find(offset);
    if (it == live_.end()) throw DoubleFree("free of a block that is not live");
    const Block b{it->first, it->second};
    live_.erase(it);
    if (policy_.kind == AllocatorPolicy::Kind::immediate_reuse) {
        free_.push_back(b);
        return;
    }
    quarantine_.push_back(b);
    if (quarantine_.size() > policy_.k) {
        free_.push_back(quarantine_.front());
        quarantine_.pop_front();
    }
}

MassagePlan plan_massage(const ArenaAllocator& a, const FlipTarget& target,
                         std::uint64_t victim_bytes, std::uint64_t desired_rel_off) {
    constexpr auto G = ArenaAllocator::kGranule;
    if (a.policy().kind != AllocatorPolicy::Kind::immediate_reuse)
        throw Infeasible("massaging needs an allocator that reuses freed blocks immediately");
    const std::uint64_t size = (victim_bytes + G - 1) / G * G;
    if (victim_bytes == 0 || desired_rel_off >= victim_bytes)
        throw Infeasible("relative offset lies outside the victim block");
    if (target.offset < desired_rel_off || (target.offset - desired_rel_off) % G)
        throw Infeasible("victim block would not be 256-byte aligned");
    const std::uint64_t start = target.offset - desired_rel_off;
    if (start < a.base() || start + size > a.base() + a.size())
        throw Infeasible("victim block would leave the arena");

    MassagePlan plan;
    plan.victim_bytes = victim_bytes;
    ArenaAllocator sim = a;
    auto do_alloc = [&](std::uint64_t bytes) {
        plan.steps.push_back({MassageStep::Kind::alloc, bytes});
        return sim.alloc(bytes);
    };
    auto do_free = [&](std::uint64_t off) {
        plan.steps.push_back({MassageStep::Kind::free, off});
        sim.free(off);
    };

    // Where does [start, start + size) sit right now?
    const auto& live = sim.live();
    auto owner = live.upper_bound(start);
    const bool in_live = owner != live.begin() && std::prev(owner)->first + std::prev(owner)->second > start;
    std::uint64_t top = sim.top();

    if (in_live) {
        const auto [boff, bsize] = *std::prev(owner);
        if (boff + bsize < start + size)
            throw Infeasible("target region spans several live blocks");
        do_free(boff);
        if (!(boff == start && bsize == size)) {
            if (start > boff) do_alloc(start - boff);
            do_free(do_alloc(size));
        }
    } else {
        // Soak up free blocks so the next allocations come from the bump pointer.
        while (!sim.free_blocks().empty()) do_alloc(sim.free_blocks().back().size);
        top = sim.top();
        const auto overlap = sim.live().lower_bound(start);
        if (overlap != sim.live().end() && overlap->first < start + size)
            throw Infeasible("target region is partly live");
        if (start < top) throw Infeasible("target region is not reachable by the bump pointer");
        if (start > top) do_alloc(start - top);
        do_free(do_alloc(size));
    }

    ArenaAllocator dry = a;
    plan.victim_offset = execute_plan(dry, plan);
    if (plan.victim_offset != start) throw Infeasible("dry run placed the victim elsewhere");
    return plan;
}

std::uint64_t execute_plan(ArenaAllocator& a, const MassagePlan& plan) {
    for (const auto& s : plan.steps) {
        if (s.kind == MassageStep::Kind::alloc)
            a.alloc(s.value);
        else
            a.free(s.value);
    }
    return a.alloc(plan.victim_bytes);
}

std::string Field::str() const {
    switch (kind) {
        case Kind::sign: return "sign";
        case Kind::exponent: return "E" + std::to_string(index);
        case Kind::mantissa: return "M" + std::to_string(index);
    }
    return "?";
}

namespace {

Field field_of(int pos, int exp_bits, int mant_bits) {
    if (pos == exp_bits + mant_bits) return {Field::Kind::sign, 0};
    if (pos >= mant_bits) return {Field::Kind::exponent, pos - mant_bits};
    return {Field::Kind::mantissa, pos};
}

}  // namespace

Field fp16_field_of(int byte_in_element, int bit) {
    if (byte_in_element < 0 || byte_in_element > 1 || bit < 0 || bit > 7)
        throw OutOfRange("fp16 position out of range");
    return field_of(byte_in_element * 8 + bit, 5, 10);
}

Field fp32_field_of(int byte_in_element, int bit) {
    if (byte_in_element < 0 || byte_in_element > 3 || bit < 0 || bit > 7)
        throw OutOfRange("fp32 position out of range");
    return field_of(byte_in_element * 8 + bit, 8, 23);
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = std::uint32_t(h & 0x8000) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1F;
    const std::uint32_t mant = h & 0x3FF;
    if (exp == 0) {
        const float v = std::ldexp(float(mant), -24);
        return sign ? -v : v;
    }
    if (exp == 31) return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
    return std::bit_cast<float>(sign | ((exp + 112) << 23) | (mant << 13));
}

std::uint16_t float_to_half(float f) {
    std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const std::uint16_t sign = std::uint16_t((x >> 16) & 0x8000);
    x &= 0x7FFFFFFF;
    if (x >= 0x7F800000) return sign | (x > 0x7F800000 ? 0x7E00 : 0x7C00);
    if (x >= 0x477FF000) return sign | 0x7C00;  // rounds past 65504
    if (x < 0x38800000)                         // below the smallest normal half
        return sign | std::uint16_t(std::nearbyint(std::bit_cast<float>(x) * 16777216.0f));
    const std::uint32_t mant = x & 0x7FFFFF;
    std::uint32_t h = ((((x >> 23) - 112) << 10) | (mant >> 13));
    const std::uint32_t rem = mant & 0x1FFF;
    if (rem > 0x1000 || (rem == 0x1000 && (h & 1))) ++h;
    return std::uint16_t(sign | h);
}

FlipEffect apply_flip(std::span<std::uint8_t> buffer, std::uint64_t rel_byte, std::uint8_t bit,
                      FlipDirection direction, Dtype dtype) {
    const std::size_t esize = dtype == Dtype::fp16 ? 2 : 4;
    if (rel_byte >= buffer.size() || bit > 7) throw OutOfRange("flip outside the buffer");
    FlipEffect fx;
    fx.element = rel_byte / esize;
    if ((fx.element + 1) * esize > buffer.size()) throw OutOfRange("partial element");
    const int byte_in = int(rel_byte % esize);
    fx.field = dtype == Dtype::fp16 ? fp16_field_of(byte_in, bit) : fp32_field_of(byte_in, bit);
    auto load = [&] {
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < esize; ++i)
            v |= std::uint32_t(buffer[fx.element * esize + i]) << (8 * i);
        return v;
    };
    fx.old_bits = load();
    if (((buffer[rel_byte] >> bit) & 1) != source_bit(direction))
        throw DirectionMismatch("bit already holds the flipped value");
    buffer[rel_byte] ^= std::uint8_t(1u << bit);
    fx.new_bits = load();
    return fx;
}

namespace {

// Box-Muller over mt19937_64, which unlike std::normal_distribution is bit-identical
// across standard libraries.
class Gauss {
public:
    explicit Gauss(std::uint64_t seed) : rng_(seed) {}
    double uniform() { return double(rng_() >> 11) * 0x1.0p-53; }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do u1 = uniform();
        while (u1 <= 0);
        const double u2 = uniform();
        const double r = std::sqrt(-2 * std::log(u1));
        spare_ = r * std::sin(2 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2 * M_PI * u2);
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0;
    bool has_spare_ = false;
};

constexpr std::uint32_t kIn = ToyModel::kIn, kHid = ToyModel::kHidden, kCls = ToyModel::kClasses;
constexpr std::size_t kB1 = std::size_t(kIn) * kHid, kW2 = kB1 + kHid, kB2 = kW2 + kHid * kCls,
                      kTotal = kB2 + kCls;

// Three of four samples belong to class 0. Features are non-negative.
Dataset make_blobs(Gauss& g, const std::vector<double>& mu0, const std::vector<double>& mu1,
                   std::size_t n) {
    Dataset d;
    d.dim = kIn;
    const std::size_t n1 = n / 4;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i < n - n1 ? 0 : 1;
        const auto& mu = label ? mu1 : mu0;
        for (std::uint32_t k = 0; k < kIn; ++k)
            d.x.push_back(float(std::max(0.0, mu[k] + 0.5 * g.normal())));
        d.y.push_back(label);
    }
    return d;
}

template <typename W>
int predict(const W* w, const float* x) {
    float logit[kCls];
    for (std::uint32_t c = 0; c < kCls; ++c) logit[c] = float(w[kB2 + c]);
    for (std::uint32_t h = 0; h < kHid; ++h) {
        float a = float(w[kB1 + h]);
        for (std::uint32_t k = 0; k < kIn; ++k) a += float(w[h * kIn + k]) * x[k];
        if (!(a > 0)) continue;
        for (std::uint32_t c = 0; c < kCls; ++c) logit[c] += float(w[kW2 + c * kHid + h]) * a;
    }
    return logit[1] > logit[0] ? 1 : 0;
}

}  // namespace

ToyModel ToyModel::make(std::uint64_t seed) {
    Gauss g(seed);
    std::vector<double> mu0(kIn), dir(kIn), mu1(kIn);
    for (auto& m : mu0) m = 2 + 2 * g.uniform();
    double norm = 0;
    for (auto& v : dir) {
        v = g.normal();
        norm += v * v;
    }
    for (std::uint32_t k = 0; k < kIn; ++k) mu1[k] = mu0[k] + 2.2 * dir[k] / std::sqrt(norm);

    const Dataset train = make_blobs(g, mu0, mu1, 400);
    std::vector<double> w(kTotal, 0.0);
    for (std::size_t i = 0; i < kB1; ++i) w[i] = 0.3 * g.normal();
    for (std::size_t i = kW2; i < kB2; ++i) w[i] = 0.3 * g.normal();

    // Full-batch gradient descent on softmax cross-entropy with weight decay.
    const double lr = 0.05, wd = 1e-3;
    const std::size_t n = train.size();
    std::vector<double> grad(kTotal), hid(kHid);
    for (int step = 0; step < 1500; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            const float* x = &train.x[s * kIn];
            for (std::uint32_t h = 0; h < kHid; ++h) {
                double a = w[kB1 + h];
                for (std::uint32_t k = 0; k < kIn; ++k) a += w[h * kIn + k] * x[k];
                hid[h] = std::max(0.0, a);
            }
            double logit[kCls];
            for (std::uint32_t c = 0; c < kCls; ++c) {
                logit[c] = w[kB2 + c];
                for (std::uint32_t h = 0; h < kHid; ++h) logit[c] += w[kW2 + c * kHid + h] * hid[h];
            }
            const double mx = std::max(logit[0], logit[1]);
            const double e0 = std::exp(logit[0] - mx), e1 = std::exp(logit[1] - mx);
            double dl[kCls] = {e0 / (e0 + e1), e1 / (e0 + e1)};
            dl[train.y[s]] -= 1;
            for (std::uint32_t c = 0; c < kCls; ++c) {
                grad[kB2 + c] += dl[c] / n;
                for (std::uint32_t h = 0; h < kHid; ++h) grad[kW2 + c * kHid + h] += dl[c] * hid[h] / n;
            }
            for (std::uint32_t h = 0; h < kHid; ++h) {
                if (hid[h] <= 0) continue;
                double dh = 0;
                for (std::uint32_t c = 0; c < kCls; ++c) dh += dl[c] * w[kW2 + c * kHid + h];
                grad[kB1 + h] += dh / n;
                for (std::uint32_t k = 0; k < kIn; ++k) grad[h * kIn + k] += dh * x[k] / n;
            }
        }
        for (std::size_t i = 0; i < kTotal; ++i) {
            const bool bias = (i >= kB1 && i < kW2) || i >= kB2;
            w[i] -= lr * (grad[i] + (bias ? 0.0 : wd * w[i]));
        }
    }

    ToyModel m;
    m.weights_.resize(kTotal);
    for (std::size_t i = 0; i < kTotal; ++i) m.weights_[i] = float_to_half(float(w[i]));
    m.eval_ = make_blobs(g, mu0, mu1, 400);
    m.baseline_ = m.accuracy(m.weights_);
    return m;
}

std::vector<std::uint8_t> ToyModel::weight_bytes() const {
    std::vector<std::uint8_t> out(weights_.size() * 2);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out[2 * i] = std::uint8_t(weights_[i] & 0xFF);
        out[2 * i + 1] = std::uint8_t(weights_[i] >> 8);
    }
    return out;
}

std::vector<std::uint16_t> ToyModel::from_bytes(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint16_t> out(bytes.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::uint16_t(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    return out;
}

std::size_t ToyModel::largest_first_layer() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < first_layer_count(); ++i)
        if (std::fabs(half_to_float(weights_[i])) > std::fabs(half_to_float(weights_[best])))
            best = i;
    return best;
}

double ToyModel::accuracy(std::span<const std::uint16_t> w) const {
    if (w.size() != kTotal) throw ConfigError("weight buffer has the wrong size");
    std::vector<float> f(kTotal);
    for (std::size_t i = 0; i < kTotal; ++i) f[i] = half_to_float(w[i]);
    std::size_t ok = 0;
    for (std::size_t s = 0; s < eval_.size(); ++s)
        ok += predict(f.data(), &eval_.x[s * kIn]) == eval_.y[s];
    return double(ok) / double(eval_.size());
}

double evaluate_rad(const ToyModel& m, std::span<const std::uint16_t> tampered) {
    return (m.baseline() - m.accuracy(tampered)) / m.baseline();
}

AttackResult run_attack(const Engine& base, const RowSet& rs, const FlipRecord& flip,
                        const ToyModel& model, const AttackConfig& cfg) {
    constexpr auto G = ArenaAllocator::kGranule;
    const auto bytes = model.weight_bytes();
    std::vector<std::uint64_t> rels;
    for (std::uint64_t r = flip.offset % G; r < bytes.size(); r += G) rels.push_back(r);
    if (rels.empty()) throw Infeasible("weights too small to cover the flippy byte");
    const FlipTarget target{flip.offset, flip.bit, flip.direction, Dtype::fp16};
    const std::uint64_t capacity = base.config().geometry.capacity();

    SyncedHammer h;
    for (auto id : flip.pattern.rowids()) h.aggressors.push_back(rs.reps.at(id));
    h.duration_ns = cfg.duration_ns;

    std::mt19937_64 rng(cfg.seed);
    AttackResult res;
    for (std::uint32_t a = 0; a < cfg.attempts; ++a) {
        const std::uint64_t rel =
            rels[std::uniform_int_distribution<std::size_t>(0, rels.size() - 1)(rng)];
        ArenaAllocator arena(0, capacity, cfg.policy);
        arena.alloc(capacity);  // the attacker starts out owning all memory
        const auto plan = plan_massage(arena, target, bytes.size(), rel);
        const std::uint64_t voff = execute_plan(arena, plan);

        Engine e(base);
        fill_rows(e, rs, flip.pattern.rowids(), flip.pattern.aggressor_fill());
        e.write_bytes(voff, bytes);
        if (single_bank(e, h.aggressors)) e.hammer_synced(h);
        const auto tampered = ToyModel::from_bytes(e.read_bytes(voff, bytes.size()));
        const double rad = evaluate_rad(model, tampered);
        res.rad.push_back(rad);
        res.rel_offsets.push_back(rel);
        res.max_rad = a == 0 ? rad : std::max(res.max_rad, rad);
        res.running_max.push_back(res.max_rad);
    }
    return res;
}

std::vector<Table4Row> flip_impact(const ToyModel& m, const std::vector<FlipRecord>& flips) {
    std::vector<std::size_t> order(m.first_layer_count());
    std::iota(order.begin(), order.end(), 0);
    const auto& w = m.weights();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::fabs(half_to_float(w[a])) > std::fabs(half_to_float(w[b]));
    });
    std::vector<Table4Row> out;
    for (const auto& f : flips) {
        const int byte_in = int(f.offset % 2);
        for (auto i : order) {
            auto bytes = m.weight_bytes();
            if (((bytes[2 * i + byte_in] >> f.bit) & 1) != source_bit(f.direction)) continue;
            const auto fx = apply_flip(bytes, 2 * i + byte_in, f.bit, f.direction, Dtype::fp16);
            const double acc = m.accuracy(ToyModel::from_bytes(bytes));
            out.push_back({f.name, fx.field, m.baseline(), acc, (m.baseline() - acc) / m.baseline()});
            break;
        }
    }
    return out;
}

void write_fig13(const std::string& path, const AttackResult& r) {
    CsvWriter w(path, "attempt,rad,running_max");
    for (std::size_t i = 0; i < r.rad.size(); ++i) w.row(i + 1, r.rad[i], r.running_max[i]);
}

void write_table4(const std::string& path, const std::vector<Table4Row>& rows) {
    CsvWriter w(path, "flip,field,base_acc,degraded_acc,rad");
    for (const auto& r : rows) w.row(r.flip, r.field.str(), r.base_acc, r.degraded_acc, r.rad);
}

}  // namespace gpuhammer

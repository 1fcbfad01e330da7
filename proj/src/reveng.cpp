#include "gpuhammer/reveng.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace gpuhammer {

std::vector<std::uint64_t> candidate_offsets(const AddressMap& map, std::uint64_t stride) {
    if (stride == 0 || 256 % stride != 0) throw ConfigError("stride must divide 256");
    std::vector<std::uint64_t> out;
    const std::uint64_t cap = map.geometry().capacity();
    out.reserve(cap / stride);
    for (std::uint64_t o = 0; o < cap; o += stride) out.push_back(o);
    return out;
}

std::vector<std::uint64_t> numa_filter(Engine& e, std::uint64_t reference,
                                       const std::vector<std::uint64_t>& candidates,
                                       std::int64_t tolerance_ns) {
    const std::int64_t ref = e.measure_single(reference);
    std::vector<std::uint64_t> out;
    for (auto o : candidates)
        if (std::llabs(e.measure_single(o) - ref) <= tolerance_ns) out.push_back(o);
    return out;
}

ConflictSet build_conflict_set(Engine& e, std::uint64_t reference,
                               const std::vector<std::uint64_t>& filtered,
                               std::optional<std::int64_t> threshold_ns) {
    ConflictSet cs;
    cs.reference = reference;
    cs.threshold_ns = threshold_ns ? *threshold_ns : e.measure_single(reference) + 30;
    for (auto o : filtered)
        if (o != reference && e.measure_pair(reference, o) > cs.threshold_ns)
            cs.members.push_back(o);
    if (cs.members.empty())
        throw EmptyResult("no row-buffer conflicts above " + std::to_string(cs.threshold_ns) +
                          " ns; the reference or threshold is mis-chosen");
    std::sort(cs.members.begin(), cs.members.end());
    return cs;
}

RowSet build_row_set(Engine& e, const ConflictSet& cs,
                     const std::vector<std::uint64_t>* filtered) {
    RowSet rs;
    rs.reps.push_back(cs.reference);
    rs.rowset_vec.push_back({cs.reference});
    for (auto o : cs.members) {
        std::size_t home = rs.reps.size();
        for (std::size_t i = 0; i < rs.reps.size(); ++i)
            if (e.measure_pair(rs.reps[i], o) <= cs.threshold_ns) {
                home = i;
                break;
            }
        if (home == rs.reps.size()) {
            rs.reps.push_back(o);
            rs.rowset_vec.push_back({o});
        } else {
            rs.rowset_vec[home].push_back(o);
        }
    }
    if (filtered && rs.reps.size() > 1) {
        // Same bank as RowID 1 but no conflict with the reference: the reference's row.
        std::set<std::uint64_t> members(cs.members.begin(), cs.members.end());
        for (auto o : *filtered)
            if (o != cs.reference && !members.count(o) &&
                e.measure_pair(rs.reps[1], o) > cs.threshold_ns)
                rs.rowset_vec[0].push_back(o);
        std::sort(rs.rowset_vec[0].begin(), rs.rowset_vec[0].end());
    }
    return rs;
}

VerifyReport verify_row_set(const AddressMap& map, const RowSet& rs, std::uint32_t bank) {
    VerifyReport r;
    r.representatives = rs.reps.size();
    const auto& g = map.geometry();
    std::set<std::uint32_t> rows;
    std::size_t good = 0;
    for (auto o : rs.reps) {
        if (o >= g.capacity()) continue;
        const auto loc = map.translate(o);
        if (loc.global_bank(g) == bank && rows.insert(loc.row).second) ++good;
    }
    r.distinct_rows = rows.size();
    r.precision = rs.reps.empty() ? 0.0 : double(good) / double(rs.reps.size());
    r.coverage = double(rows.size()) / double(g.rows_per_bank);
    return r;
}

RowSet oracle_row_set(const AddressMap& map, std::uint32_t bank) {
    RowSet rs;
    rs.bank = bank;
    for (std::uint32_t r = 0; r < map.geometry().rows_per_bank; ++r) {
        auto offs = map.enumerate_row(bank, r);
        std::sort(offs.begin(), offs.end());
        rs.reps.push_back(offs.front());
        rs.rowset_vec.push_back(std::move(offs));
    }
    return rs;
}

std::uint64_t reference_for_bank(const AddressMap& map, std::uint32_t bank) {
    auto offs = map.enumerate_row(bank, 0);
    return *std::min_element(offs.begin(), offs.end());
}

RevengResult run_reveng(Engine& e, std::uint32_t bank, std::uint64_t stride,
                        std::optional<std::int64_t> threshold_ns) {
    RevengResult res;
    const std::uint64_t ref = reference_for_bank(e.map(), bank);
    const auto filtered = numa_filter(e, ref, candidate_offsets(e.map(), stride));
    res.conflicts = build_conflict_set(e, ref, filtered, threshold_ns);
    res.rows = build_row_set(e, res.conflicts, &filtered);
    res.rows.bank = bank;
    res.report = verify_row_set(e.map(), res.rows, bank);
    return res;
}

void write_row_set(const std::string& path, const RowSet& rs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << "rowset v1 " << rs.bank << ' ' << rs.reps.size() << '\n';
    for (auto o : rs.reps) f << o << '\n';
}

void write_rowset_vec_csv(const std::string& path, const RowSet& rs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << "rowid,offset\n";
    for (std::size_t i = 0; i < rs.rowset_vec.size(); ++i)
        for (auto o : rs.rowset_vec[i]) f << i << ',' << o << '\n';
}

RowSet read_row_set(const std::string& path, const std::string& vec_path) {
    std::ifstream f(path);
    if (!f) throw MissingInput("missing row-set file: " + path);
    std::string magic, version;
    RowSet rs;
    std::size_t count = 0;
    if (!(f >> magic >> version >> rs.bank >> count) || magic != "rowset" || version != "v1")
        throw ConfigError("bad row-set header in " + path);
    rs.reps.reserve(count);
    std::uint64_t o;
    while (rs.reps.size() < count && f >> o) rs.reps.push_back(o);
    if (rs.reps.size() != count) throw ConfigError("truncated row-set file " + path);
    rs.rowset_vec.resize(count);
    if (vec_path.empty()) {
        for (std::size_t i = 0; i < count; ++i) rs.rowset_vec[i] = {rs.reps[i]};
        return rs;
    }
    std::ifstream v(vec_path);
    if (!v) throw MissingInput("missing rowset_vec file: " + vec_path);
    std::string line;
    std::getline(v, line);
    while (std::getline(v, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        const std::size_t id = std::stoull(line.substr(0, comma));
        if (id >= count) throw ConfigError("rowset_vec RowID out of range");
        rs.rowset_vec[id].push_back(std::stoull(line.substr(comma + 1)));
    }
    return rs;
}

}  // namespace gpuhammer

#include "qloss/device_table.hpp"

#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <tuple>

namespace qloss::data {

namespace {

constexpr const char* kOrigin = "data-io";
constexpr const char* kHeader =
    "device_id,geometry,omega_q_ghz,omega_c_ghz,g_mhz,t1_us,t1_std_us,t_purcell_ms,q_1e6,q_std_1e6,p_sm_1e-4,p_j_1e-4";
constexpr std::size_t kColumns = 12;

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const char* field, std::size_t line) {
    const std::string s = trim(cell);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ParseError(kOrigin, std::string("row ") + std::to_string(line) + ": cannot parse " + field + " '" + s + "'",
                         line);
    }
}

std::optional<double> parse_optional(const std::string& cell, const char* field, std::size_t line) {
    if (trim(cell).empty()) return std::nullopt;
    return parse_number(cell, field, line);
}

[[noreturn]] void reject(const DeviceRecord& r, const std::string& field, const std::string& why) {
    throw ValidationError(kOrigin, r.device_id + ": " + field + " " + why, field);
}

// Table values carry at most a handful of digits; 12 significant digits
// reproduces the original decimal text exactly on re-read.
std::string cell(double v) { return fmt_sig(v, 12); }

}  // namespace

std::string to_string(Geometry g) {
    switch (g) {
        case Geometry::Interdigital2D: return "interdigital_2d";
        case Geometry::Dumbbell2D: return "dumbbell_2d";
        case Geometry::Dumbbell3D: return "dumbbell_3d";
    }
    return "?";
}

Geometry geometry_from_string(const std::string& s) {
    if (s == "interdigital_2d") return Geometry::Interdigital2D;
    if (s == "dumbbell_2d") return Geometry::Dumbbell2D;
    if (s == "dumbbell_3d") return Geometry::Dumbbell3D;
    throw InvalidInput(kOrigin, "unknown geometry '" + s + "'");
}

void DeviceRecord::validate() const {
    if (device_id.empty()) reject(*this, "device_id", "is empty");
    if (!(omega_q_ghz > 0.0)) reject(*this, "omega_q_ghz", "must be > 0");
    if (!(omega_c_ghz > 0.0)) reject(*this, "omega_c_ghz", "must be > 0");
    if (!(g_mhz > 0.0)) reject(*this, "g_mhz", "must be > 0");
    if (!(omega_c_ghz > omega_q_ghz)) reject(*this, "omega_c_ghz", "must exceed omega_q_ghz");
    if (!(t1_mean_us > 0.0)) reject(*this, "t1_us", "must be > 0");
    if (t1_std_us && !(*t1_std_us >= 0.0)) reject(*this, "t1_std_us", "must be >= 0");
    if (!(t_purcell_ms > 0.0)) reject(*this, "t_purcell_ms", "must be > 0");
    if (!(t_purcell_ms * 1000.0 > t1_mean_us)) reject(*this, "t_purcell_ms", "must exceed T1");
    if (!(q_mean > 0.0)) reject(*this, "q_1e6", "must be > 0");
    if (q_std && !(*q_std >= 0.0)) reject(*this, "q_std_1e6", "must be >= 0");
    if (!(p_sm > 0.0)) reject(*this, "p_sm_1e-4", "must be > 0");
    if (!(p_j > 0.0)) reject(*this, "p_j_1e-4", "must be > 0");
}

std::vector<DeviceRecord> read_device_table(std::istream& in) {
    std::vector<DeviceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kHeader) throw ParseError(kOrigin, "device table header does not match the schema", lineno);
            header = true;
            continue;
        }
        const auto c = split_csv(line);
        if (c.size() != kColumns) {
            throw ParseError(kOrigin,
                             "row " + std::to_string(lineno) + ": expected " + std::to_string(kColumns) + " columns, got " +
                                 std::to_string(c.size()),
                             lineno);
        }
        DeviceRecord r;
        r.device_id = trim(c[0]);
        try {
            r.geometry = geometry_from_string(trim(c[1]));
        } catch (const InvalidInput& e) {
            throw ParseError(kOrigin, "row " + std::to_string(lineno) + ": " + e.what(), lineno);
        }
        r.omega_q_ghz = parse_number(c[2], "omega_q_ghz", lineno);
        r.omega_c_ghz = parse_number(c[3], "omega_c_ghz", lineno);
        r.g_mhz = parse_number(c[4], "g_mhz", lineno);
        r.t1_mean_us = parse_number(c[5], "t1_us", lineno);
        r.t1_std_us = parse_optional(c[6], "t1_std_us", lineno);
        r.t_purcell_ms = parse_number(c[7], "t_purcell_ms", lineno);
        r.q_mean = parse_number(c[8], "q_1e6", lineno) * 1e6;
        if (auto s = parse_optional(c[9], "q_std_1e6", lineno)) r.q_std = *s * 1e6;
        r.p_sm = parse_number(c[10], "p_sm_1e-4", lineno) * 1e-4;
        r.p_j = parse_number(c[11], "p_j_1e-4", lineno) * 1e-4;
        r.die_id = r.device_id.substr(0, r.device_id.find('-'));
        const double two_pi = 2.0 * std::numbers::pi;
        r.omega_q_rad = two_pi * r.omega_q_ghz * 1e9;
        r.omega_c_rad = two_pi * r.omega_c_ghz * 1e9;
        r.g_rad = two_pi * r.g_mhz * 1e6;
        r.validate();
        out.push_back(std::move(r));
    }
    if (!header) throw ParseError(kOrigin, "device table is empty", lineno);
    return out;
}

std::vector<DeviceRecord> load_device_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(kOrigin, "cannot open device table '" + path + "'");
    return read_device_table(in);
}

void write_device_table(std::ostream& out, const std::vector<DeviceRecord>& records) {
    out << kHeader << '\n';
    for (const DeviceRecord& r : records) {
        out << r.device_id << ',' << to_string(r.geometry) << ',' << cell(r.omega_q_ghz) << ',' << cell(r.omega_c_ghz)
            << ',' << cell(r.g_mhz) << ',' << cell(r.t1_mean_us) << ',' << (r.t1_std_us ? cell(*r.t1_std_us) : "")
            << ',' << cell(r.t_purcell_ms) << ',' << cell(r.q_mean / 1e6) << ','
            << (r.q_std ? cell(*r.q_std / 1e6) : "") << ',' << cell(r.p_sm / 1e-4) << ',' << cell(r.p_j / 1e-4)
            << '\n';
    }
}

std::string bundled_table_path() { return std::string(QLOSS_DATA_DIR) + "/devices.csv"; }

std::string to_string(Grouping g) { return g == Grouping::PerDieDesign ? "per-die" : "per-device"; }

Grouping grouping_from_string(const std::string& s) {
    if (s == "per-die" || s == "per_die_design") return Grouping::PerDieDesign;
    if (s == "per-device" || s == "per_device") return Grouping::PerDevice;
    throw InvalidInput(kOrigin, "unknown grouping '" + s + "' (expected per-die or per-device)");
}

std::vector<loss::LossDataPoint> group_for_fit(const std::vector<DeviceRecord>& records, Grouping mode) {
    if (records.empty()) throw ValidationError(kOrigin, "no device records to group", "records");

    std::vector<loss::LossDataPoint> out;
    if (mode == Grouping::PerDevice) {
        for (const DeviceRecord& r : records) out.push_back({r.p_sm, r.p_j, r.q_mean, r.q_std, r.device_id, 1});
        return out;
    }

    using Key = std::tuple<std::string, Geometry, double, double>;
    std::map<Key, std::vector<const DeviceRecord*>> groups;
    std::vector<Key> order;  // first-appearance order keeps output stable
    for (const DeviceRecord& r : records) {
        Key k{r.die_id, r.geometry, r.p_sm, r.p_j};
        auto [it, inserted] = groups.try_emplace(k);
        if (inserted) order.push_back(k);
        it->second.push_back(&r);
    }
    for (const Key& k : order) {
        const auto& members = groups.at(k);
        loss::LossDataPoint p;
        p.p_sm = std::get<2>(k);
        p.p_j = std::get<3>(k);
        p.n_devices = static_cast<int>(members.size());
        if (members.size() == 1) {
            p.q_mean = members.front()->q_mean;
            p.q_std = members.front()->q_std.value_or(0.0);
            p.group_id = members.front()->device_id;
        } else {
            double sum = 0.0;
            for (const auto* m : members) sum += m->q_mean;
            const double mean = sum / static_cast<double>(members.size());
            double ss = 0.0;
            for (const auto* m : members) ss += (m->q_mean - mean) * (m->q_mean - mean);
            p.q_mean = mean;
            p.q_std = std::sqrt(ss / static_cast<double>(members.size()));
            p.group_id = std::get<0>(k) + "-" + to_string(std::get<1>(k));
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace qloss::data

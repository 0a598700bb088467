#pragma once

// Device table ingestion. The on-disk CSV keeps the published units
// (cyclic GHz/MHz, Q in 1e6, participation ratios in 1e-4); records hold
// absolute values plus the derived angular frequencies.

#include "qloss/loss_model.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qloss::data {

enum class Geometry { Interdigital2D, Dumbbell2D, Dumbbell3D };

std::string to_string(Geometry g);
Geometry geometry_from_string(const std::string& s);

struct DeviceRecord {
    std::string device_id;
    Geometry geometry = Geometry::Interdigital2D;
    double omega_q_ghz = 0.0;  // cyclic
    double omega_c_ghz = 0.0;  // cyclic
    double g_mhz = 0.0;        // cyclic
    double t1_mean_us = 0.0;
    std::optional<double> t1_std_us;
    double t_purcell_ms = 0.0;
    double q_mean = 0.0;
    std::optional<double> q_std;
    double p_sm = 0.0;
    double p_j = 0.0;
    std::string die_id;

    // rad/s, derived once at load.
    double omega_q_rad = 0.0;
    double omega_c_rad = 0.0;
    double g_rad = 0.0;

    /// Throws ValidationError naming the offending field.
    void validate() const;

    bool operator==(const DeviceRecord&) const = default;
};

/// Parses the table CSV. Header must match the schema exactly.
std::vector<DeviceRecord> read_device_table(std::istream& in);
std::vector<DeviceRecord> load_device_table(const std::string& path);
void write_device_table(std::ostream& out, const std::vector<DeviceRecord>& records);

/// Path of the bundled published table.
std::string bundled_table_path();

enum class Grouping { PerDieDesign, PerDevice };
std::string to_string(Grouping g);
Grouping grouping_from_string(const std::string& s);  // "per-die" / "per-device"

/// Per-(die, geometry, P_SM, P_J) aggregation: single-device groups keep the
/// device's own Q statistics; larger groups use mean and population std of
/// the device Q values.
std::vector<loss::LossDataPoint> group_for_fit(const std::vector<DeviceRecord>& records, Grouping mode);

}  // namespace qloss::data

#pragma once

#include "qloss/device_table.hpp"
#include "qloss/loss_model.hpp"
#include "qloss/participation.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace qloss::pipeline {

inline constexpr int kReportSchemaVersion = 1;

struct SweepConfig {
    double width_min_um = 1.0;
    double width_max_um = 20.0;
    int points = 12;
    double t_sm_nm = 1.0;
    double eps_sm = em::kSapphireRelPermittivity;
    participation::CutoffRule cutoff;
    int n_fingers = 7;
    int discretization = 256;
    bool sensitivity = false;  // also emit P_SM at 0.05/0.1/0.2 um cutoffs

    /// Log-spaced widths from min to max, inclusive.
    std::vector<double> widths() const;
};

struct PipelineConfig {
    std::string dataset_path;  // empty: bundled table
    bool fit = true;
    std::vector<loss::Model> models{loss::Model::SmPlusQ0, loss::Model::SmPlusJ};
    loss::Weighting weighting = loss::Weighting::InverseVariance;
    data::Grouping grouping = data::Grouping::PerDieDesign;
    std::optional<SweepConfig> sweep;
    std::string output_dir = "qloss_out";

    void validate() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

struct PipelineResult {
    nlohmann::ordered_json report;  // empty for sweep-only runs
    std::vector<std::string> files_written;
    std::vector<loss::LossFitResult> fits;
    std::vector<participation::SweepPoint> sweep;
    bool partial = false;
    int exit_code = 0;
};

nlohmann::ordered_json fit_to_json(const loss::LossFitResult& fit, const std::vector<loss::LossDataPoint>& points);

/// Rounds every floating value to 9 significant digits, recursively.
void round_floats(nlohmann::ordered_json& j);

/// Load, group, fit, tabulate and write every requested artefact. Nothing is
/// written when input validation fails.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace qloss::pipeline

#include "qloss/pipeline.hpp"

#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace qloss::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr const char* kOrigin = "pipeline";

[[noreturn]] void invalid(const std::string& what) { throw InvalidInput(kOrigin, what); }

struct PendingFile {
    std::string name;
    std::string content;
};

nlohmann::ordered_json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

std::vector<double> SweepConfig::widths() const {
    std::vector<double> w;
    if (points == 1) return {width_min_um};
    for (int i = 0; i < points; ++i) {
        const double f = i / static_cast<double>(points - 1);
        w.push_back(round_sig9(width_min_um * std::pow(width_max_um / width_min_um, f)));
    }
    w.back() = width_max_um;
    w.front() = width_min_um;
    return w;
}

void PipelineConfig::validate() const {
    if (!dataset_path.empty() && !fs::exists(dataset_path)) invalid("dataset '" + dataset_path + "' does not exist");
    if (!fit && !sweep) invalid("configuration requests neither fits nor a sweep");
    if (fit && models.empty()) invalid("no fit models selected");
    if (output_dir.empty()) invalid("output_dir is empty");
    if (sweep) {
        const SweepConfig& s = *sweep;
        if (!(s.width_min_um > 0.0 && s.width_max_um >= s.width_min_um)) invalid("sweep width range is invalid");
        if (s.points < 1) invalid("sweep needs at least one point");
        if (s.points == 1 && s.width_max_um != s.width_min_um) invalid("single-point sweep needs min == max");
        if (!(s.cutoff.value >= 0.0)) invalid("sweep cutoff must be >= 0");
    }
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.dataset_path = j.value("dataset", std::string());
        c.fit = j.value("fit", true);
        if (j.contains("models")) {
            if (!j.at("models").is_array()) invalid("config 'models' must be an array");
            c.models.clear();
            for (const auto& m : j.at("models")) c.models.push_back(loss::model_from_string(m.get<std::string>()));
        }
        c.weighting = loss::weighting_from_string(j.value("weighting", std::string("invvar")));
        c.grouping = data::grouping_from_string(j.value("grouping", std::string("per-die")));
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("sweep") && !j.at("sweep").is_null()) {
            const auto& s = j.at("sweep");
            SweepConfig sc;
            sc.width_min_um = s.value("width_min_um", sc.width_min_um);
            sc.width_max_um = s.value("width_max_um", sc.width_max_um);
            sc.points = s.value("points", sc.points);
            sc.t_sm_nm = s.value("t_sm_nm", sc.t_sm_nm);
            sc.eps_sm = s.value("eps_sm", sc.eps_sm);
            sc.n_fingers = s.value("n_fingers", sc.n_fingers);
            sc.discretization = s.value("discretization", sc.discretization);
            sc.sensitivity = s.value("sensitivity", sc.sensitivity);
            if (s.contains("cutoff_um") && !s.at("cutoff_um").is_null()) {
                sc.cutoff = participation::CutoffRule::absolute(s.at("cutoff_um").get<double>());
            } else if (s.contains("cutoff_frac")) {
                sc.cutoff = participation::CutoffRule::proportional(s.at("cutoff_frac").get<double>());
            }
            c.sweep = sc;
        }
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("config JSON: ") + e.what());
    }
    return c;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset_path.empty() ? std::string("<bundled>") : dataset_path;
    j["fit"] = fit;
    j["models"] = nlohmann::ordered_json::array();
    for (auto m : models) j["models"].push_back(loss::to_string(m));
    j["weighting"] = loss::to_string(weighting);
    j["grouping"] = data::to_string(grouping);
    if (sweep) {
        const SweepConfig& s = *sweep;
        nlohmann::ordered_json sj;
        sj["width_min_um"] = s.width_min_um;
        sj["width_max_um"] = s.width_max_um;
        sj["points"] = s.points;
        sj["t_sm_nm"] = s.t_sm_nm;
        sj["eps_sm"] = s.eps_sm;
        if (s.cutoff.kind == participation::CutoffRule::Kind::Absolute) {
            sj["cutoff_um"] = s.cutoff.value;
        } else {
            sj["cutoff_frac"] = s.cutoff.value;
        }
        sj["n_fingers"] = s.n_fingers;
        sj["discretization"] = s.discretization;
        sj["sensitivity"] = s.sensitivity;
        j["sweep"] = sj;
    } else {
        j["sweep"] = nullptr;
    }
    return j;
}

void round_floats(nlohmann::ordered_json& j) {
    if (j.is_number_float()) {
        j = round_sig9(j.get<double>());
    } else if (j.is_structured()) {
        for (auto& child : j) round_floats(child);
    }
}

nlohmann::ordered_json fit_to_json(const loss::LossFitResult& fit, const std::vector<loss::LossDataPoint>& points) {
    nlohmann::ordered_json j;
    j["model"] = loss::to_string(fit.model);
    j["weighting"] = loss::to_string(fit.weighting);
    nlohmann::ordered_json params;
    params["tan_d_sm"] = fit.tan_d_sm;
    if (fit.tan_d_j) params["tan_d_j"] = *fit.tan_d_j;
    if (fit.inv_q0) {
        params["inv_q0"] = *fit.inv_q0;
        params["q0"] = number_or_null(*fit.q0);
    }
    j["parameters"] = params;
    nlohmann::ordered_json se, rel, cl;
    for (std::size_t k = 0; k < fit.parameter_names.size(); ++k) {
        se[fit.parameter_names[k]] = fit.std_errors(static_cast<Eigen::Index>(k));
        rel[fit.parameter_names[k]] = number_or_null(fit.relative_stderr(k));
        cl[fit.parameter_names[k]] = static_cast<bool>(fit.clamped[k]);
    }
    j["stderr"] = se;
    j["relative_stderr"] = rel;
    j["clamped"] = cl;
    j["covariance_order"] = fit.parameter_names;
    nlohmann::ordered_json cov = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) row.push_back(fit.covariance(r, c));
        cov.push_back(row);
    }
    j["covariance"] = cov;
    j["covariance_scaled_by_reduced_chi2"] = true;
    j["reduced_chi2"] = fit.reduced_chi2;
    j["condition_number"] = fit.condition_number;

    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
        nlohmann::ordered_json p;
        p["group"] = points[i].group_id;
        p["p_sm"] = points[i].p_sm;
        p["p_j"] = points[i].p_j;
        p["q_measured"] = points[i].q_mean;
        p["q_model"] = 1.0 / fit.fitted[i];
        p["inv_q_residual"] = fit.residuals[i];
        p["weight"] = fit.weights[i];
        if (fit.model == loss::Model::SmPlusJ && fit.tan_d_sm > 0.0) {
            p["normalized_pr"] = loss::normalized_pr(points[i].p_sm, points[i].p_j, fit.tan_d_sm, *fit.tan_d_j);
            p["junction_fraction"] = loss::junction_fraction(points[i].p_sm, points[i].p_j, fit.tan_d_sm, *fit.tan_d_j);
        }
        pts.push_back(p);
    }
    j["points"] = pts;
    return j;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    config.validate();
    PipelineResult result;
    std::vector<PendingFile> files;

    nlohmann::ordered_json report;
    report["schema_version"] = kReportSchemaVersion;
    report["config"] = config.to_json();
    nlohmann::ordered_json errors = nlohmann::ordered_json::array();

    if (config.fit) {
        const std::string path = config.dataset_path.empty() ? data::bundled_table_path() : config.dataset_path;
        const auto records = data::load_device_table(path);
        const auto points = data::group_for_fit(records, config.grouping);  // throws on empty input

        report["dataset"] = {{"records", records.size()}, {"groups", points.size()}};
        nlohmann::ordered_json fits = nlohmann::ordered_json::array();
        for (loss::Model m : config.models) {
            try {
                loss::LossFitResult f = loss::fit(m, points, config.weighting);
                fits.push_back(fit_to_json(f, points));
                result.fits.push_back(std::move(f));
            } catch (const DegenerateFit& e) {
                errors.push_back({{"origin", e.origin()}, {"model", loss::to_string(m)}, {"message", e.what()},
                                  {"condition_number", number_or_null(e.condition_number())}});
                result.partial = true;
                result.exit_code = 2;
            }
        }
        report["fits"] = fits;

        const auto find = [&](loss::Model m) -> const loss::LossFitResult* {
            for (const auto& f : result.fits)
                if (f.model == m) return &f;
            return nullptr;
        };
        const loss::LossFitResult* q0fit = find(loss::Model::SmPlusQ0);
        const loss::LossFitResult* jfit = find(loss::Model::SmPlusJ);
        const loss::LossFitResult* afit = q0fit ? q0fit : (result.fits.empty() ? nullptr : &result.fits.front());
        if (afit) {
            std::ostringstream s;
            loss::write_q_vs_psm_csv(s, points, *afit);
            files.push_back({"q_vs_psm.csv", s.str()});
        }
        if (jfit) {
            std::ostringstream s;
            loss::write_q_vs_normalized_pr_csv(s, points, *jfit);
            files.push_back({"q_vs_normalized_pr.csv", s.str()});
            std::ostringstream g;
            loss::write_model_surface_csv(g, *jfit, 0.2e-4, 50e-4, 0.1e-4, 1.0e-4);
            files.push_back({"model_surface.csv", g.str()});

            nlohmann::ordered_json jf = nlohmann::ordered_json::array();
            for (const auto& r : records) {
                jf.push_back({{"device_id", r.device_id},
                              {"junction_fraction", loss::junction_fraction(r.p_sm, r.p_j, jfit->tan_d_sm, *jfit->tan_d_j)}});
            }
            report["junction_fraction_by_device"] = jf;
        }
    }

    if (config.sweep) {
        const SweepConfig& s = *config.sweep;
        participation::InterfaceSpec spec = participation::InterfaceSpec::defaults(participation::Region::SM);
        spec.thickness_nm = s.t_sm_nm;
        spec.eps_rel = s.eps_sm;
        result.sweep = participation::psm_width_sweep(s.widths(), spec, s.n_fingers, {s.cutoff, s.discretization});
        std::ostringstream out;
        participation::write_sweep_csv(out, result.sweep);
        files.push_back({"psm_sweep.csv", out.str()});
        for (const auto& p : result.sweep) {
            if (!p.ok) {
                errors.push_back({{"origin", "participation"}, {"width_um", p.width_um}, {"message", p.error}});
                result.partial = true;
            }
        }
        if (s.sensitivity) {
            std::vector<participation::CutoffSensitivity> rows;
            for (double w : {s.width_min_um, s.width_max_um})
                rows.push_back(participation::cutoff_sensitivity(w, spec, s.n_fingers, {0.05, 0.1, 0.2}, s.discretization));
            std::ostringstream sens;
            participation::write_sensitivity_csv(sens, rows);
            files.push_back({"cutoff_sensitivity.csv", sens.str()});
        }
    }

    if (config.fit) {
        nlohmann::ordered_json manifest;
        manifest["partial"] = result.partial;
        manifest["errors"] = errors;
        nlohmann::ordered_json names = nlohmann::ordered_json::array();
        for (const auto& f : files) names.push_back(f.name);
        names.push_back("report.json");
        manifest["files"] = names;
        report["manifest"] = manifest;
        round_floats(report);
        files.push_back({"report.json", report.dump(2) + "\n"});
        result.report = report;
    }

    fs::create_directories(config.output_dir);
    for (const auto& f : files) {
        const fs::path p = fs::path(config.output_dir) / f.name;
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error(kOrigin, "cannot write '" + p.string() + "'");
        out << f.content;
        result.files_written.push_back(p.string());
    }
    return result;
}

}  // namespace qloss::pipeline

// qloss: participation-ratio sweeps, loss-tangent fits and T1 analysis.

#include "qloss/device_table.hpp"
#include "qloss/em_solver.hpp"
#include "qloss/errors.hpp"
#include "qloss/loss_model.hpp"
#include "qloss/numfmt.hpp"
#include "qloss/participation.hpp"
#include "qloss/pipeline.hpp"
#include "qloss/qubit_analysis.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw qloss::InvalidInput("cli", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw qloss::InvalidInput("cli", "cannot write '" + path + "'");
    out << content;
}

std::string dump(ordered_json j) {
    qloss::pipeline::round_floats(j);
    return j.dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qloss - interface participation ratios and dielectric loss fits for transmon qubits"};
    app.require_subcommand(1);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "P_SM versus interdigital gap/finger width");
    qloss::pipeline::SweepConfig sc;
    double cutoff_um = -1.0;
    double cutoff_frac = 1e-3;
    std::string sweep_out, sens_out;
    sweep->add_option("--width-min", sc.width_min_um, "smallest gap/finger width, um")->capture_default_str();
    sweep->add_option("--width-max", sc.width_max_um, "largest gap/finger width, um")->capture_default_str();
    sweep->add_option("--points", sc.points, "number of log-spaced widths")->capture_default_str();
    sweep->add_option("--t-sm-nm", sc.t_sm_nm, "SM layer thickness, nm")->capture_default_str();
    sweep->add_option("--eps-sm", sc.eps_sm, "SM layer relative permittivity")->capture_default_str();
    auto* cut_abs = sweep->add_option("--cutoff-um", cutoff_um, "absolute edge cutoff, um");
    auto* cut_rel = sweep->add_option("--cutoff-frac", cutoff_frac, "edge cutoff as a fraction of width")
                        ->capture_default_str();
    cut_abs->excludes(cut_rel);
    sweep->add_option("--fingers", sc.n_fingers, "number of fingers (odd, >= 5)")->capture_default_str();
    sweep->add_option("--discretization", sc.discretization, "elements per strip")->capture_default_str();
    sweep->add_option("-o,--out", sweep_out, "sweep CSV (default stdout)");
    sweep->add_option("--sensitivity-out", sens_out, "cutoff-sensitivity CSV (default: next to --out, else stderr)");

    // solve
    auto* solve = app.add_subcommand("solve", "solve one cross-section from a geometry JSON");
    std::string geom_path, fields_out;
    double refine_tol = 0.0;
    solve->add_option("--geometry", geom_path, "geometry JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("--fields", fields_out, "field CSV (x_um, sigma, e_perp_sub, e_perp_vac, e_par)");
    solve->add_option("--refine", refine_tol, "refine until energy changes < tol");

    // fit-loss
    auto* fitl = app.add_subcommand("fit-loss", "fit loss tangents to a device table");
    std::string table_path, model_name = "sm+j", weights_name = "invvar", group_name = "per-die", fit_out;
    fitl->add_option("--input", table_path, "device table CSV (default: bundled table)");
    fitl->add_option("--model", model_name, "sm+q0 | sm+j | sm")->capture_default_str();
    fitl->add_option("--weights", weights_name, "none | invvar")->capture_default_str();
    fitl->add_option("--group", group_name, "per-die | per-device")->capture_default_str();
    fitl->add_option("-o,--out", fit_out, "report JSON (default stdout)");

    // fit-t1
    auto* fitt = app.add_subcommand("fit-t1", "fit exponential decays and summarise T1");
    std::vector<std::string> traces;
    std::string loss_name = "ls", hist_out, t1_out;
    int bins = 12;
    bool use_median = false;
    fitt->add_option("--trace", traces, "decay trace CSV (delay_us,population); repeatable")
        ->required()
        ->check(CLI::ExistingFile);
    fitt->add_option("--loss", loss_name, "ls | soft-l1")->capture_default_str();
    fitt->add_option("--bins", bins, "histogram bins")->capture_default_str();
    fitt->add_flag("--median", use_median, "report the median instead of the mean");
    fitt->add_option("--histogram", hist_out, "histogram CSV (bin_left,count)");
    fitt->add_option("-o,--out", t1_out, "T1 report JSON (default stdout)");

    // purcell
    auto* purc = app.add_subcommand("purcell", "Purcell limit from dispersive readout parameters (cyclic MHz)");
    double g_mhz = 0.0, chi_mhz = 0.0, delta_mhz = 0.0, kappa_mhz = 0.0, t1_us = 0.0, wq_ghz = 0.0;
    auto* g_opt = purc->add_option("--g", g_mhz, "coupling g/2pi, MHz");
    auto* chi_opt = purc->add_option("--chi", chi_mhz, "dispersive shift chi/2pi, MHz");
    g_opt->excludes(chi_opt);
    purc->add_option("--delta", delta_mhz, "qubit-cavity detuning Delta/2pi, MHz")->required();
    purc->add_option("--kappa", kappa_mhz, "cavity linewidth kappa/2pi, MHz")->required();
    auto* t1_opt = purc->add_option("--t1-us", t1_us, "measured T1 to convert to Q, us");
    auto* wq_opt = purc->add_option("--omega-q-ghz", wq_ghz, "qubit frequency omega_q/2pi, GHz");
    t1_opt->needs(wq_opt);

    // report
    auto* rep = app.add_subcommand("report", "full pipeline from a JSON config");
    std::string config_path;
    rep->add_option("--config", config_path, "pipeline config JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sweep) {
            if (*cut_abs) {
                sc.cutoff = qloss::participation::CutoffRule::absolute(cutoff_um);
            } else {
                sc.cutoff = qloss::participation::CutoffRule::proportional(cutoff_frac);
            }
            auto spec = qloss::participation::InterfaceSpec::defaults(qloss::participation::Region::SM);
            spec.thickness_nm = sc.t_sm_nm;
            spec.eps_rel = sc.eps_sm;
            const auto pts = qloss::participation::psm_width_sweep(sc.widths(), spec, sc.n_fingers,
                                                                   {sc.cutoff, sc.discretization});
            std::ostringstream csv;
            qloss::participation::write_sweep_csv(csv, pts);
            emit(sweep_out, csv.str());

            std::vector<qloss::participation::CutoffSensitivity> rows;
            for (double w : {sc.width_min_um, sc.width_max_um}) {
                rows.push_back(qloss::participation::cutoff_sensitivity(w, spec, sc.n_fingers, {0.05, 0.1, 0.2},
                                                                        sc.discretization));
            }
            std::ostringstream sens;
            qloss::participation::write_sensitivity_csv(sens, rows);
            if (sens_out.empty() && !sweep_out.empty() && sweep_out != "-") {
                const fs::path p(sweep_out);
                sens_out = (p.parent_path() / (p.stem().string() + "_cutoff_sensitivity.csv")).string();
            }
            if (sens_out.empty()) {
                std::cerr << sens.str();
            } else {
                emit(sens_out, sens.str());
            }
            int failed = 0;
            for (const auto& p : pts) {
                if (!p.ok) {
                    std::cerr << "width " << p.width_um << " um failed: " << p.error << '\n';
                    ++failed;
                }
            }
            return failed ? 1 : 0;
        }

        if (*solve) {
            const auto geom = qloss::em::cross_section_from_json(read_file(geom_path));
            ordered_json j;
            qloss::em::FieldSolution sol;
            if (refine_tol > 0.0) {
                auto r = qloss::em::refine_until_converged(geom, refine_tol);
                j["refinement"] = {{"iterations", r.iterations},
                                   {"discretization", r.discretization},
                                   {"estimated_rel_error", r.estimated_rel_error},
                                   {"energies", r.energies}};
                sol = std::move(r.solution);
            } else {
                sol = qloss::em::solve_cross_section(geom);
            }
            j["schema_version"] = qloss::pipeline::kReportSchemaVersion;
            j["capacitance_per_len_F_per_m"] = sol.capacitance_per_len;
            j["energy_per_len_J_per_m"] = sol.energy_per_len;
            j["reference_energy_J_per_m"] = sol.reference_energy();
            j["strip_charge_C_per_m"] = sol.strip_charge;
            j["residual"] = sol.residual;
            using qloss::participation::InterfaceSpec;
            using qloss::participation::Region;
            const auto ps = qloss::participation::participation_set(
                sol, {InterfaceSpec::defaults(Region::SM), InterfaceSpec::defaults(Region::SA),
                      InterfaceSpec::defaults(Region::MA)});
            j["participation"] = {{"p_sm", *ps.p_sm}, {"p_sa", *ps.p_sa}, {"p_ma", *ps.p_ma},
                                  {"cutoff_um", ps.cutoff_used_um}};
            std::cout << dump(j);
            if (!fields_out.empty()) {
                std::ostringstream csv;
                sol.write_csv(csv);
                emit(fields_out, csv.str());
            }
            return 0;
        }

        if (*fitl) {
            const auto records = qloss::data::load_device_table(table_path.empty() ? qloss::data::bundled_table_path()
                                                                                   : table_path);
            const auto points = qloss::data::group_for_fit(records, qloss::data::grouping_from_string(group_name));
            const auto model = qloss::loss::model_from_string(model_name);
            const auto weighting = qloss::loss::weighting_from_string(weights_name);
            ordered_json j;
            j["schema_version"] = qloss::pipeline::kReportSchemaVersion;
            j["grouping"] = group_name;
            try {
                const auto fit = qloss::loss::fit(model, points, weighting);
                j["fit"] = qloss::pipeline::fit_to_json(fit, points);
            } catch (const qloss::DegenerateFit& e) {
                j["error"] = {{"origin", e.origin()}, {"message", e.what()}};
                emit(fit_out, dump(j));
                std::cerr << "degenerate fit: " << e.what() << '\n';
                return 2;
            }
            emit(fit_out, dump(j));
            return 0;
        }

        if (*fitt) {
            qloss::qubit::ExpFitOptions opt;
            if (loss_name == "soft-l1") {
                opt.loss = qloss::qubit::FitLoss::SoftL1;
            } else if (loss_name != "ls") {
                throw qloss::InvalidInput("cli", "unknown --loss '" + loss_name + "'");
            }
            std::vector<qloss::qubit::DecayTrace> tr;
            for (const auto& path : traces) {
                std::ifstream in(path);
                auto t = qloss::qubit::read_trace_csv(in);
                t.device_id = fs::path(path).stem().string();
                const std::string sidecar = path + ".json";
                if (fs::exists(sidecar)) {
                    const auto meta = nlohmann::json::parse(read_file(sidecar));
                    t.device_id = meta.value("device_id", t.device_id);
                    t.round = meta.value("round", 0);
                }
                tr.push_back(std::move(t));
            }
            const auto est = qloss::qubit::fit_exponential_batch(tr, opt);
            const auto stats = qloss::qubit::t1_statistics(
                est, bins, use_median ? qloss::qubit::CentralStat::Median : qloss::qubit::CentralStat::Mean);
            ordered_json j;
            j["schema_version"] = qloss::pipeline::kReportSchemaVersion;
            j["fits"] = ordered_json::array();
            for (std::size_t i = 0; i < est.size(); ++i) {
                j["fits"].push_back({{"trace", traces[i]},
                                     {"device_id", tr[i].device_id},
                                     {"round", tr[i].round},
                                     {"t1_us", est[i].t1_us},
                                     {"fit_err_us", est[i].fit_err_us},
                                     {"amplitude", est[i].amplitude},
                                     {"offset", est[i].offset}});
            }
            j["statistics"] = {{use_median ? "median_us" : "mean_us", stats.mean_us},
                               {"std_us", stats.std_us},
                               {"count", stats.count}};
            emit(t1_out, dump(j));
            if (!hist_out.empty()) {
                std::ostringstream h;
                qloss::qubit::write_histogram_csv(h, stats.histogram);
                emit(hist_out, h.str());
            }
            return 0;
        }

        if (*purc) {
            qloss::qubit::PurcellParams p;
            if (*g_opt) p.g = kTwoPi * g_mhz * 1e6;
            if (*chi_opt) p.chi = kTwoPi * chi_mhz * 1e6;
            p.delta = kTwoPi * delta_mhz * 1e6;
            p.kappa = kTwoPi * kappa_mhz * 1e6;
            const auto lim = qloss::qubit::purcell_limit(p);
            ordered_json j;
            j["schema_version"] = qloss::pipeline::kReportSchemaVersion;
            j["g_mhz"] = lim.g_used / kTwoPi / 1e6;
            j["unbounded"] = lim.unbounded;
            j["t_purcell_ms"] = lim.unbounded ? ordered_json(nullptr) : ordered_json(lim.t_purcell_s * 1e3);
            j["warnings"] = lim.warnings;
            if (*t1_opt) {
                const double tp_ms = lim.unbounded ? std::numeric_limits<double>::infinity() : lim.t_purcell_s * 1e3;
                j["q"] = qloss::qubit::purcell_subtract_q(t1_us, tp_ms, wq_ghz);
            }
            for (const auto& w : lim.warnings) std::cerr << "warning: " << w << '\n';
            std::cout << dump(j);
            return 0;
        }

        if (*rep) {
            const auto cfg = qloss::pipeline::PipelineConfig::from_json(nlohmann::json::parse(read_file(config_path)));
            const auto res = qloss::pipeline::run_pipeline(cfg);
            for (const auto& f : res.files_written) std::cout << f << '\n';
            if (res.partial) std::cerr << "pipeline finished with partial outputs; see report manifest\n";
            return res.exit_code;
        }
    } catch (const qloss::Error& e) {
        std::cerr << "error [" << e.origin() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

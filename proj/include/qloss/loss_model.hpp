#pragma once

// Linear dielectric-loss model 1/Q = sum P_i tan(delta_i) and its
// least-squares fits on measured quality factors.

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qloss::loss {

struct LossDataPoint {
    double p_sm = 0.0;
    double p_j = 0.0;
    double q_mean = 0.0;
    std::optional<double> q_std;
    std::string group_id;
    int n_devices = 1;

    void validate() const;
};

enum class Model { SmOnly, SmPlusQ0, SmPlusJ };
enum class Weighting { None, InverseVariance };

std::string to_string(Model m);
std::string to_string(Weighting w);
Model model_from_string(const std::string& s);          // "sm", "sm+q0", "sm+j"
Weighting weighting_from_string(const std::string& s);  // "none", "invvar"

struct LossFitResult {
    Model model = Model::SmPlusJ;
    Weighting weighting = Weighting::InverseVariance;
    double tan_d_sm = 0.0;
    std::optional<double> tan_d_j;
    std::optional<double> q0;
    std::optional<double> inv_q0;

    std::vector<std::string> parameter_names;  // column order of covariance
    Eigen::VectorXd parameters;
    Eigen::VectorXd std_errors;
    Eigen::MatrixXd covariance;
    std::vector<bool> clamped;  // parameter held at 0 by the non-negativity constraint

    std::vector<double> observed;   // 1/q_mean per point
    std::vector<double> fitted;     // model 1/Q per point
    std::vector<double> residuals;  // observed - fitted
    std::vector<double> weights;
    double condition_number = 0.0;
    double reduced_chi2 = 0.0;

    double relative_stderr(std::size_t k) const;
};

double predict_inverse_q(double p_sm, double p_j, double tan_d_sm, double tan_d_j);

/// Share of the modelled 1/Q carried by the junction term.
double junction_fraction(double p_sm, double p_j, double tan_d_sm, double tan_d_j);

double normalized_pr(double p_sm, double p_j, double tan_d_sm, double tan_d_j);

LossFitResult fit_sm_only(const std::vector<LossDataPoint>& points, Weighting weighting);
LossFitResult fit_sm_plus_q0(const std::vector<LossDataPoint>& points, Weighting weighting);
LossFitResult fit_sm_plus_j(const std::vector<LossDataPoint>& points, Weighting weighting);
LossFitResult fit(Model model, const std::vector<LossDataPoint>& points, Weighting weighting);

/// Model 1/Q of a fit at arbitrary participations.
double model_inverse_q(const LossFitResult& fit, double p_sm, double p_j);

/// Q versus P_SM table: p_sm, p_j, q_measured, q_std, q_model.
void write_q_vs_psm_csv(std::ostream& out, const std::vector<LossDataPoint>& points, const LossFitResult& fit);
/// Q versus normalized PR (junction fit only).
void write_q_vs_normalized_pr_csv(std::ostream& out, const std::vector<LossDataPoint>& points,
                                  const LossFitResult& fit);
/// Log-spaced grid of model Q over (p_sm, p_j).
void write_model_surface_csv(std::ostream& out, const LossFitResult& fit, double p_sm_min, double p_sm_max,
                             double p_j_min, double p_j_max, int n_sm = 40, int n_j = 40);

}  // namespace qloss::loss

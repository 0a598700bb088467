#include "qloss/loss_model.hpp"

#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace qloss::loss {

namespace {

constexpr const char* kOrigin = "loss-model";
constexpr double kMaxCondition = 1e8;

[[noreturn]] void invalid(const std::string& what) { throw InvalidInput(kOrigin, what); }

std::vector<double> fit_weights(const std::vector<LossDataPoint>& points, Weighting weighting) {
    std::vector<double> w(points.size(), 1.0);
    if (weighting == Weighting::None) return w;

    // var(1/Q) = q_std^2 / q^4. Points without a usable std borrow the
    // median variance of the others.
    std::vector<double> var(points.size(), 0.0);
    std::vector<double> known;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (p.q_std && *p.q_std > 0.0) {
            var[i] = (*p.q_std * *p.q_std) / std::pow(p.q_mean, 4);
            known.push_back(var[i]);
        }
    }
    if (known.empty()) return w;
    std::sort(known.begin(), known.end());
    const std::size_t m = known.size();
    const double median = m % 2 ? known[m / 2] : 0.5 * (known[m / 2 - 1] + known[m / 2]);
    for (std::size_t i = 0; i < points.size(); ++i) w[i] = 1.0 / (var[i] > 0.0 ? var[i] : median);
    return w;
}

double column_scaled_condition(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd scaled = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double norm = x.col(c).norm();
        if (norm == 0.0) return std::numeric_limits<double>::infinity();
        scaled.col(c) /= norm;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
    const auto& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

struct SubsetSolution {
    Eigen::VectorXd beta;  // full length, zeros on clamped entries
    std::vector<bool> active;
    double rss = std::numeric_limits<double>::infinity();
};

// Exact non-negative least squares for a handful of columns: every active
// set is solved and the feasible one with the smallest weighted RSS wins.
SubsetSolution nonnegative_lstsq(const Eigen::MatrixXd& xw, const Eigen::VectorXd& yw) {
    const auto p = static_cast<int>(xw.cols());
    SubsetSolution best;
    for (int mask = (1 << p) - 1; mask >= 0; --mask) {
        std::vector<Eigen::Index> cols;
        for (int c = 0; c < p; ++c)
            if (mask & (1 << c)) cols.push_back(c);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        if (!cols.empty()) {
            Eigen::MatrixXd sub(xw.rows(), static_cast<Eigen::Index>(cols.size()));
            for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = xw.col(cols[k]);
            const Eigen::VectorXd b = sub.colPivHouseholderQr().solve(yw);
            if ((b.array() < 0.0).any()) continue;
            for (std::size_t k = 0; k < cols.size(); ++k) beta(cols[k]) = b(static_cast<Eigen::Index>(k));
        }
        const double rss = (yw - xw * beta).squaredNorm();
        // The full set is tried first; a smaller set only replaces it when
        // strictly better, so ties keep the unconstrained optimum.
        if (rss < best.rss * (1.0 - 1e-12) || best.rss == std::numeric_limits<double>::infinity()) {
            best.beta = beta;
            best.rss = rss;
            best.active.assign(static_cast<std::size_t>(p), false);
            for (Eigen::Index c : cols) best.active[static_cast<std::size_t>(c)] = true;
            if (mask == (1 << p) - 1) return best;  // unconstrained optimum is feasible
        }
    }
    return best;
}

LossFitResult fit_linear(Model model, const std::vector<LossDataPoint>& points, Weighting weighting) {
    const Eigen::Index p = model == Model::SmOnly ? 1 : 2;
    if (points.size() < static_cast<std::size_t>(p)) invalid("not enough points for the selected model");
    for (const auto& pt : points) pt.validate();

    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& pt = points[static_cast<std::size_t>(i)];
        x(i, 0) = pt.p_sm;
        if (model == Model::SmPlusQ0) x(i, 1) = 1.0;
        if (model == Model::SmPlusJ) x(i, 1) = pt.p_j;
        y(i) = 1.0 / pt.q_mean;
    }

    if (model != Model::SmOnly) {
        const auto [mn, mx] = std::minmax_element(points.begin(), points.end(),
                                                  [](const auto& a, const auto& b) { return a.p_sm < b.p_sm; });
        if (model == Model::SmPlusQ0 && !(mx->p_sm > mn->p_sm))
            throw DegenerateFit(kOrigin, "all points share the same P_SM; slope and offset are not separable",
                                std::numeric_limits<double>::infinity());
    }

    const std::vector<double> w = fit_weights(points, weighting);
    Eigen::VectorXd sw(n);
    for (Eigen::Index i = 0; i < n; ++i) sw(i) = std::sqrt(w[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    const Eigen::VectorXd yw = sw.asDiagonal() * y;

    const double cond = column_scaled_condition(xw);
    if (!(cond < kMaxCondition)) {
        std::ostringstream msg;
        msg << "design columns are collinear (condition number " << cond << ")";
        throw DegenerateFit(kOrigin, msg.str(), cond);
    }

    const SubsetSolution sol = nonnegative_lstsq(xw, yw);

    LossFitResult r;
    r.model = model;
    r.weighting = weighting;
    r.parameters = sol.beta;
    r.condition_number = cond;
    r.weights = w;
    r.clamped.resize(static_cast<std::size_t>(p));
    for (Eigen::Index c = 0; c < p; ++c) r.clamped[static_cast<std::size_t>(c)] = !sol.active[static_cast<std::size_t>(c)];

    std::vector<Eigen::Index> free_cols;
    for (Eigen::Index c = 0; c < p; ++c)
        if (sol.active[static_cast<std::size_t>(c)]) free_cols.push_back(c);
    const auto dof = n - static_cast<Eigen::Index>(free_cols.size());
    r.reduced_chi2 = dof > 0 ? sol.rss / static_cast<double>(dof) : 0.0;

    r.covariance = Eigen::MatrixXd::Zero(p, p);
    if (!free_cols.empty()) {
        Eigen::MatrixXd sub(n, static_cast<Eigen::Index>(free_cols.size()));
        for (std::size_t k = 0; k < free_cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = xw.col(free_cols[k]);
        const Eigen::MatrixXd info = sub.transpose() * sub;
        const Eigen::MatrixXd cov = info.inverse() * r.reduced_chi2;
        for (std::size_t a = 0; a < free_cols.size(); ++a)
            for (std::size_t b = 0; b < free_cols.size(); ++b)
                r.covariance(free_cols[a], free_cols[b]) = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
    r.std_errors = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

    r.tan_d_sm = sol.beta(0);
    switch (model) {
        case Model::SmOnly: r.parameter_names = {"tan_d_sm"}; break;
        case Model::SmPlusQ0:
            r.parameter_names = {"tan_d_sm", "inv_q0"};
            r.inv_q0 = sol.beta(1);
            r.q0 = sol.beta(1) > 0.0 ? 1.0 / sol.beta(1) : std::numeric_limits<double>::infinity();
            break;
        case Model::SmPlusJ:
            r.parameter_names = {"tan_d_sm", "tan_d_j"};
            r.tan_d_j = sol.beta(1);
            break;
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& pt = points[static_cast<std::size_t>(i)];
        const double f = model_inverse_q(r, pt.p_sm, pt.p_j);
        r.observed.push_back(y(i));
        r.fitted.push_back(f);
        r.residuals.push_back(y(i) - f);
    }
    return r;
}

}  // namespace

void LossDataPoint::validate() const {
    if (!(p_sm >= 0.0) || !(p_j >= 0.0)) invalid("participation ratios must be >= 0 (" + group_id + ")");
    if (!(q_mean > 0.0) || !std::isfinite(q_mean)) invalid("q_mean must be positive (" + group_id + ")");
    if (q_std && !(*q_std >= 0.0)) invalid("q_std must be >= 0 (" + group_id + ")");
}

std::string to_string(Model m) {
    switch (m) {
        case Model::SmOnly: return "sm";
        case Model::SmPlusQ0: return "sm+q0";
        case Model::SmPlusJ: return "sm+j";
    }
    return "?";
}

std::string to_string(Weighting w) { return w == Weighting::None ? "none" : "invvar"; }

Model model_from_string(const std::string& s) {
    if (s == "sm") return Model::SmOnly;
    if (s == "sm+q0") return Model::SmPlusQ0;
    if (s == "sm+j") return Model::SmPlusJ;
    invalid("unknown model '" + s + "' (expected sm, sm+q0 or sm+j)");
}

Weighting weighting_from_string(const std::string& s) {
    if (s == "none") return Weighting::None;
    if (s == "invvar") return Weighting::InverseVariance;
    invalid("unknown weighting '" + s + "' (expected none or invvar)");
}

double LossFitResult::relative_stderr(std::size_t k) const {
    const auto i = static_cast<Eigen::Index>(k);
    return parameters(i) != 0.0 ? std_errors(i) / std::abs(parameters(i)) : std::numeric_limits<double>::infinity();
}

double predict_inverse_q(double p_sm, double p_j, double tan_d_sm, double tan_d_j) {
    if (!(p_sm >= 0.0 && p_j >= 0.0 && tan_d_sm >= 0.0 && tan_d_j >= 0.0))
        invalid("predict_inverse_q inputs must be non-negative");
    return p_sm * tan_d_sm + p_j * tan_d_j;
}

double junction_fraction(double p_sm, double p_j, double tan_d_sm, double tan_d_j) {
    const double total = predict_inverse_q(p_sm, p_j, tan_d_sm, tan_d_j);
    if (!(total > 0.0)) invalid("modelled loss is zero");
    return p_j * tan_d_j / total;
}

double normalized_pr(double p_sm, double p_j, double tan_d_sm, double tan_d_j) {
    if (!(tan_d_sm > 0.0)) invalid("normalized PR needs tan_d_sm > 0");
    return p_sm + (tan_d_j / tan_d_sm) * p_j;
}

LossFitResult fit_sm_only(const std::vector<LossDataPoint>& points, Weighting weighting) {
    return fit_linear(Model::SmOnly, points, weighting);
}

LossFitResult fit_sm_plus_q0(const std::vector<LossDataPoint>& points, Weighting weighting) {
    return fit_linear(Model::SmPlusQ0, points, weighting);
}

LossFitResult fit_sm_plus_j(const std::vector<LossDataPoint>& points, Weighting weighting) {
    return fit_linear(Model::SmPlusJ, points, weighting);
}

LossFitResult fit(Model model, const std::vector<LossDataPoint>& points, Weighting weighting) {
    return fit_linear(model, points, weighting);
}

double model_inverse_q(const LossFitResult& fit, double p_sm, double p_j) {
    switch (fit.model) {
        case Model::SmOnly: return predict_inverse_q(p_sm, 0.0, fit.tan_d_sm, 0.0);
        case Model::SmPlusQ0: return predict_inverse_q(p_sm, 0.0, fit.tan_d_sm, 0.0) + fit.inv_q0.value_or(0.0);
        case Model::SmPlusJ: return predict_inverse_q(p_sm, p_j, fit.tan_d_sm, fit.tan_d_j.value_or(0.0));
    }
    return 0.0;
}

void write_q_vs_psm_csv(std::ostream& out, const std::vector<LossDataPoint>& points, const LossFitResult& fit) {
    out << "group,p_sm,p_j,q_measured,q_std,q_model\n";
    for (const auto& pt : points) {
        out << pt.group_id << ',' << fmt9(pt.p_sm) << ',' << fmt9(pt.p_j) << ',' << fmt9(pt.q_mean) << ','
            << (pt.q_std ? fmt9(*pt.q_std) : std::string()) << ',' << fmt9(1.0 / model_inverse_q(fit, pt.p_sm, pt.p_j))
            << '\n';
    }
}

void write_q_vs_normalized_pr_csv(std::ostream& out, const std::vector<LossDataPoint>& points,
                                  const LossFitResult& fit) {
    if (fit.model != Model::SmPlusJ) invalid("normalized PR plot needs the sm+j fit");
    out << "group,normalized_pr,q_measured,q_std,q_model\n";
    for (const auto& pt : points) {
        const double npr = normalized_pr(pt.p_sm, pt.p_j, fit.tan_d_sm, *fit.tan_d_j);
        out << pt.group_id << ',' << fmt9(npr) << ',' << fmt9(pt.q_mean) << ','
            << (pt.q_std ? fmt9(*pt.q_std) : std::string()) << ',' << fmt9(1.0 / (fit.tan_d_sm * npr)) << '\n';
    }
}

void write_model_surface_csv(std::ostream& out, const LossFitResult& fit, double p_sm_min, double p_sm_max,
                             double p_j_min, double p_j_max, int n_sm, int n_j) {
    if (!(p_sm_min > 0.0 && p_sm_max > p_sm_min && p_j_min > 0.0 && p_j_max > p_j_min) || n_sm < 2 || n_j < 2)
        invalid("model surface grid bounds are invalid");
    out << "p_sm,p_j,q_model\n";
    for (int i = 0; i < n_sm; ++i) {
        const double ps = p_sm_min * std::pow(p_sm_max / p_sm_min, i / static_cast<double>(n_sm - 1));
        for (int j = 0; j < n_j; ++j) {
            const double pj = p_j_min * std::pow(p_j_max / p_j_min, j / static_cast<double>(n_j - 1));
            out << fmt9(ps) << ',' << fmt9(pj) << ',' << fmt9(1.0 / model_inverse_q(fit, ps, pj)) << '\n';
        }
    }
}

}  // namespace qloss::loss

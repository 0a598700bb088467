#include "qloss/device_table.hpp"
#include "qloss/errors.hpp"
#include "qloss/loss_model.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace qloss;
using namespace qloss::loss;

namespace {

LossDataPoint point(double p_sm, double p_j, double q, std::optional<double> q_std = std::nullopt) {
    return {p_sm, p_j, q, q_std, "p", 1};
}

std::vector<LossDataPoint> synthetic_j(double tsm, double tj, double noise, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::vector<LossDataPoint> pts;
    for (int i = 0; i < 12; ++i) {
        const double psm = (0.3 + 0.4 * i) * 1e-4;
        const double pj = (0.1 + 0.07 * ((i * 5) % 12)) * 1e-4;
        const double invq = psm * tsm + pj * tj;
        pts.push_back(point(psm, pj, 1.0 / (invq * (1.0 + noise * n01(rng)))));
    }
    return pts;
}

std::vector<LossDataPoint> bundled_grouped() {
    return data::group_for_fit(data::load_device_table(data::bundled_table_path()), data::Grouping::PerDieDesign);
}

}  // namespace

TEST_CASE("predict_inverse_q examples") {
    CHECK(predict_inverse_q(0.82e-4, 0.34e-4, 8.9e-4, 3.5e-3) == doctest::Approx(1.92e-7).epsilon(0.005));
    CHECK(1.0 / predict_inverse_q(0.82e-4, 0.34e-4, 8.9e-4, 3.5e-3) == doctest::Approx(5.2e6).epsilon(0.01));
    CHECK(predict_inverse_q(0.0, 0.0, 8.9e-4, 3.5e-3) == 0.0);
    CHECK_THROWS_AS(predict_inverse_q(-1e-4, 0.0, 8.9e-4, 3.5e-3), InvalidInput);
    CHECK_THROWS_AS(predict_inverse_q(1e-4, 0.0, 8.9e-4, -1.0), InvalidInput);
}

TEST_CASE("junction fraction and normalized PR for D7-1") {
    CHECK(junction_fraction(0.51e-4, 0.59e-4, 8.9e-4, 3.5e-3) == doctest::Approx(0.82).epsilon(0.005));
    CHECK(normalized_pr(0.51e-4, 0.59e-4, 8.9e-4, 3.5e-3) == doctest::Approx(2.83e-4).epsilon(0.002));
    CHECK(normalized_pr(0.51e-4, 0.0, 8.9e-4, 3.5e-3) == 0.51e-4);
    CHECK(normalized_pr(0.51e-4, 0.59e-4, 1e-3, 1e-3) == doctest::Approx(1.10e-4));
    CHECK_THROWS_AS(normalized_pr(0.51e-4, 0.59e-4, 0.0, 3.5e-3), InvalidInput);
}

TEST_CASE("two exact points recover the Q0 model") {
    const double tsm = 8e-4, q0 = 1e7;
    std::vector<LossDataPoint> pts;
    for (double psm : {0.5e-4, 2.5e-4}) pts.push_back(point(psm, 0.0, 1.0 / (psm * tsm + 1.0 / q0)));
    const auto f = fit_sm_plus_q0(pts, Weighting::None);
    CHECK(std::abs(f.tan_d_sm / tsm - 1.0) < 1e-12);
    CHECK(std::abs(*f.q0 / q0 - 1.0) < 1e-12);
}

TEST_CASE("exact synthetic data recover the junction model under any weighting") {
    const auto pts = synthetic_j(8.9e-4, 3.5e-3, 0.0, 1);
    for (Weighting w : {Weighting::None, Weighting::InverseVariance}) {
        const auto f = fit_sm_plus_j(pts, w);
        CHECK(f.tan_d_sm == doctest::Approx(8.9e-4).epsilon(1e-10));
        CHECK(*f.tan_d_j == doctest::Approx(3.5e-3).epsilon(1e-10));
    }
}

TEST_CASE("degenerate designs") {
    std::vector<LossDataPoint> same;
    for (double q : {3e6, 4e6, 5e6}) same.push_back(point(1e-4, 0.5e-4, q));
    CHECK_THROWS_AS(fit_sm_plus_q0(same, Weighting::None), DegenerateFit);

    std::vector<LossDataPoint> collinear;
    for (double psm : {0.5e-4, 1e-4, 2e-4, 3e-4}) collinear.push_back(point(psm, 2.0 * psm, 1.0 / (psm * 8e-3)));
    try {
        fit_sm_plus_j(collinear, Weighting::None);
        FAIL("expected DegenerateFit");
    } catch (const DegenerateFit& e) {
        CHECK(e.condition_number() > 1e8);
    }

    CHECK_THROWS_AS(fit_sm_plus_j({point(1e-4, 1e-4, 1e6)}, Weighting::None), InvalidInput);
}

TEST_CASE("unweighted residuals are orthogonal to the design columns") {
    const auto pts = synthetic_j(8.9e-4, 3.5e-3, 0.1, 7);
    const auto f = fit_sm_plus_j(pts, Weighting::None);
    REQUIRE_FALSE(f.clamped[0]);
    REQUIRE_FALSE(f.clamped[1]);
    double dot_sm = 0.0, dot_j = 0.0, n_sm = 0.0, n_j = 0.0, n_r = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        dot_sm += pts[i].p_sm * f.residuals[i];
        dot_j += pts[i].p_j * f.residuals[i];
        n_sm += pts[i].p_sm * pts[i].p_sm;
        n_j += pts[i].p_j * pts[i].p_j;
        n_r += f.observed[i] * f.observed[i];
    }
    CHECK(std::abs(dot_sm) < 1e-9 * std::sqrt(n_sm * n_r));
    CHECK(std::abs(dot_j) < 1e-9 * std::sqrt(n_j * n_r));

    const auto g = fit_sm_plus_q0(pts, Weighting::None);
    double dot_1 = 0.0;
    for (double r : g.residuals) dot_1 += r;
    CHECK(std::abs(dot_1) < 1e-9 * std::sqrt(static_cast<double>(pts.size()) * n_r));
}

TEST_CASE("fitted values are reproduced by predict_inverse_q") {
    const auto pts = synthetic_j(8.9e-4, 3.5e-3, 0.05, 3);
    const auto f = fit_sm_plus_j(pts, Weighting::InverseVariance);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(f.fitted[i] == predict_inverse_q(pts[i].p_sm, pts[i].p_j, f.tan_d_sm, *f.tan_d_j));
        CHECK(f.residuals[i] == f.observed[i] - f.fitted[i]);
    }
}

TEST_CASE("equal 1/Q variance makes inverse-variance match unweighted") {
    auto pts = synthetic_j(8.9e-4, 3.5e-3, 0.1, 11);
    // q_std proportional to q^2 gives every point the same var(1/Q)
    for (auto& p : pts) p.q_std = 1e-8 * p.q_mean * p.q_mean;
    for (Model m : {Model::SmPlusQ0, Model::SmPlusJ}) {
        const auto a = fit(m, pts, Weighting::None);
        const auto b = fit(m, pts, Weighting::InverseVariance);
        for (Eigen::Index k = 0; k < a.parameters.size(); ++k) {
            CHECK(std::abs(b.parameters(k) / a.parameters(k) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("non-negativity clamps the offending parameter") {
    // data that would need a negative junction tangent
    std::vector<LossDataPoint> pts;
    for (int i = 0; i < 6; ++i) {
        const double psm = (1.0 + i) * 1e-4;
        const double pj = (6.0 - i) * 0.2e-4;
        pts.push_back(point(psm, pj, 1.0 / (psm * 1e-3 - pj * 1e-4)));
    }
    const auto f = fit_sm_plus_j(pts, Weighting::None);
    CHECK(*f.tan_d_j == 0.0);
    CHECK(f.clamped[1]);
    CHECK_FALSE(f.clamped[0]);
    CHECK(f.tan_d_sm > 0.0);
}

TEST_CASE("missing q_std borrows the median variance") {
    std::vector<LossDataPoint> pts{point(1e-4, 0.2e-4, 8e6, 1e6), point(2e-4, 0.4e-4, 4e6, 0.3e6),
                                   point(3e-4, 0.1e-4, 3e6)};
    const auto f = fit_sm_plus_q0(pts, Weighting::InverseVariance);
    REQUIRE(f.weights.size() == 3);
    const double v0 = 1e12 / std::pow(8e6, 4), v1 = 0.09e12 / std::pow(4e6, 4);
    CHECK(f.weights[2] == doctest::Approx(1.0 / (0.5 * (v0 + v1))));
}

TEST_CASE("bundled grouped fits") {
    const auto pts = bundled_grouped();
    const auto j = fit_sm_plus_j(pts, Weighting::InverseVariance);
    CHECK(j.tan_d_sm == doctest::Approx(8.9e-4).epsilon(0.2));
    CHECK(*j.tan_d_j == doctest::Approx(3.5e-3).epsilon(0.2));
    CHECK(j.relative_stderr(0) < 0.15);
    CHECK(j.relative_stderr(1) < 0.15);

    const auto q = fit_sm_plus_q0(pts, Weighting::InverseVariance);
    CHECK(q.tan_d_sm == doctest::Approx(8.3e-4).epsilon(0.2));
    CHECK(*q.q0 == doctest::Approx(7.1e6).epsilon(0.2));

    const auto qn = fit_sm_plus_q0(pts, Weighting::None);
    CHECK(qn.tan_d_sm == doctest::Approx(8.3e-4).epsilon(0.2));
    CHECK(*qn.q0 == doctest::Approx(7.1e6).epsilon(0.2));
}

TEST_CASE("normalized PR collapses the grouped data onto one line") {
    const auto pts = bundled_grouped();
    const auto f = fit_sm_plus_j(pts, Weighting::InverseVariance);
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double x = f.tan_d_sm * normalized_pr(pts[i].p_sm, pts[i].p_j, f.tan_d_sm, *f.tan_d_j);
        CHECK(x == doctest::Approx(f.fitted[i]).epsilon(1e-12));
        const double y = f.observed[i];
        sx += x, sy += y, sxx += x * x, syy += y * y, sxy += x * y;
    }
    const double r = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    CHECK(r > 0.95);
}

TEST_CASE("plot tables") {
    const auto pts = synthetic_j(8.9e-4, 3.5e-3, 0.0, 1);
    const auto f = fit_sm_plus_j(pts, Weighting::None);
    std::ostringstream a, b, c;
    write_q_vs_psm_csv(a, pts, f);
    write_q_vs_normalized_pr_csv(b, pts, f);
    write_model_surface_csv(c, f, 0.2e-4, 50e-4, 0.1e-4, 1e-4, 5, 4);
    CHECK(a.str().rfind("group,p_sm,p_j,q_measured,q_std,q_model\n", 0) == 0);
    CHECK(b.str().rfind("group,normalized_pr,q_measured,q_std,q_model\n", 0) == 0);
    const std::string grid = c.str();
    CHECK(std::count(grid.begin(), grid.end(), '\n') == 1 + 20);

    const auto q = fit_sm_plus_q0(pts, Weighting::None);
    std::ostringstream d;
    CHECK_THROWS_AS(write_q_vs_normalized_pr_csv(d, pts, q), InvalidInput);
}

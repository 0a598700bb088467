#include "qloss/em_kernels.hpp"
#include "qloss/em_solver.hpp"
#include "qloss/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace qloss::em;

namespace {

CrossSection two_strips(double w, double gap, int n = 256) {
    CrossSection g;
    g.strips = {{0.0, w, 0.5}, {w + gap, w, -0.5}};
    g.discretization = n;
    return g;
}

// Coplanar strips on a dielectric half-space: C = eps0 (1+er)/2 K(k')/K(k).
double conformal_capacitance(double w, double gap, double eps_r) {
    const double k = gap / (gap + 2.0 * w);
    const double kp = std::sqrt(1.0 - k * k);
    return kVacuumPermittivity * 0.5 * (1.0 + eps_r) * std::comp_ellint_1(kp) / std::comp_ellint_1(k);
}

double max_abs_sigma(const FieldSolution& s) {
    double m = 0.0;
    for (const auto& e : s.metal) m = std::max(m, std::abs(e.sigma));
    return m;
}

}  // namespace

TEST_CASE("two-strip capacitance matches conformal mapping") {
    const auto sol = solve_cross_section(two_strips(10.0, 10.0));
    const double ref = conformal_capacitance(10.0, 10.0, 10.15);
    CHECK(sol.capacitance_per_len == doctest::Approx(ref).epsilon(0.02));
    CHECK(std::abs(sol.capacitance_per_len / ref - 1.0) < 1e-3);
    CHECK(sol.residual < 1e-9);
}

TEST_CASE("conformal agreement holds for unequal aspect ratios") {
    for (double gap : {2.0, 5.0, 40.0}) {
        const auto sol = solve_cross_section(two_strips(10.0, gap));
        CHECK(sol.capacitance_per_len == doctest::Approx(conformal_capacitance(10.0, gap, 10.15)).epsilon(0.005));
    }
}

TEST_CASE("energy bookkeeping") {
    const auto sol = solve_cross_section(two_strips(10.0, 10.0));
    double qv = 0.0;
    for (std::size_t k = 0; k < sol.strip_charge.size(); ++k) qv += sol.strip_charge[k] * sol.geometry.strips[k].potential_v;
    CHECK(sol.energy_per_len == doctest::Approx(0.5 * qv).epsilon(1e-12));
    CHECK(sol.energy_per_len > 0.0);
    CHECK(std::abs(sol.strip_charge[0] + sol.strip_charge[1]) < 1e-9 * std::abs(sol.strip_charge[0]));
    CHECK(sol.surface_energy_from_fields() == doctest::Approx(sol.energy_per_len).epsilon(0.03));
    CHECK(field_energy_by_area_integral(sol) == doctest::Approx(sol.energy_per_len).epsilon(0.03));
}

TEST_CASE("scale invariance of capacitance") {
    const auto g = two_strips(10.0, 10.0);
    const double c1 = solve_cross_section(g).capacitance_per_len;
    for (double s : {0.1, 2.0, 7.5}) {
        CHECK(solve_cross_section(g.scaled(s)).capacitance_per_len == doctest::Approx(c1).epsilon(0.01));
    }
}

TEST_CASE("swapping potentials negates charge and keeps energy") {
    auto g = two_strips(10.0, 10.0, 128);
    const auto a = solve_cross_section(g);
    std::swap(g.strips[0].potential_v, g.strips[1].potential_v);
    const auto b = solve_cross_section(g);
    CHECK(b.energy_per_len == doctest::Approx(a.energy_per_len).epsilon(1e-12));
    const double scale = max_abs_sigma(a);
    for (std::size_t j = 0; j < a.metal.size(); ++j) CHECK(std::abs(a.metal[j].sigma + b.metal[j].sigma) < 1e-9 * scale);
}

TEST_CASE("mirror-symmetric geometry gives mirror-antisymmetric charge") {
    const auto sol = solve_cross_section(two_strips(10.0, 6.0, 128));
    const std::size_t n = sol.metal.size();
    const double scale = max_abs_sigma(sol);
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(sol.metal[j].sigma + sol.metal[n - 1 - j].sigma) < 1e-9 * scale);
}

TEST_CASE("superposition of potentials") {
    CrossSection g;
    g.strips = {{0.0, 4.0, 1.0}, {7.0, 3.0, 0.0}, {12.0, 6.0, -1.0}};
    g.discretization = 96;
    CrossSection g2 = g;
    g2.strips[0].potential_v = 0.3;
    g2.strips[1].potential_v = 1.0;
    g2.strips[2].potential_v = -0.2;
    const double a = 2.0, b = -0.5;
    CrossSection gc = g;
    for (std::size_t k = 0; k < 3; ++k) gc.strips[k].potential_v = a * g.strips[k].potential_v + b * g2.strips[k].potential_v;

    const auto s1 = solve_cross_section(g);
    const auto s2 = solve_cross_section(g2);
    const auto sc = solve_cross_section(gc);
    const double scale = max_abs_sigma(sc);
    for (std::size_t j = 0; j < sc.metal.size(); ++j) {
        CHECK(std::abs(sc.metal[j].sigma - (a * s1.metal[j].sigma + b * s2.metal[j].sigma)) < 1e-9 * scale);
    }
}

TEST_CASE("solver input errors") {
    auto g = two_strips(10.0, 10.0);
    g.strips[1].potential_v = 0.5;
    CHECK_THROWS_AS(solve_cross_section(g), qloss::InvalidInput);

    auto overlap = two_strips(10.0, -2.0);
    CHECK_THROWS_AS(solve_cross_section(overlap), qloss::InvalidInput);

    auto coarse = two_strips(10.0, 10.0, kMinDiscretization - 1);
    CHECK_THROWS_AS(solve_cross_section(coarse), qloss::InvalidInput);
}

TEST_CASE("interdigital unit cell construction") {
    const auto g = interdigital_unit_cell(10.0, 7);
    REQUIRE(g.strips.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(g.strips[i].width_um == 10.0);
        CHECK(g.strips[i].potential_v == (i % 2 == 0 ? 0.5 : -0.5));
        if (i > 0) CHECK(g.strips[i].x_start_um - g.strips[i - 1].x_end_um() == doctest::Approx(10.0));
    }
    REQUIRE(g.cell);
    CHECK(g.cell->strip == 3);

    CHECK(interdigital_unit_cell(1.0, 5).span_um() == doctest::Approx(9.0));
    CHECK_THROWS_AS(interdigital_unit_cell(10.0, 6), qloss::InvalidInput);
    CHECK_THROWS_AS(interdigital_unit_cell(10.0, 3), qloss::InvalidInput);
}

TEST_CASE("refinement") {
    const auto r = refine_until_converged(two_strips(10.0, 10.0, 16), 0.01);
    CHECK(r.estimated_rel_error < 0.01);
    CHECK(r.energies.size() == static_cast<std::size_t>(r.iterations));
    CHECK(r.discretization == r.solution.geometry.discretization);

    CHECK_THROWS_AS(refine_until_converged(two_strips(10.0, 10.0), 0.0), qloss::InvalidInput);

    const auto fixed = refine_until_converged(two_strips(10.0, 10.0, 64), 0.01, 64);
    CHECK(fixed.iterations == 1);

    CHECK_THROWS_AS(refine_until_converged(two_strips(10.0, 10.0, 8), 1e-9, 32), qloss::ConvergenceError);
    try {
        refine_until_converged(two_strips(10.0, 10.0, 8), 1e-9, 32);
    } catch (const qloss::ConvergenceError& e) {
        CHECK(e.previous_energy() > 0.0);
        CHECK(e.last_energy() > 0.0);
    }
}

TEST_CASE("serial and parallel kernels agree exactly") {
    const auto geom = interdigital_unit_cell(3.0, 5).with_discretization(64);
    const auto mesh = build_mesh(geom);
    Eigen::MatrixXd gs, gp;
    assemble_influence_serial(mesh, gs);
    assemble_influence_parallel(mesh, gp);
    CHECK(gs == gp);

    std::vector<double> u(mesh.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = std::sin(0.37 * static_cast<double>(j)) + 0.1;
    std::vector<double> xs{-5.0, 3.5, 4.1, 10.2, 40.0};  // outside the metal
    CHECK(tangential_field_serial(mesh, u, xs) == tangential_field_parallel(mesh, u, xs));

    std::vector<double> xn, yn;
    for (int i = 0; i <= 50; ++i) xn.push_back(-10.0 + 0.8 * i);
    for (int i = 0; i <= 30; ++i) yn.push_back(1e-3 * std::pow(10.0, i / 6.0));
    CHECK(half_plane_field_square_serial(mesh, u, xn, yn) == half_plane_field_square_parallel(mesh, u, xn, yn));
}

TEST_CASE("log segment integral against quadrature") {
    const double a = 0.3, b = 1.7;
    for (double x : {-2.0, 0.0, 0.3, 1.0, 2.5}) {
        double acc = 0.0;
        const int n = 200000;
        for (int i = 0; i < n; ++i) {
            const double xp = a + (b - a) * (i + 0.5) / n;
            acc += std::log(std::abs(x - xp)) * (b - a) / n;
        }
        CHECK(log_segment_integral(x, a, b) == doctest::Approx(acc).epsilon(1e-4));
    }
}

TEST_CASE("geometry json round trip") {
    auto g = interdigital_unit_cell(2.0, 5);
    g.edge_cutoff_um = 0.05;
    const auto back = cross_section_from_json(cross_section_to_json(g));
    REQUIRE(back.strips.size() == g.strips.size());
    CHECK(back.strips[2].x_start_um == g.strips[2].x_start_um);
    CHECK(back.edge_cutoff_um == g.edge_cutoff_um);
    REQUIRE(back.cell);
    CHECK(back.cell->x_end_um == g.cell->x_end_um);
    CHECK_THROWS_AS(cross_section_from_json("{\"strips\": 3}"), qloss::InvalidInput);
}

TEST_CASE("field csv is sorted and complete") {
    const auto sol = solve_cross_section(two_strips(10.0, 10.0, 16));
    std::ostringstream out;
    sol.write_csv(out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "x_um,sigma,e_perp_sub,e_perp_vac,e_par");
    std::size_t rows = 0;
    double prev = -1e300;
    while (std::getline(in, line)) {
        const double x = std::stod(line.substr(0, line.find(',')));
        CHECK(x >= prev);
        prev = x;
        ++rows;
    }
    CHECK(rows == sol.metal.size() + sol.gaps.size());
}

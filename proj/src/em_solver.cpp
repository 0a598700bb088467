#include "qloss/em_solver.hpp"

#include "qloss/em_kernels.hpp"
#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <tuple>

namespace qloss::em {

namespace {

constexpr const char* kOrigin = "em-solver";
constexpr double kResidualTolerance = 1e-9;

[[noreturn]] void invalid(const std::string& what) { throw InvalidInput(kOrigin, what); }

// Nodes on [0, length] refined towards both ends.
std::vector<double> cosine_nodes(double length, int n) {
    std::vector<double> t(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) {
        t[static_cast<std::size_t>(i)] =
            0.5 * length * (1.0 - std::cos(std::numbers::pi * i / static_cast<double>(n)));
    }
    t.back() = length;
    return t;
}

// Nodes on [0, length] refined towards 0 only.
std::vector<double> half_cosine_nodes(double length, int n) {
    std::vector<double> t(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) {
        t[static_cast<std::size_t>(i)] =
            length * (1.0 - std::cos(0.5 * std::numbers::pi * i / static_cast<double>(n)));
    }
    t.back() = length;
    return t;
}

std::vector<GapSample> gap_layout(const CrossSection& geom) {
    std::vector<GapSample> out;
    const int n = geom.discretization;
    const auto& strips = geom.strips;
    const double flank = geom.span_um();

    auto add_segment = [&](std::size_t left_strip, double x0, const std::vector<double>& nodes, bool mirrored) {
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
            GapSample g;
            g.left_strip = left_strip;
            if (mirrored) {
                g.x_left_um = x0 - nodes[i + 1];
                g.x_right_um = x0 - nodes[i];
            } else {
                g.x_left_um = x0 + nodes[i];
                g.x_right_um = x0 + nodes[i + 1];
            }
            out.push_back(g);
        }
    };

    const auto flank_nodes = half_cosine_nodes(flank, n);
    add_segment(GapSample::kExterior, strips.front().x_start_um, flank_nodes, true);
    for (std::size_t k = 0; k + 1 < strips.size(); ++k) {
        const double a = strips[k].x_end_um();
        const double b = strips[k + 1].x_start_um;
        add_segment(k, a, cosine_nodes(b - a, n), false);
    }
    add_segment(GapSample::kExterior, strips.back().x_end_um(), flank_nodes, false);
    std::sort(out.begin(), out.end(),
              [](const GapSample& l, const GapSample& r) { return l.x_left_um < r.x_left_um; });
    return out;
}

}  // namespace

void CrossSection::validate() const {
    if (strips.size() < 2) invalid("cross-section needs at least two strips");
    for (std::size_t k = 0; k < strips.size(); ++k) {
        const Strip& s = strips[k];
        if (!std::isfinite(s.x_start_um) || !std::isfinite(s.width_um) || !std::isfinite(s.potential_v))
            invalid("strip " + std::to_string(k) + " has non-finite fields");
        if (!(s.width_um > 0.0)) invalid("strip " + std::to_string(k) + " width must be > 0");
        if (k > 0 && !(strips[k - 1].x_end_um() < s.x_start_um))
            invalid("strips must be sorted by x_start and non-overlapping (strip " + std::to_string(k) + ")");
    }
    if (!(eps_sub_rel >= 1.0)) invalid("eps_sub_rel must be >= 1");
    if (eps_vac_rel != 1.0) invalid("eps_vac_rel is fixed at 1");
    if (!(edge_cutoff_um >= 0.0) || !(edge_cutoff_um < 0.5 * min_width_um()))
        invalid("edge_cutoff_um must lie in [0, min(width)/2)");
    if (discretization < kMinDiscretization)
        invalid("discretization must be >= " + std::to_string(kMinDiscretization));
    if (cell) {
        if (cell->strip >= strips.size()) invalid("representative cell strip index out of range");
        if (!(cell->x_begin_um < cell->x_end_um)) invalid("representative cell bounds are empty");
    }
}

CrossSection CrossSection::scaled(double s) const {
    if (!(s > 0.0)) invalid("scale factor must be positive");
    CrossSection out = *this;
    for (Strip& st : out.strips) {
        st.x_start_um *= s;
        st.width_um *= s;
    }
    out.edge_cutoff_um *= s;
    if (out.cell) {
        out.cell->x_begin_um *= s;
        out.cell->x_end_um *= s;
    }
    return out;
}

CrossSection CrossSection::with_discretization(int n) const {
    CrossSection out = *this;
    out.discretization = n;
    return out;
}

double CrossSection::min_width_um() const {
    double w = std::numeric_limits<double>::infinity();
    for (const Strip& s : strips) w = std::min(w, s.width_um);
    return w;
}

double CrossSection::span_um() const {
    if (strips.empty()) return 0.0;
    return strips.back().x_end_um() - strips.front().x_start_um;
}

double FieldSolution::reference_energy() const {
    if (!geometry.cell) return energy_per_len;
    const std::size_t k = geometry.cell->strip;
    return 0.5 * strip_charge[k] * geometry.strips[k].potential_v;
}

double FieldSolution::surface_energy_from_fields() const {
    double acc = 0.0;
    for (const MetalElement& e : metal) {
        const double flux = kVacuumPermittivity * (geometry.eps_sub_rel * e.e_perp_sub + e.e_perp_vac);
        const double sign = e.sigma < 0.0 ? -1.0 : 1.0;
        acc += geometry.strips[e.strip].potential_v * sign * flux * e.width_um() * 1e-6;
    }
    return 0.5 * acc;
}

void FieldSolution::write_csv(std::ostream& out) const {
    using Row = std::tuple<double, double, double, double, double>;
    std::vector<Row> rows;
    rows.reserve(metal.size() + gaps.size());
    for (const MetalElement& e : metal) {
        rows.emplace_back(0.5 * (e.x_left_um + e.x_right_um), e.sigma, e.e_perp_sub, e.e_perp_vac, 0.0);
    }
    for (const GapSample& g : gaps) rows.emplace_back(g.x_mid_um(), 0.0, g.e_perp_sub, g.e_perp_vac, g.e_par);
    std::sort(rows.begin(), rows.end());
    out << "x_um,sigma,e_perp_sub,e_perp_vac,e_par\n";
    for (const auto& [x, s, es, ev, ep] : rows) {
        out << fmt9(x) << ',' << fmt9(s) << ',' << fmt9(es) << ',' << fmt9(ev) << ',' << fmt9(ep) << '\n';
    }
}

FieldSolution solve_cross_section(const CrossSection& geom) {
    geom.validate();
    const auto [lo, hi] = std::minmax_element(geom.strips.begin(), geom.strips.end(),
                                              [](const Strip& a, const Strip& b) { return a.potential_v < b.potential_v; });
    const double dv = hi->potential_v - lo->potential_v;
    if (!(dv > 0.0)) invalid("all strips are at the same potential");

    // Coplanar conductors on the interface see the homogeneous medium
    // eps_eff = eps0 (1 + eps_r) / 2; the potential is even in y.
    const double eps_eff = 0.5 * kVacuumPermittivity * (geom.eps_vac_rel + geom.eps_sub_rel);

    const Mesh mesh = build_mesh(geom);
    const auto n = static_cast<Eigen::Index>(mesh.size());

    // Unknowns: normalised charge u_j = sigma_j * 1e-6 / eps_eff (V/um) per
    // element, then the potential at infinity. Last row: zero net charge.
    Eigen::MatrixXd a(n + 1, n + 1);
    {
        Eigen::MatrixXd g;
        assemble_influence_parallel(mesh, g);
        a.topLeftCorner(n, n) = g;
    }
    Eigen::VectorXd rhs(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        a(i, n) = 1.0;
        a(n, i) = mesh.width(static_cast<std::size_t>(i)) / geom.span_um();
        rhs(i) = geom.strips[mesh.owner[static_cast<std::size_t>(i)]].potential_v;
    }
    a(n, n) = 0.0;
    rhs(n) = 0.0;

    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::VectorXd x = lu.solve(rhs);
    const double residual = (a * x - rhs).norm() / std::max(rhs.norm(), 1e-300);
    if (!std::isfinite(residual) || residual > kResidualTolerance) {
        std::ostringstream msg;
        msg << "boundary-element solve did not converge (relative residual " << residual << ")";
        throw NumericalFailure(kOrigin, msg.str(), residual);
    }

    FieldSolution sol;
    sol.geometry = geom;
    sol.residual = residual;
    sol.potential_at_infinity = x(n);
    sol.strip_charge.assign(geom.strips.size(), 0.0);

    std::vector<double> u(static_cast<std::size_t>(n));
    sol.metal.reserve(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < mesh.size(); ++j) {
        u[j] = x(static_cast<Eigen::Index>(j));
        MetalElement e;
        e.strip = mesh.owner[j];
        e.x_left_um = mesh.left[j];
        e.x_right_um = mesh.right[j];
        e.sigma = u[j] * eps_eff * 1e6;
        // |E_n| is equal on both faces: eps0 E_vac + eps0 eps_r E_sub = sigma.
        e.e_perp_sub = std::abs(u[j]) * 0.5e6;
        e.e_perp_vac = e.e_perp_sub;
        sol.strip_charge[e.strip] += e.sigma * mesh.width(j) * 1e-6;
        sol.metal.push_back(e);
    }

    sol.gaps = gap_layout(geom);
    std::vector<double> xs(sol.gaps.size());
    std::transform(sol.gaps.begin(), sol.gaps.end(), xs.begin(), [](const GapSample& g) { return g.x_mid_um(); });
    const std::vector<double> ex = tangential_field_parallel(mesh, u, xs);
    for (std::size_t p = 0; p < sol.gaps.size(); ++p) sol.gaps[p].e_par = ex[p] * 1e6;

    double energy = 0.0;
    for (std::size_t k = 0; k < geom.strips.size(); ++k) energy += sol.strip_charge[k] * geom.strips[k].potential_v;
    sol.energy_per_len = 0.5 * energy;
    sol.capacitance_per_len = 2.0 * sol.energy_per_len / (dv * dv);
    if (!(sol.energy_per_len > 0.0)) {
        throw NumericalFailure(kOrigin, "solver produced non-positive electric energy", residual);
    }
    return sol;
}

RefinedSolution refine_until_converged(const CrossSection& geom, double rel_tol, int max_discretization) {
    if (!(rel_tol > 0.0 && rel_tol <= 0.1)) invalid("rel_tol must lie in (0, 0.1]");
    geom.validate();

    RefinedSolution out;
    int n = geom.discretization;
    out.solution = solve_cross_section(geom);
    out.iterations = 1;
    out.discretization = n;
    out.energies.push_back(out.solution.energy_per_len);
    if (n >= max_discretization) return out;

    while (true) {
        const int next = 2 * n;
        if (next > max_discretization) {
            const double prev = out.energies.size() > 1 ? out.energies[out.energies.size() - 2] : out.energies.back();
            std::ostringstream msg;
            msg << "energy not converged to " << rel_tol << " by discretization " << n << " (last energies " << prev
                << ", " << out.energies.back() << ")";
            throw ConvergenceError(kOrigin, msg.str(), prev, out.energies.back());
        }
        FieldSolution finer = solve_cross_section(geom.with_discretization(next));
        const double change = std::abs(finer.energy_per_len - out.solution.energy_per_len) / finer.energy_per_len;
        out.solution = std::move(finer);
        out.energies.push_back(out.solution.energy_per_len);
        out.iterations += 1;
        out.discretization = next;
        out.estimated_rel_error = change;
        n = next;
        if (change < rel_tol) return out;
    }
}

CrossSection interdigital_unit_cell(double gap_and_finger_um, int n_fingers, double voltage) {
    if (!(gap_and_finger_um >= 0.1 && gap_and_finger_um <= 100.0))
        invalid("gap/finger width must lie in [0.1, 100] um");
    if (n_fingers < 5) invalid("n_fingers must be >= 5");
    if (n_fingers % 2 == 0) invalid("n_fingers must be odd");
    if (!(voltage > 0.0)) invalid("drive voltage must be positive");

    CrossSection geom;
    const double w = gap_and_finger_um;
    for (int i = 0; i < n_fingers; ++i) {
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        geom.strips.push_back({2.0 * w * i, w, 0.5 * voltage * sign});
    }
    const auto centre = static_cast<std::size_t>(n_fingers / 2);
    const double x0 = geom.strips[centre].x_start_um;
    geom.cell = RepresentativeCell{centre, x0 - 0.5 * w, x0 + 1.5 * w};
    return geom;
}

double field_energy_by_area_integral(const FieldSolution& sol, int grid_per_unit) {
    const CrossSection& geom = sol.geometry;
    const Mesh mesh = build_mesh(geom);
    const double eps_eff = 0.5 * kVacuumPermittivity * (geom.eps_vac_rel + geom.eps_sub_rel);
    std::vector<double> u(mesh.size());
    for (std::size_t j = 0; j < mesh.size(); ++j) u[j] = sol.metal[j].sigma / (eps_eff * 1e6);

    const double span = geom.span_um();
    const double reach = 40.0 * span;
    const double x_min = geom.strips.front().x_start_um;
    const double x_max = geom.strips.back().x_end_um();

    std::vector<double> breaks{x_min - reach};
    for (const Strip& s : geom.strips) {
        breaks.push_back(s.x_start_um);
        breaks.push_back(s.x_end_um());
    }
    breaks.push_back(x_max + reach);

    std::vector<double> xs{breaks.front()};
    for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
        const double len = breaks[b + 1] - breaks[b];
        const bool outer = b == 0 || b + 2 == breaks.size();
        std::vector<double> t;
        if (outer) {
            t = half_cosine_nodes(len, 2 * grid_per_unit);
            if (b == 0) {
                for (auto it = t.rbegin() + 1; it != t.rend(); ++it) xs.push_back(breaks[1] - *it);
                continue;
            }
        } else {
            t = cosine_nodes(len, grid_per_unit);
        }
        for (std::size_t i = 1; i < t.size(); ++i) xs.push_back(breaks[b] + t[i]);
    }

    std::vector<double> ys{0.0};
    const double y0 = 1e-5 * geom.min_width_um();
    const int per_decade = std::max(8, grid_per_unit / 3);
    const double ratio = std::pow(10.0, 1.0 / per_decade);
    for (double y = y0; y < reach; y *= ratio) ys.push_back(y);
    ys.push_back(reach);

    const double integral = half_plane_field_square_parallel(mesh, u, xs, ys);
    // eps0/2 on both half-planes with |E| even in y collapses to eps_eff.
    return eps_eff * integral;
}

CrossSection cross_section_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("geometry JSON: ") + e.what());
    }
    CrossSection geom;
    try {
        for (const auto& s : j.at("strips")) {
            geom.strips.push_back({s.at("x_start_um").get<double>(), s.at("width_um").get<double>(),
                                   s.at("potential_v").get<double>()});
        }
        geom.eps_sub_rel = j.value("eps_sub_rel", kSapphireRelPermittivity);
        geom.eps_vac_rel = j.value("eps_vac_rel", 1.0);
        geom.edge_cutoff_um = j.value("edge_cutoff_um", 0.1);
        geom.discretization = j.value("discretization", 256);
        if (j.contains("representative_cell")) {
            const auto& c = j.at("representative_cell");
            geom.cell = RepresentativeCell{c.at("strip").get<std::size_t>(), c.at("x_begin_um").get<double>(),
                                           c.at("x_end_um").get<double>()};
        }
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("geometry JSON: ") + e.what());
    }
    geom.validate();
    return geom;
}

std::string cross_section_to_json(const CrossSection& geom) {
    nlohmann::ordered_json j;
    j["strips"] = nlohmann::ordered_json::array();
    for (const Strip& s : geom.strips) {
        j["strips"].push_back({{"x_start_um", s.x_start_um}, {"width_um", s.width_um}, {"potential_v", s.potential_v}});
    }
    j["eps_sub_rel"] = geom.eps_sub_rel;
    j["eps_vac_rel"] = geom.eps_vac_rel;
    j["edge_cutoff_um"] = geom.edge_cutoff_um;
    j["discretization"] = geom.discretization;
    if (geom.cell) {
        j["representative_cell"] = {
            {"strip", geom.cell->strip}, {"x_begin_um", geom.cell->x_begin_um}, {"x_end_um", geom.cell->x_end_um}};
    }
    return j.dump(2);
}

}  // namespace qloss::em

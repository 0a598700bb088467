#include "qloss/participation.hpp"

#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

namespace qloss::participation {

namespace {

constexpr const char* kOrigin = "participation";
constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void invalid(const std::string& what) { throw InvalidInput(kOrigin, what); }

struct Interval {
    double lo;
    double hi;
    double length() const { return hi > lo ? hi - lo : 0.0; }
};

Interval intersect(Interval a, Interval b) { return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)}; }

Interval cell_window(const em::CrossSection& geom) {
    if (!geom.cell) return {-kInf, kInf};
    return {geom.cell->x_begin_um, geom.cell->x_end_um};
}

// Part of the uncovered interface next to gap sample `g` that lies farther
// than `cutoff` from any strip edge.
Interval gap_window(const em::CrossSection& geom, const em::GapSample& g, double cutoff) {
    const auto& strips = geom.strips;
    if (g.left_strip != em::GapSample::kExterior) {
        return {strips[g.left_strip].x_end_um() + cutoff, strips[g.left_strip + 1].x_start_um - cutoff};
    }
    if (g.x_right_um <= strips.front().x_start_um) return {-kInf, strips.front().x_start_um - cutoff};
    return {strips.back().x_end_um() + cutoff, kInf};
}

}  // namespace

FieldRule field_rule_for(Region region) {
    switch (region) {
        case Region::SM: return FieldRule::UnderMetalPerp;
        case Region::SA: return FieldRule::GapMixed;
        case Region::MA: return FieldRule::MetalSurfacePerp;
    }
    return FieldRule::UnderMetalPerp;
}

std::string to_string(Region region) {
    switch (region) {
        case Region::SM: return "SM";
        case Region::SA: return "SA";
        case Region::MA: return "MA";
    }
    return "?";
}

Region region_from_string(const std::string& name) {
    if (name == "SM" || name == "sm") return Region::SM;
    if (name == "SA" || name == "sa") return Region::SA;
    if (name == "MA" || name == "ma") return Region::MA;
    invalid("unknown interface region '" + name + "'");
}

InterfaceSpec InterfaceSpec::defaults(Region region) {
    return {region, 1.0, em::kSapphireRelPermittivity, field_rule_for(region)};
}

InterfaceSpec InterfaceSpec::junction_metal_air() {
    return {Region::MA, 5.5, em::kSapphireRelPermittivity, FieldRule::MetalSurfacePerp};
}

void InterfaceSpec::validate() const {
    if (!(thickness_nm > 0.0)) invalid("interface thickness must be > 0");
    if (!(eps_rel >= 1.0)) invalid("interface eps_rel must be >= 1");
    if (field_rule != field_rule_for(region)) invalid("field rule does not match region " + to_string(region));
}

std::optional<double> ParticipationSet::get(Region region) const {
    switch (region) {
        case Region::SM: return p_sm;
        case Region::SA: return p_sa;
        case Region::MA: return p_ma;
    }
    return std::nullopt;
}

double layer_energy(const em::FieldSolution& sol, const InterfaceSpec& spec) {
    return layer_energy(sol, spec, sol.geometry.edge_cutoff_um);
}

double layer_energy(const em::FieldSolution& sol, const InterfaceSpec& spec, double cutoff_um) {
    spec.validate();
    const em::CrossSection& geom = sol.geometry;
    if (!(cutoff_um >= 0.0) || !(cutoff_um < 0.5 * geom.min_width_um()))
        invalid("cutoff must lie in [0, min(width)/2)");

    const double t = spec.thickness_nm * 1e-9;
    const double eps_i = spec.eps_rel;
    const double eps_sub = geom.eps_sub_rel;
    const Interval cell = cell_window(geom);

    // Integral of |E_layer|^2 over the layer's in-plane extent (V^2/m).
    double field_sq = 0.0;
    std::size_t samples = 0;

    if (spec.field_rule == FieldRule::GapMixed) {
        for (const em::GapSample& g : sol.gaps) {
            const Interval keep = intersect(intersect({g.x_left_um, g.x_right_um}, gap_window(geom, g, cutoff_um)), cell);
            const double len = keep.length();
            if (len <= 0.0) continue;
            const double normal = (eps_sub / eps_i) * g.e_perp_sub;
            field_sq += (g.e_par * g.e_par + normal * normal) * len * 1e-6;
            ++samples;
        }
    } else {
        const bool under = spec.field_rule == FieldRule::UnderMetalPerp;
        for (const em::MetalElement& e : sol.metal) {
            const em::Strip& s = geom.strips[e.strip];
            const Interval strip_core{s.x_start_um + cutoff_um, s.x_end_um() - cutoff_um};
            const Interval keep = intersect(intersect({e.x_left_um, e.x_right_um}, strip_core), cell);
            const double len = keep.length();
            if (len <= 0.0) continue;
            const double field = under ? (eps_sub / eps_i) * e.e_perp_sub : e.e_perp_vac / eps_i;
            field_sq += field * field * len * 1e-6;
            ++samples;
        }
    }
    if (samples == 0) invalid("no field samples cover the " + to_string(spec.region) + " layer");
    return 0.5 * em::kVacuumPermittivity * eps_i * t * field_sq;
}

ParticipationSet participation_set(const em::FieldSolution& sol, const std::vector<InterfaceSpec>& specs,
                                   std::string geometry_id) {
    std::set<Region> seen;
    for (const InterfaceSpec& s : specs) {
        if (!seen.insert(s.region).second) invalid("duplicate interface spec for region " + to_string(s.region));
    }
    const double total = sol.reference_energy();
    if (!(total > 0.0)) invalid("reference energy must be positive");

    ParticipationSet out;
    out.cutoff_used_um = sol.geometry.edge_cutoff_um;
    out.geometry_id = std::move(geometry_id);
    for (const InterfaceSpec& s : specs) {
        const double p = layer_energy(sol, s) / total;
        switch (s.region) {
            case Region::SM: out.p_sm = p; break;
            case Region::SA: out.p_sa = p; break;
            case Region::MA: out.p_ma = p; break;
        }
    }
    return out;
}

std::vector<SweepPoint> psm_width_sweep(const std::vector<double>& widths_um, const InterfaceSpec& spec,
                                        int n_fingers, const SweepOptions& options) {
    spec.validate();
    if (spec.region != Region::SM) invalid("width sweep expects an SM interface spec");
    if (widths_um.empty()) invalid("width list is empty");
    for (std::size_t i = 0; i < widths_um.size(); ++i) {
        if (!(widths_um[i] >= 0.5 && widths_um[i] <= 50.0)) invalid("sweep widths must lie in [0.5, 50] um");
        if (i > 0 && !(widths_um[i] > widths_um[i - 1])) invalid("sweep widths must be strictly ascending");
    }

    InterfaceSpec sa = spec;
    sa.region = Region::SA;
    sa.field_rule = FieldRule::GapMixed;
    InterfaceSpec ma = spec;
    ma.region = Region::MA;
    ma.field_rule = FieldRule::MetalSurfacePerp;

    std::vector<SweepPoint> out;
    out.reserve(widths_um.size());
    for (double w : widths_um) {
        SweepPoint pt;
        pt.width_um = w;
        pt.n_fingers = n_fingers;
        pt.cutoff_um = options.cutoff.at_width(w);
        try {
            em::CrossSection geom = em::interdigital_unit_cell(w, n_fingers);
            geom.edge_cutoff_um = pt.cutoff_um;
            geom.discretization = options.discretization;
            const em::FieldSolution sol = em::solve_cross_section(geom);
            const ParticipationSet ps = participation_set(sol, {spec, sa, ma});
            pt.p_sm = *ps.p_sm;
            pt.p_sa = *ps.p_sa;
            pt.p_ma = *ps.p_ma;
        } catch (const Error& e) {
            pt.ok = false;
            pt.error = e.origin() + ": " + e.what();
            pt.p_sm = pt.p_sa = pt.p_ma = std::numeric_limits<double>::quiet_NaN();
        }
        out.push_back(std::move(pt));
    }
    return out;
}

CutoffSensitivity cutoff_sensitivity(double width_um, const InterfaceSpec& spec, int n_fingers,
                                     const std::vector<double>& cutoffs_um, int discretization) {
    em::CrossSection geom = em::interdigital_unit_cell(width_um, n_fingers);
    geom.edge_cutoff_um = 0.0;
    geom.discretization = discretization;
    const em::FieldSolution sol = em::solve_cross_section(geom);
    CutoffSensitivity out;
    out.width_um = width_um;
    for (double c : cutoffs_um) {
        out.cutoffs_um.push_back(c);
        out.p_sm.push_back(layer_energy(sol, spec, c) / sol.reference_energy());
    }
    return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
    out << "width_um,p_sm,p_sa,p_ma,cutoff_um,n_fingers\n";
    for (const SweepPoint& p : points) {
        out << fmt9(p.width_um) << ',' << fmt9(p.p_sm) << ',' << fmt9(p.p_sa) << ',' << fmt9(p.p_ma) << ','
            << fmt9(p.cutoff_um) << ',' << p.n_fingers << '\n';
    }
}

void write_sensitivity_csv(std::ostream& out, const std::vector<CutoffSensitivity>& rows) {
    out << "width_um,cutoff_um,p_sm\n";
    for (const CutoffSensitivity& r : rows) {
        for (std::size_t i = 0; i < r.cutoffs_um.size(); ++i) {
            out << fmt9(r.width_um) << ',' << fmt9(r.cutoffs_um[i]) << ',' << fmt9(r.p_sm[i]) << '\n';
        }
    }
}

}  // namespace qloss::participation

#pragma once

// 2D electrostatics of zero-thickness coplanar strips lying on the surface of
// a dielectric half-space. Lateral lengths are micrometres at the interface;
// everything the solver returns is SI per unit length along the strips.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qloss::em {

inline constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m
inline constexpr double kSapphireRelPermittivity = 10.15;
inline constexpr int kMinDiscretization = 8;

struct Strip {
    double x_start_um = 0.0;
    double width_um = 0.0;
    double potential_v = 0.0;

    double x_end_um() const { return x_start_um + width_um; }
};

/// Sub-region whose energy stands in for a periodic interior: one strip plus
/// half of each neighbouring gap.
struct RepresentativeCell {
    std::size_t strip = 0;
    double x_begin_um = 0.0;
    double x_end_um = 0.0;
};

struct CrossSection {
    std::vector<Strip> strips;
    double eps_sub_rel = kSapphireRelPermittivity;
    double eps_vac_rel = 1.0;
    double edge_cutoff_um = 0.1;
    int discretization = 256;  // elements per strip
    std::optional<RepresentativeCell> cell;

    /// Throws InvalidInput naming the violated constraint.
    void validate() const;

    /// Every lateral length (positions, widths, cutoff, cell bounds) times `s`.
    CrossSection scaled(double s) const;
    CrossSection with_discretization(int n) const;

    double min_width_um() const;
    double span_um() const;
};

/// One boundary element on a strip. Fields are magnitudes just above (vacuum)
/// and just below (substrate) the metal.
struct MetalElement {
    std::size_t strip = 0;
    double x_left_um = 0.0;
    double x_right_um = 0.0;
    double sigma = 0.0;  // free surface charge, C/m^2
    double e_perp_sub = 0.0;
    double e_perp_vac = 0.0;

    double width_um() const { return x_right_um - x_left_um; }
};

/// Field sample on an uncovered part of the interface. In the coplanar
/// geometry the normal component vanishes on y=0 between strips; only the
/// tangential field survives.
struct GapSample {
    static constexpr std::size_t kExterior = static_cast<std::size_t>(-1);

    std::size_t left_strip = kExterior;  // kExterior for the outer flanks
    double x_left_um = 0.0;
    double x_right_um = 0.0;
    double e_par = 0.0;  // V/m
    double e_perp_sub = 0.0;
    double e_perp_vac = 0.0;

    double x_mid_um() const { return 0.5 * (x_left_um + x_right_um); }
    double width_um() const { return x_right_um - x_left_um; }
};

struct FieldSolution {
    CrossSection geometry;
    std::vector<MetalElement> metal;
    std::vector<GapSample> gaps;
    std::vector<double> strip_charge;  // C/m, one per strip
    double potential_at_infinity = 0.0;
    double capacitance_per_len = 0.0;  // F/m, 2U / (Vmax - Vmin)^2
    double energy_per_len = 0.0;       // J/m, 1/2 sum q_k V_k
    double residual = 0.0;             // relative residual of the linear solve

    /// Energy the participation ratios are normalised by: the representative
    /// cell's 1/2 q V when a cell is flagged, the full energy otherwise.
    double reference_energy() const;

    /// Energy reassembled from the sampled interface fields,
    /// 1/2 sum V (eps0 eps_sub E_sub + eps0 E_vac) dx over the metal.
    double surface_energy_from_fields() const;

    /// Columns x_um, sigma, e_perp_sub, e_perp_vac, e_par sorted by x.
    void write_csv(std::ostream& out) const;
};

struct RefinedSolution {
    FieldSolution solution;
    int iterations = 0;
    int discretization = 0;
    double estimated_rel_error = 0.0;  // |U_n - U_{n/2}| / U_n of the last doubling
    std::vector<double> energies;      // energy per level, in order
};

FieldSolution solve_cross_section(const CrossSection& geom);

/// Doubles the discretization until successive energies differ by less than
/// `rel_tol`. Throws ConvergenceError once `max_discretization` is exceeded.
RefinedSolution refine_until_converged(const CrossSection& geom, double rel_tol,
                                       int max_discretization = 4096);

/// `n_fingers` equal strips of width `gap_and_finger_um` separated by equal
/// gaps, starting at x=0 with potential +V/2 and alternating sign. The
/// centre strip is flagged as representative cell.
CrossSection interdigital_unit_cell(double gap_and_finger_um, int n_fingers,
                                    double voltage = 1.0);

/// Area integral of the field energy over the whole plane, computed from the
/// solved charge distribution independently of 1/2 sum qV.
double field_energy_by_area_integral(const FieldSolution& sol, int grid_per_unit = 48);

CrossSection cross_section_from_json(const std::string& text);
std::string cross_section_to_json(const CrossSection& geom);

}  // namespace qloss::em

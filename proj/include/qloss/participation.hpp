#pragma once

// Thin-lossy-layer participation ratios from a solved cross-section.

#include "qloss/em_solver.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qloss::participation {

enum class Region { SM, SA, MA };

/// How the layer field is derived from interface samples:
///  UnderMetalPerp   - E_layer = (eps_sub/eps_i) E_perp,sub under the metal
///  GapMixed         - tangential continuous, normal (eps_sub/eps_i) E_perp,sub in gaps
///  MetalSurfacePerp - E_layer = (1/eps_i) E_perp,vac on top of the metal
enum class FieldRule { UnderMetalPerp, GapMixed, MetalSurfacePerp };

FieldRule field_rule_for(Region region);
std::string to_string(Region region);
Region region_from_string(const std::string& name);

struct InterfaceSpec {
    Region region = Region::SM;
    double thickness_nm = 1.0;
    double eps_rel = em::kSapphireRelPermittivity;
    FieldRule field_rule = FieldRule::UnderMetalPerp;

    /// 1 nm disordered layer with sapphire permittivity for every region.
    static InterfaceSpec defaults(Region region);
    /// Amorphous oxide around the Al junction leads, 5.5 nm thick.
    static InterfaceSpec junction_metal_air();

    void validate() const;
};

struct ParticipationSet {
    std::optional<double> p_sm;
    std::optional<double> p_sa;
    std::optional<double> p_ma;
    double cutoff_used_um = 0.0;
    std::string geometry_id;

    std::optional<double> get(Region region) const;
};

/// Layer energy per unit length (J/m) using the cross-section's own edge cutoff.
double layer_energy(const em::FieldSolution& sol, const InterfaceSpec& spec);
/// Same, with an explicit cutoff distance from every strip edge.
double layer_energy(const em::FieldSolution& sol, const InterfaceSpec& spec, double cutoff_um);

ParticipationSet participation_set(const em::FieldSolution& sol, const std::vector<InterfaceSpec>& specs,
                                   std::string geometry_id = {});

/// Edge exclusion used for each width of a sweep.
struct CutoffRule {
    enum class Kind { Absolute, ProportionalToWidth };
    Kind kind = Kind::ProportionalToWidth;
    double value = 1e-3;  // um for Absolute, fraction of width otherwise

    double at_width(double width_um) const {
        return kind == Kind::Absolute ? value : value * width_um;
    }
    static CutoffRule absolute(double um) { return {Kind::Absolute, um}; }
    static CutoffRule proportional(double fraction) { return {Kind::ProportionalToWidth, fraction}; }
};

struct SweepOptions {
    CutoffRule cutoff;
    int discretization = 256;
};

struct SweepPoint {
    double width_um = 0.0;
    double p_sm = 0.0;
    double p_sa = 0.0;
    double p_ma = 0.0;
    double cutoff_um = 0.0;
    int n_fingers = 0;
    bool ok = true;
    std::string error;
};

/// P_SM (plus SA/MA evaluated with the same thickness and permittivity) of
/// the interdigital interior versus gap/finger width. Solver errors are
/// recorded on the failing point and the sweep continues.
std::vector<SweepPoint> psm_width_sweep(const std::vector<double>& widths_um, const InterfaceSpec& spec,
                                        int n_fingers, const SweepOptions& options = {});

struct CutoffSensitivity {
    double width_um = 0.0;
    std::vector<double> cutoffs_um;
    std::vector<double> p_sm;
};

/// P_SM at several absolute cutoffs from one solve.
CutoffSensitivity cutoff_sensitivity(double width_um, const InterfaceSpec& spec, int n_fingers,
                                     const std::vector<double>& cutoffs_um = {0.05, 0.1, 0.2},
                                     int discretization = 256);

/// Columns width_um,p_sm,p_sa,p_ma,cutoff_um,n_fingers; failed points as nan.
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);
void write_sensitivity_csv(std::ostream& out, const std::vector<CutoffSensitivity>& rows);

}  // namespace qloss::participation

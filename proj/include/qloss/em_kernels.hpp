#pragma once

// Data-parallel kernels of the strip solver. Each kernel has a serial
// reference and an OpenMP version; the two must agree bit for bit because
// every output entry is computed independently.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace qloss::em {

struct CrossSection;

/// Cosine-graded elements on every strip, in strip order.
struct Mesh {
    std::vector<double> left;   // um
    std::vector<double> right;  // um
    std::vector<std::size_t> owner;

    std::size_t size() const { return left.size(); }
    double mid(std::size_t j) const { return 0.5 * (left[j] + right[j]); }
    double width(std::size_t j) const { return right[j] - left[j]; }
};

Mesh build_mesh(const CrossSection& geom);

/// integral over [a, b] of ln|x - x'| dx'.
double log_segment_integral(double x, double a, double b);

/// integral over [a, b] of dx' / (x - x') for x outside [a, b].
double inverse_segment_integral(double x, double a, double b);

/// Collocation matrix G_ij = -(1/2pi) int_j ln|x_i - x'| dx' at element
/// midpoints, N x N.
void assemble_influence_serial(const Mesh& mesh, Eigen::MatrixXd& g);
void assemble_influence_parallel(const Mesh& mesh, Eigen::MatrixXd& g);

/// Tangential field (V/um) at interface points outside the metal for the
/// normalised charge `u` (V/um per element).
std::vector<double> tangential_field_serial(const Mesh& mesh, std::span<const double> u,
                                            std::span<const double> x_um);
std::vector<double> tangential_field_parallel(const Mesh& mesh, std::span<const double> u,
                                              std::span<const double> x_um);

/// Integral of |E|^2 over the upper half-plane in (V/um)^2 um^2, midpoint rule
/// on the tensor grid built from `x_nodes` and `y_nodes` (um).
double half_plane_field_square_serial(const Mesh& mesh, std::span<const double> u,
                                      std::span<const double> x_nodes,
                                      std::span<const double> y_nodes);
double half_plane_field_square_parallel(const Mesh& mesh, std::span<const double> u,
                                        std::span<const double> x_nodes,
                                        std::span<const double> y_nodes);

}  // namespace qloss::em

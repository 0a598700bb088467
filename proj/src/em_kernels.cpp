#include "qloss/em_kernels.hpp"

#include "qloss/em_solver.hpp"

#include <cmath>
#include <numbers>

namespace qloss::em {

namespace {

// Antiderivative of ln|u|.
double log_antiderivative(double u) { return u == 0.0 ? 0.0 : u * std::log(std::abs(u)) - u; }

constexpr double kGauss3Node = 0.7745966692414834;  // sqrt(3/5)
constexpr double kGauss3WeightEdge = 5.0 / 9.0;
constexpr double kGauss3WeightMid = 8.0 / 9.0;

double influence_entry(const Mesh& mesh, std::size_t i, std::size_t j) {
    return -log_segment_integral(mesh.mid(i), mesh.left[j], mesh.right[j]) / (2.0 * std::numbers::pi);
}

double tangential_at(const Mesh& mesh, std::span<const double> u, double x) {
    double acc = 0.0;
    for (std::size_t j = 0; j < mesh.size(); ++j) {
        acc += u[j] * inverse_segment_integral(x, mesh.left[j], mesh.right[j]);
    }
    return acc / (2.0 * std::numbers::pi);
}

double field_square_at(const Mesh& mesh, std::span<const double> u, double x, double y) {
    double ex = 0.0;
    double ey = 0.0;
    const double y2 = y * y;
    for (std::size_t j = 0; j < mesh.size(); ++j) {
        const double da = x - mesh.left[j];
        const double db = x - mesh.right[j];
        ex += u[j] * 0.5 * std::log((da * da + y2) / (db * db + y2));
        ey += u[j] * (std::atan(da / y) - std::atan(db / y));
    }
    ex /= 2.0 * std::numbers::pi;
    ey /= 2.0 * std::numbers::pi;
    return ex * ex + ey * ey;
}

double grid_row(const Mesh& mesh, std::span<const double> u, std::span<const double> x_nodes,
                double y, double dy) {
    double acc = 0.0;
    for (std::size_t ix = 0; ix + 1 < x_nodes.size(); ++ix) {
        const double dx = x_nodes[ix + 1] - x_nodes[ix];
        acc += field_square_at(mesh, u, 0.5 * (x_nodes[ix] + x_nodes[ix + 1]), y) * dx * dy;
    }
    return acc;
}

}  // namespace

Mesh build_mesh(const CrossSection& geom) {
    Mesh mesh;
    const auto n = static_cast<std::size_t>(geom.discretization);
    const std::size_t total = geom.strips.size() * n;
    mesh.left.reserve(total);
    mesh.right.reserve(total);
    mesh.owner.reserve(total);
    for (std::size_t k = 0; k < geom.strips.size(); ++k) {
        const Strip& s = geom.strips[k];
        auto node = [&](std::size_t i) {
            if (i == 0) return s.x_start_um;
            if (i == n) return s.x_end_um();
            const double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
            return s.x_start_um + 0.5 * s.width_um * (1.0 - std::cos(theta));
        };
        for (std::size_t i = 0; i < n; ++i) {
            mesh.left.push_back(node(i));
            mesh.right.push_back(node(i + 1));
            mesh.owner.push_back(k);
        }
    }
    return mesh;
}

double log_segment_integral(double x, double a, double b) {
    const double h = b - a;
    const double d = x - 0.5 * (a + b);
    if (std::abs(d) > 8.0 * h) {
        // Far field: three-point Gauss-Legendre avoids cancellation between
        // the two large antiderivative values.
        const double half = 0.5 * h;
        return half * (kGauss3WeightEdge * std::log(std::abs(d - half * kGauss3Node)) +
                       kGauss3WeightMid * std::log(std::abs(d)) +
                       kGauss3WeightEdge * std::log(std::abs(d + half * kGauss3Node)));
    }
    return log_antiderivative(x - a) - log_antiderivative(x - b);
}

double inverse_segment_integral(double x, double a, double b) {
    // ln|(x-a)/(x-b)| written as log1p for far points.
    return std::log1p((b - a) / (x - b));
}

void assemble_influence_serial(const Mesh& mesh, Eigen::MatrixXd& g) {
    const auto n = static_cast<Eigen::Index>(mesh.size());
    g.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            g(i, j) = influence_entry(mesh, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
}

void assemble_influence_parallel(const Mesh& mesh, Eigen::MatrixXd& g) {
    const auto n = static_cast<Eigen::Index>(mesh.size());
    g.resize(n, n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            g(i, j) = influence_entry(mesh, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
}

std::vector<double> tangential_field_serial(const Mesh& mesh, std::span<const double> u,
                                            std::span<const double> x_um) {
    std::vector<double> out(x_um.size());
    for (std::size_t p = 0; p < x_um.size(); ++p) out[p] = tangential_at(mesh, u, x_um[p]);
    return out;
}

std::vector<double> tangential_field_parallel(const Mesh& mesh, std::span<const double> u,
                                              std::span<const double> x_um) {
    std::vector<double> out(x_um.size());
    const auto count = static_cast<std::ptrdiff_t>(x_um.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < count; ++p) {
        out[static_cast<std::size_t>(p)] = tangential_at(mesh, u, x_um[static_cast<std::size_t>(p)]);
    }
    return out;
}

double half_plane_field_square_serial(const Mesh& mesh, std::span<const double> u,
                                      std::span<const double> x_nodes,
                                      std::span<const double> y_nodes) {
    double total = 0.0;
    for (std::size_t iy = 0; iy + 1 < y_nodes.size(); ++iy) {
        total += grid_row(mesh, u, x_nodes, 0.5 * (y_nodes[iy] + y_nodes[iy + 1]),
                          y_nodes[iy + 1] - y_nodes[iy]);
    }
    return total;
}

double half_plane_field_square_parallel(const Mesh& mesh, std::span<const double> u,
                                        std::span<const double> x_nodes,
                                        std::span<const double> y_nodes) {
    // Rows are reduced in index order afterwards so the sum matches the
    // serial kernel exactly.
    const auto rows = static_cast<std::ptrdiff_t>(y_nodes.size()) - 1;
    if (rows <= 0) return 0.0;
    std::vector<double> partial(static_cast<std::size_t>(rows));
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t iy = 0; iy < rows; ++iy) {
        const auto k = static_cast<std::size_t>(iy);
        partial[k] = grid_row(mesh, u, x_nodes, 0.5 * (y_nodes[k] + y_nodes[k + 1]),
                              y_nodes[k + 1] - y_nodes[k]);
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace qloss::em

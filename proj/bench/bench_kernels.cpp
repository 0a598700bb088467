// Serial vs OpenMP timings for the solver kernels.
//   bench_kernels [discretization] [repeats]

#include "qloss/em_kernels.hpp"
#include "qloss/em_solver.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void row(const char* name, double serial, double parallel) {
    std::printf("%-22s %10.2f %10.2f %8.2fx\n", name, serial, parallel, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
    const int disc = argc > 1 ? std::atoi(argv[1]) : 256;
    const int repeats = argc > 2 ? std::atoi(argv[2]) : 3;

    const auto geom = qloss::em::interdigital_unit_cell(5.0, 7).with_discretization(disc);
    const auto mesh = qloss::em::build_mesh(geom);
    const auto sol = qloss::em::solve_cross_section(geom);

    const double eps_eff = qloss::em::kVacuumPermittivity * 0.5 * (geom.eps_sub_rel + geom.eps_vac_rel);
    std::vector<double> u(mesh.size());
    // normalised charge, as the solver stores it internally
    for (std::size_t j = 0; j < mesh.size(); ++j) {
        u[j] = sol.metal[j].sigma / (eps_eff * 1e6);
    }

    std::vector<double> xs;
    for (const auto& g : sol.gaps) xs.push_back(0.5 * (g.x_left_um + g.x_right_um));

    std::vector<double> xn, yn;
    const double span = geom.span_um();
    for (int i = 0; i <= 400; ++i) xn.push_back(-span + 3.0 * span * i / 400.0);
    for (int i = 0; i <= 200; ++i) yn.push_back(1e-3 * std::pow(1e4, i / 200.0));

    std::printf("elements %zu, gap samples %zu, threads %d\n", mesh.size(), xs.size(), omp_get_max_threads());
    std::printf("%-22s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

    Eigen::MatrixXd g;
    row("assemble_influence", time_ms([&] { qloss::em::assemble_influence_serial(mesh, g); }, repeats),
        time_ms([&] { qloss::em::assemble_influence_parallel(mesh, g); }, repeats));
    row("tangential_field", time_ms([&] { (void)qloss::em::tangential_field_serial(mesh, u, xs); }, repeats),
        time_ms([&] { (void)qloss::em::tangential_field_parallel(mesh, u, xs); }, repeats));
    row("half_plane_field_sq",
        time_ms([&] { (void)qloss::em::half_plane_field_square_serial(mesh, u, xn, yn); }, repeats),
        time_ms([&] { (void)qloss::em::half_plane_field_square_parallel(mesh, u, xn, yn); }, repeats));
    return 0;
}

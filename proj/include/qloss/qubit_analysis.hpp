#pragma once

// Measurement-side processing: T1 decay fits, repeated-round statistics and
// Purcell-limit bookkeeping that turn raw lifetimes into quality factors.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qloss::qubit {

struct DecayTrace {
    std::vector<double> delays_us;
    std::vector<double> populations;
    std::string device_id;
    int round = 0;

    void validate() const;
};

struct T1Estimate {
    double t1_us = 0.0;
    double fit_err_us = 0.0;
    double amplitude = 0.0;
    double offset = 0.0;
    double rms_residual = 0.0;
    int iterations = 0;
};

enum class FitLoss { LeastSquares, SoftL1 };

struct ExpFitOptions {
    FitLoss loss = FitLoss::LeastSquares;
    double soft_l1_scale = 0.02;  // residual scale where SoftL1 turns linear
    int max_iterations = 200;
};

/// Fits A exp(-t/T1) + B. Starting point: A = first - last, B = last,
/// T1 = first delay where the trace falls below B + A/e.
T1Estimate fit_exponential(const DecayTrace& trace, const ExpFitOptions& options = {});

/// Batch version; traces are fitted concurrently. Failures are rethrown
/// after all fits finish, for the first failing trace in input order.
std::vector<T1Estimate> fit_exponential_batch(const std::vector<DecayTrace>& traces,
                                              const ExpFitOptions& options = {});

enum class CentralStat { Mean, Median };

struct Histogram {
    std::vector<double> bin_left;
    double bin_width = 0.0;
    std::vector<std::size_t> counts;
};

struct T1Statistics {
    double mean_us = 0.0;    // or median, per `central`
    double std_us = 0.0;     // population standard deviation
    CentralStat central = CentralStat::Mean;
    std::size_t count = 0;
    Histogram histogram;
};

T1Statistics t1_statistics(const std::vector<double>& t1_us, int bins = 12, CentralStat central = CentralStat::Mean);
T1Statistics t1_statistics(const std::vector<T1Estimate>& estimates, int bins = 12,
                           CentralStat central = CentralStat::Mean);

/// Dispersive-readout parameters, angular frequencies in rad/s.
struct PurcellParams {
    std::optional<double> g;
    double delta = 0.0;
    double kappa = 0.0;
    std::optional<double> chi;
};

struct PurcellLimit {
    double t_purcell_s = 0.0;  // +inf when unbounded
    bool unbounded = false;
    double g_used = 0.0;  // rad/s
    std::vector<std::string> warnings;
};

inline constexpr double kUnboundedPurcellSeconds = 1e6;

/// T_P = Delta^2 / (g^2 kappa); g from sqrt(chi Delta) when only chi is known.
PurcellLimit purcell_limit(const PurcellParams& params);

/// Removes the Purcell channel from T1 and converts to Q with the cyclic qubit
/// frequency. `t_purcell_ms` may be +inf.
double purcell_subtract_q(double t1_mean_us, double t_purcell_ms, double omega_q_ghz);

/// Per-round order: subtract Purcell from each T1, convert, then average.
struct QStatistics {
    double mean = 0.0;
    double std = 0.0;
};
QStatistics q_from_rounds(const std::vector<double>& t1_rounds_us, double t_purcell_ms, double omega_q_ghz);
/// Alternative order: convert the mean T1 only.
double q_from_mean_t1(const std::vector<double>& t1_rounds_us, double t_purcell_ms, double omega_q_ghz);

DecayTrace read_trace_csv(std::istream& in);
void write_trace_csv(std::ostream& out, const DecayTrace& trace);
void write_histogram_csv(std::ostream& out, const Histogram& h);

}  // namespace qloss::qubit

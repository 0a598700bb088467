#include "qloss/qubit_analysis.hpp"

#include "qloss/errors.hpp"
#include "qloss/numfmt.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace qloss::qubit {

namespace {

constexpr const char* kOrigin = "qubit-analysis";

[[noreturn]] void invalid(const std::string& what) { throw InvalidInput(kOrigin, what); }

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

// Robust noise level from second differences, which cancel a smooth decay.
double noise_floor(const std::vector<double>& y) {
    if (y.size() < 3) return 0.0;
    std::vector<double> d;
    for (std::size_t i = 1; i + 1 < y.size(); ++i) d.push_back(std::abs(y[i - 1] - 2.0 * y[i] + y[i + 1]));
    return median_of(std::move(d)) / 0.6745 / std::sqrt(6.0);
}

struct Eval {
    Eigen::VectorXd r;     // data - model
    Eigen::MatrixXd jac;   // d model / d(A, B, tau)
    Eigen::VectorXd w;     // IRLS weights
    double cost = 0.0;
};

Eval evaluate(const Eigen::VectorXd& t, const Eigen::VectorXd& y, const Eigen::Vector3d& theta,
              const ExpFitOptions& opt) {
    const auto n = t.size();
    Eval e;
    e.r.resize(n);
    e.jac.resize(n, 3);
    e.w.setOnes(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double ex = std::exp(-t(i) / theta(2));
        e.r(i) = y(i) - (theta(0) * ex + theta(1));
        e.jac(i, 0) = ex;
        e.jac(i, 1) = 1.0;
        e.jac(i, 2) = theta(0) * ex * t(i) / (theta(2) * theta(2));
    }
    if (opt.loss == FitLoss::SoftL1) {
        const double s = opt.soft_l1_scale;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double z = (e.r(i) / s) * (e.r(i) / s);
            e.cost += 2.0 * s * s * (std::sqrt(1.0 + z) - 1.0);
            e.w(i) = 1.0 / std::sqrt(1.0 + z);
        }
    } else {
        e.cost = e.r.squaredNorm();
    }
    return e;
}

}  // namespace

void DecayTrace::validate() const {
    if (delays_us.size() != populations.size()) invalid("trace delay and population lengths differ");
    if (delays_us.size() < 8) invalid("trace needs at least 8 points");
    for (std::size_t i = 0; i < delays_us.size(); ++i) {
        if (!std::isfinite(delays_us[i]) || !std::isfinite(populations[i])) invalid("trace contains non-finite values");
        if (i > 0 && !(delays_us[i] > delays_us[i - 1])) invalid("trace delays must be strictly increasing");
    }
}

T1Estimate fit_exponential(const DecayTrace& trace, const ExpFitOptions& options) {
    trace.validate();
    const auto n = static_cast<Eigen::Index>(trace.delays_us.size());

    // Work in units of the trace span so the iteration is invariant under a
    // change of time unit.
    const double t0 = trace.delays_us.front();
    const double span = trace.delays_us.back() - t0;
    Eigen::VectorXd t(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        t(i) = (trace.delays_us[static_cast<std::size_t>(i)] - t0) / span;
        y(i) = trace.populations[static_cast<std::size_t>(i)];
    }

    const double range = y.maxCoeff() - y.minCoeff();
    const double noise = noise_floor(trace.populations);
    if (!(range > 3.0 * noise) || range == 0.0) {
        std::ostringstream msg;
        msg << "no visible decay: population range " << range << " vs noise floor " << noise;
        throw FitFailure(kOrigin, msg.str());
    }

    Eigen::Vector3d theta;
    theta(0) = y(0) - y(n - 1);
    theta(1) = y(n - 1);
    theta(2) = 1.0;
    const double target = theta(1) + theta(0) / std::numbers::e;
    for (Eigen::Index i = 1; i < n; ++i) {
        const bool crossed = theta(0) > 0.0 ? y(i) <= target : y(i) >= target;
        if (crossed) {
            const double frac = (y(i - 1) - target) / (y(i - 1) - y(i));
            theta(2) = t(i - 1) + std::clamp(frac, 0.0, 1.0) * (t(i) - t(i - 1));
            break;
        }
    }
    if (!(theta(2) > 0.0)) theta(2) = 1.0 / static_cast<double>(n);

    std::vector<double> trace_cost;
    double lambda = 1e-3;
    Eval cur = evaluate(t, y, theta, options);
    trace_cost.push_back(cur.cost);
    bool converged = false;
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        const Eigen::MatrixXd jw = cur.w.asDiagonal() * cur.jac;
        const Eigen::Matrix3d jtj = cur.jac.transpose() * jw;
        const Eigen::Vector3d grad = jw.transpose() * cur.r;
        bool stepped = false;
        while (lambda < 1e16) {
            Eigen::Matrix3d damped = jtj;
            for (int k = 0; k < 3; ++k) damped(k, k) += lambda * std::max(jtj(k, k), 1e-300);
            const Eigen::Vector3d delta = damped.ldlt().solve(grad);
            const Eigen::Vector3d trial = theta + delta;
            if (trial(2) > 0.0 && trial.allFinite()) {
                Eval next = evaluate(t, y, trial, options);
                if (next.cost <= cur.cost) {
                    const bool tiny = (delta.array().abs() <= 1e-13 * (theta.array().abs() + 1e-13)).all();
                    theta = trial;
                    cur = std::move(next);
                    lambda = std::max(lambda * 0.1, 1e-12);
                    trace_cost.push_back(cur.cost);
                    stepped = true;
                    if (tiny) converged = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if (converged) break;
        if (!stepped) {
            // No descent direction left: accept if the gradient vanished.
            const double gnorm = grad.norm();
            const double scale = std::sqrt(jtj.trace()) * (std::sqrt(cur.cost) + 1e-300);
            converged = gnorm <= 1e-8 * scale || cur.cost <= 1e-28 * static_cast<double>(n);
            break;
        }
    }
    if (!converged) {
        throw FitFailure(kOrigin, "exponential fit did not converge in " + std::to_string(it) + " iterations",
                         trace_cost);
    }
    if (!(theta(2) > 0.0) || !theta.allFinite()) {
        throw FitFailure(kOrigin, "fitted T1 is not positive", trace_cost);
    }

    const Eigen::Matrix3d jtj = cur.jac.transpose() * cur.jac;
    const double rss = cur.r.squaredNorm();
    const double s2 = n > 3 ? rss / static_cast<double>(n - 3) : 0.0;
    const Eigen::Matrix3d cov = jtj.inverse() * s2;

    T1Estimate est;
    est.t1_us = theta(2) * span;
    est.fit_err_us = std::sqrt(std::max(cov(2, 2), 0.0)) * span;
    est.amplitude = theta(0);
    est.offset = theta(1);
    est.rms_residual = std::sqrt(rss / static_cast<double>(n));
    est.iterations = it + 1;
    // Shift of origin: A exp(-(t - t0)/T1) = A exp(t0/T1) exp(-t/T1).
    est.amplitude *= std::exp(t0 / est.t1_us);
    return est;
}

std::vector<T1Estimate> fit_exponential_batch(const std::vector<DecayTrace>& traces, const ExpFitOptions& options) {
    std::vector<T1Estimate> out(traces.size());
    std::vector<std::exception_ptr> errors(traces.size());
    const auto count = static_cast<std::ptrdiff_t>(traces.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            out[k] = fit_exponential(traces[k], options);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

T1Statistics t1_statistics(const std::vector<double>& values, int bins, CentralStat central) {
    if (values.empty()) invalid("no T1 estimates to summarise");
    if (bins < 1) invalid("histogram needs at least one bin");
    // Sums run over the sorted values so any permutation gives identical bits.
    std::vector<double> t1_us = values;
    std::sort(t1_us.begin(), t1_us.end());
    const double n = static_cast<double>(t1_us.size());

    T1Statistics s;
    s.count = t1_us.size();
    s.central = central;
    const double mean = std::accumulate(t1_us.begin(), t1_us.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : t1_us) ss += (v - mean) * (v - mean);
    s.std_us = std::sqrt(ss / n);
    s.mean_us = central == CentralStat::Mean ? mean : median_of(t1_us);

    const auto [lo_it, hi_it] = std::minmax_element(t1_us.begin(), t1_us.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    Histogram& h = s.histogram;
    h.bin_width = hi > lo ? (hi - lo) / bins : std::max(std::abs(lo) * 1e-6, 1e-12);
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (int b = 0; b < bins; ++b) h.bin_left.push_back(lo + b * h.bin_width);
    for (double v : t1_us) {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / h.bin_width));
        h.counts[std::min(b, h.counts.size() - 1)] += 1;
    }
    return s;
}

T1Statistics t1_statistics(const std::vector<T1Estimate>& estimates, int bins, CentralStat central) {
    std::vector<double> v;
    v.reserve(estimates.size());
    for (const auto& e : estimates) v.push_back(e.t1_us);
    return t1_statistics(v, bins, central);
}

PurcellLimit purcell_limit(const PurcellParams& params) {
    if (!(params.kappa > 0.0)) invalid("cavity linewidth kappa must be > 0");
    if (params.delta == 0.0 || !std::isfinite(params.delta)) invalid("detuning delta must be non-zero");

    PurcellLimit out;
    double g = 0.0;
    if (params.g) {
        g = std::abs(*params.g);
    } else if (params.chi) {
        g = std::sqrt(std::abs(*params.chi * params.delta));
    } else {
        invalid("either g or chi is required");
    }
    out.g_used = g;
    if (g > 0.0 && std::abs(params.delta) / g < 5.0) {
        std::ostringstream msg;
        msg << "|delta|/g = " << std::abs(params.delta) / g << " < 5: outside the dispersive regime";
        out.warnings.push_back(msg.str());
    }
    const double ratio = params.delta / g;  // inf when g == 0
    const double tp = ratio * ratio / params.kappa;
    if (!(tp < kUnboundedPurcellSeconds)) {
        out.unbounded = true;
        out.t_purcell_s = std::numeric_limits<double>::infinity();
    } else {
        out.t_purcell_s = tp;
    }
    return out;
}

double purcell_subtract_q(double t1_mean_us, double t_purcell_ms, double omega_q_ghz) {
    if (!(t1_mean_us > 0.0)) invalid("T1 must be positive");
    if (!(omega_q_ghz > 0.0)) invalid("qubit frequency must be positive");
    if (!(t_purcell_ms * 1000.0 > t1_mean_us))
        invalid("Purcell limit must exceed the measured T1 (inconsistent inputs)");
    const double t1_intrinsic_us = 1.0 / (1.0 / t1_mean_us - 1.0 / (t_purcell_ms * 1000.0));
    return 2.0 * std::numbers::pi * omega_q_ghz * 1e9 * t1_intrinsic_us * 1e-6;
}

QStatistics q_from_rounds(const std::vector<double>& t1_rounds_us, double t_purcell_ms, double omega_q_ghz) {
    if (t1_rounds_us.empty()) invalid("no T1 rounds");
    std::vector<double> q;
    q.reserve(t1_rounds_us.size());
    for (double t1 : t1_rounds_us) q.push_back(purcell_subtract_q(t1, t_purcell_ms, omega_q_ghz));
    const auto s = t1_statistics(q, 1);
    return {s.mean_us, s.std_us};
}

double q_from_mean_t1(const std::vector<double>& t1_rounds_us, double t_purcell_ms, double omega_q_ghz) {
    return purcell_subtract_q(t1_statistics(t1_rounds_us, 1).mean_us, t_purcell_ms, omega_q_ghz);
}

DecayTrace read_trace_csv(std::istream& in) {
    DecayTrace tr;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "delay_us,population")
                throw ParseError(kOrigin, "trace header must be 'delay_us,population'", lineno);
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(kOrigin, "expected two columns", lineno);
        try {
            std::size_t used = 0;
            const std::string a = line.substr(0, comma);
            const std::string b = line.substr(comma + 1);
            tr.delays_us.push_back(std::stod(a, &used));
            if (used != a.size()) throw std::invalid_argument(a);
            tr.populations.push_back(std::stod(b, &used));
            if (used != b.size()) throw std::invalid_argument(b);
        } catch (const std::logic_error&) {
            throw ParseError(kOrigin, "malformed number on trace line " + std::to_string(lineno), lineno);
        }
    }
    if (!header) throw ParseError(kOrigin, "empty trace file", lineno);
    return tr;
}

void write_trace_csv(std::ostream& out, const DecayTrace& trace) {
    out << "delay_us,population\n";
    for (std::size_t i = 0; i < trace.delays_us.size(); ++i)
        out << fmt_sig(trace.delays_us[i], 17) << ',' << fmt_sig(trace.populations[i], 17) << '\n';
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
    out << "bin_left,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) out << fmt9(h.bin_left[b]) << ',' << h.counts[b] << '\n';
}

}  // namespace qloss::qubit

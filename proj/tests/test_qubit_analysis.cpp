#include "qloss/errors.hpp"
#include "qloss/qubit_analysis.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

using namespace qloss;
using namespace qloss::qubit;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

DecayTrace synthetic(double t1, double a, double b, double sigma, std::uint64_t seed, double t_max = 1600.0,
                     int n = 32) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    DecayTrace tr;
    for (int i = 0; i < n; ++i) {
        const double t = t_max * i / (n - 1);
        tr.delays_us.push_back(t);
        tr.populations.push_back(a * std::exp(-t / t1) + b + (sigma > 0.0 ? noise(rng) : 0.0));
    }
    return tr;
}

}  // namespace

TEST_CASE("noiseless decay is recovered exactly") {
    const auto est = fit_exponential(synthetic(316.8, 1.0, 0.0, 0.0, 0));
    CHECK(std::abs(est.t1_us / 316.8 - 1.0) < 1e-9);
    CHECK(std::abs(est.amplitude - 1.0) < 1e-9);
    CHECK(std::abs(est.offset) < 1e-9);
    CHECK(est.fit_err_us >= 0.0);
}

TEST_CASE("offset, amplitude and a late start are handled") {
    auto tr = synthetic(120.0, 0.8, 0.07, 0.0, 0);
    for (auto& t : tr.delays_us) t += 5.0;
    for (std::size_t i = 0; i < tr.populations.size(); ++i) tr.populations[i] = 0.8 * std::exp(-tr.delays_us[i] / 120.0) + 0.07;
    const auto est = fit_exponential(tr);
    CHECK(std::abs(est.t1_us / 120.0 - 1.0) < 1e-9);
    CHECK(std::abs(est.amplitude / 0.8 - 1.0) < 1e-9);
    CHECK(std::abs(est.offset / 0.07 - 1.0) < 1e-8);
}

TEST_CASE("fit is invariant under a change of time unit") {
    const auto us = synthetic(316.8, 1.0, 0.0, 0.02, 42);
    DecayTrace ms = us;
    for (auto& t : ms.delays_us) t /= 1000.0;
    const auto a = fit_exponential(us);
    const auto b = fit_exponential(ms);
    CHECK(b.t1_us * 1000.0 == doctest::Approx(a.t1_us).epsilon(1e-9));
    CHECK(b.fit_err_us * 1000.0 == doctest::Approx(a.fit_err_us).epsilon(1e-6));
    CHECK(b.rms_residual == doctest::Approx(a.rms_residual).epsilon(1e-9));
}

TEST_CASE("noisy decays stay close to truth") {
    std::vector<double> t1;
    for (std::uint64_t seed = 0; seed < 20; ++seed) t1.push_back(fit_exponential(synthetic(316.8, 1.0, 0.0, 0.02, seed)).t1_us);
    std::sort(t1.begin(), t1.end());
    CHECK(0.5 * (t1[9] + t1[10]) == doctest::Approx(316.8).epsilon(0.03));
}

TEST_CASE("soft-L1 loss shrugs off an outlier") {
    auto tr = synthetic(316.8, 1.0, 0.0, 0.005, 3);
    tr.populations[5] += 0.5;
    ExpFitOptions robust;
    robust.loss = FitLoss::SoftL1;
    const auto ls = fit_exponential(tr);
    const auto sl1 = fit_exponential(tr, robust);
    CHECK(std::abs(sl1.t1_us - 316.8) < std::abs(ls.t1_us - 316.8));
}

TEST_CASE("traces without decay are rejected") {
    DecayTrace flat;
    for (int i = 0; i < 16; ++i) {
        flat.delays_us.push_back(10.0 * i);
        flat.populations.push_back(0.5);
    }
    CHECK_THROWS_AS(fit_exponential(flat), FitFailure);
}

TEST_CASE("trace validation") {
    auto tr = synthetic(100.0, 1.0, 0.0, 0.0, 0, 500.0, 7);
    CHECK_THROWS_AS(fit_exponential(tr), InvalidInput);
    tr = synthetic(100.0, 1.0, 0.0, 0.0, 0, 500.0, 10);
    std::swap(tr.delays_us[2], tr.delays_us[3]);
    CHECK_THROWS_AS(fit_exponential(tr), InvalidInput);
    tr = synthetic(100.0, 1.0, 0.0, 0.0, 0, 500.0, 10);
    tr.populations[4] = std::nan("");
    CHECK_THROWS_AS(fit_exponential(tr), InvalidInput);
}

TEST_CASE("batch fitting matches one-by-one and reports failures in order") {
    std::vector<DecayTrace> traces;
    for (std::uint64_t s = 0; s < 6; ++s) traces.push_back(synthetic(200.0 + 20.0 * s, 1.0, 0.0, 0.02, s));
    const auto batch = fit_exponential_batch(traces);
    for (std::size_t i = 0; i < traces.size(); ++i) CHECK(batch[i].t1_us == fit_exponential(traces[i]).t1_us);

    traces[4].populations.assign(traces[4].populations.size(), 0.3);
    CHECK_THROWS_AS(fit_exponential_batch(traces), FitFailure);
}

TEST_CASE("T1 statistics") {
    const auto s = t1_statistics(std::vector<double>{291.7 - 68.6, 291.7 + 68.6});
    CHECK(s.mean_us == doctest::Approx(291.7).epsilon(1e-12));
    CHECK(s.std_us == doctest::Approx(68.6).epsilon(1e-12));

    const auto one = t1_statistics(std::vector<double>{150.0});
    CHECK(one.std_us == 0.0);
    CHECK(one.mean_us == 150.0);
    CHECK(one.histogram.counts[0] == 1);

    CHECK_THROWS_AS(t1_statistics(std::vector<double>{}), InvalidInput);
    CHECK_THROWS_AS(t1_statistics(std::vector<T1Estimate>{}), InvalidInput);
}

TEST_CASE("T1 statistics are permutation invariant and match a two-pass reference") {
    std::mt19937_64 rng(5);
    std::lognormal_distribution<double> dist(std::log(300.0), 0.2);
    std::vector<double> v(57);
    for (auto& x : v) x = dist(rng);

    const auto a = t1_statistics(v, 10);
    auto shuffled = v;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto b = t1_statistics(shuffled, 10);
    CHECK(a.mean_us == b.mean_us);
    CHECK(a.std_us == b.std_us);
    CHECK(a.histogram.counts == b.histogram.counts);
    CHECK(a.histogram.bin_left == b.histogram.bin_left);

    // two-pass reference over the canonical (sorted) order
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double x : sorted) sum += x;
    const double mean = sum / static_cast<double>(sorted.size());
    double ss = 0.0;
    for (double x : sorted) ss += (x - mean) * (x - mean);
    CHECK(a.mean_us == mean);
    CHECK(a.std_us == std::sqrt(ss / static_cast<double>(sorted.size())));

    std::size_t total = 0;
    for (auto c : a.histogram.counts) total += c;
    CHECK(total == v.size());

    const auto med = t1_statistics(v, 10, CentralStat::Median);
    CHECK(med.mean_us == sorted[28]);
}

TEST_CASE("Purcell limit examples") {
    PurcellParams p;
    p.g = kTwoPi * 37.3e6;
    p.delta = kTwoPi * 2.03e9;
    p.kappa = kTwoPi * 52.4e3;
    const auto lim = purcell_limit(p);
    CHECK(lim.t_purcell_s == doctest::Approx(9.0e-3).epsilon(0.01));
    CHECK_FALSE(lim.unbounded);
    CHECK(lim.warnings.empty());

    PurcellParams c;
    c.chi = kTwoPi * 0.685e6;
    c.delta = kTwoPi * 2.03e9;
    c.kappa = kTwoPi * 52.4e3;
    CHECK(purcell_limit(c).g_used / kTwoPi == doctest::Approx(37.3e6).epsilon(0.005));

    PurcellParams weak = p;
    weak.g = 0.0;
    const auto inf = purcell_limit(weak);
    CHECK(inf.unbounded);
    CHECK(std::isinf(inf.t_purcell_s));
    weak.g = kTwoPi * 1e3;
    CHECK(purcell_limit(weak).unbounded);

    PurcellParams strong = p;
    strong.g = kTwoPi * 500e6;
    CHECK_FALSE(purcell_limit(strong).warnings.empty());

    PurcellParams bad = p;
    bad.kappa = 0.0;
    CHECK_THROWS_AS(purcell_limit(bad), InvalidInput);
    bad = p;
    bad.delta = 0.0;
    CHECK_THROWS_AS(purcell_limit(bad), InvalidInput);
    bad = p;
    bad.g.reset();
    CHECK_THROWS_AS(purcell_limit(bad), InvalidInput);
}

TEST_CASE("Purcell subtraction and Q conversion") {
    CHECK(purcell_subtract_q(116.3, 9.3, 4.21) == doctest::Approx(3.12e6).epsilon(0.01));
    CHECK(purcell_subtract_q(236.0, 2.7, 4.70) == doctest::Approx(7.63e6).epsilon(0.01));
    CHECK(purcell_subtract_q(200.0, std::numeric_limits<double>::infinity(), 5.0) ==
          doctest::Approx(kTwoPi * 5.0e9 * 200.0e-6).epsilon(1e-15));
    CHECK_THROWS_AS(purcell_subtract_q(200.0, 0.2, 5.0), InvalidInput);
    CHECK_THROWS_AS(purcell_subtract_q(200.0, 0.1, 5.0), InvalidInput);
}

TEST_CASE("Purcell round trip recovers T1") {
    for (double t1 : {50.0, 116.3, 236.0, 700.0}) {
        for (double tp : {1.0, 2.7, 9.3, 120.0}) {
            const double f = 4.5;
            const double q = purcell_subtract_q(t1, tp, f);
            const double t1_intrinsic_us = q / (kTwoPi * f * 1e9) * 1e6;
            const double back = 1.0 / (1.0 / t1_intrinsic_us + 1.0 / (tp * 1000.0));
            CHECK(std::abs(back / t1 - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("per-round versus mean-T1 Q statistics") {
    const std::vector<double> rounds{250.0, 310.0, 280.0, 330.0};
    const auto per_round = q_from_rounds(rounds, 9.0, 4.5);
    const double from_mean = q_from_mean_t1(rounds, 9.0, 4.5);
    CHECK(per_round.std > 0.0);
    // 1/(1/t - c) is convex, so averaging after conversion lands higher
    CHECK(per_round.mean > from_mean);
    CHECK(per_round.mean == doctest::Approx(from_mean).epsilon(0.01));
}

TEST_CASE("trace csv round trip and parse errors") {
    const auto tr = synthetic(100.0, 1.0, 0.0, 0.01, 1, 400.0, 12);
    std::stringstream io;
    write_trace_csv(io, tr);
    const auto back = read_trace_csv(io);
    CHECK(back.delays_us == tr.delays_us);
    CHECK(back.populations == tr.populations);

    std::istringstream bad_header("t,p\n0,1\n");
    CHECK_THROWS_AS(read_trace_csv(bad_header), ParseError);
    std::istringstream bad_row("delay_us,population\n0,1\n1,abc\n");
    try {
        read_trace_csv(bad_row);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }

    Histogram h{{0.0, 1.0}, 1.0, {2, 3}};
    std::ostringstream out;
    write_histogram_csv(out, h);
    CHECK(out.str() == "bin_left,count\n0,2\n1,3\n");
}

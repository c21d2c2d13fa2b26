// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "calfw/certificates.hpp"
#include "calfw/env.hpp"
#include "calfw/harness.hpp"
#include "calfw/parallel.hpp"
#include "calfw/policy.hpp"
#include "calfw/wrapper.hpp"
#include "oracles.hpp"

using namespace calfw;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

struct Criterion {
    const char* name;
    double limit_s;  // 0: no runtime limit
    std::function<Outcome()> run;
};

fs::path models_dir() { return fs::path(CALFW_MODELS_DIR) / "pendulum"; }

Outcome lower_bound_inequality() {
    long checked = 0, violations = 0, log_violations = 0;
    for (double lambda : {0.5, 0.9, 0.99, 0.9999}) {
        for (double p : {0.5, 0.95, 1.0}) {
            // one backward pass per pair; unit tests tie the table to the pointwise product
            const auto cdf = cert::reaching_time_cdf_table(lambda, p, 50);
            for (long t = 1; t <= 50; ++t) {
                ++checked;
                if (!(cert::reaching_time_lower_bound(lambda, p, t) <= cdf[static_cast<std::size_t>(t)])) ++violations;
            }
            // log form separates the two sides where both underflow (lambda near 1)
            const long stride = 10;
            for (long t = 1; t <= 50; t += stride) {
                if (!(cert::reaching_time_log_lower_bound(lambda, p, t) <= cert::reaching_time_log_cdf(lambda, p, t))) {
                    ++log_violations;
                }
            }
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%ld points, %ld violations; log-space spot check %ld violations", checked,
                  violations, log_violations);
    return {violations == 0 && log_violations == 0 && checked == 600, buf};
}

Outcome reaching_time_law() {
    const double lambda = 0.9, p = 0.5;
    const std::size_t n = 100000;
    Rng rng(derive_seed(2024, 0));
    std::vector<long> times(n);
    for (auto& t : times) t = cert::sample_T_rho_bar(lambda, p, rng);
    std::sort(times.begin(), times.end());
    const auto table = cert::reaching_time_cdf_table(lambda, p, 100);
    double worst = 0.0;
    long worst_t = 0;
    for (long t = 0; t <= 100; ++t) {
        const double ecdf =
            static_cast<double>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) / static_cast<double>(n);
        const double err = std::abs(ecdf - table[static_cast<std::size_t>(t)]);
        if (err > worst) {
            worst = err;
            worst_t = t;
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "1e5 samples, max |ECDF - product| = %.4f at t = %ld (tol 0.01)", worst, worst_t);
    return {worst <= 0.01, buf};
}

Outcome base_use_finiteness() {
    const env::PendulumEnv pend;
    const auto fb = policy::make_fallback(pend);
    const policy::ConstantPolicy base(pend, {2.0});
    const policy::HandcraftedCritic critic(pend);
    const double v_bar = *critic.upper_bound();
    const int horizon = 20000;
    const std::size_t runs = 100;

    std::vector<wrapper::TrialRecord> recs(runs);
    parallel_for(runs, [&](std::size_t k) {
        wrapper::WrapperConfig cfg;
        cfg.lambda = 0.99;
        cfg.p_relax = 1.0;
        cfg.horizon = horizon;
        cfg.seed = derive_seed(1, k);
        recs[k] = wrapper::run_episode(pend, base, critic, *fb, cfg);
        recs[k].log.clear();
        recs[k].log.shrink_to_fit();
    });
    std::size_t finite = 0, within = 0;
    long latest = 0, max_improve = 0;
    for (const auto& r : recs) {
        const long cap = static_cast<long>(std::ceil((v_bar - r.v0) / 0.01));
        if (r.n_improve <= cap) ++within;
        max_improve = std::max(max_improve, r.n_improve);
        // a base decision this late would mean acceptances had not died out
        if (r.steps == horizon && (!r.last_base_index || *r.last_base_index < horizon / 2)) ++finite;
        if (r.last_base_index) latest = std::max(latest, *r.last_base_index);
    }
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "lambda 0.99, p 1: %zu/100 runs stop using the base (latest base step %ld of %d); "
                  "improvement cap held in %zu/100 (max N_V %ld)",
                  finite, latest, horizon, within, max_improve);
    return {finite == runs && within == runs, buf};
}

Outcome conservative_safety() {
    harness::ExperimentConfig cfg;
    cfg.modes = {harness::Mode::conservative, harness::Mode::fallback_only};
    cfg.horizon = 1000;
    cfg.policy_path = (models_dir() / "policy_late.json").string();
    cfg.critic_path = (models_dir() / "critic_late.json").string();
    const auto out = harness::run_experiment(cfg);
    const auto& cons = out[0];
    const auto& fb = out[1];
    std::size_t n_random = 0;
    for (const auto& t : cons.trials) n_random += static_cast<std::size_t>(t.n_random);
    char buf[200];
    std::snprintf(buf, sizeof buf, "conservative %zu/30, fallback-only %zu/30, horizon 1000, N_rho total %zu",
                  cons.reached, fb.reached, n_random);
    return {cons.reached == 30 && cons.reached >= fb.reached && n_random == 0, buf};
}

Outcome mode_ordering() {
    harness::ExperimentConfig cfg;
    cfg.modes = {harness::Mode::conservative, harness::Mode::brave};
    cfg.policy_path = (models_dir() / "policy_late.json").string();
    cfg.critic_path = (models_dir() / "critic_late.json").string();
    const auto out = harness::run_experiment(cfg);
    const auto& cons = out[0];
    const auto& brave = out[1];
    const double pooled = harness::pooled_std(cons, brave);
    char buf[200];
    std::snprintf(buf, sizeof buf, "brave %.2f vs conservative %.2f - pooled std %.2f = %.2f (30 shared seeds)",
                  brave.mean_reward, cons.mean_reward, pooled, cons.mean_reward - pooled);
    return {brave.mean_reward >= cons.mean_reward - pooled, buf};
}

Outcome dynamics_oracle() {
    const env::PendulumEnv pend;
    const env::CartPoleSwingupEnv cart;
    Rng rng(derive_seed(6, 0));
    double worst_p = 0.0, worst_c = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double th = rng.uniform(-10.0, 10.0), w = rng.uniform(-8.0, 8.0), u = rng.uniform(-3.0, 3.0);
        const auto got = pend.step(std::vector<double>{th, w}, std::vector<double>{u});
        const auto want = oracle::pendulum(th, w, u);
        for (int k = 0; k < 2; ++k) worst_p = std::max(worst_p, std::abs(got[k] - want[k]));

        const std::array<double, 4> s{rng.uniform(-5.0, 5.0), rng.uniform(-8.0, 8.0), rng.uniform(-10.0, 10.0),
                                      rng.uniform(-10.0, 10.0)};
        const double f = rng.uniform(-15.0, 15.0);
        const auto got_c = cart.step(std::vector<double>(s.begin(), s.end()), std::vector<double>{f});
        const auto want_c = oracle::cartpole(s, f);
        for (int k = 0; k < 4; ++k) worst_c = std::max(worst_c, std::abs(got_c[k] - want_c[k]));
    }
    const bool eq_p = pend.step(std::vector<double>{0.0, 0.0}, std::vector<double>{0.0}) == std::vector<double>{0.0, 0.0};
    const bool eq_c = cart.step(std::vector<double>(4, 0.0), std::vector<double>{0.0}) == std::vector<double>(4, 0.0);
    char buf[200];
    std::snprintf(buf, sizeof buf, "max abs error pendulum %.2e, cartpole %.2e (tol 1e-12); equilibria fixed: %s",
                  worst_p, worst_c, eq_p && eq_c ? "yes" : "no");
    return {worst_p <= 1e-12 && worst_c <= 1e-12 && eq_p && eq_c, buf};
}

Outcome certificate_pipeline() {
    const env::PendulumEnv pend;
    const auto fb = policy::make_fallback(pend);
    const policy::HandcraftedCritic critic(pend);
    const policy::NetworkPolicy base(pend, policy::load_portable_weights(models_dir() / "policy_late.json"));
    harness::CertifyConfig cfg;
    cfg.d_circ = 2.0;
    cfg.d_star = 0.3;
    const auto report = harness::certify(pend, critic, base, *fb, cfg);
    const auto& q = report.quantities;
    char buf[260];
    std::snprintf(buf, sizeof buf,
                  "tau %ld, tau_f %ld, delta %.3g, fit c %.3g a %.3g eps %.3g; %zu/30 trials within d* after "
                  "(tau + T_rho)*tau_f",
                  q.tau, q.tau_f, q.delta, report.fit.cert.c, report.fit.cert.a, report.fit.cert.epsilon,
                  report.satisfied);
    return {q.tau >= 1 && q.tau_f >= 1 && q.delta >= 0.0 && report.satisfied >= 29, buf};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"lower-bound-inequality", 1.0, lower_bound_inequality},
        {"reaching-time-law", 30.0, reaching_time_law},
        {"base-use-finiteness", 120.0, base_use_finiteness},
        {"conservative-safety", 60.0, conservative_safety},
        {"mode-ordering", 0.0, mode_ordering},
        {"dynamics-oracle", 1.0, dynamics_oracle},
        {"certificate-pipeline", 120.0, certificate_pipeline},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = c.limit_s <= 0.0 || secs < c.limit_s;
        const bool pass = o.ok && in_time;
        if (!pass) ++failed;
        char timing[64];
        if (c.limit_s > 0.0) {
            std::snprintf(timing, sizeof timing, "%.2fs/%.0fs%s", secs, c.limit_s, in_time ? "" : " over limit");
        } else {
            std::snprintf(timing, sizeof timing, "%.2fs", secs);
        }
        std::printf("%s %-22s [%s] %s\n", pass ? "PASS" : "FAIL", c.name, timing, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "calfw/harness.hpp"

using namespace calfw;
using namespace calfw::harness;
namespace fs = std::filesystem;

namespace {

fs::path models_dir() { return fs::path(CALFW_TEST_DATA_DIR) / ".." / ".." / "models" / "pendulum"; }

ExperimentConfig late_config(std::vector<Mode> modes) {
    ExperimentConfig cfg;
    cfg.modes = std::move(modes);
    cfg.policy_path = (models_dir() / "policy_late.json").string();
    cfg.critic_path = (models_dir() / "critic_late.json").string();
    return cfg;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string csv_bytes(const std::vector<ModeSummary>& s) {
    std::ostringstream a, b, c;
    write_trials_csv(a, s);
    write_aggregate_csv(b, s);
    write_plot_data_csv(c, s);
    return a.str() + b.str() + c.str();
}

const ModeSummary& find(const std::vector<ModeSummary>& all, Mode m) {
    for (const auto& s : all) {
        if (s.mode == m) return s;
    }
    throw std::runtime_error("mode missing");
}

}  // namespace

TEST_CASE("mode names and relaxation values") {
    for (Mode m : {Mode::conservative, Mode::balanced, Mode::brave, Mode::base_only, Mode::fallback_only}) {
        CHECK(parse_mode(to_string(m)) == m);
    }
    CHECK(to_string(Mode::base_only) == "base-only");
    CHECK(to_string(Mode::fallback_only) == "fallback-only");
    CHECK(default_p_relax(Mode::conservative) == 0.0);
    CHECK(default_p_relax(Mode::balanced) == 0.5);
    CHECK(default_p_relax(Mode::brave) == 0.95);
    CHECK_FALSE(uses_base(Mode::fallback_only));
    CHECK(uses_base(Mode::base_only));
    CHECK_THROWS(parse_mode("reckless"));

    ExperimentConfig cfg;
    const auto w = mode_wrapper_config(cfg, Mode::brave, 200, 5);
    CHECK(w.p_relax == 0.95);
    CHECK(w.lambda == 0.9999);
    CHECK(w.nu == 0.01);
    CHECK(w.horizon == 200);
    cfg.p_relax = 0.3;
    CHECK(mode_wrapper_config(cfg, Mode::brave, 200, 5).p_relax == 0.3);
}

TEST_CASE("experiment config from JSON") {
    const auto cfg = experiment_config_from_json(
        {{"env", "cartpole_swingup"}, {"modes", {"conservative", "brave"}}, {"trials", 5}, {"lambda", 0.99}});
    CHECK(cfg.env_id == "cartpole_swingup");
    CHECK(cfg.modes == std::vector<Mode>{Mode::conservative, Mode::brave});
    CHECK(cfg.trials == 5);
    CHECK(cfg.lambda == 0.99);
    CHECK_THROWS(experiment_config_from_json({{"trails", 5}}));
    CHECK_THROWS(experiment_config_from_json({{"modes", {"sideways"}}}));
    ExperimentConfig bad;
    bad.trials = 0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("fallback-only reaches the goal on every pendulum seed") {
    ExperimentConfig cfg;
    cfg.modes = {Mode::fallback_only};
    const auto out = run_experiment(cfg);
    REQUIRE(out.size() == 1);
    CHECK(out[0].reached == 30);
    CHECK(out[0].reach_pct() == 100.0);
    CHECK(out[0].checkpoint == "none");
}

TEST_CASE("wrapped modes against the unwrapped baselines") {
    auto cfg = late_config({Mode::conservative, Mode::balanced, Mode::brave, Mode::base_only, Mode::fallback_only});
    const auto out = run_experiment(cfg);
    const auto& cons = find(out, Mode::conservative);
    const auto& brave = find(out, Mode::brave);
    const auto& base = find(out, Mode::base_only);
    const auto& fb = find(out, Mode::fallback_only);
    for (const auto& s : out) MESSAGE(to_string(s.mode) << ": " << s.mean_reward << " +- " << s.std_reward << ", " << s.reached << "/30");

    CHECK(cons.reached >= fb.reached);
    CHECK(std::abs(brave.mean_reward - base.mean_reward) <= base.std_reward);

    for (const auto& s : out) {
        REQUIRE(s.trials.size() == 30);
        for (const auto& t : s.trials) {
            // unwrapped base steps are forced, not accepted
            if (s.mode != Mode::base_only) REQUIRE(t.n_base == t.n_improve + t.n_random);
            if (s.mode == Mode::conservative) REQUIRE(t.n_random == 0);
            if (s.mode == Mode::fallback_only) REQUIRE(t.n_base == 0);
            if (s.mode == Mode::base_only) REQUIRE(t.n_base == t.steps);
        }
    }
    // every mode sees the same initial states
    for (std::size_t k = 0; k < 30; ++k) CHECK(cons.trials[k].seed == fb.trials[k].seed);
}

TEST_CASE("per-trial records agree with the summaries") {
    env::PendulumEnv pend;
    const auto fb = policy::make_fallback(pend);
    policy::HandcraftedCritic critic(pend);
    policy::ConstantPolicy base(pend, {0.7});
    ExperimentConfig cfg;
    cfg.trials = 8;
    for (Mode m : {Mode::conservative, Mode::balanced, Mode::brave}) {
        std::vector<wrapper::TrialRecord> recs;
        const auto s = run_mode(pend, m, &base, &critic, *fb, cfg, &recs);
        REQUIRE(recs.size() == 8);
        for (std::size_t k = 0; k < recs.size(); ++k) {
            CHECK(static_cast<int>(recs[k].log.size()) == recs[k].steps);
            CHECK(recs[k].steps == 200);
            CHECK(s.trials[k].n_base == recs[k].n_improve + recs[k].n_random);
            CHECK(s.trials[k].reward == recs[k].cumulative_reward);
        }
    }
    CHECK_THROWS(run_mode(pend, Mode::brave, nullptr, nullptr, *fb, cfg));
}

TEST_CASE("same master seed gives identical bytes") {
    env::PendulumEnv pend;
    const auto fb = policy::make_fallback(pend);
    policy::HandcraftedCritic critic(pend);
    policy::ConstantPolicy base(pend, {-0.4});
    ExperimentConfig cfg;
    cfg.trials = 10;
    cfg.seed = 17;
    auto run = [&] {
        std::vector<ModeSummary> v;
        for (Mode m : {Mode::balanced, Mode::fallback_only}) v.push_back(run_mode(pend, m, &base, &critic, *fb, cfg));
        return csv_bytes(v);
    };
    const auto a = run();
    CHECK(a == run());
    cfg.seed = 18;
    CHECK(a != run());
}

TEST_CASE("CSV schemas and round trip") {
    env::PendulumEnv pend;
    env::CartPoleSwingupEnv cart;
    ExperimentConfig cfg;
    cfg.trials = 4;
    cfg.horizon = 50;
    std::vector<ModeSummary> summaries;
    for (const env::Environment* e : {static_cast<const env::Environment*>(&pend), static_cast<const env::Environment*>(&cart)}) {
        const auto fb = policy::make_fallback(*e);
        summaries.push_back(run_mode(*e, Mode::fallback_only, nullptr, nullptr, *fb, cfg));
    }

    std::ostringstream trials, agg, plot;
    write_trials_csv(trials, summaries);
    write_aggregate_csv(agg, summaries);
    write_plot_data_csv(plot, summaries);

    auto lines = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream in(s);
        std::string l;
        while (std::getline(in, l)) out.push_back(l);
        return out;
    };
    const auto t = lines(trials.str());
    CHECK(t[0] ==
          "env,mode,checkpoint,trial,seed,reward,reached,terminated,steps,n_improve,n_random,n_base,last_base_index,"
          "final_goal_distance");
    CHECK(t.size() == 9);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(split(t[i]).size() == 14);

    const auto a = lines(agg.str());
    CHECK(a[0] ==
          "env,mode,checkpoint,p_relax,lambda,nu,trials,mean_reward,std_reward,reached,reach_pct,mean_n_improve,"
          "mean_n_random,mean_n_base");
    CHECK(a.size() == 3);
    CHECK(split(a[1])[0] == "pendulum");
    CHECK(split(a[2])[0] == "cartpole_swingup");

    // plot data parses back to the summary values
    const auto p = lines(plot.str());
    CHECK(p[0] == "mode,checkpoint,trial,reward,reached");
    REQUIRE(p.size() == 9);
    for (std::size_t i = 1; i < p.size(); ++i) {
        const auto cells = split(p[i]);
        REQUIRE(cells.size() == 5);
        const auto& s = summaries[(i - 1) / 4];
        const auto& tr = s.trials[(i - 1) % 4];
        CHECK(cells[0] == "fallback-only");
        CHECK(std::stoul(cells[2]) == tr.trial);
        CHECK(std::stod(cells[3]) == tr.reward);
        CHECK((cells[4] == "1") == tr.reached);
    }

    std::ostringstream sink;
    CHECK_THROWS_AS(write_plot_data_csv(sink, {}), std::invalid_argument);
    ModeSummary empty;
    CHECK_THROWS_AS(write_plot_data_csv(sink, {empty}), std::invalid_argument);

    const auto dir = fs::temp_directory_path() / "calfw_test_emit";
    fs::remove_all(dir);
    emit_outputs(dir.string(), summaries);
    for (const char* f : {"trials.csv", "aggregate.csv", "plot_data.csv"}) CHECK(fs::exists(dir / f));
    fs::remove_all(dir);
}

TEST_CASE("summary statistics") {
    ModeSummary s;
    for (double r : {1.0, 2.0, 3.0, 4.0}) {
        TrialSummary t;
        t.reward = r;
        t.reached = r > 2.0;
        s.trials.push_back(t);
    }
    finalize_summary(s);
    CHECK(s.mean_reward == 2.5);
    CHECK(s.std_reward == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(s.reached == 2);
    CHECK(s.reach_pct() == 50.0);
    ModeSummary other = s;
    other.std_reward = 0.0;
    CHECK(pooled_std(s, other) == doctest::Approx(std::sqrt(5.0 / 6.0)));
}

TEST_CASE("gain search ranks by reach count then reward") {
    env::PendulumEnv pend;
    const nlohmann::json grid = {{"kp", {0.0, 2.0}}, {"kd", {2.0}}};
    const auto ranked = tune_fallback(pend, grid, 6, 400, 3);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].reached >= ranked[1].reached);
    if (ranked[0].reached == ranked[1].reached) CHECK(ranked[0].mean_reward >= ranked[1].mean_reward);
    CHECK(ranked[0].gains.at("kp") != ranked[1].gains.at("kp"));
    CHECK(default_fallback_grid("pendulum").contains("kp"));
    CHECK(default_fallback_grid("cartpole_swingup").contains("swing_kx"));
}

TEST_CASE("certify report on the pendulum") {
    env::PendulumEnv pend;
    const auto fb = policy::make_fallback(pend);
    policy::HandcraftedCritic critic(pend);
    policy::ConstantPolicy base(pend, {2.0});
    CertifyConfig cfg;
    cfg.trials = 6;
    cfg.fit.trajectories = 200;
    cfg.grid.state_points = 101;
    const auto report = certify(pend, critic, base, *fb, cfg);
    const auto& q = report.quantities;
    CHECK(q.tau >= 1);
    CHECK(q.tau_f >= 1);
    CHECK(q.delta >= 0.0);
    CHECK(report.trials.size() == 6);
    for (const auto& t : report.trials) {
        CHECK(t.bound_step == (q.tau + t.t_rho_bar) * q.tau_f);
        CHECK(t.horizon >= t.bound_step);
    }
    CHECK(report.satisfied >= 5);
    const auto j = to_json(report, cfg);
    CHECK(j.contains("quantities"));
    CHECK(j.at("satisfied").get<std::size_t>() == report.satisfied);
}

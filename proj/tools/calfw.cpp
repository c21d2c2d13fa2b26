// Command-line front end: run, train, certify, export-check, tune-fallback.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calfw/certificates.hpp"
#include "calfw/env.hpp"
#include "calfw/harness.hpp"
#include "calfw/network.hpp"
#include "calfw/policy.hpp"
#include "calfw/trainer.hpp"
#include "calfw/wrapper.hpp"

namespace fs = std::filesystem;
using namespace calfw;

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

bool given(const CLI::Option* opt) { return opt && opt->count() > 0; }

// ---------------------------------------------------------------------------

struct RunArgs {
    std::string config;
    std::string env = "pendulum";
    std::vector<std::string> modes;
    double p_relax = 0.0;
    double lambda = 0.9999;
    double nu = 0.01;
    std::size_t trials = 30;
    std::uint64_t seed = 0;
    int horizon = 0;
    std::string policy;
    std::string critic;
    std::string checkpoint = "late";
    std::string out;
    bool guard = false;
    bool decision_logs = false;
    std::map<std::string, CLI::Option*> opts;
};

void print_summaries(const std::vector<harness::ModeSummary>& summaries) {
    std::cout << std::left << std::setw(16) << "mode" << std::setw(12) << "checkpoint" << std::right << std::setw(9)
              << "p_relax" << std::setw(14) << "mean_reward" << std::setw(12) << "std" << std::setw(10) << "reached"
              << '\n';
    for (const auto& s : summaries) {
        std::cout << std::left << std::setw(16) << harness::to_string(s.mode) << std::setw(12) << s.checkpoint
                  << std::right << std::setw(9) << s.p_relax << std::setw(14) << std::fixed << std::setprecision(3)
                  << s.mean_reward << std::setw(12) << s.std_reward << std::setw(7) << s.reached << '/'
                  << s.trials.size() << std::defaultfloat << '\n';
    }
}

int cmd_run(const RunArgs& a) {
    harness::ExperimentConfig cfg;
    if (!a.config.empty()) cfg = harness::experiment_config_from_json(read_json_file(a.config), cfg);
    const auto& o = a.opts;
    if (given(o.at("env"))) cfg.env_id = a.env;
    if (given(o.at("mode"))) {
        cfg.modes.clear();
        for (const auto& m : a.modes) cfg.modes.push_back(harness::parse_mode(m));
    }
    if (given(o.at("p-relax"))) cfg.p_relax = a.p_relax;
    if (given(o.at("lambda"))) cfg.lambda = a.lambda;
    if (given(o.at("nu"))) cfg.nu = a.nu;
    if (given(o.at("trials"))) cfg.trials = a.trials;
    if (given(o.at("seed"))) cfg.seed = a.seed;
    if (given(o.at("horizon"))) cfg.horizon = a.horizon;
    if (given(o.at("policy"))) cfg.policy_path = a.policy;
    if (given(o.at("critic"))) cfg.critic_path = a.critic;
    if (given(o.at("checkpoint"))) cfg.checkpoint = a.checkpoint;
    if (given(o.at("out"))) cfg.out_dir = a.out;
    if (a.guard) cfg.value_guard = true;
    cfg.validate();

    std::vector<harness::ModeSummary> summaries;
    if (a.decision_logs && !cfg.out_dir.empty()) {
        const auto env = env::make_environment(cfg.env_id, cfg.env_overrides);
        const auto fallback = policy::make_fallback(*env, cfg.fallback_gains);
        std::unique_ptr<policy::NetworkPolicy> base;
        std::unique_ptr<policy::NetworkCritic> critic;
        if (!cfg.policy_path.empty()) {
            base = std::make_unique<policy::NetworkPolicy>(*env, policy::load_portable_weights(cfg.policy_path));
        }
        if (!cfg.critic_path.empty()) {
            critic = std::make_unique<policy::NetworkCritic>(*env, policy::load_portable_weights(cfg.critic_path));
        }
        for (harness::Mode m : cfg.modes) {
            std::vector<wrapper::TrialRecord> records;
            summaries.push_back(harness::run_mode(*env, m, base.get(), critic.get(), *fallback, cfg, &records));
            const fs::path dir = fs::path(cfg.out_dir) / "decision_logs" / std::string(harness::to_string(m));
            fs::create_directories(dir);
            for (std::size_t k = 0; k < records.size(); ++k) {
                std::ofstream f(dir / ("trial_" + std::to_string(k) + ".csv"));
                wrapper::write_decision_log_csv(f, records[k]);
            }
        }
    } else {
        summaries = harness::run_experiment(cfg);
    }
    print_summaries(summaries);
    if (!cfg.out_dir.empty()) {
        harness::emit_outputs(cfg.out_dir, summaries);
        std::cout << "wrote " << cfg.out_dir << "/{trials,aggregate,plot_data}.csv\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string env = "pendulum";
    std::uint64_t seed = 0;
    int iterations = 60;
    std::string out = "checkpoints";
    CLI::Option* seed_opt = nullptr;
    CLI::Option* iter_opt = nullptr;
};

int cmd_train(const TrainArgs& a) {
    train::TrainConfig cfg;
    nlohmann::json env_overrides = nlohmann::json::object();
    std::string env_id = a.env;
    if (!a.config.empty()) {
        nlohmann::json j = read_json_file(a.config);
        if (j.contains("env")) env_id = j["env"].get<std::string>();
        if (j.contains("env_overrides")) env_overrides = j["env_overrides"];
        if (j.contains("train")) cfg = train::train_config_from_json(j["train"], cfg);
    }
    if (given(a.seed_opt)) cfg.seed = a.seed;
    if (given(a.iter_opt) || a.config.empty()) cfg.iterations = a.iterations;
    cfg.validate();

    const auto env = env::make_environment(env_id, env_overrides);
    const fs::path out(a.out);
    fs::create_directories(out);

    std::cout << "training " << env_id << " policy: " << cfg.iterations << " iterations, population "
              << cfg.population << '\n';
    const auto result = train::train_policy(*env, cfg);
    {
        std::ofstream log(out / "training_log.csv");
        train::write_training_log_csv(log, result);
    }
    std::ofstream residuals(out / "critic_residuals.csv");
    residuals << "checkpoint,epoch,mean_squared_bellman_residual\n";
    residuals.precision(17);
    for (const auto& ckpt : result.checkpoints) {
        const std::string tag(train::to_string(ckpt.tag));
        policy::save_portable_weights(ckpt.net, out / ("policy_" + tag + ".json"));
        policy::NetworkPolicy pol(*env, ckpt.net);
        const auto critic = train::fit_critic(*env, pol, cfg);
        policy::save_portable_weights(critic.net, out / ("critic_" + tag + ".json"));
        for (std::size_t e = 0; e < critic.residual_history.size(); ++e) {
            residuals << tag << ',' << e + 1 << ',' << critic.residual_history[e] << '\n';
        }
        const double ret = train::evaluate_return(*env, pol, 30, env->eval_horizon(), 0);
        std::cout << tag << ": iteration " << ckpt.iteration << ", mean return over 30 seeds " << ret
                  << ", critic residual " << critic.final_residual << '\n';
    }
    nlohmann::json meta = {{"env", env_id}, {"env_overrides", env_overrides}, {"train", train::to_json(cfg)}};
    write_json_file(out / "train_config.json", meta);
    std::cout << "wrote " << out.string() << "/{policy,critic}_{early,mid,late}.json\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct CertifyArgs {
    std::string config;
    std::string env = "pendulum";
    std::string critic;
    std::string policy;
    double d_circ = 2.0;
    double d_star = 0.3;
    double nu = 0.01;
    double lambda = 0.99;
    double p_relax = 0.5;
    std::size_t trials = 30;
    std::uint64_t seed = 0;
    bool no_guard = false;
    std::size_t state_points = 0;
    std::size_t action_points = 41;
    std::size_t fit_trajectories = 1000;
    std::string out;
    std::map<std::string, CLI::Option*> opts;
};

int cmd_certify(const CertifyArgs& a) {
    harness::CertifyConfig cfg;
    std::string env_id = a.env;
    nlohmann::json env_overrides = nlohmann::json::object();
    std::string critic_path = a.critic;
    std::string policy_path = a.policy;
    if (!a.config.empty()) {
        const nlohmann::json j = read_json_file(a.config);
        for (const auto& [key, v] : j.items()) {
            if (key == "env") env_id = v.get<std::string>();
            else if (key == "env_overrides") env_overrides = v;
            else if (key == "critic") critic_path = v.get<std::string>();
            else if (key == "policy") policy_path = v.get<std::string>();
            else if (key == "d_circ") cfg.d_circ = v.get<double>();
            else if (key == "d_star") cfg.d_star = v.get<double>();
            else if (key == "nu") cfg.nu = v.get<double>();
            else if (key == "lambda") cfg.lambda = v.get<double>();
            else if (key == "p_relax") cfg.p_relax = v.get<double>();
            else if (key == "value_guard") cfg.value_guard = v.get<bool>();
            else if (key == "trials") cfg.trials = v.get<std::size_t>();
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else throw std::invalid_argument("unknown certify option '" + key + "'");
        }
    }
    const auto& o = a.opts;
    if (given(o.at("env"))) env_id = a.env;
    if (given(o.at("critic"))) critic_path = a.critic;
    if (given(o.at("policy"))) policy_path = a.policy;
    if (given(o.at("d-circ"))) cfg.d_circ = a.d_circ;
    if (given(o.at("d-star"))) cfg.d_star = a.d_star;
    if (given(o.at("nu"))) cfg.nu = a.nu;
    if (given(o.at("lambda"))) cfg.lambda = a.lambda;
    if (given(o.at("p-relax"))) cfg.p_relax = a.p_relax;
    if (given(o.at("trials"))) cfg.trials = a.trials;
    if (given(o.at("seed"))) cfg.seed = a.seed;
    if (a.no_guard) cfg.value_guard = false;
    cfg.grid.state_points = a.state_points;
    cfg.grid.action_points = a.action_points;
    cfg.fit.trajectories = a.fit_trajectories;

    const auto env = env::make_environment(env_id, env_overrides);
    const auto fallback = policy::make_fallback(*env);
    std::unique_ptr<policy::Critic> critic;
    if (critic_path.empty()) critic = std::make_unique<policy::HandcraftedCritic>(*env);
    else critic = std::make_unique<policy::NetworkCritic>(*env, policy::load_portable_weights(critic_path));
    std::unique_ptr<policy::Policy> base;
    if (policy_path.empty()) base = std::make_unique<policy::ConstantPolicy>(*env, env->action_high());
    else base = std::make_unique<policy::NetworkPolicy>(*env, policy::load_portable_weights(policy_path));

    const auto report = harness::certify(*env, *critic, *base, *fallback, cfg);
    const auto& q = report.quantities;
    std::cout << "critic: " << (critic_path.empty() ? "handcrafted" : critic_path)
              << ", base: " << (policy_path.empty() ? "constant max action" : policy_path) << '\n';
    std::cout << std::setprecision(10);
    std::cout << "  d_circ   " << q.d_circ << "\n  d_star   " << q.d_star << "\n  nu       " << q.nu
              << "\n  v_min    " << q.v_min << "\n  v_max    " << q.v_max << "\n  tau      " << q.tau
              << "\n  d_pbar   " << q.d_pbar << "\n  d_max    " << q.d_max << "\n  c        " << report.fit.cert.c
              << "\n  a        " << report.fit.cert.a << "\n  epsilon  " << report.fit.cert.epsilon
              << "\n  delta    " << q.delta << "\n  tau_f    " << q.tau_f << (q.tau_f_degenerate ? " (degenerate)" : "")
              << '\n';
    std::cout << "  grid: " << q.grid_points << " states x " << q.action_points << " actions, superlevel "
              << q.superlevel_points << " points" << (q.superlevel_touches_boundary ? " (touches grid boundary)" : "")
              << '\n';
    std::cout << "reaching trials: " << report.satisfied << '/' << report.trials.size()
              << " with goal_distance <= d_star for all t >= (tau + T_rho_bar) * tau_f\n";
    if (!a.out.empty()) {
        write_json_file(a.out, harness::to_json(report, cfg));
        std::cout << "wrote " << a.out << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_export_check(const std::vector<std::string>& files, double tol) {
    bool all_ok = true;
    for (const auto& f : files) {
        try {
            const auto net = policy::load_portable_weights(f);
            const auto check = policy::check_probes(net, tol);
            std::cout << f << ": role " << policy::to_string(net.role) << ", " << net.layers.size() << " layers, "
                      << check.probes << " probes, max abs error " << check.max_abs_error << " -> "
                      << (check.probes == 0 ? "NO PROBES" : (check.passed ? "OK" : "MISMATCH")) << '\n';
            all_ok = all_ok && check.passed && check.probes > 0;
        } catch (const policy::WeightsError& e) {
            std::cout << f << ": " << e.what() << '\n';
            all_ok = false;
        }
    }
    return all_ok ? 0 : 1;
}

int cmd_tune(const std::string& env_id, std::size_t trials, int horizon, std::uint64_t seed, const std::string& out) {
    const auto env = env::make_environment(env_id);
    const auto grid = harness::default_fallback_grid(env_id);
    const auto ranked = harness::tune_fallback(*env, grid, trials, horizon, seed);
    std::cout << "grid " << grid.dump() << '\n';
    const std::size_t show = std::min<std::size_t>(ranked.size(), 10);
    for (std::size_t i = 0; i < show; ++i) {
        std::cout << std::setw(3) << i + 1 << "  reached " << ranked[i].reached << '/' << trials << "  mean reward "
                  << ranked[i].mean_reward << "  " << ranked[i].gains.dump() << '\n';
    }
    if (!out.empty()) {
        write_json_file(out, {{"env", env_id},
                              {"trials", trials},
                              {"horizon", horizon},
                              {"seed", seed},
                              {"grid", grid},
                              {"selected", ranked.front().gains},
                              {"reached", ranked.front().reached},
                              {"mean_reward", ranked.front().mean_reward}});
        std::cout << "wrote " << out << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Critic-gated policy switching lab"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Evaluate wrapper modes over seeded trials");
    run.opts["config"] = run_cmd->add_option("--config", run.config, "JSON experiment config; flags override it");
    run.opts["env"] = run_cmd->add_option("--env", run.env, "pendulum | cartpole_swingup");
    run.opts["mode"] = run_cmd->add_option("--mode", run.modes, "conservative, balanced, brave, base-only, fallback-only")
                           ->delimiter(',');
    run.opts["p-relax"] = run_cmd->add_option("--p-relax", run.p_relax, "Override the per-mode p_relax");
    run.opts["lambda"] = run_cmd->add_option("--lambda", run.lambda, "Acceptance decay (default 0.9999)");
    run.opts["nu"] = run_cmd->add_option("--nu", run.nu, "Improvement threshold (default 0.01)");
    run.opts["trials"] = run_cmd->add_option("--trials", run.trials, "Trials per mode (default 30)");
    run.opts["seed"] = run_cmd->add_option("--seed", run.seed, "Master seed");
    run.opts["horizon"] = run_cmd->add_option("--horizon", run.horizon, "Episode length (default: env evaluation horizon)");
    run.opts["policy"] = run_cmd->add_option("--policy", run.policy, "Base policy weights");
    run.opts["critic"] = run_cmd->add_option("--critic", run.critic, "Critic weights");
    run.opts["checkpoint"] = run_cmd->add_option("--checkpoint", run.checkpoint, "Checkpoint label for the CSVs");
    run.opts["out"] = run_cmd->add_option("--out", run.out, "Output directory for CSVs");
    run_cmd->add_flag("--guard", run.guard, "Zero the acceptance probability below the initial critic value");
    run_cmd->add_flag("--decision-logs", run.decision_logs, "Also write per-trial decision logs under --out");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Desk-scale policy search and critic regression");
    train_cmd->add_option("--config", tr.config, "JSON with env, env_overrides and a train object");
    train_cmd->add_option("--env", tr.env, "pendulum | cartpole_swingup");
    tr.seed_opt = train_cmd->add_option("--seed", tr.seed, "Training seed");
    tr.iter_opt = train_cmd->add_option("--iterations", tr.iterations, "Search iterations (default 60)");
    train_cmd->add_option("--out", tr.out, "Checkpoint directory");

    CertifyArgs ce;
    auto* cert_cmd = app.add_subcommand("certify", "Certificate quantities and reaching-time trials");
    ce.opts["config"] = cert_cmd->add_option("--config", ce.config, "JSON certify config; flags override it");
    ce.opts["env"] = cert_cmd->add_option("--env", ce.env, "pendulum | cartpole_swingup");
    ce.opts["critic"] = cert_cmd->add_option("--critic", ce.critic, "Critic weights (default: handcrafted critic)");
    ce.opts["policy"] = cert_cmd->add_option("--policy", ce.policy, "Base policy weights (default: constant max action)");
    ce.opts["d-circ"] = cert_cmd->add_option("--d-circ", ce.d_circ, "Initial goal-distance radius (default 2)");
    ce.opts["d-star"] = cert_cmd->add_option("--d-star", ce.d_star, "Target goal distance (default 0.3)");
    ce.opts["nu"] = cert_cmd->add_option("--nu", ce.nu, "Improvement threshold (default 0.01)");
    ce.opts["lambda"] = cert_cmd->add_option("--lambda", ce.lambda, "Acceptance decay (default 0.99)");
    ce.opts["p-relax"] = cert_cmd->add_option("--p-relax", ce.p_relax, "Initial acceptance probability (default 0.5)");
    ce.opts["trials"] = cert_cmd->add_option("--trials", ce.trials, "Reaching-time trials (default 30)");
    ce.opts["seed"] = cert_cmd->add_option("--seed", ce.seed, "Master seed");
    cert_cmd->add_flag("--no-guard", ce.no_guard, "Allow random acceptance below the initial critic value");
    cert_cmd->add_option("--state-points", ce.state_points, "Grid points per state axis (0: automatic)");
    cert_cmd->add_option("--action-points", ce.action_points, "Grid points per action axis (default 41)");
    cert_cmd->add_option("--fit-trajectories", ce.fit_trajectories, "Fallback trajectories for the fit (default 1000)");
    ce.opts["out"] = cert_cmd->add_option("--out", ce.out, "JSON report path");

    std::vector<std::string> weight_files;
    double probe_tol = 1e-5;
    auto* export_cmd = app.add_subcommand("export-check", "Verify embedded probes of portable weight files");
    export_cmd->add_option("files", weight_files, "Weight files")->required();
    export_cmd->add_option("--tol", probe_tol, "Absolute tolerance (default 1e-5)");

    std::string tune_env = "pendulum";
    std::size_t tune_trials = 30;
    int tune_horizon = 1000;
    std::uint64_t tune_seed = 0;
    std::string tune_out;
    auto* tune_cmd = app.add_subcommand("tune-fallback", "Grid search over fallback gains");
    tune_cmd->add_option("--env", tune_env, "pendulum | cartpole_swingup");
    tune_cmd->add_option("--trials", tune_trials, "Trials per gain tuple (default 30)");
    tune_cmd->add_option("--horizon", tune_horizon, "Episode length (default 1000)");
    tune_cmd->add_option("--seed", tune_seed, "Master seed");
    tune_cmd->add_option("--out", tune_out, "JSON file for the selected gains");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return cmd_run(run);
        if (*train_cmd) return cmd_train(tr);
        if (*cert_cmd) return cmd_certify(ce);
        if (*export_cmd) return cmd_export_check(weight_files, probe_tol);
        if (*tune_cmd) return cmd_tune(tune_env, tune_trials, tune_horizon, tune_seed, tune_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

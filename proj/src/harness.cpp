#include "calfw/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "calfw/network.hpp"
#include "calfw/parallel.hpp"

namespace calfw::harness {

std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::conservative: return "conservative";
        case Mode::balanced: return "balanced";
        case Mode::brave: return "brave";
        case Mode::base_only: return "base-only";
        case Mode::fallback_only: return "fallback-only";
    }
    return "conservative";
}

Mode parse_mode(std::string_view s) {
    for (Mode m : {Mode::conservative, Mode::balanced, Mode::brave, Mode::base_only, Mode::fallback_only}) {
        if (s == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown mode '" + std::string(s) +
                                "' (expected conservative, balanced, brave, base-only or fallback-only)");
}

double default_p_relax(Mode m) {
    switch (m) {
        case Mode::balanced: return 0.5;
        case Mode::brave: return 0.95;
        default: return 0.0;
    }
}

bool uses_base(Mode m) { return m != Mode::fallback_only; }

void ExperimentConfig::validate() const {
    if (modes.empty()) throw std::invalid_argument("no modes selected");
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    if (p_relax && !(*p_relax >= 0.0 && *p_relax <= 1.0)) throw std::invalid_argument("p_relax must lie in [0, 1]");
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
    if (!(nu > 0.0)) throw std::invalid_argument("nu must be > 0");
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig cfg) {
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "env") cfg.env_id = value.get<std::string>();
        else if (key == "env_overrides") cfg.env_overrides = value;
        else if (key == "modes" || key == "mode") {
            cfg.modes.clear();
            if (value.is_string()) cfg.modes.push_back(parse_mode(value.get<std::string>()));
            else for (const auto& m : value) cfg.modes.push_back(parse_mode(m.get<std::string>()));
        }
        else if (key == "p_relax") cfg.p_relax = value.get<double>();
        else if (key == "lambda") cfg.lambda = value.get<double>();
        else if (key == "nu") cfg.nu = value.get<double>();
        else if (key == "value_guard") cfg.value_guard = value.get<bool>();
        else if (key == "trials") cfg.trials = value.get<std::size_t>();
        else if (key == "horizon") cfg.horizon = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "policy") cfg.policy_path = value.get<std::string>();
        else if (key == "critic") cfg.critic_path = value.get<std::string>();
        else if (key == "checkpoint") cfg.checkpoint = value.get<std::string>();
        else if (key == "fallback_gains") cfg.fallback_gains = value;
        else if (key == "out") cfg.out_dir = value.get<std::string>();
        else throw std::invalid_argument("unknown experiment option '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrialSummary summarize_trial(std::size_t k, const wrapper::TrialRecord& rec) {
    TrialSummary s;
    s.trial = k;
    s.seed = rec.seed;
    s.reward = rec.cumulative_reward;
    s.reached = rec.goal_reached;
    s.terminated = rec.terminated;
    s.steps = rec.steps;
    s.n_improve = rec.n_improve;
    s.n_random = rec.n_random;
    s.n_base = rec.n_base;
    s.last_base_index = rec.last_base_index;
    s.final_goal_distance = rec.final_goal_distance;
    return s;
}

double ModeSummary::reach_pct() const {
    return trials.empty() ? 0.0 : 100.0 * static_cast<double>(reached) / static_cast<double>(trials.size());
}

void finalize_summary(ModeSummary& s) {
    if (s.trials.empty()) throw std::invalid_argument("summary without trials");
    const double n = static_cast<double>(s.trials.size());
    double sum = 0.0;
    s.reached = 0;
    for (const auto& t : s.trials) {
        sum += t.reward;
        if (t.reached) ++s.reached;
    }
    s.mean_reward = sum / n;
    double sq = 0.0;
    for (const auto& t : s.trials) sq += (t.reward - s.mean_reward) * (t.reward - s.mean_reward);
    s.std_reward = s.trials.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
}

wrapper::WrapperConfig mode_wrapper_config(const ExperimentConfig& cfg, Mode mode, int horizon, std::uint64_t seed) {
    wrapper::WrapperConfig w;
    w.nu = cfg.nu;
    w.lambda = cfg.lambda;
    w.p_relax = cfg.p_relax ? *cfg.p_relax : default_p_relax(mode);
    w.value_guard = cfg.value_guard;
    w.horizon = horizon;
    w.seed = seed;
    return w;
}

ModeSummary run_mode(const env::Environment& env, Mode mode, const policy::Policy* base, const policy::Critic* critic,
                     const policy::Policy& fallback, const ExperimentConfig& cfg,
                     std::vector<wrapper::TrialRecord>* records) {
    cfg.validate();
    if (uses_base(mode) && (!base || !critic)) {
        throw std::invalid_argument("mode " + std::string(to_string(mode)) + " needs a base policy and a critic");
    }
    const int horizon = cfg.horizon > 0 ? cfg.horizon : env.eval_horizon();

    ModeSummary summary;
    summary.env_id = std::string(env.id());
    summary.mode = mode;
    summary.checkpoint = mode == Mode::fallback_only ? "none" : cfg.checkpoint;
    summary.p_relax = (mode == Mode::base_only || mode == Mode::fallback_only)
                          ? 0.0
                          : (cfg.p_relax ? *cfg.p_relax : default_p_relax(mode));
    summary.lambda = cfg.lambda;
    summary.nu = cfg.nu;

    std::vector<wrapper::TrialRecord> recs(cfg.trials);
    parallel_for(cfg.trials, [&](std::size_t k) {
        const std::uint64_t seed = trial_seed(cfg.seed, k);
        switch (mode) {
            case Mode::fallback_only:
                recs[k] = wrapper::run_policy_episode(env, fallback, false, horizon, seed, critic);
                break;
            case Mode::base_only:
                recs[k] = wrapper::run_policy_episode(env, *base, true, horizon, seed, critic);
                break;
            default:
                recs[k] = wrapper::run_episode(env, *base, *critic, fallback, mode_wrapper_config(cfg, mode, horizon, seed));
        }
    });
    for (std::size_t k = 0; k < recs.size(); ++k) summary.trials.push_back(summarize_trial(k, recs[k]));
    finalize_summary(summary);
    if (records) *records = std::move(recs);
    return summary;
}

std::vector<ModeSummary> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto env = env::make_environment(cfg.env_id, cfg.env_overrides);
    const auto fallback = policy::make_fallback(*env, cfg.fallback_gains);

    const bool need_networks =
        std::any_of(cfg.modes.begin(), cfg.modes.end(), [](Mode m) { return uses_base(m); });
    std::unique_ptr<policy::NetworkPolicy> base;
    std::unique_ptr<policy::NetworkCritic> critic;
    if (need_networks) {
        if (cfg.policy_path.empty() || cfg.critic_path.empty()) {
            throw std::invalid_argument("base-policy modes need --policy and --critic weight files");
        }
        base = std::make_unique<policy::NetworkPolicy>(*env, policy::load_portable_weights(cfg.policy_path));
        critic = std::make_unique<policy::NetworkCritic>(*env, policy::load_portable_weights(cfg.critic_path));
    } else if (!cfg.critic_path.empty()) {
        critic = std::make_unique<policy::NetworkCritic>(*env, policy::load_portable_weights(cfg.critic_path));
    }

    std::vector<ModeSummary> out;
    for (Mode m : cfg.modes) out.push_back(run_mode(*env, m, base.get(), critic.get(), *fallback, cfg));
    return out;
}

namespace {

void require_rows(const std::vector<ModeSummary>& summaries) {
    std::size_t rows = 0;
    for (const auto& s : summaries) rows += s.trials.size();
    if (rows == 0) throw std::invalid_argument("no trials to write");
}

}  // namespace

void write_trials_csv(std::ostream& out, const std::vector<ModeSummary>& summaries) {
    require_rows(summaries);
    const auto old = out.precision(17);
    out << "env,mode,checkpoint,trial,seed,reward,reached,terminated,steps,n_improve,n_random,n_base,"
           "last_base_index,final_goal_distance\n";
    for (const auto& s : summaries) {
        for (const auto& t : s.trials) {
            out << s.env_id << ',' << to_string(s.mode) << ',' << s.checkpoint << ',' << t.trial << ',' << t.seed << ','
                << t.reward << ',' << (t.reached ? 1 : 0) << ',' << (t.terminated ? 1 : 0) << ',' << t.steps << ','
                << t.n_improve << ',' << t.n_random << ',' << t.n_base << ',';
            if (t.last_base_index) out << *t.last_base_index;
            out << ',' << t.final_goal_distance << '\n';
        }
    }
    out.precision(old);
}

void write_aggregate_csv(std::ostream& out, const std::vector<ModeSummary>& summaries) {
    require_rows(summaries);
    const auto old = out.precision(17);
    out << "env,mode,checkpoint,p_relax,lambda,nu,trials,mean_reward,std_reward,reached,reach_pct,"
           "mean_n_improve,mean_n_random,mean_n_base\n";
    for (const auto& s : summaries) {
        const double n = static_cast<double>(s.trials.size());
        double imp = 0.0, rnd = 0.0, base = 0.0;
        for (const auto& t : s.trials) {
            imp += static_cast<double>(t.n_improve);
            rnd += static_cast<double>(t.n_random);
            base += static_cast<double>(t.n_base);
        }
        out << s.env_id << ',' << to_string(s.mode) << ',' << s.checkpoint << ',' << s.p_relax << ',' << s.lambda
            << ',' << s.nu << ',' << s.trials.size() << ',' << s.mean_reward << ',' << s.std_reward << ','
            << s.reached << ',' << s.reach_pct() << ',' << imp / n << ',' << rnd / n << ',' << base / n << '\n';
    }
    out.precision(old);
}

void write_plot_data_csv(std::ostream& out, const std::vector<ModeSummary>& summaries) {
    require_rows(summaries);
    const auto old = out.precision(17);
    out << "mode,checkpoint,trial,reward,reached\n";
    for (const auto& s : summaries) {
        for (const auto& t : s.trials) {
            out << to_string(s.mode) << ',' << s.checkpoint << ',' << t.trial << ',' << t.reward << ','
                << (t.reached ? 1 : 0) << '\n';
        }
    }
    out.precision(old);
}

void emit_outputs(const std::string& dir, const std::vector<ModeSummary>& summaries) {
    require_rows(summaries);
    std::filesystem::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream f(std::filesystem::path(dir) / name);
        if (!f) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / name).string());
        return f;
    };
    auto trials = open("trials.csv");
    write_trials_csv(trials, summaries);
    auto aggregate = open("aggregate.csv");
    write_aggregate_csv(aggregate, summaries);
    auto plot = open("plot_data.csv");
    write_plot_data_csv(plot, summaries);
}

double pooled_std(const ModeSummary& a, const ModeSummary& b) {
    return std::sqrt(0.5 * (a.std_reward * a.std_reward + b.std_reward * b.std_reward));
}

// ---------------------------------------------------------------------------

nlohmann::json default_fallback_grid(std::string_view env_id) {
    if (env_id == "pendulum") {
        return {{"energy_gain", {0.25, 0.5, 1.0, 2.0}},
                {"kp", {2.0, 5.0, 10.0}},
                {"kd", {0.5, 1.0, 2.0}},
                {"switch_threshold", {0.3, 0.5, 1.0}}};
    }
    if (env_id == "cartpole_swingup") {
        return {{"energy_gain", {0.5, 1.0, 2.0}},
                {"swing_kx", {1.0, 2.0, 4.0}},
                {"swing_kv", {1.0, 2.0, 4.0}},
                {"switch_threshold", {0.2, 0.3, 0.5}}};
    }
    throw env::UnknownEnvironment("no default gain grid for '" + std::string(env_id) + "'");
}

std::vector<GainCandidate> tune_fallback(const env::Environment& env, const nlohmann::json& grid, std::size_t trials,
                                         int horizon, std::uint64_t seed) {
    if (!grid.is_object() || grid.empty()) throw std::invalid_argument("gain grid must be a non-empty object");
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;
    for (const auto& [name, list] : grid.items()) {
        names.push_back(name);
        values.push_back(list.get<std::vector<double>>());
        if (values.back().empty()) throw std::invalid_argument("empty value list for gain '" + name + "'");
    }

    std::vector<nlohmann::json> combos{nlohmann::json::object()};
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<nlohmann::json> next;
        for (const auto& partial : combos) {
            for (double v : values[i]) {
                nlohmann::json c = partial;
                c[names[i]] = v;
                next.push_back(std::move(c));
            }
        }
        combos = std::move(next);
    }

    ExperimentConfig cfg;
    cfg.env_id = std::string(env.id());
    cfg.modes = {Mode::fallback_only};
    cfg.trials = trials;
    cfg.horizon = horizon;
    cfg.seed = seed;

    std::vector<GainCandidate> out(combos.size());
    for (std::size_t i = 0; i < combos.size(); ++i) {
        const auto fallback = policy::make_fallback(env, combos[i]);
        const ModeSummary s = run_mode(env, Mode::fallback_only, nullptr, nullptr, *fallback, cfg);
        out[i] = {combos[i], s.reached, s.mean_reward};
    }
    std::stable_sort(out.begin(), out.end(), [](const GainCandidate& a, const GainCandidate& b) {
        if (a.reached != b.reached) return a.reached > b.reached;
        return a.mean_reward > b.mean_reward;
    });
    return out;
}

// ---------------------------------------------------------------------------

void CertifyConfig::validate() const {
    if (!(d_star > 0.0 && d_star < d_circ)) throw std::invalid_argument("need 0 < d_star < d_circ");
    if (!(nu > 0.0)) throw std::invalid_argument("nu must be > 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
    if (!(p_relax >= 0.0 && p_relax <= 1.0)) throw std::invalid_argument("p_relax must lie in [0, 1]");
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (margin < 0) throw std::invalid_argument("margin must be >= 0");
}

namespace {

constexpr long kMaxCertifyHorizon = 5'000'000;
constexpr std::uint64_t kContinuationStream = 2;

std::vector<double> initial_state_within(const env::Environment& env, std::uint64_t seed, double d_circ) {
    Rng rng(wrapper::initial_state_seed(seed));
    for (int attempt = 0; attempt < 100000; ++attempt) {
        auto s = env.sample_initial(rng);
        if (env.goal_distance(s) <= d_circ) return s;
    }
    throw cert::EmptyFeasibleSet("initial-state sampler never hit goal_distance <= d_circ");
}

CertifyTrial certify_trial(const env::Environment& env, const policy::Critic& critic, const policy::Policy& base,
                           const policy::Policy& fallback, const CertifyConfig& cfg, const cert::CertificateQuantities& q,
                           std::uint64_t seed) {
    wrapper::WrapperConfig w;
    w.nu = cfg.nu;
    w.lambda = cfg.lambda;
    w.p_relax = cfg.p_relax;
    w.value_guard = cfg.value_guard;
    w.seed = seed;
    wrapper::EpisodeOptions opts;
    opts.initial_state = initial_state_within(env, seed, cfg.d_circ);

    // Long enough that T_rho_bar only depends on the decision stream.
    const long draws_needed = cert::truncation_index(cfg.lambda, cfg.p_relax, 1e-12);
    long horizon = std::max<long>({draws_needed, static_cast<long>(env.eval_horizon()), 1L});

    CertifyTrial out;
    out.seed = seed;
    for (int pass = 0; pass < 2; ++pass) {
        w.horizon = static_cast<int>(std::min(horizon, kMaxCertifyHorizon));
        const wrapper::TrialRecord rec = wrapper::run_episode(env, base, critic, fallback, w, opts);
        std::vector<double> draws;
        draws.reserve(rec.log.size());
        for (const auto& s : rec.log) draws.push_back(s.u);
        Rng continuation(derive_seed(seed, kContinuationStream));
        out.t_rho_bar = cert::realized_T_rho_bar(draws, cfg.lambda, cfg.p_relax, continuation);
        out.bound_step = (q.tau + out.t_rho_bar) * q.tau_f;
        out.horizon = w.horizon;
        out.n_improve = rec.n_improve;
        out.n_random = rec.n_random;

        const long needed = out.bound_step + cfg.margin;
        if (needed > w.horizon && !rec.terminated && pass == 0 && w.horizon < kMaxCertifyHorizon) {
            horizon = needed;
            continue;
        }
        // reaching condition on s_t for bound_step <= t <= steps
        out.max_distance_after_bound = 0.0;
        out.last_violation.reset();
        for (const auto& s : rec.log) {
            if (s.t < out.bound_step) continue;
            out.max_distance_after_bound = std::max(out.max_distance_after_bound, s.goal_distance);
            if (s.goal_distance > cfg.d_star) out.last_violation = s.t;
        }
        if (rec.steps >= out.bound_step) {
            out.max_distance_after_bound = std::max(out.max_distance_after_bound, rec.final_goal_distance);
            if (rec.final_goal_distance > cfg.d_star) out.last_violation = rec.steps;
        }
        out.satisfied = !rec.terminated && rec.steps >= needed && !out.last_violation;
        break;
    }
    return out;
}

}  // namespace

CertifyReport certify(const env::Environment& env, const policy::Critic& critic, const policy::Policy& base,
                      const policy::Policy& fallback, const CertifyConfig& cfg) {
    cfg.validate();
    CertifyReport report;
    report.quantities = cert::compute_critic_quantities(env, critic, cfg.d_circ, cfg.d_star, cfg.nu, cfg.grid);
    report.fit = cert::fit_certificate(env, fallback, report.quantities.d_max, report.quantities.d_max, cfg.d_star,
                                       cfg.fit);
    cert::complete_quantities(report.quantities, report.fit.cert);

    report.trials.resize(cfg.trials);
    parallel_for(cfg.trials, [&](std::size_t k) {
        report.trials[k] = certify_trial(env, critic, base, fallback, cfg, report.quantities, trial_seed(cfg.seed, k));
    });
    report.satisfied = static_cast<std::size_t>(
        std::count_if(report.trials.begin(), report.trials.end(), [](const CertifyTrial& t) { return t.satisfied; }));
    return report;
}

nlohmann::json to_json(const CertifyReport& report, const CertifyConfig& cfg) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : report.trials) {
        trials.push_back({{"seed", t.seed},
                          {"t_rho_bar", t.t_rho_bar},
                          {"bound_step", t.bound_step},
                          {"horizon", t.horizon},
                          {"satisfied", t.satisfied},
                          {"last_violation", t.last_violation ? nlohmann::json(*t.last_violation) : nlohmann::json()},
                          {"max_distance_after_bound", t.max_distance_after_bound},
                          {"n_improve", t.n_improve},
                          {"n_random", t.n_random}});
    }
    return {{"config",
             {{"d_circ", cfg.d_circ},
              {"d_star", cfg.d_star},
              {"nu", cfg.nu},
              {"lambda", cfg.lambda},
              {"p_relax", cfg.p_relax},
              {"value_guard", cfg.value_guard},
              {"trials", cfg.trials},
              {"seed", cfg.seed},
              {"fit_trajectories", cfg.fit.trajectories},
              {"fit_horizon", cfg.fit.horizon}}},
            {"certificate", cert::to_json(report.fit.cert)},
            {"fit", {{"trajectories", report.fit.trajectories}, {"violations", report.fit.violations},
                     {"region", report.fit.region}}},
            {"quantities", cert::to_json(report.quantities)},
            {"reaching_trials", trials},
            {"satisfied", report.satisfied}};
}

}  // namespace calfw::harness

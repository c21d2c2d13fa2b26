#pragma once

// Multi-trial evaluation of wrapper modes, certificate reports and the CSV
// outputs consumed by plotting scripts.
//
// CSV schemas (version 1):
//   trials.csv     env,mode,checkpoint,trial,seed,reward,reached,terminated,steps,
//                  n_improve,n_random,n_base,last_base_index,final_goal_distance
//   aggregate.csv  env,mode,checkpoint,p_relax,lambda,nu,trials,mean_reward,std_reward,
//                  reached,reach_pct,mean_n_improve,mean_n_random,mean_n_base
//   plot_data.csv  mode,checkpoint,trial,reward,reached

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "calfw/certificates.hpp"
#include "calfw/env.hpp"
#include "calfw/policy.hpp"
#include "calfw/wrapper.hpp"

namespace calfw::harness {

inline constexpr int kCsvSchemaVersion = 1;

enum class Mode { conservative, balanced, brave, base_only, fallback_only };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);
/// 0 / 0.5 / 0.95 for the wrapped modes, 0 for the unwrapped ones.
double default_p_relax(Mode m);
bool uses_base(Mode m);

/// Seed of trial k under a master seed.
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t k) { return derive_seed(master, k); }

struct ExperimentConfig {
    std::string env_id = "pendulum";
    nlohmann::json env_overrides = nlohmann::json::object();
    std::vector<Mode> modes = {Mode::conservative};
    std::optional<double> p_relax;  // replaces the per-mode value
    double lambda = 0.9999;
    double nu = 0.01;
    bool value_guard = false;
    std::size_t trials = 30;
    int horizon = 0;  // 0: the environment's evaluation horizon
    std::uint64_t seed = 0;
    std::string policy_path;
    std::string critic_path;
    std::string checkpoint = "late";  // label written to the CSVs
    nlohmann::json fallback_gains = nlohmann::json::object();
    std::string out_dir;

    void validate() const;
};

/// Applies the keys of a JSON object on top of `base`. Unknown keys throw.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

struct TrialSummary {
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double reward = 0.0;
    bool reached = false;
    bool terminated = false;
    int steps = 0;
    long n_improve = 0;
    long n_random = 0;
    long n_base = 0;
    std::optional<long> last_base_index;
    double final_goal_distance = 0.0;
};

TrialSummary summarize_trial(std::size_t k, const wrapper::TrialRecord& rec);

struct ModeSummary {
    std::string env_id;
    Mode mode = Mode::conservative;
    std::string checkpoint;
    double p_relax = 0.0;
    double lambda = 0.0;
    double nu = 0.0;
    std::vector<TrialSummary> trials;
    double mean_reward = 0.0;
    double std_reward = 0.0;  // sample standard deviation
    std::size_t reached = 0;

    double reach_pct() const;
};

/// Mean and sample std of the rewards plus the reach count.
void finalize_summary(ModeSummary& s);

/// The per-trial wrapper configuration used by run_mode.
wrapper::WrapperConfig mode_wrapper_config(const ExperimentConfig& cfg, Mode mode, int horizon, std::uint64_t seed);

/// Runs cfg.trials trials of one mode. `base` and `critic` may be null only
/// for fallback-only. Full trial records are returned through `records`
/// when it is non-null.
ModeSummary run_mode(const env::Environment& env, Mode mode, const policy::Policy* base,
                     const policy::Critic* critic, const policy::Policy& fallback, const ExperimentConfig& cfg,
                     std::vector<wrapper::TrialRecord>* records = nullptr);

/// Loads the environment, fallback and networks named in the config and
/// runs every mode. Network modes need both weight files.
std::vector<ModeSummary> run_experiment(const ExperimentConfig& cfg);

void write_trials_csv(std::ostream& out, const std::vector<ModeSummary>& summaries);
void write_aggregate_csv(std::ostream& out, const std::vector<ModeSummary>& summaries);
/// Long format. Throws std::invalid_argument when there is nothing to write.
void write_plot_data_csv(std::ostream& out, const std::vector<ModeSummary>& summaries);

/// Writes trials.csv, aggregate.csv and plot_data.csv into `dir`.
void emit_outputs(const std::string& dir, const std::vector<ModeSummary>& summaries);

/// sqrt((s_a^2 + s_b^2) / 2) for two summaries over the same seeds.
double pooled_std(const ModeSummary& a, const ModeSummary& b);

// ---------------------------------------------------------------------------
// Coarse grid search over fallback gains.

struct GainCandidate {
    nlohmann::json gains;
    std::size_t reached = 0;
    double mean_reward = 0.0;
};

/// Grid searched by default: gain name -> list of values.
nlohmann::json default_fallback_grid(std::string_view env_id);

/// Every combination of the grid, evaluated as fallback-only over `trials`
/// seeds. Sorted by reach count, then mean reward (both descending).
std::vector<GainCandidate> tune_fallback(const env::Environment& env, const nlohmann::json& grid, std::size_t trials,
                                         int horizon, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Certificate report with wrapper reaching-time trials.

struct CertifyConfig {
    double d_circ = 2.0;
    double d_star = 0.3;
    double nu = 0.01;
    double lambda = 0.99;
    double p_relax = 0.5;
    bool value_guard = true;
    std::size_t trials = 30;
    std::uint64_t seed = 0;
    int margin = 1000;  // steps simulated past the reaching-time bound
    cert::QuantityOptions grid;
    cert::FitOptions fit;

    void validate() const;
};

struct CertifyTrial {
    std::uint64_t seed = 0;
    long t_rho_bar = 0;
    long bound_step = 0;  // (tau + T_rho_bar) * tau_f
    int horizon = 0;
    bool satisfied = false;
    std::optional<long> last_violation;  // last t >= bound_step with goal_distance > d_star
    double max_distance_after_bound = 0.0;
    long n_improve = 0;
    long n_random = 0;
};

struct CertifyReport {
    cert::CertificateQuantities quantities;
    cert::CertificateFit fit;
    std::vector<CertifyTrial> trials;
    std::size_t satisfied = 0;
};

/// Computes the quantities, fits the fallback certificate on
/// {goal_distance <= d_max} and runs wrapper trials from initial states in
/// {goal_distance <= d_circ}. Each trial is simulated until it is at least
/// `margin` steps past its own bound.
CertifyReport certify(const env::Environment& env, const policy::Critic& critic, const policy::Policy& base,
                      const policy::Policy& fallback, const CertifyConfig& cfg);

nlohmann::json to_json(const CertifyReport& report, const CertifyConfig& cfg);

}  // namespace calfw::harness

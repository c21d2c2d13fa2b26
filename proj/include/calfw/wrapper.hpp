#pragma once

// Critic-gated switching between a base policy and a fallback policy.
//
// At every step a uniform U_t is drawn. The base action is taken when the
// critic value improves on the best value so far by at least nu (and the
// best value is raised), or when U_t < rho_t(s); otherwise the fallback acts.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "calfw/env.hpp"
#include "calfw/policy.hpp"
#include "calfw/rng.hpp"

namespace calfw::wrapper {

using Vec = std::vector<double>;

struct WrapperConfig {
    double nu = 0.01;
    double lambda = 0.9999;
    double p_relax = 0.0;
    /// Force rho_t(s) = 0 whenever V(s) < V(s_0).
    bool value_guard = false;
    int horizon = 200;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class Decision { base_improve, base_random, fallback, base_forced };

std::string_view to_string(Decision d);
bool is_base(Decision d);

/// lambda^t * p_relax, or 0 when the guard is on and v_now < v0.
double acceptance_probability(const WrapperConfig& cfg, long t, double v_now, double v0);

class WrapperState {
public:
    WrapperState(double v0, std::uint64_t rng_seed) : v_dagger(v0), v0(v0), rng(rng_seed) {}

    long t = 0;
    double v_dagger;
    double v0;
    Rng rng;
};

struct DecisionOutcome {
    Decision decision;
    double rho;
    double u;
};

/// Draws U_t from the state's stream (exactly once) and decides; advances t.
DecisionOutcome wrapper_decide(WrapperState& ws, const WrapperConfig& cfg, double v_now);

/// Same rule with an externally supplied U_t; advances t.
DecisionOutcome wrapper_decide_with_draw(WrapperState& ws, const WrapperConfig& cfg, double v_now, double u);

struct StepLog {
    long t = 0;
    Decision decision = Decision::fallback;
    double v_now = 0.0;
    double v_dagger = 0.0;  // after the update of this step
    double rho = 0.0;
    double u = 0.0;
    double reward = 0.0;
    double goal_distance = 0.0;  // of the state the decision was made in
};

/// Number of trailing consecutive in-goal states required for "goal reached".
inline constexpr int kGoalWindow = 20;

struct TrialRecord {
    std::uint64_t seed = 0;
    Vec initial_state;
    double v0 = 0.0;
    double cumulative_reward = 0.0;
    bool goal_reached = false;
    bool terminated = false;
    int steps = 0;
    double final_goal_distance = 0.0;
    long n_improve = 0;  // N_{V dagger}
    long n_random = 0;   // N_rho
    long n_base = 0;     // N_{pi_b}
    std::optional<long> last_base_index;
    std::vector<StepLog> log;
    std::vector<Vec> states;  // s_0 .. s_steps, only when requested
};

struct EpisodeOptions {
    std::optional<Vec> initial_state;
    bool record_states = false;
};

/// Independent streams derived from one trial seed.
inline std::uint64_t initial_state_seed(std::uint64_t trial_seed) { return derive_seed(trial_seed, 0); }
inline std::uint64_t decision_seed(std::uint64_t trial_seed) { return derive_seed(trial_seed, 1); }

/// One wrapped episode. Initial state comes from the trial seed's
/// initial-state stream unless supplied.
TrialRecord run_episode(const env::Environment& env, const policy::Policy& base, const policy::Critic& critic,
                        const policy::Policy& fallback, const WrapperConfig& cfg, const EpisodeOptions& opts = {});

/// Unwrapped episode with a single policy. Decisions are logged as
/// base_forced (as_base) or fallback; rho and u are zero. The critic, when
/// given, fills v_now.
TrialRecord run_policy_episode(const env::Environment& env, const policy::Policy& policy, bool as_base, int horizon,
                               std::uint64_t seed, const policy::Critic* critic = nullptr,
                               const EpisodeOptions& opts = {});

/// Per-step decision log as CSV: t,decision,v_now,v_dagger,rho_t,u_t,reward,goal_distance
void write_decision_log_csv(std::ostream& out, const TrialRecord& record);

}  // namespace calfw::wrapper

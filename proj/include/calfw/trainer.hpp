#pragma once

// Desk-scale producers of base policies and critics.
//
// Policies are found by cross-entropy search over the flat parameter vector
// of a tanh MLP. Critics are regressed by semi-gradient TD(0) on rollouts of
// a fixed policy.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "calfw/env.hpp"
#include "calfw/network.hpp"
#include "calfw/policy.hpp"

namespace calfw::train {

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class CheckpointTag { early, mid, late };

std::string_view to_string(CheckpointTag tag);
CheckpointTag parse_checkpoint_tag(std::string_view s);

struct TrainConfig {
    double gamma = 0.99;

    // policy search
    std::size_t population = 64;
    double elite_fraction = 0.2;
    int iterations = 60;
    int rollout_horizon = 0;  // 0: the environment's training horizon
    std::size_t episodes_per_candidate = 8;
    double init_std = 0.1;
    double min_std = 0.01;
    std::vector<std::size_t> hidden = {64, 64};

    // critic regression
    double critic_lr = 1e-3;
    int critic_epochs = 100;
    std::size_t critic_episodes = 30;
    std::size_t critic_batch = 64;

    std::uint64_t seed = 0;

    void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& cfg);

/// Iteration at which a tag is taken: 10%, 50% and 100% of the run
/// (rounded, at least 1 when iterations > 0).
int checkpoint_iteration(CheckpointTag tag, int iterations);

struct Checkpoint {
    CheckpointTag tag;
    int iteration = 0;
    policy::PortableNetwork net;
};

struct IterationLog {
    int iteration = 0;  // 1-based
    double best_return = 0.0;
    double elite_mean_return = 0.0;
    double population_mean_return = 0.0;
    double mean_std = 0.0;  // mean sampling std after the update
    std::vector<double> elite_returns;
};

struct PolicyTrainResult {
    policy::PortableNetwork initial;
    policy::PortableNetwork final;
    std::vector<Checkpoint> checkpoints;  // early, mid, late
    std::vector<IterationLog> history;

    const Checkpoint& checkpoint(CheckpointTag tag) const;
};

/// Policy network for the environment with seeded hidden weights and a zero
/// output layer, mapped into the action box by tanh scaling.
policy::PortableNetwork initial_policy_network(const env::Environment& env, const TrainConfig& cfg);

/// Critic network with seeded hidden weights and a zero output layer.
policy::PortableNetwork initial_critic_network(const env::Environment& env, const TrainConfig& cfg);

/// Cross-entropy search maximising mean undiscounted episodic return.
/// Candidates in one iteration share their initial states.
PolicyTrainResult train_policy(const env::Environment& env, const TrainConfig& cfg);

/// Mean undiscounted return of `policy` from `episodes` initial states drawn
/// from the seed.
double evaluate_return(const env::Environment& env, const policy::Policy& policy, std::size_t episodes, int horizon,
                       std::uint64_t seed);

struct CriticFitResult {
    policy::PortableNetwork net;
    std::vector<double> residual_history;  // mean squared Bellman residual after each epoch
    double final_residual = 0.0;
    double value_scale = 1.0;
    std::size_t transitions = 0;
};

/// TD(0) regression of the policy's discounted value on observations.
/// Truncated episodes bootstrap from the last state; terminated ones do not.
/// With zero epochs the starting network is returned unchanged.
CriticFitResult fit_critic(const env::Environment& env, const policy::Policy& policy, const TrainConfig& cfg,
                           const std::optional<policy::PortableNetwork>& start = std::nullopt);

/// iteration,best_return,elite_mean_return,population_mean_return,mean_std
void write_training_log_csv(std::ostream& out, const PolicyTrainResult& result);

}  // namespace calfw::train

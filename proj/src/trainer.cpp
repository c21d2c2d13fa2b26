#include "calfw/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "calfw/parallel.hpp"
#include "calfw/rng.hpp"
#include "calfw/wrapper.hpp"

namespace calfw::train {

using policy::Activation;
using policy::Layer;
using policy::PortableNetwork;
using Vec = std::vector<double>;

std::string_view to_string(CheckpointTag tag) {
    switch (tag) {
        case CheckpointTag::early: return "early";
        case CheckpointTag::mid: return "mid";
        case CheckpointTag::late: return "late";
    }
    return "late";
}

CheckpointTag parse_checkpoint_tag(std::string_view s) {
    if (s == "early") return CheckpointTag::early;
    if (s == "mid") return CheckpointTag::mid;
    if (s == "late") return CheckpointTag::late;
    throw std::invalid_argument("unknown checkpoint tag '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
    if (!(elite_fraction > 0.0 && elite_fraction < 1.0)) throw std::invalid_argument("elite_fraction must lie in (0, 1)");
    if (population < 2) throw std::invalid_argument("population must be at least 2");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (rollout_horizon < 0) throw std::invalid_argument("rollout_horizon must be >= 0");
    if (episodes_per_candidate == 0) throw std::invalid_argument("episodes_per_candidate must be positive");
    if (!(init_std > 0.0) || !(min_std >= 0.0)) throw std::invalid_argument("sampling std must be positive");
    if (!(critic_lr > 0.0)) throw std::invalid_argument("critic_lr must be > 0");
    if (critic_epochs < 0) throw std::invalid_argument("critic_epochs must be >= 0");
    if (critic_episodes == 0 || critic_batch == 0) throw std::invalid_argument("critic episodes and batch must be positive");
    for (std::size_t h : hidden) {
        if (h == 0) throw std::invalid_argument("hidden widths must be positive");
    }
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
    if (!j.is_object()) throw std::invalid_argument("training config must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key == "gamma") cfg.gamma = value.get<double>();
        else if (key == "population") cfg.population = value.get<std::size_t>();
        else if (key == "elite_fraction") cfg.elite_fraction = value.get<double>();
        else if (key == "iterations") cfg.iterations = value.get<int>();
        else if (key == "rollout_horizon") cfg.rollout_horizon = value.get<int>();
        else if (key == "episodes_per_candidate") cfg.episodes_per_candidate = value.get<std::size_t>();
        else if (key == "init_std") cfg.init_std = value.get<double>();
        else if (key == "min_std") cfg.min_std = value.get<double>();
        else if (key == "hidden") cfg.hidden = value.get<std::vector<std::size_t>>();
        else if (key == "critic_lr") cfg.critic_lr = value.get<double>();
        else if (key == "critic_epochs") cfg.critic_epochs = value.get<int>();
        else if (key == "critic_episodes") cfg.critic_episodes = value.get<std::size_t>();
        else if (key == "critic_batch") cfg.critic_batch = value.get<std::size_t>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw std::invalid_argument("unknown training option '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"gamma", cfg.gamma},
            {"population", cfg.population},
            {"elite_fraction", cfg.elite_fraction},
            {"iterations", cfg.iterations},
            {"rollout_horizon", cfg.rollout_horizon},
            {"episodes_per_candidate", cfg.episodes_per_candidate},
            {"init_std", cfg.init_std},
            {"min_std", cfg.min_std},
            {"hidden", cfg.hidden},
            {"critic_lr", cfg.critic_lr},
            {"critic_epochs", cfg.critic_epochs},
            {"critic_episodes", cfg.critic_episodes},
            {"critic_batch", cfg.critic_batch},
            {"seed", cfg.seed}};
}

int checkpoint_iteration(CheckpointTag tag, int iterations) {
    if (iterations <= 0) return 0;
    double frac = 1.0;
    if (tag == CheckpointTag::early) frac = 0.1;
    if (tag == CheckpointTag::mid) frac = 0.5;
    return std::clamp(static_cast<int>(std::lround(frac * iterations)), 1, iterations);
}

const Checkpoint& PolicyTrainResult::checkpoint(CheckpointTag tag) const {
    for (const auto& c : checkpoints) {
        if (c.tag == tag) return c;
    }
    throw std::out_of_range("checkpoint '" + std::string(to_string(tag)) + "' missing");
}

namespace {

constexpr std::uint64_t kPolicyInitStream = 0;
constexpr std::uint64_t kCriticInitStream = 2;
constexpr std::uint64_t kCriticDataStream = 3;
constexpr std::uint64_t kCriticShuffleStream = 4;
constexpr std::uint64_t kIterationStreamBase = 1000;

PortableNetwork seeded_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                           policy::OutputRole role, std::uint64_t seed) {
    std::vector<std::size_t> widths{in};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(out);
    PortableNetwork net = policy::make_mlp(widths, Activation::tanh, role);
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
        Layer& l = net.layers[i];
        const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (double& w : l.weights) w = scale * rng.normal();
    }
    return net;
}

int horizon_for(const env::Environment& env, const TrainConfig& cfg) {
    return cfg.rollout_horizon > 0 ? cfg.rollout_horizon : env.train_horizon();
}

double episode_return(const env::Environment& env, const PortableNetwork& net, Vec state, int horizon) {
    double total = 0.0;
    for (int t = 0; t < horizon; ++t) {
        const Vec action = env.clamp_action(net.forward(env.observe(state)));
        total += env.reward(state, action);
        state = env.step(state, action);
        if (env.terminated(state)) break;
    }
    return total;
}

}  // namespace

PortableNetwork initial_policy_network(const env::Environment& env, const TrainConfig& cfg) {
    PortableNetwork net = seeded_mlp(env.obs_dim(), cfg.hidden, env.action_dim(), policy::OutputRole::policy_mean,
                                     derive_seed(cfg.seed, kPolicyInitStream));
    net.transform = policy::ActionTransform::tanh_scale;
    net.action_low = env.action_low();
    net.action_high = env.action_high();
    net.validate();
    return net;
}

PortableNetwork initial_critic_network(const env::Environment& env, const TrainConfig& cfg) {
    PortableNetwork net =
        seeded_mlp(env.obs_dim(), cfg.hidden, 1, policy::OutputRole::value, derive_seed(cfg.seed, kCriticInitStream));
    net.validate();
    return net;
}

PolicyTrainResult train_policy(const env::Environment& env, const TrainConfig& cfg) {
    cfg.validate();
    PolicyTrainResult result;
    result.initial = initial_policy_network(env, cfg);
    result.final = result.initial;

    const std::array tags{CheckpointTag::early, CheckpointTag::mid, CheckpointTag::late};
    if (cfg.iterations == 0) {
        for (CheckpointTag tag : tags) result.checkpoints.push_back({tag, 0, result.initial});
        return result;
    }

    const int horizon = horizon_for(env, cfg);
    const std::size_t n_params = result.initial.parameter_count();
    const std::size_t n_elite = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.elite_fraction * static_cast<double>(cfg.population))));
    Vec mean = policy::flatten_parameters(result.initial);
    Vec stdev(n_params, cfg.init_std);

    std::vector<Vec> candidates(cfg.population, Vec(n_params));
    std::vector<double> returns(cfg.population);

    for (int it = 1; it <= cfg.iterations; ++it) {
        const std::uint64_t iter_seed = derive_seed(cfg.seed, kIterationStreamBase + static_cast<std::uint64_t>(it));
        Rng state_rng(derive_seed(iter_seed, 0));
        std::vector<Vec> starts;
        for (std::size_t e = 0; e < cfg.episodes_per_candidate; ++e) starts.push_back(env.sample_initial(state_rng));

        parallel_for(cfg.population, [&](std::size_t k) {
            Rng noise(derive_seed(iter_seed, 1 + k));
            Vec& params = candidates[k];
            for (std::size_t i = 0; i < n_params; ++i) params[i] = mean[i] + stdev[i] * noise.normal();
            PortableNetwork net = result.initial;
            policy::assign_parameters(net, params);
            double total = 0.0;
            for (const Vec& s0 : starts) total += episode_return(env, net, s0, horizon);
            returns[k] = total / static_cast<double>(starts.size());
        });

        for (std::size_t k = 0; k < cfg.population; ++k) {
            if (!std::isfinite(returns[k])) {
                std::ostringstream msg;
                msg << "non-finite return at iteration " << it << ", candidate " << k;
                throw TrainingDiverged(msg.str());
            }
        }

        std::vector<std::size_t> order(cfg.population);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });

        IterationLog log;
        log.iteration = it;
        log.best_return = returns[order[0]];
        log.population_mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(cfg.population);

        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t e = 0; e < n_elite; ++e) {
            const Vec& p = candidates[order[e]];
            log.elite_returns.push_back(returns[order[e]]);
            for (std::size_t i = 0; i < n_params; ++i) mean[i] += p[i];
        }
        for (double& m : mean) m /= static_cast<double>(n_elite);
        double std_sum = 0.0;
        for (std::size_t i = 0; i < n_params; ++i) {
            double var = 0.0;
            for (std::size_t e = 0; e < n_elite; ++e) {
                const double d = candidates[order[e]][i] - mean[i];
                var += d * d;
            }
            stdev[i] = std::sqrt(var / static_cast<double>(n_elite)) + cfg.min_std;
            std_sum += stdev[i];
        }
        log.elite_mean_return = std::accumulate(log.elite_returns.begin(), log.elite_returns.end(), 0.0) /
                                static_cast<double>(n_elite);
        log.mean_std = std_sum / static_cast<double>(n_params);
        result.history.push_back(std::move(log));

        for (CheckpointTag tag : tags) {
            if (checkpoint_iteration(tag, cfg.iterations) == it) {
                PortableNetwork net = result.initial;
                policy::assign_parameters(net, mean);
                result.checkpoints.push_back({tag, it, std::move(net)});
            }
        }
    }
    result.final = result.checkpoint(CheckpointTag::late).net;
    return result;
}

double evaluate_return(const env::Environment& env, const policy::Policy& pol, std::size_t episodes, int horizon,
                       std::uint64_t seed) {
    if (episodes == 0) throw std::invalid_argument("need at least one evaluation episode");
    double total = 0.0;
    for (std::size_t k = 0; k < episodes; ++k) {
        const auto rec = wrapper::run_policy_episode(env, pol, true, horizon, derive_seed(seed, k));
        total += rec.cumulative_reward;
    }
    return total / static_cast<double>(episodes);
}

// ---------------------------------------------------------------------------
// Critic regression

namespace {

struct Transition {
    Vec obs;
    Vec next_obs;
    double reward;
    bool terminal;
};

double activation_slope(Activation a, double y) {
    switch (a) {
        case Activation::tanh: return 1.0 - y * y;
        case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
        case Activation::linear: return 1.0;
    }
    return 1.0;
}

// Forward pass keeping every layer's output for backpropagation.
double forward_tape(const PortableNetwork& net, std::span<const double> obs, std::vector<Vec>& tape) {
    tape.resize(net.layers.size() + 1);
    tape[0].assign(obs.begin(), obs.end());
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const Layer& l = net.layers[k];
        Vec& out = tape[k + 1];
        out.assign(l.out, 0.0);
        for (std::size_t r = 0; r < l.out; ++r) {
            double acc = l.bias[r];
            const double* row = l.weights.data() + r * l.in;
            for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * tape[k][c];
            switch (l.activation) {
                case Activation::tanh: acc = std::tanh(acc); break;
                case Activation::relu: acc = std::max(0.0, acc); break;
                case Activation::linear: break;
            }
            out[r] = acc;
        }
    }
    return tape.back()[0];
}

// Accumulates d(output)/d(params) * scale into grad (flat layout).
void backward(const PortableNetwork& net, const std::vector<Vec>& tape, double scale, Vec& grad,
              const std::vector<std::size_t>& offsets) {
    Vec delta{scale};
    Vec delta_in;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const Layer& l = net.layers[k];
        const Vec& in = tape[k];
        const Vec& out = tape[k + 1];
        double* gw = grad.data() + offsets[k];
        double* gb = gw + l.weights.size();
        delta_in.assign(l.in, 0.0);
        for (std::size_t r = 0; r < l.out; ++r) {
            const double d = delta[r] * activation_slope(l.activation, out[r]);
            gb[r] += d;
            const double* row = l.weights.data() + r * l.in;
            double* grow = gw + r * l.in;
            for (std::size_t c = 0; c < l.in; ++c) {
                grow[c] += d * in[c];
                delta_in[c] += row[c] * d;
            }
        }
        delta.swap(delta_in);
    }
}

class Adam {
public:
    Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

    void step(Vec& params, const Vec& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    double lr_;
    long t_ = 0;
    Vec m_;
    Vec v_;
};

void scale_output_layer(PortableNetwork& net, double factor) {
    Layer& last = net.layers.back();
    for (double& w : last.weights) w *= factor;
    for (double& b : last.bias) b *= factor;
}

double mean_bellman_residual(const PortableNetwork& net, const std::vector<Transition>& data, double gamma,
                             double reward_scale) {
    double total = 0.0;
    for (const Transition& tr : data) {
        const double v = net.forward(tr.obs)[0];
        const double next = tr.terminal ? 0.0 : net.forward(tr.next_obs)[0];
        const double e = tr.reward / reward_scale + gamma * next - v;
        total += e * e;
    }
    return total / static_cast<double>(data.size());
}

}  // namespace

CriticFitResult fit_critic(const env::Environment& env, const policy::Policy& pol, const TrainConfig& cfg,
                           const std::optional<PortableNetwork>& start) {
    cfg.validate();
    CriticFitResult result;
    result.net = start ? *start : initial_critic_network(env, cfg);
    result.net.validate();
    if (result.net.role != policy::OutputRole::value || result.net.out_dim != 1 ||
        result.net.obs_dim != env.obs_dim()) {
        throw policy::DimensionMismatch("critic network does not fit the environment");
    }

    const int horizon = horizon_for(env, cfg);
    std::vector<Transition> data;
    Rng data_rng(derive_seed(cfg.seed, kCriticDataStream));
    double max_return = 0.0;
    for (std::size_t e = 0; e < cfg.critic_episodes; ++e) {
        Vec state = env.sample_initial(data_rng);
        const std::size_t first = data.size();
        for (int t = 0; t < horizon; ++t) {
            const Vec action = pol.act(state);
            Vec next = env.step(state, action);
            const bool terminal = env.terminated(next);
            data.push_back({env.observe(state), env.observe(next), env.reward(state, action), terminal});
            state = std::move(next);
            if (terminal) break;
        }
        double g = 0.0;
        for (std::size_t i = data.size(); i-- > first;) {
            g = data[i].reward + cfg.gamma * g;
            max_return = std::max(max_return, std::abs(g));
        }
    }
    for (const Transition& tr : data) {
        if (!std::isfinite(tr.reward)) throw TrainingDiverged("non-finite reward in critic data");
    }
    result.transitions = data.size();
    // Fit in units where returns are O(1); the output layer is rescaled back.
    result.value_scale = std::max(1.0, max_return);
    const double scale = result.value_scale;

    if (cfg.critic_epochs == 0) {
        PortableNetwork scaled = result.net;
        scale_output_layer(scaled, 1.0 / scale);
        result.final_residual = mean_bellman_residual(scaled, data, cfg.gamma, scale) * scale * scale;
        return result;
    }

    PortableNetwork net = result.net;
    scale_output_layer(net, 1.0 / scale);
    std::vector<std::size_t> offsets;
    std::size_t n_params = 0;
    for (const Layer& l : net.layers) {
        offsets.push_back(n_params);
        n_params += l.weights.size() + l.bias.size();
    }
    Vec params = policy::flatten_parameters(net);
    Adam adam(n_params, cfg.critic_lr);
    Vec grad(n_params);
    std::vector<Vec> tape;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_engine(derive_seed(cfg.seed, kCriticShuffleStream));

    for (int epoch = 0; epoch < cfg.critic_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_engine);
        for (std::size_t b = 0; b < order.size(); b += cfg.critic_batch) {
            const std::size_t end = std::min(order.size(), b + cfg.critic_batch);
            const double inv = 1.0 / static_cast<double>(end - b);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = b; i < end; ++i) {
                const Transition& tr = data[order[i]];
                const double next = tr.terminal ? 0.0 : net.forward(tr.next_obs)[0];
                const double target = tr.reward / scale + cfg.gamma * next;
                const double v = forward_tape(net, tr.obs, tape);
                backward(net, tape, (v - target) * inv, grad, offsets);
            }
            adam.step(params, grad);
            policy::assign_parameters(net, params);
        }
        const double residual = mean_bellman_residual(net, data, cfg.gamma, scale) * scale * scale;
        if (!std::isfinite(residual)) {
            throw TrainingDiverged("non-finite Bellman residual at critic epoch " + std::to_string(epoch + 1));
        }
        result.residual_history.push_back(residual);
    }
    scale_output_layer(net, scale);
    result.net = std::move(net);
    result.final_residual = result.residual_history.back();
    return result;
}

void write_training_log_csv(std::ostream& out, const PolicyTrainResult& result) {
    out << "iteration,best_return,elite_mean_return,population_mean_return,mean_std\n";
    const auto old_precision = out.precision(17);
    for (const IterationLog& l : result.history) {
        out << l.iteration << ',' << l.best_return << ',' << l.elite_mean_return << ',' << l.population_mean_return
            << ',' << l.mean_std << '\n';
    }
    out.precision(old_precision);
}

}  // namespace calfw::train

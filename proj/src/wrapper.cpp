#include "calfw/wrapper.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace calfw::wrapper {

void WrapperConfig::validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("nu must be > 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
    if (!(p_relax >= 0.0 && p_relax <= 1.0)) throw std::invalid_argument("p_relax must lie in [0, 1]");
    if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
}

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::base_improve: return "base-improve";
        case Decision::base_random: return "base-random";
        case Decision::fallback: return "fallback";
        case Decision::base_forced: return "base-forced";
    }
    return "fallback";
}

bool is_base(Decision d) { return d != Decision::fallback; }

double acceptance_probability(const WrapperConfig& cfg, long t, double v_now, double v0) {
    if (cfg.value_guard && v_now < v0) return 0.0;
    if (cfg.p_relax == 0.0) return 0.0;
    return std::pow(cfg.lambda, static_cast<double>(t)) * cfg.p_relax;
}

DecisionOutcome wrapper_decide_with_draw(WrapperState& ws, const WrapperConfig& cfg, double v_now, double u) {
    const double rho = acceptance_probability(cfg, ws.t, v_now, ws.v0);
    DecisionOutcome out{Decision::fallback, rho, u};
    if (v_now >= ws.v_dagger + cfg.nu) {
        out.decision = Decision::base_improve;
        ws.v_dagger = v_now;
    } else if (u < rho) {
        out.decision = Decision::base_random;
    }
    ++ws.t;
    return out;
}

DecisionOutcome wrapper_decide(WrapperState& ws, const WrapperConfig& cfg, double v_now) {
    const double u = ws.rng.uniform();
    return wrapper_decide_with_draw(ws, cfg, v_now, u);
}

namespace {

Vec initial_state_for(const env::Environment& env, std::uint64_t seed, const EpisodeOptions& opts) {
    if (opts.initial_state) {
        if (opts.initial_state->size() != env.state_dim()) {
            throw std::invalid_argument("initial state has the wrong dimension");
        }
        return *opts.initial_state;
    }
    Rng rng(initial_state_seed(seed));
    return env.sample_initial(rng);
}

// Shared bookkeeping for both episode kinds.
class EpisodeRecorder {
public:
    EpisodeRecorder(TrialRecord& rec, const EpisodeOptions& opts) : rec_(rec), opts_(opts) {}

    void start(const Vec& s0) {
        rec_.initial_state = s0;
        if (opts_.record_states) rec_.states.push_back(s0);
    }

    void record(const env::Environment& env, const StepLog& entry, const Vec& next) {
        rec_.log.push_back(entry);
        rec_.cumulative_reward += entry.reward;
        if (is_base(entry.decision)) {
            ++rec_.n_base;
            rec_.last_base_index = entry.t;
        }
        if (entry.decision == Decision::base_improve) ++rec_.n_improve;
        if (entry.decision == Decision::base_random) ++rec_.n_random;
        if (opts_.record_states) rec_.states.push_back(next);
        ++rec_.steps;
        in_goal_run_ = env.in_goal(next) ? in_goal_run_ + 1 : 0;
    }

    void finish(const env::Environment& env, const Vec& last, int horizon) {
        rec_.final_goal_distance = env.goal_distance(last);
        const int window = std::min(kGoalWindow, horizon);
        rec_.goal_reached = !rec_.terminated && in_goal_run_ >= window;
    }

private:
    TrialRecord& rec_;
    const EpisodeOptions& opts_;
    int in_goal_run_ = 0;
};

}  // namespace

TrialRecord run_episode(const env::Environment& env, const policy::Policy& base, const policy::Critic& critic,
                        const policy::Policy& fallback, const WrapperConfig& cfg, const EpisodeOptions& opts) {
    cfg.validate();
    TrialRecord rec;
    rec.seed = cfg.seed;
    rec.log.reserve(static_cast<std::size_t>(cfg.horizon));
    EpisodeRecorder recorder(rec, opts);

    Vec state = initial_state_for(env, cfg.seed, opts);
    recorder.start(state);
    rec.v0 = critic.value(state);
    WrapperState ws(rec.v0, decision_seed(cfg.seed));

    for (int t = 0; t < cfg.horizon; ++t) {
        const double v_now = critic.value(state);
        const DecisionOutcome outcome = wrapper_decide(ws, cfg, v_now);
        Vec action;
        Vec next;
        try {
            action = is_base(outcome.decision) ? base.act(state) : fallback.act(state);
            next = env.step(state, action);
        } catch (const std::exception& e) {
            throw std::runtime_error("step " + std::to_string(t) + ": " + e.what());
        }
        StepLog entry;
        entry.t = t;
        entry.decision = outcome.decision;
        entry.v_now = v_now;
        entry.v_dagger = ws.v_dagger;
        entry.rho = outcome.rho;
        entry.u = outcome.u;
        entry.reward = env.reward(state, action);
        entry.goal_distance = env.goal_distance(state);
        recorder.record(env, entry, next);
        state = std::move(next);
        if (env.terminated(state)) {
            rec.terminated = true;
            break;
        }
    }
    recorder.finish(env, state, cfg.horizon);
    return rec;
}

TrialRecord run_policy_episode(const env::Environment& env, const policy::Policy& policy, bool as_base, int horizon,
                               std::uint64_t seed, const policy::Critic* critic, const EpisodeOptions& opts) {
    if (horizon <= 0) throw std::invalid_argument("horizon must be positive");
    TrialRecord rec;
    rec.seed = seed;
    rec.log.reserve(static_cast<std::size_t>(horizon));
    EpisodeRecorder recorder(rec, opts);

    Vec state = initial_state_for(env, seed, opts);
    recorder.start(state);
    rec.v0 = critic ? critic->value(state) : 0.0;
    double best = rec.v0;

    for (int t = 0; t < horizon; ++t) {
        Vec action;
        Vec next;
        try {
            action = policy.act(state);
            next = env.step(state, action);
        } catch (const std::exception& e) {
            throw std::runtime_error("step " + std::to_string(t) + ": " + e.what());
        }
        StepLog entry;
        entry.t = t;
        entry.decision = as_base ? Decision::base_forced : Decision::fallback;
        entry.v_now = critic ? critic->value(state) : 0.0;
        best = std::max(best, entry.v_now);
        entry.v_dagger = best;
        entry.reward = env.reward(state, action);
        entry.goal_distance = env.goal_distance(state);
        recorder.record(env, entry, next);
        state = std::move(next);
        if (env.terminated(state)) {
            rec.terminated = true;
            break;
        }
    }
    recorder.finish(env, state, horizon);
    return rec;
}

void write_decision_log_csv(std::ostream& out, const TrialRecord& record) {
    out << "t,decision,v_now,v_dagger,rho_t,u_t,reward,goal_distance\n";
    const auto old_precision = out.precision(17);
    for (const StepLog& s : record.log) {
        out << s.t << ',' << to_string(s.decision) << ',' << s.v_now << ',' << s.v_dagger << ',' << s.rho << ','
            << s.u << ',' << s.reward << ',' << s.goal_distance << '\n';
    }
    out.precision(old_precision);
}

}  // namespace calfw::wrapper

#pragma once

// Discrete-time Pendulum and CartPoleSwingup simulations.
//
// Both systems integrate with semi-implicit Euler: velocities are updated
// first and positions use the new velocities. Angles are kept unwrapped;
// rewards and observations only see them through cos/sin/arccos(cos).

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calfw/rng.hpp"

namespace calfw::env {

using Vec = std::vector<double>;

class InvalidState : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UnknownEnvironment : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Wraps an angle into [-pi, pi).
double wrap_angle(double angle);

// ---------------------------------------------------------------------------
// Pendulum

struct PendulumParams {
    double g = 10.0;
    double m = 1.0;
    double l = 1.0;
    double dt = 0.05;
    double max_torque = 2.0;
};

struct PendulumState {
    double theta = 0.0;  // rad, unwrapped
    double omega = 0.0;  // rad/s
};

/// omega' = omega + dt * (-(3g/2l) sin(theta) + 3/(m l^2) * u), theta' = theta + dt * omega'
/// with u the torque clamped to [-max_torque, max_torque].
PendulumState pendulum_step(const PendulumState& s, double torque, const PendulumParams& p = {});
double pendulum_reward(const PendulumState& s, double torque);
std::array<double, 3> pendulum_observe(const PendulumState& s);

// ---------------------------------------------------------------------------
// CartPoleSwingup

struct CartPoleParams {
    double m_cart = 1.0;
    double m_pole = 0.1;
    double length = 0.5;
    double g = 9.8;
    double dt = 0.02;
    double max_force = 10.0;
    double x_limit = 5.0;
    double x_dot_limit = 8.0;
    double theta_dot_limit = 10.0;
};

struct CartPoleState {
    double x = 0.0;          // m
    double x_dot = 0.0;      // m/s
    double theta = 0.0;      // rad, 0 = upright
    double theta_dot = 0.0;  // rad/s
};

struct CartPoleAccel {
    double x_ddot;
    double theta_ddot;
};

CartPoleAccel cartpole_accelerations(const CartPoleState& s, double force, const CartPoleParams& p = {});
CartPoleState cartpole_step(const CartPoleState& s, double force, const CartPoleParams& p = {});
double cartpole_reward(const CartPoleState& s, double force);
std::array<double, 5> cartpole_observe(const CartPoleState& s);
bool cartpole_terminated(const CartPoleState& s, const CartPoleParams& p = {});

// ---------------------------------------------------------------------------
// Goal sets

/// One box constraint |extract(s) - center| <= halfwidth.
struct GoalFeature {
    std::string name;
    std::function<double(std::span<const double>)> extract;
    double center = 0.0;
    double halfwidth = 0.0;
};

/// Intersection of feature boxes. The distance surrogate is the largest
/// per-feature excess, so it is zero exactly on the set.
struct GoalSetSpec {
    std::vector<GoalFeature> features;

    double distance(std::span<const double> state) const;
    bool contains(std::span<const double> state) const;
};

/// One coordinate of the state box. Periodic axes are angles.
struct StateAxis {
    double lo = 0.0;
    double hi = 0.0;
    bool periodic = false;
};

// ---------------------------------------------------------------------------
// Type-erased environment used by the wrapper, trainer, certificates and
// harness. States, observations and actions are flat vectors.

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string_view id() const = 0;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t obs_dim() const = 0;
    virtual std::size_t action_dim() const { return 1; }
    virtual Vec action_low() const = 0;
    virtual Vec action_high() const = 0;
    virtual double dt() const = 0;
    virtual int train_horizon() const = 0;
    virtual int eval_horizon() const = 0;

    /// Successor state. Actions are clamped to the bounds; non-finite
    /// state or action throws InvalidState.
    virtual Vec step(std::span<const double> state, std::span<const double> action) const = 0;
    virtual double reward(std::span<const double> state, std::span<const double> action) const = 0;
    virtual Vec observe(std::span<const double> state) const = 0;
    virtual bool terminated(std::span<const double> /*state*/) const { return false; }
    virtual Vec sample_initial(Rng& rng) const = 0;
    virtual const GoalSetSpec& goal() const = 0;

    /// Euclidean norm with angular coordinates wrapped to [-pi, pi).
    virtual double state_norm(std::span<const double> state) const = 0;

    /// Axis-aligned box used as the default certificate grid / sampling region.
    virtual std::vector<StateAxis> state_box() const = 0;

    double goal_distance(std::span<const double> state) const { return goal().distance(state); }
    bool in_goal(std::span<const double> state) const { return goal().contains(state); }

    /// One-step transition magnitude bound. Dynamics are deterministic, so
    /// this is the norm of the successor itself.
    double transition_bound(std::span<const double> state, std::span<const double> action) const;

    Vec clamp_action(std::span<const double> action) const;
};

class PendulumEnv final : public Environment {
public:
    explicit PendulumEnv(PendulumParams params = {}, int horizon = 200);

    const PendulumParams& params() const { return params_; }

    std::string_view id() const override { return "pendulum"; }
    std::size_t state_dim() const override { return 2; }
    std::size_t obs_dim() const override { return 3; }
    Vec action_low() const override { return {-params_.max_torque}; }
    Vec action_high() const override { return {params_.max_torque}; }
    double dt() const override { return params_.dt; }
    int train_horizon() const override { return horizon_; }
    int eval_horizon() const override { return horizon_; }

    Vec step(std::span<const double> state, std::span<const double> action) const override;
    double reward(std::span<const double> state, std::span<const double> action) const override;
    Vec observe(std::span<const double> state) const override;
    Vec sample_initial(Rng& rng) const override;
    const GoalSetSpec& goal() const override { return goal_; }
    double state_norm(std::span<const double> state) const override;
    std::vector<StateAxis> state_box() const override;

    static PendulumState unpack(std::span<const double> state);
    static Vec pack(const PendulumState& s) { return {s.theta, s.omega}; }

private:
    PendulumParams params_;
    int horizon_;
    GoalSetSpec goal_;
};

class CartPoleSwingupEnv final : public Environment {
public:
    explicit CartPoleSwingupEnv(CartPoleParams params = {}, int train_horizon = 200, int eval_horizon = 1000);

    const CartPoleParams& params() const { return params_; }

    std::string_view id() const override { return "cartpole_swingup"; }
    std::size_t state_dim() const override { return 4; }
    std::size_t obs_dim() const override { return 5; }
    Vec action_low() const override { return {-params_.max_force}; }
    Vec action_high() const override { return {params_.max_force}; }
    double dt() const override { return params_.dt; }
    int train_horizon() const override { return train_horizon_; }
    int eval_horizon() const override { return eval_horizon_; }

    Vec step(std::span<const double> state, std::span<const double> action) const override;
    double reward(std::span<const double> state, std::span<const double> action) const override;
    Vec observe(std::span<const double> state) const override;
    bool terminated(std::span<const double> state) const override;
    Vec sample_initial(Rng& rng) const override;
    const GoalSetSpec& goal() const override { return goal_; }
    double state_norm(std::span<const double> state) const override;
    std::vector<StateAxis> state_box() const override;

    static CartPoleState unpack(std::span<const double> state);
    static Vec pack(const CartPoleState& s) { return {s.x, s.x_dot, s.theta, s.theta_dot}; }

private:
    CartPoleParams params_;
    int train_horizon_;
    int eval_horizon_;
    GoalSetSpec goal_;
};

GoalSetSpec pendulum_goal_set();
GoalSetSpec cartpole_goal_set();

/// Builds an environment by id ("pendulum", "cartpole_swingup"). `overrides`
/// may replace any physical constant by name (e.g. {"g": 9.81}) and the
/// horizons ("horizon", "train_horizon", "eval_horizon").
std::unique_ptr<Environment> make_environment(std::string_view id, const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace calfw::env

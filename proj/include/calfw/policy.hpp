#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "calfw/env.hpp"
#include "calfw/network.hpp"

namespace calfw::policy {

enum class PolicyKind { network, fallback, handcrafted };

/// A stationary, deterministic state-feedback policy. `act` always returns
/// an action inside the environment's bounds.
class Policy {
public:
    virtual ~Policy() = default;
    virtual PolicyKind kind() const = 0;
    virtual bool deterministic() const { return true; }
    virtual std::string name() const = 0;
    virtual Vec act(std::span<const double> state) const = 0;
};

/// Value estimate used as the switching signal.
class Critic {
public:
    virtual ~Critic() = default;
    virtual double value(std::span<const double> state) const = 0;
    /// Declared supremum, when the critic is known to be bounded above.
    virtual std::optional<double> upper_bound() const { return std::nullopt; }
};

// ---------------------------------------------------------------------------

/// Base policy backed by a PortableNetwork. Networks read observations.
class NetworkPolicy final : public Policy {
public:
    NetworkPolicy(const env::Environment& env, PortableNetwork net);
    PolicyKind kind() const override { return PolicyKind::network; }
    std::string name() const override { return "network"; }
    Vec act(std::span<const double> state) const override;
    const PortableNetwork& network() const { return net_; }

private:
    const env::Environment& env_;
    PortableNetwork net_;
};

class NetworkCritic final : public Critic {
public:
    NetworkCritic(const env::Environment& env, PortableNetwork net);
    double value(std::span<const double> state) const override;
    const PortableNetwork& network() const { return net_; }

private:
    const env::Environment& env_;
    PortableNetwork net_;
};

/// Always applies the same action (clamped). Used as an adversarial base.
class ConstantPolicy final : public Policy {
public:
    ConstantPolicy(const env::Environment& env, Vec action);
    PolicyKind kind() const override { return PolicyKind::handcrafted; }
    std::string name() const override { return "constant"; }
    Vec act(std::span<const double> state) const override;

private:
    const env::Environment& env_;
    Vec action_;
};

// ---------------------------------------------------------------------------
// Handcrafted critic:
//   V(s) = -goal_distance(s) - shape * (1 - exp(-|s|^2))
// Continuous, bounded above by 0 (attained only at the origin) and with
// superlevel sets inside {goal_distance <= -a}.

inline constexpr double kHandcraftedShape = 0.05;

double handcrafted_value(const env::Environment& env, std::span<const double> state);

class HandcraftedCritic final : public Critic {
public:
    explicit HandcraftedCritic(const env::Environment& env) : env_(env) {}
    double value(std::span<const double> state) const override { return handcrafted_value(env_, state); }
    std::optional<double> upper_bound() const override { return 0.0; }

private:
    const env::Environment& env_;
};

// ---------------------------------------------------------------------------
// Fallback controllers: energy shaping away from upright, linear feedback
// near upright. They read the raw state.

struct PendulumFallbackParams {
    double energy_gain = 0.25;      // k_e
    double kp = 2.0;                // PD on wrapped angle
    double kd = 2.0;                // PD on angular velocity
    double switch_threshold = 0.5;  // PD region: |cos(theta) - 1| <= threshold
    double target_energy = 0.0;     // E*, J

    void validate() const;
};

/// Thin-rod energy consistent with pendulum_step:
///   E = 1/2 (m l^2 / 3) omega^2 + (m g l / 2) (1 - cos(theta)).
/// Zero at upright rest.
double pendulum_energy(const env::PendulumState& s, const env::PendulumParams& p = {});

/// PD region: u = -kp * wrap(theta) - kd * omega; otherwise
/// u = k_e * omega * (E* - E). Clamped to the torque bound.
double pendulum_fallback(const env::PendulumState& s, const PendulumFallbackParams& params,
                         const env::PendulumParams& p = {});

/// Near upright the force is F = kx x + kv x_dot + ktheta theta + komega theta_dot.
/// The cart gains are positive: a balancing cart first moves toward the
/// side it is displaced to so the pole tilts back to the origin.
struct CartPoleFallbackParams {
    double energy_gain = 1.0;       // swing-up pumping gain
    double swing_kx = 4.0;          // cart centering during swing-up
    double swing_kv = 4.0;
    double kx = 2.790;              // balance gains, discrete LQR on the linearisation
    double kv = 3.906;
    double ktheta = 36.598;
    double komega = 7.494;
    double switch_threshold = 0.3;  // balance region: |cos(theta) - 1| <= threshold
    double target_energy = 0.0;     // pole energy about the pivot, J

    void validate() const;
};

/// Pole energy about the pivot: 1/2 m_p l^2 theta_dot^2 + m_p g l (cos(theta) - 1).
double cartpole_pole_energy(const env::CartPoleState& s, const env::CartPoleParams& p = {});

double cartpole_fallback(const env::CartPoleState& s, const CartPoleFallbackParams& params,
                         const env::CartPoleParams& p = {});

class PendulumFallback final : public Policy {
public:
    PendulumFallback(env::PendulumParams env_params, PendulumFallbackParams params);
    PolicyKind kind() const override { return PolicyKind::fallback; }
    std::string name() const override { return "pendulum-fallback"; }
    Vec act(std::span<const double> state) const override;
    const PendulumFallbackParams& params() const { return params_; }

private:
    env::PendulumParams env_params_;
    PendulumFallbackParams params_;
};

class CartPoleFallback final : public Policy {
public:
    CartPoleFallback(env::CartPoleParams env_params, CartPoleFallbackParams params);
    PolicyKind kind() const override { return PolicyKind::fallback; }
    std::string name() const override { return "cartpole-fallback"; }
    Vec act(std::span<const double> state) const override;
    const CartPoleFallbackParams& params() const { return params_; }

private:
    env::CartPoleParams env_params_;
    CartPoleFallbackParams params_;
};

PendulumFallbackParams pendulum_fallback_params_from_json(const nlohmann::json& j);
CartPoleFallbackParams cartpole_fallback_params_from_json(const nlohmann::json& j);

/// Fallback for the given environment with default gains, optionally
/// overridden by name (e.g. {"kp": 4.0}).
std::unique_ptr<Policy> make_fallback(const env::Environment& env,
                                      const nlohmann::json& gains = nlohmann::json::object());

}  // namespace calfw::policy

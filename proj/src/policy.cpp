#include "calfw/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace calfw::policy {

NetworkPolicy::NetworkPolicy(const env::Environment& env, PortableNetwork net) : env_(env), net_(std::move(net)) {
    net_.validate();
    if (net_.role != OutputRole::policy_mean) throw SchemaError("NetworkPolicy needs a policy-mean network");
    if (net_.obs_dim != env_.obs_dim() || net_.out_dim != env_.action_dim()) {
        throw DimensionMismatch("policy network dimensions do not match environment " + std::string(env_.id()));
    }
}

Vec NetworkPolicy::act(std::span<const double> state) const {
    return env_.clamp_action(net_.forward(env_.observe(state)));
}

NetworkCritic::NetworkCritic(const env::Environment& env, PortableNetwork net) : env_(env), net_(std::move(net)) {
    net_.validate();
    if (net_.role != OutputRole::value || net_.out_dim != 1) throw SchemaError("NetworkCritic needs a scalar value network");
    if (net_.obs_dim != env_.obs_dim()) {
        throw DimensionMismatch("critic network input does not match environment " + std::string(env_.id()));
    }
}

double NetworkCritic::value(std::span<const double> state) const { return net_.forward(env_.observe(state))[0]; }

ConstantPolicy::ConstantPolicy(const env::Environment& env, Vec action) : env_(env), action_(std::move(action)) {
    if (action_.size() != env_.action_dim()) throw DimensionMismatch("constant action has the wrong dimension");
}

Vec ConstantPolicy::act(std::span<const double> /*state*/) const { return env_.clamp_action(action_); }

// ---------------------------------------------------------------------------

double handcrafted_value(const env::Environment& env, std::span<const double> state) {
    const double r = env.state_norm(state);
    return -env.goal_distance(state) - kHandcraftedShape * (1.0 - std::exp(-r * r));
}

// ---------------------------------------------------------------------------

namespace {

void require_gain(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("fallback gain ") + name + " must be >= 0");
}

void require_threshold(double v) {
    if (!(v > 0.0 && v < 2.0)) throw std::invalid_argument("fallback switch threshold must lie in (0, 2)");
}

}  // namespace

void PendulumFallbackParams::validate() const {
    require_gain(energy_gain, "energy_gain");
    require_gain(kp, "kp");
    require_gain(kd, "kd");
    require_threshold(switch_threshold);
}

void CartPoleFallbackParams::validate() const {
    require_gain(energy_gain, "energy_gain");
    require_gain(swing_kx, "swing_kx");
    require_gain(swing_kv, "swing_kv");
    require_gain(kx, "kx");
    require_gain(kv, "kv");
    require_gain(ktheta, "ktheta");
    require_gain(komega, "komega");
    require_threshold(switch_threshold);
}

double pendulum_energy(const env::PendulumState& s, const env::PendulumParams& p) {
    const double inertia = p.m * p.l * p.l / 3.0;
    return 0.5 * inertia * s.omega * s.omega + 0.5 * p.m * p.g * p.l * (1.0 - std::cos(s.theta));
}

double pendulum_fallback(const env::PendulumState& s, const PendulumFallbackParams& params,
                         const env::PendulumParams& p) {
    double u = 0.0;
    if (std::abs(std::cos(s.theta) - 1.0) <= params.switch_threshold) {
        u = -params.kp * env::wrap_angle(s.theta) - params.kd * s.omega;
    } else {
        u = params.energy_gain * s.omega * (params.target_energy - pendulum_energy(s, p));
    }
    return std::clamp(u, -p.max_torque, p.max_torque);
}

double cartpole_pole_energy(const env::CartPoleState& s, const env::CartPoleParams& p) {
    return 0.5 * p.m_pole * p.length * p.length * s.theta_dot * s.theta_dot +
           p.m_pole * p.g * p.length * (std::cos(s.theta) - 1.0);
}

double cartpole_fallback(const env::CartPoleState& s, const CartPoleFallbackParams& params,
                         const env::CartPoleParams& p) {
    const double sin_t = std::sin(s.theta);
    const double cos_t = std::cos(s.theta);
    double force = 0.0;
    if (std::abs(cos_t - 1.0) <= params.switch_threshold) {
        force = params.kx * s.x + params.kv * s.x_dot + params.ktheta * env::wrap_angle(s.theta) +
                params.komega * s.theta_dot;
    } else {
        // Energy rate is -m_p l theta_dot x_ddot cos(theta); pick the cart
        // acceleration that drives E toward E*, then invert the cart equation.
        const double energy_error = cartpole_pole_energy(s, p) - params.target_energy;
        const double accel = params.energy_gain * energy_error * s.theta_dot * cos_t / (p.m_pole * p.length) -
                             params.swing_kx * s.x - params.swing_kv * s.x_dot;
        force = (p.m_cart + p.m_pole * sin_t * sin_t) * accel -
                p.m_pole * p.length * s.theta_dot * s.theta_dot * sin_t + p.m_pole * p.g * sin_t * cos_t;
    }
    return std::clamp(force, -p.max_force, p.max_force);
}

PendulumFallback::PendulumFallback(env::PendulumParams env_params, PendulumFallbackParams params)
    : env_params_(env_params), params_(params) {
    params_.validate();
}

Vec PendulumFallback::act(std::span<const double> state) const {
    return {pendulum_fallback(env::PendulumEnv::unpack(state), params_, env_params_)};
}

CartPoleFallback::CartPoleFallback(env::CartPoleParams env_params, CartPoleFallbackParams params)
    : env_params_(env_params), params_(params) {
    params_.validate();
}

Vec CartPoleFallback::act(std::span<const double> state) const {
    return {cartpole_fallback(env::CartPoleSwingupEnv::unpack(state), params_, env_params_)};
}

// ---------------------------------------------------------------------------

namespace {

void set_known(const nlohmann::json& j, std::initializer_list<std::pair<const char*, double*>> fields) {
    if (!j.is_object()) throw std::invalid_argument("fallback gains must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.first; });
        if (it == fields.end()) throw std::invalid_argument("unknown fallback gain '" + key + "'");
        *it->second = value.get<double>();
    }
}

}  // namespace

PendulumFallbackParams pendulum_fallback_params_from_json(const nlohmann::json& j) {
    PendulumFallbackParams p;
    set_known(j, {{"energy_gain", &p.energy_gain},
                  {"kp", &p.kp},
                  {"kd", &p.kd},
                  {"switch_threshold", &p.switch_threshold},
                  {"target_energy", &p.target_energy}});
    p.validate();
    return p;
}

CartPoleFallbackParams cartpole_fallback_params_from_json(const nlohmann::json& j) {
    CartPoleFallbackParams p;
    set_known(j, {{"energy_gain", &p.energy_gain},
                  {"swing_kx", &p.swing_kx},
                  {"swing_kv", &p.swing_kv},
                  {"kx", &p.kx},
                  {"kv", &p.kv},
                  {"ktheta", &p.ktheta},
                  {"komega", &p.komega},
                  {"switch_threshold", &p.switch_threshold},
                  {"target_energy", &p.target_energy}});
    p.validate();
    return p;
}

std::unique_ptr<Policy> make_fallback(const env::Environment& env, const nlohmann::json& gains) {
    if (const auto* pend = dynamic_cast<const env::PendulumEnv*>(&env)) {
        return std::make_unique<PendulumFallback>(pend->params(), pendulum_fallback_params_from_json(gains));
    }
    if (const auto* cart = dynamic_cast<const env::CartPoleSwingupEnv*>(&env)) {
        return std::make_unique<CartPoleFallback>(cart->params(), cartpole_fallback_params_from_json(gains));
    }
    throw env::UnknownEnvironment("no fallback controller for environment " + std::string(env.id()));
}

}  // namespace calfw::policy

#include "calfw/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace calfw::env {

namespace {

constexpr double kPi = std::numbers::pi;

void require_finite(std::span<const double> values, std::string_view what, std::string_view env_id) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream msg;
            msg << env_id << ": non-finite " << what << " component " << i << " (" << values[i] << ")";
            throw InvalidState(msg.str());
        }
    }
}

void require_dim(std::span<const double> values, std::size_t expected, std::string_view what, std::string_view env_id) {
    if (values.size() != expected) {
        std::ostringstream msg;
        msg << env_id << ": " << what << " has dimension " << values.size() << ", expected " << expected;
        throw InvalidState(msg.str());
    }
}

double arccos_of_cos(double angle) { return std::acos(std::clamp(std::cos(angle), -1.0, 1.0)); }

}  // namespace

double wrap_angle(double angle) {
    double wrapped = std::fmod(angle + kPi, 2.0 * kPi);
    if (wrapped < 0.0) wrapped += 2.0 * kPi;
    return wrapped - kPi;
}

// ---------------------------------------------------------------------------

PendulumState pendulum_step(const PendulumState& s, double torque, const PendulumParams& p) {
    if (!std::isfinite(s.theta) || !std::isfinite(s.omega) || !std::isfinite(torque)) {
        std::ostringstream msg;
        msg << "pendulum: non-finite input (theta=" << s.theta << ", omega=" << s.omega << ", torque=" << torque << ")";
        throw InvalidState(msg.str());
    }
    const double u = std::clamp(torque, -p.max_torque, p.max_torque);
    const double omega_dot = -(3.0 * p.g / (2.0 * p.l)) * std::sin(s.theta) + (3.0 / (p.m * p.l * p.l)) * u;
    PendulumState next;
    next.omega = s.omega + p.dt * omega_dot;
    next.theta = s.theta + p.dt * next.omega;
    return next;
}

double pendulum_reward(const PendulumState& s, double torque) {
    const double angle = arccos_of_cos(s.theta);
    return -(angle * angle + 0.1 * s.omega * s.omega + 0.001 * torque * torque);
}

std::array<double, 3> pendulum_observe(const PendulumState& s) {
    return {std::cos(s.theta), std::sin(s.theta), s.omega};
}

// ---------------------------------------------------------------------------

CartPoleAccel cartpole_accelerations(const CartPoleState& s, double force, const CartPoleParams& p) {
    const double sin_t = std::sin(s.theta);
    const double cos_t = std::cos(s.theta);
    const double x_ddot =
        (force + p.m_pole * p.length * s.theta_dot * s.theta_dot * sin_t - p.m_pole * p.g * sin_t * cos_t) /
        (p.m_cart + p.m_pole * sin_t * sin_t);
    const double theta_ddot = (p.g * sin_t - x_ddot * cos_t) / p.length;
    return {x_ddot, theta_ddot};
}

CartPoleState cartpole_step(const CartPoleState& s, double force, const CartPoleParams& p) {
    if (!std::isfinite(s.x) || !std::isfinite(s.x_dot) || !std::isfinite(s.theta) || !std::isfinite(s.theta_dot) ||
        !std::isfinite(force)) {
        std::ostringstream msg;
        msg << "cartpole_swingup: non-finite input (x=" << s.x << ", x_dot=" << s.x_dot << ", theta=" << s.theta
            << ", theta_dot=" << s.theta_dot << ", force=" << force << ")";
        throw InvalidState(msg.str());
    }
    const double f = std::clamp(force, -p.max_force, p.max_force);
    const auto acc = cartpole_accelerations(s, f, p);
    CartPoleState next;
    next.x_dot = s.x_dot + p.dt * acc.x_ddot;
    next.theta_dot = s.theta_dot + p.dt * acc.theta_ddot;
    next.x = s.x + p.dt * next.x_dot;
    next.theta = s.theta + p.dt * next.theta_dot;
    return next;
}

double cartpole_reward(const CartPoleState& s, double /*force*/) {
    const double angle = arccos_of_cos(s.theta);
    return -(0.5 * angle * angle + 0.5 * s.x * s.x + s.theta_dot * s.theta_dot / 20.0 + s.x_dot * s.x_dot / 20.0);
}

std::array<double, 5> cartpole_observe(const CartPoleState& s) {
    return {s.x, s.x_dot, std::cos(s.theta), std::sin(s.theta), s.theta_dot};
}

bool cartpole_terminated(const CartPoleState& s, const CartPoleParams& p) {
    return std::abs(s.x) > p.x_limit || std::abs(s.x_dot) > p.x_dot_limit || std::abs(s.theta_dot) > p.theta_dot_limit;
}

// ---------------------------------------------------------------------------

double GoalSetSpec::distance(std::span<const double> state) const {
    double worst = 0.0;
    for (const auto& f : features) {
        const double excess = std::abs(f.extract(state) - f.center) - f.halfwidth;
        worst = std::max(worst, excess);
    }
    return worst;
}

bool GoalSetSpec::contains(std::span<const double> state) const {
    return std::all_of(features.begin(), features.end(), [&](const GoalFeature& f) {
        return std::abs(f.extract(state) - f.center) <= f.halfwidth;
    });
}

GoalSetSpec pendulum_goal_set() {
    GoalSetSpec g;
    g.features.push_back({"cos_theta", [](std::span<const double> s) { return std::cos(s[0]); }, 1.0, 1.0 / 20.0});
    g.features.push_back({"sin_theta", [](std::span<const double> s) { return std::sin(s[0]); }, 0.0, 1.0 / 20.0});
    g.features.push_back({"omega", [](std::span<const double> s) { return s[1]; }, 0.0, 3.0 / 10.0});
    return g;
}

GoalSetSpec cartpole_goal_set() {
    GoalSetSpec g;
    g.features.push_back({"cos_theta", [](std::span<const double> s) { return std::cos(s[2]); }, 1.0, 1.0 / 20.0});
    g.features.push_back({"sin_theta", [](std::span<const double> s) { return std::sin(s[2]); }, 0.0, 1.0 / 20.0});
    g.features.push_back({"theta_dot", [](std::span<const double> s) { return s[3]; }, 0.0, 1.0 / 20.0});
    g.features.push_back({"x_dot", [](std::span<const double> s) { return s[1]; }, 0.0, 3.0 / 10.0});
    g.features.push_back({"x", [](std::span<const double> s) { return s[0]; }, 0.0, 3.0 / 10.0});
    return g;
}

// ---------------------------------------------------------------------------

double Environment::transition_bound(std::span<const double> state, std::span<const double> action) const {
    return state_norm(step(state, action));
}

Vec Environment::clamp_action(std::span<const double> action) const {
    const Vec lo = action_low();
    const Vec hi = action_high();
    Vec out(action.begin(), action.end());
    for (std::size_t i = 0; i < out.size() && i < lo.size(); ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
    return out;
}

// ---------------------------------------------------------------------------

PendulumEnv::PendulumEnv(PendulumParams params, int horizon)
    : params_(params), horizon_(horizon), goal_(pendulum_goal_set()) {}

PendulumState PendulumEnv::unpack(std::span<const double> state) {
    require_dim(state, 2, "state", "pendulum");
    return {state[0], state[1]};
}

Vec PendulumEnv::step(std::span<const double> state, std::span<const double> action) const {
    require_dim(action, 1, "action", id());
    return pack(pendulum_step(unpack(state), action[0], params_));
}

double PendulumEnv::reward(std::span<const double> state, std::span<const double> action) const {
    require_dim(action, 1, "action", id());
    return pendulum_reward(unpack(state), std::clamp(action[0], -params_.max_torque, params_.max_torque));
}

Vec PendulumEnv::observe(std::span<const double> state) const {
    const auto o = pendulum_observe(unpack(state));
    return {o.begin(), o.end()};
}

Vec PendulumEnv::sample_initial(Rng& rng) const {
    const double theta = rng.uniform(-kPi, kPi);
    const double omega = rng.uniform(-1.0, 1.0);
    return {theta, omega};
}

double PendulumEnv::state_norm(std::span<const double> state) const {
    require_finite(state, "state", id());
    return std::hypot(wrap_angle(state[0]), state[1]);
}

std::vector<StateAxis> PendulumEnv::state_box() const { return {{-kPi, kPi, true}, {-8.0, 8.0, false}}; }

// ---------------------------------------------------------------------------

CartPoleSwingupEnv::CartPoleSwingupEnv(CartPoleParams params, int train_horizon, int eval_horizon)
    : params_(params), train_horizon_(train_horizon), eval_horizon_(eval_horizon), goal_(cartpole_goal_set()) {}

CartPoleState CartPoleSwingupEnv::unpack(std::span<const double> state) {
    require_dim(state, 4, "state", "cartpole_swingup");
    return {state[0], state[1], state[2], state[3]};
}

Vec CartPoleSwingupEnv::step(std::span<const double> state, std::span<const double> action) const {
    require_dim(action, 1, "action", id());
    return pack(cartpole_step(unpack(state), action[0], params_));
}

double CartPoleSwingupEnv::reward(std::span<const double> state, std::span<const double> action) const {
    require_dim(action, 1, "action", id());
    return cartpole_reward(unpack(state), action[0]);
}

Vec CartPoleSwingupEnv::observe(std::span<const double> state) const {
    const auto o = cartpole_observe(unpack(state));
    return {o.begin(), o.end()};
}

bool CartPoleSwingupEnv::terminated(std::span<const double> state) const {
    return cartpole_terminated(unpack(state), params_);
}

Vec CartPoleSwingupEnv::sample_initial(Rng& rng) const {
    CartPoleState s;
    s.theta = rng.uniform(0.0, 2.0 * kPi);
    s.x = rng.uniform(-1.0, 1.0);
    s.theta_dot = rng.uniform(-1.0, 1.0);
    s.x_dot = rng.uniform(-1.0, 1.0);
    return pack(s);
}

double CartPoleSwingupEnv::state_norm(std::span<const double> state) const {
    require_finite(state, "state", id());
    const auto s = unpack(state);
    const double th = wrap_angle(s.theta);
    return std::sqrt(s.x * s.x + s.x_dot * s.x_dot + th * th + s.theta_dot * s.theta_dot);
}

std::vector<StateAxis> CartPoleSwingupEnv::state_box() const {
    return {{-params_.x_limit, params_.x_limit, false},
            {-params_.x_dot_limit, params_.x_dot_limit, false},
            {-kPi, kPi, true},
            {-params_.theta_dot_limit, params_.theta_dot_limit, false}};
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void maybe_set(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known, std::string_view env_id) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument(std::string(env_id) + ": unknown constant override '" + key + "'");
        }
    }
}

}  // namespace

std::unique_ptr<Environment> make_environment(std::string_view id, const nlohmann::json& overrides) {
    if (!overrides.is_object()) throw std::invalid_argument("environment overrides must be a JSON object");
    if (id == "pendulum") {
        reject_unknown_keys(overrides, {"g", "m", "l", "dt", "max_torque", "horizon"}, id);
        PendulumParams p;
        maybe_set(overrides, "g", p.g);
        maybe_set(overrides, "m", p.m);
        maybe_set(overrides, "l", p.l);
        maybe_set(overrides, "dt", p.dt);
        maybe_set(overrides, "max_torque", p.max_torque);
        int horizon = 200;
        maybe_set(overrides, "horizon", horizon);
        return std::make_unique<PendulumEnv>(p, horizon);
    }
    if (id == "cartpole_swingup") {
        reject_unknown_keys(overrides,
                            {"m_cart", "m_pole", "length", "g", "dt", "max_force", "x_limit", "x_dot_limit",
                             "theta_dot_limit", "train_horizon", "eval_horizon"},
                            id);
        CartPoleParams p;
        maybe_set(overrides, "m_cart", p.m_cart);
        maybe_set(overrides, "m_pole", p.m_pole);
        maybe_set(overrides, "length", p.length);
        maybe_set(overrides, "g", p.g);
        maybe_set(overrides, "dt", p.dt);
        maybe_set(overrides, "max_force", p.max_force);
        maybe_set(overrides, "x_limit", p.x_limit);
        maybe_set(overrides, "x_dot_limit", p.x_dot_limit);
        maybe_set(overrides, "theta_dot_limit", p.theta_dot_limit);
        int train = 200;
        int eval = 1000;
        maybe_set(overrides, "train_horizon", train);
        maybe_set(overrides, "eval_horizon", eval);
        return std::make_unique<CartPoleSwingupEnv>(p, train, eval);
    }
    throw UnknownEnvironment("unknown environment id '" + std::string(id) + "' (expected pendulum or cartpole_swingup)");
}

}  // namespace calfw::env

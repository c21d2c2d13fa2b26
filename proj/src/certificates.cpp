#include "calfw/certificates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace calfw::cert {

namespace {

constexpr double kProductCutoff = 1e-16;
constexpr double kSampleResidual = 1e-12;

}  // namespace

double Certificate::beta(double d, double t) const { return c * d * std::exp(-a * t); }

double Certificate::xi(double r) const { return std::pow(r, a); }

double Certificate::xi_inv(double y) const { return std::pow(y, 1.0 / a); }

void Certificate::validate() const {
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("certificate c must be positive and finite");
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("certificate a must be positive and finite");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("certificate epsilon must lie in [0, 1)");
}

// ---------------------------------------------------------------------------

double GridAxis::at(std::size_t i) const {
    if (points <= 1) return 0.5 * (lo + hi);
    if (i + 1 == points) return hi;
    return lo + spacing() * static_cast<double>(i);
}

StateGrid::StateGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)), size_(1) {
    if (axes_.empty()) throw std::invalid_argument("grid needs at least one axis");
    for (const auto& a : axes_) {
        if (a.points == 0) throw std::invalid_argument("grid axis with zero points");
        size_ *= a.points;
    }
}

StateGrid StateGrid::over_box(const std::vector<env::StateAxis>& box, std::size_t points) {
    return over_box(box, std::vector<std::size_t>(box.size(), points));
}

StateGrid StateGrid::over_box(const std::vector<env::StateAxis>& box, const std::vector<std::size_t>& points) {
    if (box.size() != points.size()) throw std::invalid_argument("grid resolution does not match box dimension");
    std::vector<GridAxis> axes;
    for (std::size_t i = 0; i < box.size(); ++i) axes.push_back({box[i].lo, box[i].hi, points[i], box[i].periodic});
    return StateGrid(std::move(axes));
}

Vec StateGrid::point(std::size_t flat_index) const {
    Vec p(axes_.size());
    for (std::size_t d = axes_.size(); d-- > 0;) {
        const auto& a = axes_[d];
        p[d] = a.at(flat_index % a.points);
        flat_index /= a.points;
    }
    return p;
}

bool StateGrid::on_boundary(std::size_t flat_index) const {
    for (std::size_t d = axes_.size(); d-- > 0;) {
        const auto& a = axes_[d];
        const std::size_t i = flat_index % a.points;
        flat_index /= a.points;
        if (!a.periodic && a.points > 1 && (i == 0 || i + 1 == a.points)) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

double compute_v_min(const ScalarField& critic, const ScalarField& goal_distance, double d_circ, const StateGrid& grid) {
    double v_min = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec s = grid.point(i);
        if (goal_distance(s) <= d_circ) {
            v_min = std::min(v_min, critic(s));
            any = true;
        }
    }
    if (!any) throw EmptyFeasibleSet("no grid point satisfies goal_distance <= " + std::to_string(d_circ));
    return v_min;
}

Superlevel compute_superlevel_and_vmax(const ScalarField& critic, double v_min, const StateGrid& grid) {
    Superlevel out;
    out.v_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Vec s = grid.point(i);
        const double v = critic(s);
        if (v >= v_min) {
            out.v_max = std::max(out.v_max, v);
            if (grid.on_boundary(i)) out.touches_boundary = true;
            out.points.push_back(std::move(s));
        }
    }
    return out;
}

long compute_tau(double v_min, double v_max, double nu) {
    if (!(nu > 0.0)) throw std::invalid_argument("nu must be > 0");
    const double steps = std::floor((v_max - v_min) / nu);
    return std::max(1L, static_cast<long>(steps));
}

TransitionExtent compute_d_pbar_and_dmax(const TransitionBound& bound, const std::vector<Vec>& superlevel,
                                         const std::vector<Vec>& actions, double d_circ) {
    TransitionExtent out;
    for (const Vec& s : superlevel) {
        for (const Vec& a : actions) out.d_pbar = std::max(out.d_pbar, bound(s, a));
    }
    out.d_max = std::max(d_circ, out.d_pbar);
    return out;
}

long compute_tau_fallback(const Certificate& cert, double d_max, double d_star) {
    cert.validate();
    const double ratio = d_star / cert.kappa(d_max);
    if (!(ratio < 1.0)) return 1;
    const double steps = std::ceil(-std::log(cert.xi_inv(ratio)));
    return std::max(1L, static_cast<long>(steps));
}

double compute_delta(const Certificate& cert, double d_max) { return cert.beta(d_max, 0.0); }

// ---------------------------------------------------------------------------

long truncation_index(double lambda, double p, double residual) {
    if (p <= 0.0) return 0;
    const double k = std::log(residual * (1.0 - lambda) / p) / std::log(lambda);
    return std::max(0L, static_cast<long>(std::ceil(k)));
}

namespace {

void check_schedule(double lambda, double p) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p_relax must lie in [0, 1]");
}

// sum_{k >= t} log(1 - lambda^k p) until lambda^k p drops below the cutoff.
long double log_tail_product(double lambda, double p, long t) {
    long double sum = 0.0L;
    double term = std::pow(lambda, static_cast<double>(t)) * p;
    while (term >= kProductCutoff) {
        sum += std::log1p(-static_cast<long double>(term));
        term *= lambda;
    }
    return sum;
}

}  // namespace

double reaching_time_cdf(double lambda, double p, long t) {
    check_schedule(lambda, p);
    if (t < 0) throw std::invalid_argument("t must be >= 0");
    if (p == 0.0) return 1.0;
    return static_cast<double>(std::exp(log_tail_product(lambda, p, t)));
}

double reaching_time_log_cdf(double lambda, double p, long t) {
    check_schedule(lambda, p);
    if (t < 0) throw std::invalid_argument("t must be >= 0");
    if (p == 0.0) return 0.0;
    return static_cast<double>(log_tail_product(lambda, p, t));
}

std::vector<double> reaching_time_cdf_table(double lambda, double p, long t_max) {
    check_schedule(lambda, p);
    if (t_max < 0) throw std::invalid_argument("t_max must be >= 0");
    std::vector<double> out(static_cast<std::size_t>(t_max) + 1, 1.0);
    if (p == 0.0) return out;
    long double log_cdf = log_tail_product(lambda, p, t_max);
    out[static_cast<std::size_t>(t_max)] = static_cast<double>(std::exp(log_cdf));
    for (long t = t_max - 1; t >= 0; --t) {
        const long double term = static_cast<long double>(std::pow(lambda, static_cast<double>(t)) * p);
        log_cdf += std::log1p(-term);
        out[static_cast<std::size_t>(t)] = static_cast<double>(std::exp(log_cdf));
    }
    return out;
}

double reaching_time_cdf_truncation_error(double lambda, double p) {
    check_schedule(lambda, p);
    // Omitted factors all have lambda^k p < cutoff; -log(1 - x) <= x / (1 - x).
    return kProductCutoff / ((1.0 - lambda) * (1.0 - kProductCutoff));
}

double reaching_time_log_lower_bound(double lambda, double p, long t) {
    check_schedule(lambda, p);
    if (t < 1) throw std::invalid_argument("lower bound needs t >= 1");
    const double x = std::pow(lambda, static_cast<double>(t)) * p;
    if (x >= 1.0) throw std::domain_error("lambda^t p >= 1: bound undefined");
    return -x / ((1.0 - lambda) * (1.0 - x));
}

double reaching_time_lower_bound(double lambda, double p, long t) {
    return std::exp(reaching_time_log_lower_bound(lambda, p, t));
}

RhoBarDraw sample_rho_bar(double lambda, double p, Rng& rng) {
    check_schedule(lambda, p);
    RhoBarDraw out;
    if (p == 0.0) return out;
    const long horizon = truncation_index(lambda, p, kSampleResidual);
    double threshold = p;
    for (long k = 0; k < horizon; ++k) {
        if (rng.uniform() < threshold) {
            out.last_time = k + 1;
            ++out.violations;
        }
        threshold *= lambda;
    }
    return out;
}

long sample_T_rho_bar(double lambda, double p, Rng& rng) { return sample_rho_bar(lambda, p, rng).last_time; }

long realized_T_rho_bar(std::span<const double> draws, double lambda, double p, Rng& continuation) {
    check_schedule(lambda, p);
    if (p == 0.0) return 0;
    const long horizon = std::max<long>(truncation_index(lambda, p, kSampleResidual), static_cast<long>(draws.size()));
    long last = 0;
    double threshold = p;
    for (long k = 0; k < horizon; ++k) {
        const double u = k < static_cast<long>(draws.size()) ? draws[static_cast<std::size_t>(k)] : continuation.uniform();
        if (u < threshold) last = k + 1;
        threshold *= lambda;
    }
    return last;
}

std::vector<Vec> uniform_action_grid(const env::Environment& env, std::size_t points) {
    const Vec lo = env.action_low();
    const Vec hi = env.action_high();
    std::vector<env::StateAxis> box;
    for (std::size_t i = 0; i < lo.size(); ++i) box.push_back({lo[i], hi[i], false});
    const StateGrid grid = StateGrid::over_box(box, points);
    std::vector<Vec> out;
    out.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out.push_back(grid.point(i));
    return out;
}

// ---------------------------------------------------------------------------

CertificateFit fit_certificate(const env::Environment& env, const policy::Policy& fallback, double region,
                               double d_max, double d_star, const FitOptions& opts) {
    if (opts.trajectories == 0 || opts.horizon <= 0) throw std::invalid_argument("fit needs trajectories and a horizon");
    if (!(d_star > 0.0)) throw std::invalid_argument("d_star must be > 0");

    // (t, log(d_t / d_0)) for every positive-distance step of every usable trajectory
    struct Point {
        double t;
        double log_ratio;
    };
    std::vector<Point> points;
    CertificateFit fit;
    fit.region = region;

    Rng rng(opts.seed);
    const auto box = env.state_box();
    std::size_t attempts = 0;
    while (fit.trajectories < opts.trajectories) {
        if (++attempts > 1000 * opts.trajectories) {
            throw EmptyFeasibleSet("could not sample initial states with goal_distance <= region");
        }
        Vec s(box.size());
        for (std::size_t i = 0; i < box.size(); ++i) s[i] = rng.uniform(box[i].lo, box[i].hi);
        const double d0 = env.goal_distance(s);
        if (d0 > region) continue;
        ++fit.trajectories;

        std::vector<Point> local;
        bool violated = false;
        double d = d0;
        for (int t = 1; t <= opts.horizon; ++t) {
            s = env.step(s, fallback.act(s));
            if (env.terminated(s)) {
                violated = true;
                break;
            }
            d = env.goal_distance(s);
            if (d > 0.0) {
                if (d0 == 0.0) {
                    violated = true;
                    break;
                }
                local.push_back({static_cast<double>(t), std::log(d / d0)});
            }
        }
        if (violated || d > 0.0) {
            ++fit.violations;
            continue;
        }
        points.insert(points.end(), local.begin(), local.end());
    }

    const double log_target = std::log(d_max / d_star);
    bool have = false;
    for (std::size_t k = 0; k < opts.a_candidates; ++k) {
        const double frac = opts.a_candidates > 1 ? static_cast<double>(k) / static_cast<double>(opts.a_candidates - 1) : 0.0;
        const double a = opts.a_min * std::pow(opts.a_max / opts.a_min, frac);
        double log_c = 0.0;  // t = 0 forces c >= 1
        for (const Point& p : points) log_c = std::max(log_c, p.log_ratio + a * p.t);
        if (!std::isfinite(log_c) || log_c > 700.0) continue;
        Certificate candidate{std::exp(log_c), a, 0.0};
        const long tau_f = std::max(1L, static_cast<long>(std::ceil((log_c + log_target) / a)));
        if (!have || tau_f < fit.selected_tau_f || (tau_f == fit.selected_tau_f && candidate.c < fit.cert.c)) {
            fit.cert = candidate;
            fit.selected_tau_f = tau_f;
            have = true;
        }
    }
    if (!have) throw std::runtime_error("no decay rate candidate produced a finite certificate");
    fit.cert.epsilon = static_cast<double>(fit.violations) / static_cast<double>(fit.trajectories);
    if (fit.cert.epsilon >= 1.0) throw std::runtime_error("every fallback trajectory violated the certificate");
    return fit;
}

// ---------------------------------------------------------------------------

CertificateQuantities compute_critic_quantities(const env::Environment& env, const policy::Critic& critic,
                                                double d_circ, double d_star, double nu,
                                                const QuantityOptions& opts) {
    if (!(d_star > 0.0 && d_star < d_circ)) throw std::invalid_argument("need 0 < d_star < d_circ");
    CertificateQuantities q;
    q.d_circ = d_circ;
    q.d_star = d_star;
    q.nu = nu;

    const auto box = env.state_box();
    const std::size_t per_axis = opts.state_points ? opts.state_points : (box.size() <= 2 ? 201 : 21);
    const StateGrid grid = StateGrid::over_box(box, per_axis);
    const ScalarField v = [&](std::span<const double> s) { return critic.value(s); };
    const ScalarField dist = [&](std::span<const double> s) { return env.goal_distance(s); };

    q.grid_points = grid.size();
    q.v_min = compute_v_min(v, dist, d_circ, grid);
    const Superlevel sup = compute_superlevel_and_vmax(v, q.v_min, grid);
    q.v_max = sup.v_max;
    q.superlevel_points = sup.points.size();
    q.superlevel_touches_boundary = sup.touches_boundary;
    q.tau = compute_tau(q.v_min, q.v_max, nu);

    const auto actions = uniform_action_grid(env, opts.action_points);
    q.action_points = actions.size();
    const TransitionBound bound = [&](std::span<const double> s, std::span<const double> a) {
        return env.transition_bound(s, a);
    };
    const TransitionExtent ext = compute_d_pbar_and_dmax(bound, sup.points, actions, d_circ);
    q.d_pbar = ext.d_pbar;
    q.d_max = ext.d_max;
    return q;
}

void complete_quantities(CertificateQuantities& q, const Certificate& cert) {
    q.tau_f = compute_tau_fallback(cert, q.d_max, q.d_star);
    q.tau_f_degenerate = !(q.d_star < cert.kappa(q.d_max));
    q.delta = compute_delta(cert, q.d_max);
}

nlohmann::json to_json(const Certificate& cert) {
    return {{"form", "beta(d,t) = c*d*exp(-a*t)"}, {"c", cert.c}, {"a", cert.a}, {"epsilon", cert.epsilon}};
}

nlohmann::json to_json(const CertificateQuantities& q) {
    return {{"d_circ", q.d_circ},
            {"d_star", q.d_star},
            {"nu", q.nu},
            {"v_min", q.v_min},
            {"v_max", q.v_max},
            {"tau", q.tau},
            {"d_pbar", q.d_pbar},
            {"d_max", q.d_max},
            {"delta", q.delta},
            {"tau_f", q.tau_f},
            {"tau_f_degenerate", q.tau_f_degenerate},
            {"superlevel_touches_grid_boundary", q.superlevel_touches_boundary},
            {"superlevel_points", q.superlevel_points},
            {"grid_points", q.grid_points},
            {"action_points", q.action_points}};
}

}  // namespace calfw::cert

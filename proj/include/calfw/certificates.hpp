#pragma once

// Explicit goal-reaching certificate quantities for the wrapped policy and
// the law of the last random-acceptance time.
//
// Suprema and minima over the state space are taken over uniform grids, so
// every quantity here is a grid approximation; the grid spacing times the
// critic's Lipschitz constant bounds the error.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "calfw/env.hpp"
#include "calfw/policy.hpp"
#include "calfw/rng.hpp"

namespace calfw::cert {

using Vec = std::vector<double>;
using ScalarField = std::function<double(std::span<const double>)>;
using TransitionBound = std::function<double(std::span<const double> state, std::span<const double> action)>;

class EmptyFeasibleSet : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exponential KL certificate beta(d, t) = c d exp(-a t), decomposed as
/// kappa(d) xi(exp(-t)) with kappa(d) = c d and xi(r) = r^a.
struct Certificate {
    double c = 1.0;
    double a = 1.0;
    double epsilon = 0.0;

    double beta(double d, double t) const;
    double kappa(double d) const { return c * d; }
    double xi(double r) const;
    double xi_inv(double y) const;
    void validate() const;
};

struct GridAxis {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t points = 1;
    bool periodic = false;

    double at(std::size_t i) const;
    double spacing() const { return points > 1 ? (hi - lo) / static_cast<double>(points - 1) : 0.0; }
};

/// Tensor-product grid. Points are enumerated in row-major index order.
class StateGrid {
public:
    explicit StateGrid(std::vector<GridAxis> axes);

    /// Uniform grid over the environment's state box with `points` per axis.
    static StateGrid over_box(const std::vector<env::StateAxis>& box, std::size_t points);
    static StateGrid over_box(const std::vector<env::StateAxis>& box, const std::vector<std::size_t>& points);

    std::size_t size() const { return size_; }
    std::size_t dim() const { return axes_.size(); }
    const std::vector<GridAxis>& axes() const { return axes_; }
    Vec point(std::size_t flat_index) const;
    /// True when the point lies on a face of a non-periodic axis.
    bool on_boundary(std::size_t flat_index) const;

private:
    std::vector<GridAxis> axes_;
    std::size_t size_;
};

/// min V(s) over grid points with goal_distance(s) <= d_circ.
double compute_v_min(const ScalarField& critic, const ScalarField& goal_distance, double d_circ, const StateGrid& grid);

struct Superlevel {
    std::vector<Vec> points;
    double v_max = 0.0;
    /// Some superlevel point sits on a non-periodic face: the grid may not
    /// contain the whole set.
    bool touches_boundary = false;
};

/// {V >= v_min} on the grid and the maximum of V over it.
Superlevel compute_superlevel_and_vmax(const ScalarField& critic, double v_min, const StateGrid& grid);

/// max(1, floor((v_max - v_min) / nu)).
long compute_tau(double v_min, double v_max, double nu);

struct TransitionExtent {
    double d_pbar = 0.0;
    double d_max = 0.0;
};

/// d_pbar = sup of the transition bound over superlevel x actions;
/// d_max = max(d_circ, d_pbar).
TransitionExtent compute_d_pbar_and_dmax(const TransitionBound& bound, const std::vector<Vec>& superlevel,
                                         const std::vector<Vec>& actions, double d_circ);

/// max(1, ceil(-log(xi^-1(d_star / kappa(d_max))))). Returns 1 when
/// d_star >= kappa(d_max).
long compute_tau_fallback(const Certificate& cert, double d_max, double d_star);

/// beta(d_max, 0) = c d_max.
double compute_delta(const Certificate& cert, double d_max);

/// Index K with sum_{k >= K} lambda^k p < residual.
long truncation_index(double lambda, double p, double residual);

/// prod_{k >= t} (1 - lambda^k p), truncated once lambda^k p < 1e-16.
double reaching_time_cdf(double lambda, double p, long t);

/// Natural log of reaching_time_cdf; finite where the product underflows.
double reaching_time_log_cdf(double lambda, double p, long t);

/// reaching_time_cdf for t = 0 .. t_max in one backward pass.
std::vector<double> reaching_time_cdf_table(double lambda, double p, long t_max);

/// Upper bound on the relative error of the truncated product.
double reaching_time_cdf_truncation_error(double lambda, double p);

/// exp(-lambda^t p / ((1 - lambda)(1 - lambda^t p))) for t >= 1.
/// Throws std::domain_error when lambda^t p >= 1.
double reaching_time_lower_bound(double lambda, double p, long t);
/// Log of reaching_time_lower_bound, same preconditions.
double reaching_time_log_lower_bound(double lambda, double p, long t);

struct RhoBarDraw {
    long last_time = 0;  // T_rho_bar: first index after the last violation
    long violations = 0; // number of k with U_k < lambda^k p
};

/// Draws U_0, U_1, ... until the residual violation probability is below
/// 1e-12 and reports T_rho_bar and the violation count.
RhoBarDraw sample_rho_bar(double lambda, double p, Rng& rng);
long sample_T_rho_bar(double lambda, double p, Rng& rng);

/// T_rho_bar for a realised prefix of draws, extended with fresh draws from
/// `continuation` up to the truncation index.
long realized_T_rho_bar(std::span<const double> draws, double lambda, double p, Rng& continuation);

/// Uniform grid of `points` actions over the environment's action box.
std::vector<Vec> uniform_action_grid(const env::Environment& env, std::size_t points);

// ---------------------------------------------------------------------------
// Certificate fitting from fallback trajectories.

struct FitOptions {
    std::size_t trajectories = 1000;
    int horizon = 2000;
    std::uint64_t seed = 7;
    /// Candidate decay rates, log-spaced in [a_min, a_max].
    double a_min = 1e-3;
    double a_max = 1.0;
    std::size_t a_candidates = 200;
};

struct CertificateFit {
    Certificate cert;
    std::size_t trajectories = 0;
    std::size_t violations = 0;    // trajectories no (c, a) can dominate
    double region = 0.0;           // initial states have goal_distance <= region
    long selected_tau_f = 0;       // tau_f at the (d_max, d_star) used for selection
};

/// Samples initial states uniformly in the state box with goal_distance <=
/// region, runs the fallback, and for each candidate a takes the smallest c
/// dominating every trajectory. The pair minimising tau_f(d_max, d_star) is
/// kept. Trajectories that start in the goal set and leave it, or do not
/// settle in it within the horizon, cannot be dominated and are counted in
/// epsilon.
CertificateFit fit_certificate(const env::Environment& env, const policy::Policy& fallback, double region,
                               double d_max, double d_star, const FitOptions& opts = {});

struct CertificateQuantities {
    double d_circ = 0.0;
    double d_star = 0.0;
    double nu = 0.0;
    double v_min = 0.0;
    double v_max = 0.0;
    long tau = 1;
    double d_pbar = 0.0;
    double d_max = 0.0;
    double delta = 0.0;
    long tau_f = 1;
    bool tau_f_degenerate = false;       // d_star >= kappa(d_max)
    bool superlevel_touches_boundary = false;
    std::size_t superlevel_points = 0;
    std::size_t grid_points = 0;
    std::size_t action_points = 0;
};

struct QuantityOptions {
    /// Points per state axis; 0 picks 201 for planar systems and 21 above.
    std::size_t state_points = 0;
    std::size_t action_points = 41;
};

/// v_min, superlevel, v_max, tau, d_pbar, d_max over grids for the given
/// environment and critic. tau_f and delta need a certificate: see
/// complete_quantities.
CertificateQuantities compute_critic_quantities(const env::Environment& env, const policy::Critic& critic,
                                                double d_circ, double d_star, double nu,
                                                const QuantityOptions& opts = {});

void complete_quantities(CertificateQuantities& q, const Certificate& cert);

nlohmann::json to_json(const Certificate& cert);
nlohmann::json to_json(const CertificateQuantities& q);

}  // namespace calfw::cert

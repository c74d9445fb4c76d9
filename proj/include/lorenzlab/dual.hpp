#ifndef LORENZLAB_DUAL_HPP
#define LORENZLAB_DUAL_HPP

#include <variant>

#include "lorenzlab/particle_filter.hpp"
#include "lorenzlab/ukf.hpp"

namespace lorenzlab {

/// Geometric shrinkage of the parameter-evolution noise variance,
/// applied once per time step.
inline double temper(double nu_variance, double gamma) { return nu_variance * gamma; }

/// Parallel filters: one over the hidden state, one (always UKF) over
/// the model parameters with a tempered random-walk transition.
template <int Dim>
struct DualFilterState {
    std::variant<UkfState<Dim>, ParticleEnsemble<Dim>> state_filter;
    UkfState<3> param_filter;
    double nu_variance = 0.01;
    double gamma = 0.995;

    typename StateSpace<Dim>::Vec state_estimate() const {
        if (const auto* u = std::get_if<UkfState<Dim>>(&state_filter)) return u->mean;
        return std::get<ParticleEnsemble<Dim>>(state_filter).weighted_mean();
    }
    Eigen::Vector3d param_estimate() const { return param_filter.mean; }
};

/// One dual-estimation step: the parameter filter assimilates the
/// observation through the measurement x_t = f(z_{t-1}|theta) + eta + eps
/// using the previous state estimate, then the state filter runs with the
/// refreshed parameter estimate, then the parameter noise is tempered.
template <int Dim>
DualFilterState<Dim> dual_step(const DualFilterState<Dim>& dual,
                               const typename StateSpace<Dim>::Vec& observation,
                               const StateSpace<Dim>& model, const UtParams& ut, Rng& rng,
                               ProposalKind proposal = ProposalKind::Ukf) {
    using Vec = typename StateSpace<Dim>::Vec;
    using Mat3 = Eigen::Matrix3d;

    DualFilterState<Dim> next = dual;
    const Vec z_prev = dual.state_estimate();

    // parameter filter: random-walk predict, then UKF update
    Mat3 pred_cov =
        floor_covariance(Mat3(dual.param_filter.cov + dual.nu_variance * Mat3::Identity()));
    auto mapped = unscented_transform(
        dual.param_filter.mean, pred_cov,
        [&](const Eigen::Vector3d& theta) -> Vec { return model.transition(z_prev, theta); }, ut);

    const double r = variance(model.obs_noise) + variance(model.stoch_noise);
    const double bias = mean(model.obs_noise) + mean(model.stoch_noise);
    auto innov_cov = (mapped.cov + r * mapped.cov.Identity()).eval();
    auto gain = (innov_cov.llt().solve(mapped.cross_cov.transpose())).transpose().eval();
    Vec innovation = observation - (mapped.mean + Vec::Constant(bias));
    next.param_filter.mean = dual.param_filter.mean + gain * innovation;
    next.param_filter.cov =
        floor_covariance(Mat3(pred_cov - gain * innov_cov * gain.transpose()));
    next.param_filter.t = dual.param_filter.t + 1;
    if (!next.param_filter.mean.allFinite()) throw BlowupError(next.param_filter.t);

    // state filter runs with the refreshed parameter estimate
    StateSpace<Dim> current = model;
    current.theta = next.param_filter.mean;
    if (auto* u = std::get_if<UkfState<Dim>>(&next.state_filter)) {
        *u = ukf_step(*u, observation, current, ut);
    } else {
        auto& ens = std::get<ParticleEnsemble<Dim>>(next.state_filter);
        ens = pf_step(ens, observation, current, proposal, rng, ut);
    }

    next.nu_variance = temper(dual.nu_variance, dual.gamma);
    return next;
}

/// Noiseless propagation of the fitted Lorenz map, parameters frozen.
inline Vec3 forecast_propagate(const Vec3& state, const LorenzParams& params, std::size_t horizon,
                               double dt) {
    Vec3 z = state;
    for (std::size_t i = 0; i < horizon; ++i) {
        z = rk4_step(z, params, dt);
        if (!z.allFinite()) throw BlowupError(i + 1);
    }
    return z;
}

}  // namespace lorenzlab

#endif

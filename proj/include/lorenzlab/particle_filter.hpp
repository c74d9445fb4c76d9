#ifndef LORENZLAB_PARTICLE_FILTER_HPP
#define LORENZLAB_PARTICLE_FILTER_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lorenzlab/ukf.hpp"

namespace lorenzlab {

enum class ProposalKind { Prior, Ukf };

template <int Dim>
struct GaussianBelief {
    using Vec = Eigen::Matrix<double, Dim, 1>;
    using Mat = Eigen::Matrix<double, Dim, Dim>;
    Vec mean;
    Mat cov;
};

template <int Dim>
typename GaussianBelief<Dim>::Vec sample_gaussian(const GaussianBelief<Dim>& g, Rng& rng) {
    typename GaussianBelief<Dim>::Vec z;
    for (int i = 0; i < Dim; ++i) z[i] = sample_standard_normal(rng);
    return g.mean + matrix_sqrt(floor_covariance(g.cov)) * z;
}

template <int Dim>
double gaussian_log_pdf(const GaussianBelief<Dim>& g,
                        const typename GaussianBelief<Dim>::Vec& v) {
    using Mat = typename GaussianBelief<Dim>::Mat;
    Mat cov = floor_covariance(g.cov);
    Eigen::LLT<Mat> llt(cov);
    auto diff = v - g.mean;
    auto sol = llt.solve(diff);
    double log_det = 0.0;
    for (int i = 0; i < Dim; ++i) log_det += std::log(llt.matrixL()(i, i));
    return -0.5 * diff.dot(sol) - log_det - 0.5 * Dim * std::log(2.0 * std::numbers::pi);
}

template <int Dim>
struct ParticleEnsemble {
    using Vec = Eigen::Matrix<double, Dim, 1>;
    using Mat = Eigen::Matrix<double, Dim, Dim>;
    std::vector<Vec> particles;
    std::vector<double> weights;      // normalized, sum 1
    std::vector<Mat> covariances;     // per-particle, for the UKF proposal
    std::size_t t = 0;

    Vec weighted_mean() const {
        Vec m = Vec::Zero();
        for (std::size_t i = 0; i < particles.size(); ++i) m += weights[i] * particles[i];
        return m;
    }
};

inline double effective_sample_size(const std::vector<double>& weights) {
    double sum_sq = 0.0;
    for (double w : weights) sum_sq += w * w;
    return 1.0 / sum_sq;
}

template <int Dim>
ParticleEnsemble<Dim> pf_init(const typename StateSpace<Dim>::Vec& prior_mean,
                              const typename StateSpace<Dim>::Mat& prior_cov, std::size_t n,
                              Rng& rng) {
    if (n < 1) throw std::invalid_argument("particle count must be >= 1");
    ParticleEnsemble<Dim> ens;
    ens.particles.reserve(n);
    GaussianBelief<Dim> prior{prior_mean, prior_cov};
    const bool degenerate = prior_cov.isZero(0.0);
    for (std::size_t i = 0; i < n; ++i)
        ens.particles.push_back(degenerate ? prior_mean : sample_gaussian(prior, rng));
    ens.weights.assign(n, 1.0 / static_cast<double>(n));
    ens.covariances.assign(n, prior_cov);
    return ens;
}

/// Systematic resampling: one uniform offset, N evenly spaced pointers
/// into the cumulative weights. Uniform weights afterward.
template <int Dim>
ParticleEnsemble<Dim> resample(const ParticleEnsemble<Dim>& ens, Rng& rng) {
    const std::size_t n = ens.particles.size();
    ParticleEnsemble<Dim> out;
    out.t = ens.t;
    out.particles.reserve(n);
    out.covariances.reserve(n);
    const double u0 = uniform01(rng) / static_cast<double>(n);
    double cum = ens.weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = u0 + static_cast<double>(i) / static_cast<double>(n);
        while (cum < u && j + 1 < n) cum += ens.weights[++j];
        out.particles.push_back(ens.particles[j]);
        out.covariances.push_back(ens.covariances[j]);
    }
    out.weights.assign(n, 1.0 / static_cast<double>(n));
    return out;
}

/// One UKF predict/update around a single particle, returned as a
/// Gaussian proposal whose log-density is evaluable in the weight
/// recursion.
template <int Dim>
GaussianBelief<Dim> ukf_proposal(const typename StateSpace<Dim>::Vec& particle,
                                 const typename StateSpace<Dim>::Mat& particle_cov,
                                 const typename StateSpace<Dim>::Vec& observation,
                                 const StateSpace<Dim>& model, const UtParams& ut = UtParams{}) {
    UkfState<Dim> local;
    local.mean = particle;
    local.cov = particle_cov;
    UkfState<Dim> updated = ukf_step(local, observation, model, ut);
    return GaussianBelief<Dim>{updated.mean, floor_covariance(updated.cov)};
}

namespace detail {
template <int Dim>
double coordwise_log_density(const NoiseSpec& spec,
                             const Eigen::Matrix<double, Dim, 1>& residual) {
    double sum = 0.0;
    for (int c = 0; c < Dim; ++c) sum += log_density(spec, residual[c]);
    return sum;
}
}  // namespace detail

/// Propagate, reweight by the recursion w_t = w_{t-1} P(x|z) P(z|z') / q(z),
/// renormalize, and resample when ESS < N/2. Weight arithmetic is in log
/// space. A point-mass transition noise forces the prior proposal (the
/// particle moves deterministically and the weight reduces to the
/// observation likelihood).
template <int Dim>
ParticleEnsemble<Dim> pf_step(const ParticleEnsemble<Dim>& ens,
                              const typename StateSpace<Dim>::Vec& observation,
                              const StateSpace<Dim>& model, ProposalKind proposal, Rng& rng,
                              const UtParams& ut = UtParams{}) {
    using Vec = typename StateSpace<Dim>::Vec;
    const std::size_t n = ens.particles.size();
    const bool deterministic = model.stoch_noise.is_point_mass();
    const bool use_ukf = proposal == ProposalKind::Ukf && !deterministic;

    ParticleEnsemble<Dim> next;
    next.t = ens.t + 1;
    next.particles.resize(n);
    next.covariances = ens.covariances;
    std::vector<double> log_w(n);

    for (std::size_t i = 0; i < n; ++i) {
        const Vec predicted = model.step(ens.particles[i]);
        Vec moved;
        double log_incr;
        if (use_ukf) {
            GaussianBelief<Dim> prop = ukf_proposal<Dim>(
                ens.particles[i], ens.covariances[i], observation, model, ut);
            moved = sample_gaussian(prop, rng);
            log_incr = detail::coordwise_log_density<Dim>(model.obs_noise, observation - moved) +
                       detail::coordwise_log_density<Dim>(model.stoch_noise, moved - predicted) -
                       gaussian_log_pdf(prop, moved);
            next.covariances[i] = prop.cov;
        } else {
            // prior proposal: transition density cancels against the draw
            moved = predicted;
            if (!deterministic)
                for (int c = 0; c < Dim; ++c) moved[c] += sample(model.stoch_noise, rng);
            log_incr = detail::coordwise_log_density<Dim>(model.obs_noise, observation - moved);
        }
        next.particles[i] = moved;
        log_w[i] = std::log(ens.weights[i]) + log_incr;
    }

    double max_lw = -std::numeric_limits<double>::infinity();
    for (double lw : log_w) max_lw = std::max(max_lw, lw);
    if (!std::isfinite(max_lw))
        throw std::runtime_error("particle filter: total likelihood underflow at step " +
                                 std::to_string(next.t));
    double norm = 0.0;
    next.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        next.weights[i] = std::exp(log_w[i] - max_lw);
        norm += next.weights[i];
    }
    for (double& w : next.weights) w /= norm;

    if (effective_sample_size(next.weights) < static_cast<double>(n) / 2.0)
        next = resample(next, rng);
    return next;
}

}  // namespace lorenzlab

#endif

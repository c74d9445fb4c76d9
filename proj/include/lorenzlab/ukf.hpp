#ifndef LORENZLAB_UKF_HPP
#define LORENZLAB_UKF_HPP

#include <cmath>
#include <functional>
#include <stdexcept>
#include <type_traits>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "lorenzlab/lorenz.hpp"
#include "lorenzlab/noise.hpp"

namespace lorenzlab {

/// Scaled unscented transform constants (Wan / van der Merwe defaults).
struct UtParams {
    double alpha = 1e-3;
    double beta = 2.0;
    double kappa = 0.0;
};

/// Additive state-space model with identity observation map:
///   z_t = transition(z_{t-1}, theta) + eta_t,  x_t = z_t + eps_t,
/// noise iid per coordinate.
template <int Dim>
struct StateSpace {
    using Vec = Eigen::Matrix<double, Dim, 1>;
    using Mat = Eigen::Matrix<double, Dim, Dim>;

    std::function<Vec(const Vec&, const Eigen::Vector3d&)> transition;
    Eigen::Vector3d theta = Eigen::Vector3d::Zero();
    NoiseSpec stoch_noise = NoiseSpec::none();
    NoiseSpec obs_noise = NoiseSpec::none();
    Vec prior_mean = Vec::Zero();
    Mat prior_cov = Mat::Identity();

    Vec step(const Vec& z) const { return transition(z, theta); }
};

/// Symmetrize and clip eigenvalues at the floor so matrix square roots
/// stay defined.
template <typename Mat>
Mat floor_covariance(const Mat& cov, double floor = 1e-10) {
    Mat sym = 0.5 * (cov + cov.transpose());
    Mat shifted = sym - floor * Mat::Identity(sym.rows(), sym.cols());
    Eigen::LLT<Mat> probe(shifted);
    if (probe.info() == Eigen::Success) return sym;  // already above the floor
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    auto vals = es.eigenvalues();
    if (vals.minCoeff() >= floor) return sym;
    return es.eigenvectors() * vals.cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
}

template <typename Mat>
Mat matrix_sqrt(const Mat& cov) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Mat floored = floor_covariance(cov);
    Eigen::LLT<Mat> retry(floored);
    if (retry.info() != Eigen::Success)
        throw std::runtime_error("covariance square root failed after flooring");
    return retry.matrixL();
}

template <typename OutVec, typename InVec>
struct UtResult {
    OutVec mean;
    Eigen::Matrix<double, OutVec::RowsAtCompileTime, OutVec::RowsAtCompileTime> cov;
    Eigen::Matrix<double, InVec::RowsAtCompileTime, OutVec::RowsAtCompileTime> cross_cov;
};

/// Propagates 2d+1 sigma points of N(mean, cov) through func, returning
/// the weighted output mean, covariance, and input-output cross-covariance.
template <typename InVec, typename InMat, typename F>
auto unscented_transform(const InVec& mean, const InMat& cov, F&& func,
                         const UtParams& ut = UtParams{}) {
    using OutVec = std::decay_t<std::invoke_result_t<F, InVec>>;
    constexpr int DIn = InVec::RowsAtCompileTime;
    const double d = static_cast<double>(DIn);
    const double lambda = ut.alpha * ut.alpha * (d + ut.kappa) - d;
    const double scale = std::sqrt(d + lambda);

    InMat root = matrix_sqrt(floor_covariance(cov));

    const int n_sigma = 2 * DIn + 1;
    std::array<InVec, 2 * DIn + 1> points;
    points[0] = mean;
    for (int i = 0; i < DIn; ++i) {
        points[1 + i] = mean + scale * root.col(i);
        points[1 + DIn + i] = mean - scale * root.col(i);
    }

    const double wm0 = lambda / (d + lambda);
    const double wc0 = wm0 + (1.0 - ut.alpha * ut.alpha + ut.beta);
    const double wi = 0.5 / (d + lambda);

    std::array<OutVec, 2 * DIn + 1> mapped;
    for (int i = 0; i < n_sigma; ++i) mapped[i] = func(points[i]);

    UtResult<OutVec, InVec> res;
    res.mean = wm0 * mapped[0];
    for (int i = 1; i < n_sigma; ++i) res.mean += wi * mapped[i];

    res.cov.setZero();
    res.cross_cov.setZero();
    for (int i = 0; i < n_sigma; ++i) {
        const double w = (i == 0) ? wc0 : wi;
        OutVec dy = mapped[i] - res.mean;
        InVec dx = points[i] - mean;
        res.cov += w * dy * dy.transpose();
        res.cross_cov += w * dx * dy.transpose();
    }
    return res;
}

template <int Dim>
struct UkfState {
    using Vec = Eigen::Matrix<double, Dim, 1>;
    using Mat = Eigen::Matrix<double, Dim, Dim>;
    Vec mean = Vec::Zero();
    Mat cov = Mat::Identity();
    std::size_t t = 0;
};

/// One UKF predict/update against an identity observation map. The
/// model's noise specs are moment-matched: their mean and variance enter
/// as Gaussian noise moments regardless of family.
template <int Dim>
UkfState<Dim> ukf_step(const UkfState<Dim>& state,
                       const typename StateSpace<Dim>::Vec& observation,
                       const StateSpace<Dim>& model, const UtParams& ut = UtParams{}) {
    using Vec = typename StateSpace<Dim>::Vec;
    using Mat = typename StateSpace<Dim>::Mat;

    auto pred = unscented_transform(state.mean, state.cov,
                                    [&](const Vec& z) { return model.step(z); }, ut);
    const double q = variance(model.stoch_noise);
    Vec pred_mean = pred.mean + Vec::Constant(mean(model.stoch_noise));
    Mat pred_cov = floor_covariance(Mat(pred.cov + q * Mat::Identity()));

    // identity h: cross-covariance with the observation is pred_cov itself
    const double r = variance(model.obs_noise);
    Mat innov_cov = pred_cov + r * Mat::Identity();
    Mat gain = innov_cov.llt().solve(pred_cov).transpose();

    Vec innovation = observation - (pred_mean + Vec::Constant(mean(model.obs_noise)));
    UkfState<Dim> next;
    next.mean = pred_mean + gain * innovation;
    next.cov = floor_covariance(Mat(pred_cov - gain * innov_cov * gain.transpose()));
    next.t = state.t + 1;
    if (!next.mean.allFinite()) throw BlowupError(next.t);
    return next;
}

}  // namespace lorenzlab

#endif

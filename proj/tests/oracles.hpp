// Independent reference implementations used only by tests: a textbook
// Kalman filter for linear-Gaussian systems, analytic CDFs, and
// Kolmogorov-Smirnov statistics. Nothing here may depend on the
// implementation paths it checks.
#ifndef LORENZLAB_TESTS_ORACLES_HPP
#define LORENZLAB_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

/// z_t = A z_{t-1} + w, w ~ N(0, Q);  x_t = z_t + v, v ~ N(0, R).
struct LinearGaussianModel {
    Eigen::MatrixXd A;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd R;
    Eigen::VectorXd m0;
    Eigen::MatrixXd P0;
};

struct KalmanState {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline KalmanState kalman_step(const KalmanState& s, const Eigen::VectorXd& obs,
                               const LinearGaussianModel& m) {
    Eigen::VectorXd mp = m.A * s.mean;
    Eigen::MatrixXd Pp = m.A * s.cov * m.A.transpose() + m.Q;
    Eigen::MatrixXd S = Pp + m.R;
    Eigen::MatrixXd K = Pp * S.inverse();
    KalmanState next;
    next.mean = mp + K * (obs - mp);
    next.cov = Pp - K * S * K.transpose();
    return next;
}

inline std::vector<KalmanState> kalman_filter(const LinearGaussianModel& m,
                                              const std::vector<Eigen::VectorXd>& obs) {
    std::vector<KalmanState> out;
    KalmanState s{m.m0, m.P0};
    for (const auto& x : obs) {
        s = kalman_step(s, x, m);
        out.push_back(s);
    }
    return out;
}

inline double normal_cdf(double x, double mu = 0.0, double sd = 1.0) {
    return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0)));
}

inline double uniform_cdf(double x, double a, double b) {
    return std::clamp((x - a) / (b - a), 0.0, 1.0);
}

inline double laplace_cdf(double x, double loc, double scale) {
    double z = (x - loc) / scale;
    return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

/// One-sample KS statistic against an analytic CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double stat = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double f = cdf(samples[i]);
        stat = std::max(stat, std::abs(f - static_cast<double>(i) / n));
        stat = std::max(stat, std::abs(static_cast<double>(i + 1) / n - f));
    }
    return stat;
}

/// Two-sample KS statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double stat = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        double fa = static_cast<double>(i) / a.size();
        double fb = static_cast<double>(j) / b.size();
        stat = std::max(stat, std::abs(fa - fb));
    }
    return stat;
}

}  // namespace oracles

#endif

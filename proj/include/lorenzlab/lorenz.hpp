#ifndef LORENZLAB_LORENZ_HPP
#define LORENZLAB_LORENZ_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lorenzlab/noise.hpp"
#include "lorenzlab/rng.hpp"

namespace lorenzlab {

using Vec3 = Eigen::Vector3d;

struct LorenzParams {
    double sigma = 10.0;
    double b = 8.0 / 3.0;
    double r = 28.0;

    Vec3 as_vector() const { return Vec3(sigma, b, r); }
    static LorenzParams from_vector(const Vec3& v) { return LorenzParams{v[0], v[1], v[2]}; }
};

inline Vec3 lorenz_deriv(const Vec3& s, const LorenzParams& p) {
    return Vec3(p.sigma * (s.y() - s.x()),
                s.x() * (p.r - s.z()) - s.y(),
                s.x() * s.y() - p.b * s.z());
}

/// Classical 4th-order Runge-Kutta update of the Lorenz field.
inline Vec3 rk4_step(const Vec3& s, const LorenzParams& p, double dt) {
    const Vec3 k1 = lorenz_deriv(s, p);
    const Vec3 k2 = lorenz_deriv(s + 0.5 * dt * k1, p);
    const Vec3 k3 = lorenz_deriv(s + 0.5 * dt * k2, p);
    const Vec3 k4 = lorenz_deriv(s + dt * k3, p);
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct Trajectory {
    double dt = 0.01;
    std::vector<Vec3> states;
    LorenzParams params;
};

struct ObservationSeries {
    std::vector<Vec3> observations;
    std::size_t first_source_index = 0;  // alignment into the generating trajectory
};

struct BlowupError : std::runtime_error {
    std::size_t step;
    explicit BlowupError(std::size_t step_index)
        : std::runtime_error("integration blow-up (non-finite state) at step " +
                             std::to_string(step_index)),
          step(step_index) {}
};

/// states[0] = init, states[t] = rk4_step(states[t-1]) + eta_t, eta_t iid
/// per coordinate from stoch_noise. Result has n_steps + 1 states.
inline Trajectory generate_trajectory(const Vec3& init, const LorenzParams& params, double dt,
                                      std::size_t n_steps,
                                      const std::optional<NoiseSpec>& stoch_noise, Rng& rng) {
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    Trajectory traj;
    traj.dt = dt;
    traj.params = params;
    traj.states.reserve(n_steps + 1);
    traj.states.push_back(init);
    Vec3 s = init;
    for (std::size_t t = 1; t <= n_steps; ++t) {
        s = rk4_step(s, params, dt);
        if (stoch_noise) {
            for (int c = 0; c < 3; ++c) s[c] += sample(*stoch_noise, rng);
        }
        if (!s.allFinite()) throw BlowupError(t);
        traj.states.push_back(s);
    }
    return traj;
}

inline ObservationSeries observe(const Trajectory& traj, const NoiseSpec& obs_noise, Rng& rng) {
    if (traj.states.empty()) throw std::invalid_argument("empty trajectory");
    ObservationSeries series;
    series.observations.reserve(traj.states.size());
    for (const Vec3& s : traj.states) {
        Vec3 o = s;
        for (int c = 0; c < 3; ++c) o[c] += sample(obs_noise, rng);
        series.observations.push_back(o);
    }
    return series;
}

inline std::string format_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void export_csv(const Trajectory& traj, const ObservationSeries* obs,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "t,x,y,z";
    if (obs) out << ",obs_x,obs_y,obs_z";
    out << "\n";
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
        const Vec3& s = traj.states[t];
        out << t << ',' << format_full(s.x()) << ',' << format_full(s.y()) << ','
            << format_full(s.z());
        if (obs) {
            const Vec3& o = obs->observations[t];
            out << ',' << format_full(o.x()) << ',' << format_full(o.y()) << ','
                << format_full(o.z());
        }
        out << "\n";
    }
}

}  // namespace lorenzlab

#endif

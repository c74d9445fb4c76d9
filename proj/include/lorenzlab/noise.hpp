#ifndef LORENZLAB_NOISE_HPP
#define LORENZLAB_NOISE_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorenzlab/rng.hpp"

namespace lorenzlab {

struct NoiseSpec;

struct Gaussian {
    double mean = 0.0;
    double sd = 1.0;  // standard deviation, not variance
};

struct Uniform {
    double a = -1.0;
    double b = 1.0;
};

struct Mixture {
    std::vector<double> weights;
    std::vector<NoiseSpec> components;
};

/// sign * scale * E where E ~ Exp(rate).
struct SignedExponential {
    double rate = 1.0;
    double scale = 1.0;
    int sign = 1;
};

struct Laplace {
    double loc = 0.0;
    double scale = 1.0;
};

struct PointMass {
    double value = 0.0;
};

struct NoiseSpec {
    std::variant<Gaussian, Uniform, Mixture, SignedExponential, Laplace, PointMass> dist =
        PointMass{0.0};

    static NoiseSpec none() { return NoiseSpec{PointMass{0.0}}; }
    bool is_point_mass() const { return std::holds_alternative<PointMass>(dist); }
};

inline void validate(const NoiseSpec& spec) {
    std::visit(
        [](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                if (!(d.sd > 0.0)) throw std::invalid_argument("gaussian sd must be > 0");
            } else if constexpr (std::is_same_v<T, Uniform>) {
                if (!(d.a < d.b)) throw std::invalid_argument("uniform requires a < b");
            } else if constexpr (std::is_same_v<T, Mixture>) {
                if (d.weights.size() != d.components.size() || d.weights.empty())
                    throw std::invalid_argument("mixture weights/components mismatch");
                double sum = 0.0;
                for (double w : d.weights) {
                    if (w < 0.0) throw std::invalid_argument("mixture weight negative");
                    sum += w;
                }
                if (std::abs(sum - 1.0) > 1e-12)
                    throw std::invalid_argument("mixture weights must sum to 1");
                for (const auto& c : d.components) validate(c);
            } else if constexpr (std::is_same_v<T, SignedExponential>) {
                if (!(d.rate > 0.0) || !(d.scale > 0.0))
                    throw std::invalid_argument("signed exponential rate/scale must be > 0");
                if (d.sign != 1 && d.sign != -1)
                    throw std::invalid_argument("signed exponential sign must be +-1");
            } else if constexpr (std::is_same_v<T, Laplace>) {
                if (!(d.scale > 0.0)) throw std::invalid_argument("laplace scale must be > 0");
            }
        },
        spec.dist);
}

inline double sample_standard_normal(Rng& rng) {
    // Box-Muller; draws exactly two engine values per call.
    double u1 = 1.0 - uniform01(rng);
    double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double sample(const NoiseSpec& spec, Rng& rng);

namespace detail {
inline double sample_impl(const Gaussian& d, Rng& rng) {
    return d.mean + d.sd * sample_standard_normal(rng);
}
inline double sample_impl(const Uniform& d, Rng& rng) {
    return d.a + (d.b - d.a) * uniform01(rng);
}
inline double sample_impl(const Mixture& d, Rng& rng) {
    double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pick = d.components.size() - 1;
    for (std::size_t i = 0; i < d.weights.size(); ++i) {
        acc += d.weights[i];
        if (u < acc) {
            pick = i;
            break;
        }
    }
    return sample(d.components[pick], rng);
}
inline double sample_impl(const SignedExponential& d, Rng& rng) {
    double e = -std::log(1.0 - uniform01(rng)) / d.rate;
    return d.sign * d.scale * e;
}
inline double sample_impl(const Laplace& d, Rng& rng) {
    double u = uniform01(rng) - 0.5;
    return d.loc - d.scale * std::copysign(std::log1p(-2.0 * std::abs(u)), u);
}
inline double sample_impl(const PointMass& d, Rng&) { return d.value; }
}  // namespace detail

inline double sample(const NoiseSpec& spec, Rng& rng) {
    return std::visit([&rng](const auto& d) { return detail::sample_impl(d, rng); }, spec.dist);
}

/// Natural log of the density at v; -inf outside the support.
/// PointMass uses the 0 / -inf indicator convention.
inline double log_density(const NoiseSpec& spec, double v);

namespace detail {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_density_impl(const Gaussian& d, double v) {
    double z = (v - d.mean) / d.sd;
    return -0.5 * z * z - std::log(d.sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}
inline double log_density_impl(const Uniform& d, double v) {
    if (v < d.a || v > d.b) return kNegInf;
    return -std::log(d.b - d.a);
}
inline double log_density_impl(const Mixture& d, double v) {
    // log-sum-exp over components
    double max_term = kNegInf;
    std::vector<double> terms(d.components.size());
    for (std::size_t i = 0; i < d.components.size(); ++i) {
        terms[i] = d.weights[i] > 0.0 ? std::log(d.weights[i]) + log_density(d.components[i], v)
                                      : kNegInf;
        max_term = std::max(max_term, terms[i]);
    }
    if (max_term == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - max_term);
    return max_term + std::log(sum);
}
inline double log_density_impl(const SignedExponential& d, double v) {
    double w = d.sign * v;
    if (w < 0.0) return kNegInf;
    return std::log(d.rate / d.scale) - d.rate * w / d.scale;
}
inline double log_density_impl(const Laplace& d, double v) {
    return -std::abs(v - d.loc) / d.scale - std::log(2.0 * d.scale);
}
inline double log_density_impl(const PointMass& d, double v) {
    return v == d.value ? 0.0 : kNegInf;
}
}  // namespace detail

inline double log_density(const NoiseSpec& spec, double v) {
    return std::visit([v](const auto& d) { return detail::log_density_impl(d, v); }, spec.dist);
}

inline double mean(const NoiseSpec& spec);
inline double variance(const NoiseSpec& spec);

namespace detail {
inline double mean_impl(const Gaussian& d) { return d.mean; }
inline double mean_impl(const Uniform& d) { return 0.5 * (d.a + d.b); }
inline double mean_impl(const Mixture& d) {
    double m = 0.0;
    for (std::size_t i = 0; i < d.components.size(); ++i)
        m += d.weights[i] * mean(d.components[i]);
    return m;
}
inline double mean_impl(const SignedExponential& d) { return d.sign * d.scale / d.rate; }
inline double mean_impl(const Laplace& d) { return d.loc; }
inline double mean_impl(const PointMass& d) { return d.value; }

inline double var_impl(const Gaussian& d) { return d.sd * d.sd; }
inline double var_impl(const Uniform& d) { return (d.b - d.a) * (d.b - d.a) / 12.0; }
inline double var_impl(const Mixture& d) {
    double second = 0.0, first = 0.0;
    for (std::size_t i = 0; i < d.components.size(); ++i) {
        double mi = mean(d.components[i]);
        second += d.weights[i] * (variance(d.components[i]) + mi * mi);
        first += d.weights[i] * mi;
    }
    return second - first * first;
}
inline double var_impl(const SignedExponential& d) { return d.scale * d.scale / (d.rate * d.rate); }
inline double var_impl(const Laplace& d) { return 2.0 * d.scale * d.scale; }
inline double var_impl(const PointMass&) { return 0.0; }
}  // namespace detail

inline double mean(const NoiseSpec& spec) {
    return std::visit([](const auto& d) { return detail::mean_impl(d); }, spec.dist);
}
inline double variance(const NoiseSpec& spec) {
    return std::visit([](const auto& d) { return detail::var_impl(d); }, spec.dist);
}

// Tagged-record config form, e.g. {"type":"gaussian","mean":0.0,"sd":0.8}.
inline nlohmann::json to_json(const NoiseSpec& spec) {
    using nlohmann::json;
    return std::visit(
        [](const auto& d) -> json {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Gaussian>) {
                return {{"type", "gaussian"}, {"mean", d.mean}, {"sd", d.sd}};
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return {{"type", "uniform"}, {"a", d.a}, {"b", d.b}};
            } else if constexpr (std::is_same_v<T, Mixture>) {
                json comps = json::array();
                for (const auto& c : d.components) comps.push_back(to_json(c));
                return {{"type", "mixture"}, {"weights", d.weights}, {"components", comps}};
            } else if constexpr (std::is_same_v<T, SignedExponential>) {
                return {{"type", "signed_exponential"},
                        {"rate", d.rate},
                        {"scale", d.scale},
                        {"sign", d.sign}};
            } else if constexpr (std::is_same_v<T, Laplace>) {
                return {{"type", "laplace"}, {"loc", d.loc}, {"scale", d.scale}};
            } else {
                return {{"type", "point_mass"}, {"value", d.value}};
            }
        },
        spec.dist);
}

inline NoiseSpec noise_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    NoiseSpec spec;
    if (type == "gaussian") {
        spec.dist = Gaussian{j.at("mean").get<double>(), j.at("sd").get<double>()};
    } else if (type == "uniform") {
        spec.dist = Uniform{j.at("a").get<double>(), j.at("b").get<double>()};
    } else if (type == "mixture") {
        Mixture m;
        m.weights = j.at("weights").get<std::vector<double>>();
        for (const auto& c : j.at("components")) m.components.push_back(noise_from_json(c));
        spec.dist = std::move(m);
    } else if (type == "signed_exponential") {
        spec.dist = SignedExponential{j.at("rate").get<double>(), j.at("scale").get<double>(),
                                      j.at("sign").get<int>()};
    } else if (type == "laplace") {
        spec.dist = Laplace{j.at("loc").get<double>(), j.at("scale").get<double>()};
    } else if (type == "point_mass") {
        spec.dist = PointMass{j.at("value").get<double>()};
    } else {
        throw std::invalid_argument("unknown noise type: " + type);
    }
    validate(spec);
    return spec;
}

}  // namespace lorenzlab

#endif

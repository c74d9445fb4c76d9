#ifndef LORENZLAB_EXPERIMENT_HPP
#define LORENZLAB_EXPERIMENT_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lorenzlab/dual.hpp"
#include "lorenzlab/lorenz.hpp"
#include "lorenzlab/noise.hpp"
#include "lorenzlab/particle_filter.hpp"
#include "lorenzlab/svm.hpp"
#include "lorenzlab/ukf.hpp"

namespace lorenzlab {

enum class FilterKnowledge { AllKnown, AllUnknown };

struct SystemConfig {
    std::string id;
    LorenzParams params;
    NoiseSpec stoch_noise = NoiseSpec::none();
    NoiseSpec obs_noise;
    FilterKnowledge knowledge = FilterKnowledge::AllUnknown;
};

/// The six benchmark systems (Lorenz parameters, noise, filter knowledge).
inline SystemConfig build_system(const std::string& id) {
    auto gauss = [](double m, double sd) { return NoiseSpec{Gaussian{m, sd}}; };
    if (id == "DS1")
        return {"DS1", {10.0, 8.0 / 3.0, 28.0}, NoiseSpec::none(), gauss(0.0, 0.80),
                FilterKnowledge::AllKnown};
    if (id == "DS2")
        return {"DS2", {8.13, 0.53, 35.23}, NoiseSpec::none(), gauss(0.0, 1.13),
                FilterKnowledge::AllUnknown};
    if (id == "DS3")
        return {"DS3", {12.18, 0.52, 13.14}, NoiseSpec::none(),
                NoiseSpec{Uniform{-0.5, 0.5}}, FilterKnowledge::AllUnknown};
    if (id == "DS4")
        return {"DS4", {4.82, 0.63, 20.09}, NoiseSpec::none(),
                NoiseSpec{Mixture{{0.5, 0.5}, {gauss(0.1, 0.25), gauss(-0.1, 0.5)}}},
                FilterKnowledge::AllUnknown};
    if (id == "DS5")
        return {"DS5", {3.34, 0.54, 23.49}, NoiseSpec::none(),
                NoiseSpec{Mixture{{0.8, 0.2}, {gauss(0.1, 0.25), NoiseSpec{Uniform{-0.1, 0.5}}}}},
                FilterKnowledge::AllUnknown};
    if (id == "DS6")
        return {"DS6", {9.57, 3.04, 27.32}, gauss(0.0, 0.1),
                NoiseSpec{Mixture{{0.5, 0.5},
                                  {NoiseSpec{SignedExponential{1.0, 0.25, 1}},
                                   NoiseSpec{SignedExponential{1.0, 0.25, -1}}}}},
                FilterKnowledge::AllUnknown};
    throw std::invalid_argument("unknown system id: " + id);
}

inline const std::vector<std::string>& all_system_ids() {
    static const std::vector<std::string> ids = {"DS1", "DS2", "DS3", "DS4", "DS5", "DS6"};
    return ids;
}

struct ExperimentPlan {
    std::vector<std::size_t> historical_sizes = {500, 1000, 2000};
    std::vector<std::size_t> tp_list = {5, 10, 20, 50, 100, 1000};
    std::vector<std::size_t> tf_list = {1, 5, 10, 20, 30, 40, 50};
    std::size_t n_test = 100;
    std::size_t filter_repetitions = 3;
    std::size_t max_repetitions = 3;  // desk-scale cap on Table-pair repetitions
    std::uint64_t seed = 42;
    double dt = 0.01;
    std::size_t burn_in = 1000;

    // filter tunables
    UtParams ut;
    std::size_t particle_count = 1000;
    double nu0 = 0.01;
    double gamma = 0.995;
    double state_prior_var = 2.0;
    double ukf_obs_sd = 0.8;               // assumed Gaussian observation sd, all systems
    double laplace_scale = 0.8;  // Laplace b parameter, sd 0.8*sqrt(2) = 1.13
    double assumed_stoch_sd = 0.05;        // filter-side process-noise regularization
    Eigen::Vector3d param_prior_mean = Eigen::Vector3d(10.0, 8.0 / 3.0, 28.0);
    Eigen::Vector3d param_prior_var = Eigen::Vector3d(4.0, 1.0, 9.0);  // (sigma, b, r)

    // SVM tunables
    std::size_t max_embed_cap = 20;

    /// Historical-size repetition counts, desk-capped.
    std::size_t repetitions_for(std::size_t size) const {
        std::size_t reps = size <= 1000 ? 100 : size <= 4000 ? 10 : 5;
        return std::min(reps, max_repetitions);
    }

    std::size_t max_tp() const { return *std::max_element(tp_list.begin(), tp_list.end()); }
    std::size_t max_tf() const { return *std::max_element(tf_list.begin(), tf_list.end()); }
    std::size_t max_historical() const {
        return *std::max_element(historical_sizes.begin(), historical_sizes.end());
    }
};

inline void plan_from_json(const nlohmann::json& j, ExperimentPlan& plan) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("historical_sizes", plan.historical_sizes);
    get("tp_list", plan.tp_list);
    get("tf_list", plan.tf_list);
    get("n_test", plan.n_test);
    get("filter_repetitions", plan.filter_repetitions);
    get("max_repetitions", plan.max_repetitions);
    get("seed", plan.seed);
    get("dt", plan.dt);
    get("burn_in", plan.burn_in);
    get("particle_count", plan.particle_count);
    get("nu0", plan.nu0);
    get("gamma", plan.gamma);
    get("state_prior_var", plan.state_prior_var);
    get("ukf_obs_sd", plan.ukf_obs_sd);
    get("laplace_scale", plan.laplace_scale);
    get("assumed_stoch_sd", plan.assumed_stoch_sd);
    get("max_embed_cap", plan.max_embed_cap);
    std::sort(plan.historical_sizes.begin(), plan.historical_sizes.end());
    std::sort(plan.tp_list.begin(), plan.tp_list.end());
    std::sort(plan.tf_list.begin(), plan.tf_list.end());
    if (j.contains("ut_alpha")) plan.ut.alpha = j.at("ut_alpha").get<double>();
    if (j.contains("ut_beta")) plan.ut.beta = j.at("ut_beta").get<double>();
    if (j.contains("ut_kappa")) plan.ut.kappa = j.at("ut_kappa").get<double>();
    if (j.contains("param_prior_mean")) {
        auto v = j.at("param_prior_mean").get<std::vector<double>>();
        plan.param_prior_mean = Eigen::Vector3d(v.at(0), v.at(1), v.at(2));
    }
    if (j.contains("param_prior_var")) {
        auto v = j.at("param_prior_var").get<std::vector<double>>();
        plan.param_prior_var = Eigen::Vector3d(v.at(0), v.at(1), v.at(2));
    }
}

inline nlohmann::json plan_to_json(const ExperimentPlan& plan) {
    return {{"historical_sizes", plan.historical_sizes},
            {"tp_list", plan.tp_list},
            {"tf_list", plan.tf_list},
            {"n_test", plan.n_test},
            {"filter_repetitions", plan.filter_repetitions},
            {"max_repetitions", plan.max_repetitions},
            {"seed", plan.seed},
            {"dt", plan.dt},
            {"burn_in", plan.burn_in},
            {"particle_count", plan.particle_count},
            {"nu0", plan.nu0},
            {"gamma", plan.gamma},
            {"state_prior_var", plan.state_prior_var},
            {"ukf_obs_sd", plan.ukf_obs_sd},
            {"laplace_scale", plan.laplace_scale},
            {"assumed_stoch_sd", plan.assumed_stoch_sd},
            {"max_embed_cap", plan.max_embed_cap},
            {"ut_alpha", plan.ut.alpha},
            {"ut_beta", plan.ut.beta},
            {"ut_kappa", plan.ut.kappa},
            {"param_prior_mean",
             std::vector<double>{plan.param_prior_mean[0], plan.param_prior_mean[1],
                                 plan.param_prior_mean[2]},
            },
            {"param_prior_var",
             std::vector<double>{plan.param_prior_var[0], plan.param_prior_var[1],
                                 plan.param_prior_var[2]}}};
}

struct RmseRecord {
    std::string system;
    std::string method;  // svm | ukf_gaussian | pf_laplace
    std::optional<std::size_t> historical_size;
    std::size_t tp = 0;
    std::size_t tf = 0;
    std::size_t repetition = 0;
    double rmse = 0.0;
    std::size_t n_failures = 0;
};

struct ParamConvergenceRecord {
    int level = 0;
    std::size_t repetition = 0;
    std::size_t t = 0;
    double mse = 0.0;
};

inline double compute_rmse(std::span<const Vec3> predictions, std::span<const Vec3> truths) {
    if (predictions.size() != truths.size() || predictions.empty())
        throw std::invalid_argument("compute_rmse: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        sum += (predictions[i] - truths[i]).squaredNorm();
    return std::sqrt(sum / (3.0 * static_cast<double>(predictions.size())));
}

struct IndexConstraints {
    std::size_t region_start = 0;  // earliest admissible index
    std::size_t max_tp = 1;
    std::size_t max_tf = 0;
};

/// n_test indices uniform without replacement over the admissible range:
/// each index admits max_tp past observations and max_tf future states.
inline std::vector<std::size_t> sample_test_indices(std::size_t trajectory_length,
                                                    std::size_t n_test,
                                                    const IndexConstraints& c, Rng& rng) {
    const std::size_t lo = std::max(c.region_start, c.max_tp - 1);
    if (trajectory_length < c.max_tf + 1 || lo > trajectory_length - 1 - c.max_tf)
        throw std::invalid_argument("sample_test_indices: infeasible constraints");
    const std::size_t hi = trajectory_length - 1 - c.max_tf;
    std::vector<std::size_t> pool(hi - lo + 1);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = lo + i;
    if (n_test > pool.size())
        throw std::invalid_argument("sample_test_indices: not enough admissible indices");
    // partial Fisher-Yates
    for (std::size_t i = 0; i < n_test; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * (pool.size() - i));
        j = std::min(j, pool.size() - 1);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n_test);
    return pool;
}

/// One repetition's shared raw material: trajectory, observations, and
/// test indices used identically by both forecaster arms.
struct RepetitionData {
    Trajectory trajectory;            // post burn-in
    ObservationSeries observations;
    std::vector<std::size_t> test_indices;
};

inline RepetitionData make_repetition(const ExperimentPlan& plan, const SystemConfig& system,
                                      std::size_t repetition, std::uint64_t seed) {
    const std::size_t test_region = plan.max_tp() + plan.max_tf() + 4 * plan.n_test;
    const std::size_t n_steps = plan.burn_in + plan.max_historical() + test_region;

    Rng rng = make_rng(derive_seed(seed, system.id, "trajectory", repetition));
    std::optional<NoiseSpec> stoch;
    if (!system.stoch_noise.is_point_mass()) stoch = system.stoch_noise;
    Trajectory full = generate_trajectory(Vec3(10.0, 10.0, 25.0), system.params, plan.dt,
                                          n_steps, stoch, rng);
    RepetitionData rep;
    rep.trajectory.dt = full.dt;
    rep.trajectory.params = full.params;
    rep.trajectory.states.assign(full.states.begin() + plan.burn_in, full.states.end());

    Rng obs_rng = make_rng(derive_seed(seed, system.id, "observe", repetition));
    rep.observations = observe(rep.trajectory, system.obs_noise, obs_rng);

    Rng idx_rng = make_rng(derive_seed(seed, system.id, "indices", repetition));
    IndexConstraints c{plan.max_historical() + plan.max_tp(), plan.max_tp(), plan.max_tf()};
    rep.test_indices =
        sample_test_indices(rep.trajectory.states.size(), plan.n_test, c, idx_rng);
    return rep;
}

inline std::vector<RmseRecord> run_svm_arm(const ExperimentPlan& plan,
                                           const SystemConfig& system) {
    std::vector<RmseRecord> records;
    for (std::size_t size : plan.historical_sizes) {
        const std::size_t reps = plan.repetitions_for(size);
        for (std::size_t rep = 0; rep < reps; ++rep) {
            RepetitionData data = make_repetition(plan, system, rep, plan.seed);
            std::span<const Vec3> historical(data.observations.observations.data(), size);

            // distinct embedding caps min(T_p, max_embed_cap) share models
            std::map<std::size_t, std::vector<std::size_t>> tps_by_cap;
            for (std::size_t tp : plan.tp_list)
                tps_by_cap[std::min(tp, plan.max_embed_cap)].push_back(tp);

            for (const auto& [cap, tps] : tps_by_cap) {
                for (std::size_t tf : plan.tf_list) {
                    EmbeddingChoice choice = select_embedding(historical, tf, cap);
                    TrainedLsSvm model = train_final(historical, choice.embed_len,
                                                     choice.cv.lambda, choice.cv.sigma, tf);
                    std::vector<Vec3> preds, truths;
                    preds.reserve(data.test_indices.size());
                    for (std::size_t idx : data.test_indices) {
                        std::span<const Vec3> window(
                            data.observations.observations.data() + idx + 1 -
                                model.params.embed_len,
                            model.params.embed_len);
                        preds.push_back(predict(model, window));
                        truths.push_back(data.trajectory.states[idx + tf]);
                    }
                    const double rmse = compute_rmse(preds, truths);
                    for (std::size_t tp : tps)
                        records.push_back(
                            {system.id, "svm", size, tp, tf, rep, rmse, 0});
                }
            }
        }
    }
    return records;
}

/// Filter-side state-space model: assumed parameters/noise, with a small
/// Gaussian process-noise regularization when the system declares none.
inline StateSpace<3> make_filter_model(const ExperimentPlan& plan, const SystemConfig& system,
                                       const std::string& method) {
    StateSpace<3> model;
    const double dt = plan.dt;
    model.transition = [dt](const Vec3& z, const Eigen::Vector3d& theta) {
        return rk4_step(z, LorenzParams::from_vector(theta), dt);
    };
    model.theta = system.params.as_vector();
    if (!system.stoch_noise.is_point_mass())
        model.stoch_noise = system.stoch_noise;
    else if (plan.assumed_stoch_sd > 0.0)
        model.stoch_noise = NoiseSpec{Gaussian{0.0, plan.assumed_stoch_sd}};
    model.obs_noise = method == "pf_laplace"
                          ? NoiseSpec{Laplace{0.0, plan.laplace_scale}}
                          : NoiseSpec{Gaussian{0.0, plan.ukf_obs_sd}};
    model.prior_cov = plan.state_prior_var * Eigen::Matrix3d::Identity();
    return model;
}

/// Assimilate a window of observations and forecast each horizon.
/// Returns one prediction per T_f, or nullopt if the run diverged.
inline std::optional<std::vector<Vec3>> filter_forecasts(
    const ExperimentPlan& plan, const SystemConfig& system, const std::string& method,
    std::span<const Vec3> window, Rng& rng) {
    StateSpace<3> model = make_filter_model(plan, system, method);
    model.prior_mean = window[0];
    const bool use_pf = method == "pf_laplace";
    const bool dual = system.knowledge == FilterKnowledge::AllUnknown;

    try {
        Vec3 state;
        Eigen::Vector3d theta = model.theta;
        if (dual) {
            DualFilterState<3> filt;
            filt.nu_variance = plan.nu0;
            filt.gamma = plan.gamma;
            filt.param_filter.mean = plan.param_prior_mean;
            filt.param_filter.cov = plan.param_prior_var.asDiagonal();
            if (use_pf) {
                filt.state_filter = pf_init<3>(model.prior_mean, model.prior_cov,
                                               plan.particle_count, rng);
            } else {
                filt.state_filter = UkfState<3>{model.prior_mean, model.prior_cov, 0};
            }
            model.theta = plan.param_prior_mean;
            for (std::size_t k = 1; k < window.size(); ++k)
                filt = dual_step(filt, window[k], model, plan.ut, rng);
            state = filt.state_estimate();
            theta = filt.param_estimate();
        } else if (use_pf) {
            ParticleEnsemble<3> ens =
                pf_init<3>(model.prior_mean, model.prior_cov, plan.particle_count, rng);
            for (std::size_t k = 1; k < window.size(); ++k)
                ens = pf_step(ens, window[k], model, ProposalKind::Ukf, rng, plan.ut);
            state = ens.weighted_mean();
        } else {
            UkfState<3> ukf{model.prior_mean, model.prior_cov, 0};
            for (std::size_t k = 1; k < window.size(); ++k)
                ukf = ukf_step(ukf, window[k], model, plan.ut);
            state = ukf.mean;
        }

        const LorenzParams fitted = LorenzParams::from_vector(theta);
        std::vector<Vec3> forecasts;
        forecasts.reserve(plan.tf_list.size());
        Vec3 z = state;
        std::size_t done = 0;
        for (std::size_t tf : plan.tf_list) {
            z = forecast_propagate(z, fitted, tf - done, plan.dt);
            done = tf;
            if (!z.allFinite()) return std::nullopt;
            forecasts.push_back(z);
        }
        return forecasts;
    } catch (const std::runtime_error&) {
        return std::nullopt;
    }
}

struct FilterTraceRow {
    std::size_t t = 0;
    Vec3 mean = Vec3::Zero();
    std::optional<Eigen::Vector3d> params;  // empty in state-only mode
    std::optional<double> ess;              // particle methods only
};

/// Assimilate a window step by step, recording the posterior mean,
/// parameter estimate, and ESS after each observation.
inline std::vector<FilterTraceRow> filter_trace(const ExperimentPlan& plan,
                                                const SystemConfig& system,
                                                const std::string& method,
                                                std::span<const Vec3> window, Rng& rng) {
    StateSpace<3> model = make_filter_model(plan, system, method);
    model.prior_mean = window[0];
    const bool use_pf = method == "pf_laplace";
    const bool dual = system.knowledge == FilterKnowledge::AllUnknown;
    std::vector<FilterTraceRow> rows;

    if (dual) {
        DualFilterState<3> filt;
        filt.nu_variance = plan.nu0;
        filt.gamma = plan.gamma;
        filt.param_filter.mean = plan.param_prior_mean;
        filt.param_filter.cov = plan.param_prior_var.asDiagonal();
        if (use_pf)
            filt.state_filter =
                pf_init<3>(model.prior_mean, model.prior_cov, plan.particle_count, rng);
        else
            filt.state_filter = UkfState<3>{model.prior_mean, model.prior_cov, 0};
        model.theta = plan.param_prior_mean;
        rows.push_back({0, filt.state_estimate(), filt.param_estimate(), std::nullopt});
        for (std::size_t k = 1; k < window.size(); ++k) {
            filt = dual_step(filt, window[k], model, plan.ut, rng);
            FilterTraceRow row{k, filt.state_estimate(), filt.param_estimate(), std::nullopt};
            if (const auto* ens = std::get_if<ParticleEnsemble<3>>(&filt.state_filter))
                row.ess = effective_sample_size(ens->weights);
            rows.push_back(row);
        }
    } else if (use_pf) {
        ParticleEnsemble<3> ens =
            pf_init<3>(model.prior_mean, model.prior_cov, plan.particle_count, rng);
        rows.push_back({0, ens.weighted_mean(), std::nullopt,
                        effective_sample_size(ens.weights)});
        for (std::size_t k = 1; k < window.size(); ++k) {
            ens = pf_step(ens, window[k], model, ProposalKind::Ukf, rng, plan.ut);
            rows.push_back({k, ens.weighted_mean(), std::nullopt,
                            effective_sample_size(ens.weights)});
        }
    } else {
        UkfState<3> ukf{model.prior_mean, model.prior_cov, 0};
        rows.push_back({0, ukf.mean, std::nullopt, std::nullopt});
        for (std::size_t k = 1; k < window.size(); ++k) {
            ukf = ukf_step(ukf, window[k], model, plan.ut);
            rows.push_back({k, ukf.mean, std::nullopt, std::nullopt});
        }
    }
    return rows;
}

inline void write_filter_trace_csv(const std::vector<FilterTraceRow>& rows,
                                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "t,mean_x,mean_y,mean_z,param_sigma,param_b,param_r,ess\n";
    for (const auto& r : rows) {
        out << r.t << ',' << format_full(r.mean.x()) << ',' << format_full(r.mean.y()) << ','
            << format_full(r.mean.z()) << ',';
        if (r.params)
            out << format_full((*r.params)[0]) << ',' << format_full((*r.params)[1]) << ','
                << format_full((*r.params)[2]);
        else
            out << ",,";
        out << ',';
        if (r.ess) out << format_full(*r.ess);
        out << "\n";
    }
}

inline std::vector<RmseRecord> run_filter_arm(const ExperimentPlan& plan,
                                              const SystemConfig& system,
                                              const std::string& method) {
    std::vector<RmseRecord> records;
    for (std::size_t rep = 0; rep < plan.filter_repetitions; ++rep) {
        RepetitionData data = make_repetition(plan, system, rep, plan.seed);
        for (std::size_t tp : plan.tp_list) {
            std::vector<std::vector<Vec3>> preds(plan.tf_list.size());
            std::vector<std::vector<Vec3>> truths(plan.tf_list.size());
            std::size_t failures = 0;
            for (std::size_t idx : data.test_indices) {
                Rng rng = make_rng(
                    derive_seed(plan.seed, system.id, method, rep, tp, idx));
                std::span<const Vec3> window(
                    data.observations.observations.data() + idx + 1 - tp, tp);
                auto forecasts = filter_forecasts(plan, system, method, window, rng);
                if (!forecasts) {
                    ++failures;
                    continue;
                }
                for (std::size_t f = 0; f < plan.tf_list.size(); ++f) {
                    preds[f].push_back((*forecasts)[f]);
                    truths[f].push_back(data.trajectory.states[idx + plan.tf_list[f]]);
                }
            }
            for (std::size_t f = 0; f < plan.tf_list.size(); ++f) {
                double rmse = preds[f].empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : compute_rmse(preds[f], truths[f]);
                records.push_back({system.id, method, std::nullopt, tp, plan.tf_list[f], rep,
                                   rmse, failures});
            }
        }
    }
    return records;
}

/// DS1 known-noise sub-experiment: perturb the parameter prior by
/// level * (+-2, +-3, +-1) on (sigma, r, b) and track the average
/// squared parameter error of the dual filter over time.
inline std::vector<ParamConvergenceRecord> param_convergence_experiment(
    const std::vector<int>& levels, std::size_t repetitions, std::size_t n_steps,
    const ExperimentPlan& plan) {
    const SystemConfig system = build_system("DS1");
    const Eigen::Vector3d truth = system.params.as_vector();  // (sigma, b, r)
    std::vector<ParamConvergenceRecord> records;

    for (int level : levels) {
        for (std::size_t rep = 0; rep < repetitions; ++rep) {
            Rng rng = make_rng(derive_seed(plan.seed, "paramconv", level, rep));
            Trajectory traj = generate_trajectory(Vec3(10.0, 10.0, 25.0), system.params,
                                                  plan.dt, plan.burn_in + n_steps, std::nullopt,
                                                  rng);
            traj.states.erase(traj.states.begin(),
                              traj.states.begin() + static_cast<long>(plan.burn_in));
            ObservationSeries obs = observe(traj, system.obs_noise, rng);

            auto flip = [&rng]() { return uniform01(rng) < 0.5 ? 1.0 : -1.0; };
            Eigen::Vector3d perturb(flip() * 2.0, flip() * 1.0, flip() * 3.0);  // (sigma, b, r)
            Eigen::Vector3d prior_mean = truth + level * perturb;

            StateSpace<3> model = make_filter_model(plan, system, "ukf_gaussian");
            model.obs_noise = system.obs_noise;  // known noise
            model.prior_mean = obs.observations[0];

            DualFilterState<3> filt;
            filt.nu_variance = plan.nu0;
            filt.gamma = plan.gamma;
            filt.param_filter.mean = prior_mean;
            filt.param_filter.cov = plan.param_prior_var.asDiagonal();
            filt.state_filter = UkfState<3>{model.prior_mean, model.prior_cov, 0};

            records.push_back(
                {level, rep, 0, (prior_mean - truth).squaredNorm() / 3.0});
            double last_mse = records.back().mse;
            for (std::size_t t = 1; t < obs.observations.size(); ++t) {
                try {
                    filt = dual_step(filt, obs.observations[t], model, plan.ut, rng);
                    last_mse = (filt.param_estimate() - truth).squaredNorm() / 3.0;
                } catch (const std::runtime_error&) {
                    // diverged: freeze the trailing MSE for the remaining steps
                    records.push_back({level, rep, t, last_mse});
                    for (std::size_t u = t + 1; u < obs.observations.size(); ++u)
                        records.push_back({level, rep, u, last_mse});
                    break;
                }
                records.push_back({level, rep, t, last_mse});
            }
        }
    }
    return records;
}

inline void write_rmse_csv(const std::vector<RmseRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "system,method,historical_size,T_p,T_f,repetition,rmse,n_failures\n";
    for (const auto& r : records) {
        out << r.system << ',' << r.method << ',';
        if (r.historical_size) out << *r.historical_size;
        out << ',' << r.tp << ',' << r.tf << ',' << r.repetition << ','
            << format_full(r.rmse) << ',' << r.n_failures << "\n";
    }
}

/// Mean RMSE per (system, method, size, T_p, T_f) cell across repetitions.
inline void write_aggregate_csv(const std::vector<RmseRecord>& records,
                                const std::string& path) {
    struct Cell {
        double sum = 0.0;
        std::size_t count = 0;
        std::size_t failures = 0;
    };
    std::map<std::tuple<std::string, std::string, std::optional<std::size_t>, std::size_t,
                        std::size_t>,
             Cell>
        cells;
    for (const auto& r : records) {
        auto& c = cells[{r.system, r.method, r.historical_size, r.tp, r.tf}];
        if (std::isfinite(r.rmse)) {
            c.sum += r.rmse;
            ++c.count;
        }
        c.failures += r.n_failures;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "system,method,historical_size,T_p,T_f,mean_rmse,n_repetitions,n_failures\n";
    for (const auto& [key, c] : cells) {
        const auto& [sys, method, size, tp, tf] = key;
        out << sys << ',' << method << ',';
        if (size) out << *size;
        out << ',' << tp << ',' << tf << ','
            << (c.count ? format_full(c.sum / c.count) : "nan") << ',' << c.count << ','
            << c.failures << "\n";
    }
}

inline void write_param_convergence_csv(const std::vector<ParamConvergenceRecord>& records,
                                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "level,repetition,t,mse\n";
    for (const auto& r : records)
        out << r.level << ',' << r.repetition << ',' << r.t << ',' << format_full(r.mse)
            << "\n";
}

inline void emit_results(const std::vector<RmseRecord>& records, const ExperimentPlan& plan,
                         const std::vector<std::string>& systems, const std::string& out_dir) {
    if (records.empty()) throw std::invalid_argument("emit_results: no records");
    std::filesystem::create_directories(out_dir);
    write_rmse_csv(records, out_dir + "/results.csv");
    write_aggregate_csv(records, out_dir + "/aggregate.csv");

    nlohmann::json manifest;
    manifest["config"] = plan_to_json(plan);
    manifest["systems"] = systems;
    manifest["master_seed"] = plan.seed;
    nlohmann::json cell_seeds = nlohmann::json::object();
    for (const auto& id : systems)
        for (std::size_t rep = 0; rep < plan.filter_repetitions; ++rep)
            cell_seeds[id + "/trajectory/" + std::to_string(rep)] =
                derive_seed(plan.seed, id, "trajectory", rep);
    manifest["cell_seeds"] = cell_seeds;
    std::ofstream mf(out_dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

}  // namespace lorenzlab

#endif

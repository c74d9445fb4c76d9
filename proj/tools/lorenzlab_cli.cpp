// Command-line front end: trajectory generation, single SVM / filter
// runs, the full RMSE experiment grid, the parameter-convergence
// sub-experiment, and CSV aggregation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lorenzlab/experiment.hpp"

namespace {

using namespace lorenzlab;

ExperimentPlan load_plan(const std::string& config_path, std::uint64_t seed) {
    ExperimentPlan plan;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config " + config_path);
        nlohmann::json j;
        in >> j;
        plan_from_json(j, plan);
    }
    plan.seed = seed;
    return plan;
}

int cmd_generate(const std::string& system_id, std::uint64_t seed, std::size_t steps,
                 double dt, const std::string& out) {
    SystemConfig system = build_system(system_id);
    Rng rng = make_rng(derive_seed(seed, system_id, "trajectory", std::size_t{0}));
    std::optional<NoiseSpec> stoch;
    if (!system.stoch_noise.is_point_mass()) stoch = system.stoch_noise;
    Trajectory traj =
        generate_trajectory(Vec3(10.0, 10.0, 25.0), system.params, dt, steps, stoch, rng);
    Rng obs_rng = make_rng(derive_seed(seed, system_id, "observe", std::size_t{0}));
    ObservationSeries obs = observe(traj, system.obs_noise, obs_rng);
    export_csv(traj, &obs, out);
    std::cout << "wrote " << traj.states.size() << " rows to " << out << "\n";
    return 0;
}

int cmd_svm(const std::string& system_id, const std::string& config, std::uint64_t seed,
            std::size_t size, std::size_t tf, std::size_t cap, const std::string& out) {
    ExperimentPlan plan = load_plan(config, seed);
    SystemConfig system = build_system(system_id);
    RepetitionData data = make_repetition(plan, system, 0, plan.seed);
    std::span<const Vec3> historical(data.observations.observations.data(), size);
    EmbeddingChoice choice = select_embedding(historical, tf, cap);
    TrainedLsSvm model =
        train_final(historical, choice.embed_len, choice.cv.lambda, choice.cv.sigma, tf);
    std::cout << "selected M=" << choice.embed_len << " lambda=" << choice.cv.lambda
              << " sigma=" << choice.cv.sigma << " cv_error=" << choice.cv.error << "\n";
    if (!out.empty()) {
        std::ofstream f(out);
        f << to_json(model).dump(2) << "\n";
        std::cout << "model written to " << out << "\n";
    }
    return 0;
}

int cmd_filter(const std::string& system_id, const std::string& method,
               const std::string& config, std::uint64_t seed, std::size_t tp,
               const std::string& out) {
    ExperimentPlan plan = load_plan(config, seed);
    SystemConfig system = build_system(system_id);
    RepetitionData data = make_repetition(plan, system, 0, plan.seed);
    const std::size_t idx = data.test_indices.front();
    std::span<const Vec3> window(data.observations.observations.data() + idx + 1 - tp, tp);
    Rng rng = make_rng(derive_seed(plan.seed, system_id, method, std::size_t{0}, tp, idx));
    auto rows = filter_trace(plan, system, method, window, rng);
    write_filter_trace_csv(rows, out);
    std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
    return 0;
}

int cmd_experiment(const std::vector<std::string>& systems,
                   const std::vector<std::string>& methods, const std::string& config,
                   std::uint64_t seed, const std::string& out_dir) {
    ExperimentPlan plan = load_plan(config, seed);
    std::vector<RmseRecord> records;
    for (const auto& id : systems) {
        SystemConfig system = build_system(id);
        for (const auto& method : methods) {
            std::cerr << "running " << id << " / " << method << "\n";
            std::vector<RmseRecord> part =
                method == "svm" ? run_svm_arm(plan, system)
                                : run_filter_arm(plan, system, method);
            records.insert(records.end(), part.begin(), part.end());
        }
    }
    emit_results(records, plan, systems, out_dir);
    std::cout << records.size() << " records written to " << out_dir << "\n";
    return 0;
}

int cmd_param_convergence(const std::vector<int>& levels, std::size_t reps, std::size_t steps,
                          const std::string& config, std::uint64_t seed,
                          const std::string& out) {
    ExperimentPlan plan = load_plan(config, seed);
    auto records = param_convergence_experiment(levels, reps, steps, plan);
    write_param_convergence_csv(records, out);
    std::cout << records.size() << " records written to " << out << "\n";
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_path) {
    std::ifstream in(in_path);
    if (!in) throw std::runtime_error("cannot open " + in_path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<RmseRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        RmseRecord r;
        std::getline(ss, r.system, ',');
        std::getline(ss, r.method, ',');
        std::getline(ss, field, ',');
        if (!field.empty()) r.historical_size = std::stoul(field);
        std::getline(ss, field, ',');
        r.tp = std::stoul(field);
        std::getline(ss, field, ',');
        r.tf = std::stoul(field);
        std::getline(ss, field, ',');
        r.repetition = std::stoul(field);
        std::getline(ss, field, ',');
        r.rmse = std::stod(field);
        std::getline(ss, field, ',');
        r.n_failures = std::stoul(field);
        records.push_back(r);
    }
    write_aggregate_csv(records, out_path);
    std::cout << "aggregated " << records.size() << " records into " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lorenz-63 forecasting benchmark: LS-SVM vs UKF / particle filtering"};
    app.require_subcommand(1);

    std::string config, out, system_id = "DS1", method = "ukf_gaussian", in_path;
    std::uint64_t seed = 42;
    std::size_t steps = 2000, size = 1000, tf = 1, tp = 100, cap = 20, reps = 20,
                pc_steps = 1000;
    double dt = 0.01;
    std::vector<std::string> systems, methods;
    std::vector<int> levels = {1, 2, 3, 4, 5};
    unsigned jobs = 1;

    auto* gen = app.add_subcommand("generate", "generate a trajectory and observations");
    gen->add_option("--system", system_id, "DS1..DS6");
    gen->add_option("--seed", seed);
    gen->add_option("--steps", steps);
    gen->add_option("--dt", dt);
    gen->add_option("--out", out)->required();

    auto* svm = app.add_subcommand("svm", "train one LS-SVM configuration");
    svm->add_option("--system", system_id);
    svm->add_option("--config", config);
    svm->add_option("--seed", seed);
    svm->add_option("--size", size, "historical data size");
    svm->add_option("--tf", tf, "forecast horizon");
    svm->add_option("--max-embed", cap, "embedding cap");
    svm->add_option("--out", out, "model JSON path");

    auto* flt = app.add_subcommand("filter", "run one filter trace");
    flt->add_option("--system", system_id);
    flt->add_option("--method", method)->check(CLI::IsMember({"ukf_gaussian", "pf_laplace"}));
    flt->add_option("--config", config);
    flt->add_option("--seed", seed);
    flt->add_option("--tp", tp, "window length");
    flt->add_option("--out", out)->required();

    auto* exp = app.add_subcommand("experiment", "full RMSE grid");
    exp->add_option("--system", systems, "systems to run (default all)");
    exp->add_option("--method", methods, "methods to run (default all)")
        ->check(CLI::IsMember({"svm", "ukf_gaussian", "pf_laplace"}));
    exp->add_option("--config", config);
    exp->add_option("--seed", seed);
    exp->add_option("--out", out)->required();
    exp->add_option("--jobs", jobs, "reserved; runs are sequential");

    auto* pc = app.add_subcommand("param-convergence", "parameter-convergence sub-experiment");
    pc->add_option("--levels", levels);
    pc->add_option("--reps", reps);
    pc->add_option("--steps", pc_steps);
    pc->add_option("--config", config);
    pc->add_option("--seed", seed);
    pc->add_option("--out", out)->required();

    auto* rep = app.add_subcommand("report", "aggregate a results CSV");
    rep->add_option("--in", in_path)->required();
    rep->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(system_id, seed, steps, dt, out);
        if (svm->parsed()) return cmd_svm(system_id, config, seed, size, tf, cap, out);
        if (flt->parsed()) return cmd_filter(system_id, method, config, seed, tp, out);
        if (exp->parsed()) {
            if (systems.empty()) systems = lorenzlab::all_system_ids();
            if (methods.empty()) methods = {"svm", "ukf_gaussian", "pf_laplace"};
            return cmd_experiment(systems, methods, config, seed, out);
        }
        if (pc->parsed()) return cmd_param_convergence(levels, reps, pc_steps, config, seed, out);
        if (rep->parsed()) return cmd_report(in_path, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

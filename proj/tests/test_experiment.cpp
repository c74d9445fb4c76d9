#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "lorenzlab/experiment.hpp"

using namespace lorenzlab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentPlan tiny_plan() {
    ExperimentPlan plan;
    plan.historical_sizes = {50};
    plan.tp_list = {5};
    plan.tf_list = {1, 10};
    plan.n_test = 5;
    plan.filter_repetitions = 1;
    plan.max_repetitions = 1;
    plan.particle_count = 50;
    return plan;
}

}  // namespace

TEST_CASE("benchmark systems carry the documented constants") {
    SystemConfig s1 = build_system("DS1");
    CHECK(s1.params.sigma == 10.0);
    CHECK(s1.params.b == Catch::Approx(8.0 / 3.0));
    CHECK(s1.params.r == 28.0);
    CHECK(s1.stoch_noise.is_point_mass());
    CHECK(variance(s1.obs_noise) == Catch::Approx(0.64));
    CHECK(s1.knowledge == FilterKnowledge::AllKnown);

    SystemConfig s2 = build_system("DS2");
    CHECK(s2.params.sigma == 8.13);
    CHECK(s2.params.b == 0.53);
    CHECK(s2.params.r == 35.23);
    CHECK(variance(s2.obs_noise) == Catch::Approx(1.13 * 1.13));
    CHECK(s2.knowledge == FilterKnowledge::AllUnknown);

    SystemConfig s3 = build_system("DS3");
    CHECK(s3.params.sigma == 12.18);
    CHECK(s3.params.b == 0.52);
    CHECK(s3.params.r == 13.14);
    CHECK(variance(s3.obs_noise) == Catch::Approx(1.0 / 12.0));

    SystemConfig s4 = build_system("DS4");
    CHECK(s4.params.sigma == 4.82);
    CHECK(s4.params.b == 0.63);
    CHECK(s4.params.r == 20.09);
    CHECK(mean(s4.obs_noise) == Catch::Approx(0.0).margin(1e-15));
    CHECK(variance(s4.obs_noise) == Catch::Approx(0.16625));

    SystemConfig s5 = build_system("DS5");
    CHECK(s5.params.sigma == 3.34);
    CHECK(s5.params.b == 0.54);
    CHECK(s5.params.r == 23.49);
    CHECK(mean(s5.obs_noise) == Catch::Approx(0.12));
    CHECK(variance(s5.obs_noise) == Catch::Approx(0.0576));

    SystemConfig s6 = build_system("DS6");
    CHECK(s6.params.sigma == 9.57);
    CHECK(s6.params.b == 3.04);
    CHECK(s6.params.r == 27.32);
    CHECK(variance(s6.stoch_noise) == Catch::Approx(0.01));
    CHECK(variance(s6.obs_noise) == Catch::Approx(0.125));

    CHECK_THROWS_AS(build_system("DS7"), std::invalid_argument);
}

TEST_CASE("rmse examples") {
    std::vector<Vec3> a = {Vec3(1, 2, 3), Vec3(-1, 0, 4)};
    CHECK(compute_rmse(a, a) == 0.0);

    std::vector<Vec3> pred = {Vec3(1, 1, 1)};
    std::vector<Vec3> truth = {Vec3::Zero()};
    CHECK(compute_rmse(pred, truth) == Catch::Approx(1.0));

    pred = {Vec3(3, 0, 0)};
    CHECK(compute_rmse(pred, truth) == Catch::Approx(std::sqrt(3.0)));

    std::vector<Vec3> shorter = {Vec3::Zero()};
    CHECK_THROWS_AS(compute_rmse(a, shorter), std::invalid_argument);
}

TEST_CASE("test index sampling") {
    Rng rng = make_rng(5);
    SECTION("constraints hold and indices are distinct") {
        IndexConstraints c{100, 20, 50};
        auto idx = sample_test_indices(1000, 200, c, rng);
        REQUIRE(idx.size() == 200);
        std::set<std::size_t> seen(idx.begin(), idx.end());
        CHECK(seen.size() == idx.size());
        for (std::size_t i : idx) {
            CHECK(i >= 100);
            CHECK(i <= 949);
        }
    }
    SECTION("a single admissible index is found") {
        IndexConstraints c{0, 10, 5};
        auto idx = sample_test_indices(15, 1, c, rng);
        REQUIRE(idx.size() == 1);
        CHECK(idx[0] == 9);
    }
    SECTION("infeasible requests throw") {
        IndexConstraints c{0, 10, 5};
        CHECK_THROWS_AS(sample_test_indices(15, 2, c, rng), std::invalid_argument);
        CHECK_THROWS_AS(sample_test_indices(14, 1, c, rng), std::invalid_argument);
    }
    SECTION("draws are roughly uniform over the pool") {
        // pool of 20 indices, draw 5 without replacement, 4000 trials
        IndexConstraints c{0, 1, 0};
        std::vector<std::size_t> counts(20, 0);
        const int trials = 4000;
        for (int k = 0; k < trials; ++k)
            for (std::size_t i : sample_test_indices(20, 5, c, rng)) ++counts[i];
        const double p = 5.0 / 20.0;
        const double se = std::sqrt(trials * p * (1.0 - p));
        for (std::size_t i = 0; i < counts.size(); ++i)
            CHECK(std::abs(static_cast<double>(counts[i]) - trials * p) < 4.0 * se);
    }
}

TEST_CASE("repetition data is shaped and reproducible") {
    ExperimentPlan plan = tiny_plan();
    SystemConfig system = build_system("DS3");
    RepetitionData a = make_repetition(plan, system, 0, plan.seed);
    RepetitionData b = make_repetition(plan, system, 0, plan.seed);

    const std::size_t expect =
        plan.max_historical() + plan.max_tp() + plan.max_tf() + 4 * plan.n_test + 1;
    CHECK(a.trajectory.states.size() == expect);
    CHECK(a.observations.observations.size() == expect);
    REQUIRE(a.test_indices.size() == plan.n_test);
    for (std::size_t i = 0; i < expect; ++i) CHECK(a.trajectory.states[i] == b.trajectory.states[i]);
    CHECK(a.test_indices == b.test_indices);
    for (std::size_t idx : a.test_indices) {
        CHECK(idx >= plan.max_historical() + plan.max_tp());
        CHECK(idx + plan.max_tf() < a.trajectory.states.size());
    }
    // a different repetition uses fresh observation noise; DS3 has no
    // process noise, so the underlying trajectory is shared
    RepetitionData c = make_repetition(plan, system, 1, plan.seed);
    CHECK(c.trajectory.states[10] == a.trajectory.states[10]);
    CHECK(c.observations.observations[10] != a.observations.observations[10]);
    RepetitionData d6a = make_repetition(plan, build_system("DS6"), 0, plan.seed);
    RepetitionData d6b = make_repetition(plan, build_system("DS6"), 1, plan.seed);
    CHECK(d6a.trajectory.states[10] != d6b.trajectory.states[10]);
}

TEST_CASE("svm arm record layout and the embedding-cap plateau") {
    ExperimentPlan plan = tiny_plan();
    plan.historical_sizes = {200};
    plan.tp_list = {5, 50, 100};
    plan.tf_list = {1, 5};
    plan.n_test = 10;
    SystemConfig system = build_system("DS1");

    auto records = run_svm_arm(plan, system);
    REQUIRE(records.size() == plan.tp_list.size() * plan.tf_list.size());
    for (const auto& r : records) {
        CHECK(r.method == "svm");
        CHECK(r.system == "DS1");
        REQUIRE(r.historical_size.has_value());
        CHECK(*r.historical_size == 200);
        CHECK(std::isfinite(r.rmse));
        CHECK(r.rmse > 0.0);
        CHECK(r.n_failures == 0);
    }
    // T_p = 50 and T_p = 100 share the capped embedding, hence the model
    auto find = [&](std::size_t tp, std::size_t tf) {
        for (const auto& r : records)
            if (r.tp == tp && r.tf == tf) return r.rmse;
        FAIL("record missing");
        return 0.0;
    };
    for (std::size_t tf : plan.tf_list) {
        CHECK(find(50, tf) == find(100, tf));
    }
}

TEST_CASE("filter arm handles the single-observation window") {
    ExperimentPlan plan = tiny_plan();
    plan.tp_list = {1, 5};
    SystemConfig system = build_system("DS1");

    auto records = run_filter_arm(plan, system, "ukf_gaussian");
    REQUIRE(records.size() == plan.tp_list.size() * plan.tf_list.size());
    for (const auto& r : records) {
        CHECK(r.method == "ukf_gaussian");
        CHECK_FALSE(r.historical_size.has_value());
        CHECK(std::isfinite(r.rmse));
        CHECK(r.n_failures == 0);
    }
}

TEST_CASE("known-parameter filtering is near exact when the noise vanishes") {
    ExperimentPlan plan = tiny_plan();
    plan.ukf_obs_sd = 1e-9;
    plan.assumed_stoch_sd = 0.0;
    SystemConfig system = build_system("DS1");
    system.obs_noise = NoiseSpec{Gaussian{0.0, 1e-9}};

    auto records = run_filter_arm(plan, system, "ukf_gaussian");
    for (const auto& r : records) CHECK(r.rmse < 1e-6);
}

TEST_CASE("filter trace rows and csv schema") {
    ExperimentPlan plan = tiny_plan();
    Rng rng = make_rng(9);

    SECTION("state-only ukf has no parameter or ess columns") {
        SystemConfig system = build_system("DS1");
        RepetitionData data = make_repetition(plan, system, 0, plan.seed);
        std::span<const Vec3> window(data.observations.observations.data(), 10);
        auto rows = filter_trace(plan, system, "ukf_gaussian", window, rng);
        REQUIRE(rows.size() == window.size());
        CHECK(rows.front().t == 0);
        CHECK(rows.back().t == 9);
        for (const auto& r : rows) {
            CHECK_FALSE(r.params.has_value());
            CHECK_FALSE(r.ess.has_value());
        }
    }
    SECTION("dual particle trace reports parameters and ess") {
        SystemConfig system = build_system("DS2");
        RepetitionData data = make_repetition(plan, system, 0, plan.seed);
        std::span<const Vec3> window(data.observations.observations.data(), 10);
        auto rows = filter_trace(plan, system, "pf_laplace", window, rng);
        REQUIRE(rows.size() == window.size());
        for (std::size_t k = 1; k < rows.size(); ++k) {
            REQUIRE(rows[k].params.has_value());
            REQUIRE(rows[k].ess.has_value());
            CHECK(*rows[k].ess >= 1.0);
            CHECK(*rows[k].ess <= static_cast<double>(plan.particle_count) + 1e-9);
        }
        const std::string path = "test_experiment_trace.csv";
        write_filter_trace_csv(rows, path);
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == "t,mean_x,mean_y,mean_z,param_sigma,param_b,param_r,ess");
        std::size_t n = 0;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) ++n;
        CHECK(n == rows.size());
        std::remove(path.c_str());
    }
}

TEST_CASE("parameter convergence bookkeeping") {
    ExperimentPlan plan = tiny_plan();
    auto records = param_convergence_experiment({0, 2}, 2, 40, plan);
    REQUIRE(records.size() == 2 * 2 * 41);

    for (const auto& r : records) {
        // t = 0 records the prior error: exactly level^2 * (4 + 1 + 9) / 3
        if (r.t == 0) CHECK(r.mse == Catch::Approx(r.level * r.level * 14.0 / 3.0).margin(1e-12));
        CHECK(std::isfinite(r.mse));
        CHECK(r.mse >= 0.0);
    }

    const std::string path = "test_experiment_paramconv.csv";
    write_param_convergence_csv(records, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "level,repetition,t,mse");
    std::remove(path.c_str());
}

TEST_CASE("plan round-trips through json and sorts its lists") {
    ExperimentPlan plan = tiny_plan();
    plan.tp_list = {100, 5, 20};
    plan.particle_count = 77;
    plan.ut.alpha = 0.5;
    nlohmann::json j = plan_to_json(plan);
    ExperimentPlan back;
    plan_from_json(j, back);
    CHECK(back.tp_list == std::vector<std::size_t>{5, 20, 100});
    CHECK(back.particle_count == 77);
    CHECK(back.ut.alpha == 0.5);
    CHECK(back.laplace_scale == plan.laplace_scale);
    CHECK(back.param_prior_mean == plan.param_prior_mean);
}

TEST_CASE("results emission is deterministic across reruns") {
    ExperimentPlan plan = tiny_plan();
    SystemConfig system = build_system("DS1");

    auto run_once = [&](const std::string& dir) {
        auto records = run_filter_arm(plan, system, "ukf_gaussian");
        auto svm = run_svm_arm(plan, system);
        records.insert(records.end(), svm.begin(), svm.end());
        emit_results(records, plan, {system.id}, dir);
    };
    run_once("test_experiment_out_a");
    run_once("test_experiment_out_b");

    for (const char* name : {"results.csv", "aggregate.csv", "manifest.json"}) {
        std::string a = slurp(std::string("test_experiment_out_a/") + name);
        std::string b = slurp(std::string("test_experiment_out_b/") + name);
        REQUIRE(!a.empty());
        CHECK(a == b);
    }
    std::filesystem::remove_all("test_experiment_out_a");
    std::filesystem::remove_all("test_experiment_out_b");
}

#include <catch2/catch_amalgamated.hpp>

#include "lorenzlab/lorenz.hpp"

using namespace lorenzlab;

namespace {

const LorenzParams kClassic{10.0, 8.0 / 3.0, 28.0};

// a point on (or very near) the attractor, for randomized step tests
std::vector<Vec3> attractor_states(std::size_t count, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    Trajectory traj = generate_trajectory(Vec3(10.0, 10.0, 25.0), kClassic, 0.01,
                                          2000 + 10 * count, std::nullopt, rng);
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(traj.states[2000 + 10 * i]);
    return out;
}

Vec3 substepped(const Vec3& s, const LorenzParams& p, double dt, int substeps) {
    Vec3 z = s;
    for (int i = 0; i < substeps; ++i) z = rk4_step(z, p, dt / substeps);
    return z;
}

}  // namespace

TEST_CASE("lorenz derivative matches the defining equations") {
    CHECK(lorenz_deriv(Vec3::Zero(), kClassic).norm() == 0.0);

    Vec3 d = lorenz_deriv(Vec3(1, 1, 1), kClassic);
    CHECK(d.x() == Catch::Approx(0.0).margin(1e-15));
    CHECK(d.y() == Catch::Approx(26.0));
    CHECK(d.z() == Catch::Approx(-5.0 / 3.0));

    const double c = std::sqrt(kClassic.b * (kClassic.r - 1.0));
    Vec3 fixed(c, c, kClassic.r - 1.0);
    CHECK(lorenz_deriv(fixed, kClassic).norm() < 1e-12);
}

TEST_CASE("rk4 step basics") {
    Vec3 s(1, 1, 1);
    CHECK(rk4_step(s, kClassic, 0.0) == s);

    const double c = std::sqrt(kClassic.b * (kClassic.r - 1.0));
    Vec3 fixed(c, c, kClassic.r - 1.0);
    CHECK((rk4_step(fixed, kClassic, 0.7) - fixed).norm() < 1e-12);
}

TEST_CASE("rk4 halving the step shrinks the error roughly 2^4-fold") {
    // dt/16 sub-stepping as the reference solution
    auto states = attractor_states(100, 7);
    double ratio_sum = 0.0;
    for (const Vec3& s : states) {
        const double dt = 0.01;
        Vec3 ref = substepped(s, kClassic, dt, 16);
        double e1 = (rk4_step(s, kClassic, dt) - ref).norm();
        double e2 = (substepped(s, kClassic, dt, 2) - ref).norm();
        ratio_sum += e1 / e2;
    }
    double mean_ratio = ratio_sum / states.size();
    CHECK(mean_ratio > 12.0);
    CHECK(mean_ratio < 20.0);
}

TEST_CASE("trajectory generation") {
    Rng rng = make_rng(1);
    SECTION("single noiseless step") {
        Trajectory t = generate_trajectory(Vec3(1, 2, 3), kClassic, 0.01, 1, std::nullopt, rng);
        REQUIRE(t.states.size() == 2);
        CHECK(t.states[0] == Vec3(1, 2, 3));
        CHECK(t.states[1] == rk4_step(Vec3(1, 2, 3), kClassic, 0.01));
    }
    SECTION("point-mass noise equals noiseless") {
        Rng r1 = make_rng(5), r2 = make_rng(5);
        Trajectory a = generate_trajectory(Vec3(1, 1, 1), kClassic, 0.01, 50, std::nullopt, r1);
        Trajectory b = generate_trajectory(Vec3(1, 1, 1), kClassic, 0.01, 50,
                                           NoiseSpec::none(), r2);
        for (std::size_t i = 0; i < a.states.size(); ++i) CHECK(a.states[i] == b.states[i]);
    }
    SECTION("stochastic noise variance matches the spec N(0, 0.1)") {
        NoiseSpec noise{Gaussian{0.0, 0.1}};
        Trajectory t = generate_trajectory(Vec3(10, 10, 25), kClassic, 0.01, 10000, noise, rng);
        double sum_sq = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 1; i < t.states.size(); ++i) {
            Vec3 residual = t.states[i] - rk4_step(t.states[i - 1], kClassic, 0.01);
            sum_sq += residual.squaredNorm();
            count += 3;
        }
        double var = sum_sq / count;
        CHECK(var == Catch::Approx(0.01).epsilon(0.06));
    }
    SECTION("blow-up reports the failing step") {
        CHECK_THROWS_AS(
            generate_trajectory(Vec3(1e3, 1e3, 1e3), kClassic, 10.0, 100, std::nullopt, rng),
            BlowupError);
    }
}

TEST_CASE("observation series") {
    Rng rng = make_rng(2);
    Trajectory traj = generate_trajectory(Vec3(5, 5, 20), kClassic, 0.01, 9999, std::nullopt, rng);

    SECTION("point-mass observation noise is the identity") {
        Rng r = make_rng(3);
        ObservationSeries obs = observe(traj, NoiseSpec::none(), r);
        REQUIRE(obs.observations.size() == traj.states.size());
        for (std::size_t i = 0; i < obs.observations.size(); ++i)
            CHECK(obs.observations[i] == traj.states[i]);
    }
    SECTION("gaussian residual standard deviation ~ 0.80") {
        Rng r = make_rng(4);
        ObservationSeries obs = observe(traj, NoiseSpec{Gaussian{0.0, 0.80}}, r);
        double sum_sq = 0.0;
        for (std::size_t i = 0; i < obs.observations.size(); ++i)
            sum_sq += (obs.observations[i] - traj.states[i]).squaredNorm();
        double sd = std::sqrt(sum_sq / (3.0 * obs.observations.size()));
        CHECK(sd == Catch::Approx(0.80).epsilon(0.03));
    }
    SECTION("uniform residuals stay inside the support") {
        Rng r = make_rng(5);
        ObservationSeries obs = observe(traj, NoiseSpec{Uniform{-0.5, 0.5}}, r);
        for (std::size_t i = 0; i < obs.observations.size(); ++i) {
            Vec3 residual = obs.observations[i] - traj.states[i];
            for (int c = 0; c < 3; ++c) {
                CHECK(residual[c] >= -0.5);
                CHECK(residual[c] <= 0.5);
            }
        }
    }
}

TEST_CASE("identical seeds give bit-identical trajectories and observations") {
    NoiseSpec noise{Gaussian{0.0, 0.1}};
    auto run = [&noise]() {
        Rng rng = make_rng(99);
        Trajectory t = generate_trajectory(Vec3(1, 2, 3), kClassic, 0.01, 200, noise, rng);
        ObservationSeries o = observe(t, NoiseSpec{Gaussian{0.0, 0.8}}, rng);
        return std::pair{t, o};
    };
    auto [t1, o1] = run();
    auto [t2, o2] = run();
    for (std::size_t i = 0; i < t1.states.size(); ++i) {
        CHECK(t1.states[i] == t2.states[i]);
        CHECK(o1.observations[i] == o2.observations[i]);
    }
}

TEST_CASE("csv export carries the expected header") {
    Rng rng = make_rng(1);
    Trajectory t = generate_trajectory(Vec3(1, 1, 1), kClassic, 0.01, 3, std::nullopt, rng);
    ObservationSeries o = observe(t, NoiseSpec::none(), rng);
    const std::string path = "test_dynamics_export.csv";
    export_csv(t, &o, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,x,y,z,obs_x,obs_y,obs_z");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == t.states.size());
    std::remove(path.c_str());
}

#include <doctest.h>

#include <cmath>
#include <set>

#include "passim/scene.hpp"

using namespace passim;

// Frozen against independent arithmetic: lambda = c/f with c = 299792458 m/s,
// f = 28 GHz; guide values divide by n_e = 1.4.
TEST_CASE("derived constants at 28 GHz") {
    auto cfg = SystemConfig::defaults();
    auto d = derive_constants(cfg);
    CHECK(d.lambda_c == doctest::Approx(1.070687350000e-02).epsilon(1e-12));
    CHECK(d.kappa_c == doctest::Approx(5.868366061465e+02).epsilon(1e-12));
    CHECK(d.lambda_g == doctest::Approx(7.647766785714e-03).epsilon(1e-12));
    CHECK(d.kappa_g == doctest::Approx(8.215712486051e+02).epsilon(1e-12));
    CHECK(d.kappa_g == doctest::Approx(d.kappa_c * cfg.n_e).epsilon(1e-14));
}

TEST_CASE("dbm conversion fixed points") {
    CHECK(dbm_to_watts(30.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(dbm_to_watts(0.0) == doctest::Approx(1e-3).epsilon(1e-14));
    CHECK(dbm_to_watts(-90.0) == doctest::Approx(1e-12).epsilon(1e-14));
    CHECK(watts_to_dbm(dbm_to_watts(17.3)) == doctest::Approx(17.3).epsilon(1e-12));
    CHECK_THROWS_AS(watts_to_dbm(0.0), std::invalid_argument);
}

TEST_CASE("defaults match the reference setup") {
    auto cfg = SystemConfig::defaults();
    CHECK(cfg.N == 4);
    CHECK(cfg.M == 4);
    CHECK(cfg.M_r == 8);
    CHECK(cfg.K == 3);
    CHECK(cfg.T == 256);
    CHECK(cfg.P == doctest::Approx(1.0));            // 30 dBm
    CHECK(cfg.sigma0_sq == doctest::Approx(1e-12));  // -90 dBm
    CHECK(cfg.delta == doctest::Approx(1.070687350000e-02 / 2).epsilon(1e-12));
    CHECK(cfg.rho_pa == doctest::Approx(0.5));  // 1/sqrt(M)
    REQUIRE(cfg.gamma.size() == 3);
    CHECK(cfg.gamma[0] == doctest::Approx(3.981071705535).epsilon(1e-12));  // 6 dB
}

TEST_CASE("config json: dbm suffixes, gamma broadcast, unknown key") {
    auto cfg = SystemConfig::from_json_text(R"({
        "P_dbm": 20.0, "sigma0_sq_dbm": -80.0, "gamma_db": 10.0, "K": 2, "M": 2
    })");
    CHECK(cfg.P == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(cfg.sigma0_sq == doctest::Approx(1e-11).epsilon(1e-12));
    REQUIRE(cfg.gamma.size() == 2);
    CHECK(cfg.gamma[1] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(cfg.rho_pa == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(SystemConfig::from_json_text(R"({"p_dbm": 20})"), std::invalid_argument);
    CHECK_THROWS_AS(SystemConfig::from_json_text(R"({"K": 0})"), std::invalid_argument);
    CHECK_THROWS_AS(SystemConfig::from_json_text(R"({"gamma": [1.0, 2.0]})"),
                    std::invalid_argument);  // K = 3 by default

    // Round trip through the emitted JSON preserves everything.
    auto cfg2 = SystemConfig::from_json_text(cfg.to_json_text());
    CHECK(cfg2.P == doctest::Approx(cfg.P).epsilon(1e-15));
    CHECK(cfg2.gamma == cfg.gamma);
}

TEST_CASE("uniform layout endpoints and midpoint") {
    auto cfg = SystemConfig::defaults();
    SUBCASE("M=4 spans [D, D+L]") {
        auto lay = uniform_layout(cfg);
        REQUIRE(lay.x.rows() == 4);
        CHECK(lay.x(0, 0) == doctest::Approx(5.0));
        CHECK(lay.x(1, 0) == doctest::Approx(10.0));
        CHECK(lay.x(2, 0) == doctest::Approx(15.0));
        CHECK(lay.x(3, 0) == doctest::Approx(20.0));
        validate_layout(lay, cfg);
    }
    SUBCASE("M=2") {
        cfg.M = 2;
        cfg.rho_pa = 0.0;
        cfg.finalize();
        auto lay = uniform_layout(cfg);
        CHECK(lay.x(0, 0) == doctest::Approx(5.0));
        CHECK(lay.x(1, 0) == doctest::Approx(20.0));
    }
    SUBCASE("M=1 sits at the midpoint") {
        cfg.M = 1;
        cfg.rho_pa = 0.0;
        cfg.finalize();
        auto lay = uniform_layout(cfg);
        CHECK(lay.x(0, 0) == doctest::Approx(12.5));
    }
}

TEST_CASE("waveguide offsets are symmetric and equally spaced") {
    auto cfg = SystemConfig::defaults();
    auto y = waveguide_y_offsets(cfg);
    REQUIRE(y.size() == 4);
    CHECK(y(0) == doctest::Approx(-7.5));
    CHECK(y(1) == doctest::Approx(-2.5));
    CHECK(y(2) == doctest::Approx(2.5));
    CHECK(y(3) == doctest::Approx(7.5));
    cfg.N = 1;
    CHECK(waveguide_y_offsets(cfg)(0) == doctest::Approx(0.0));
}

TEST_CASE("layout validation catches range and spacing violations") {
    auto cfg = SystemConfig::defaults();
    auto lay = uniform_layout(cfg);
    lay.x(3, 2) = cfg.D + cfg.L + 0.01;
    CHECK_THROWS_AS(validate_layout(lay, cfg), std::invalid_argument);
    lay = uniform_layout(cfg);
    lay.x(1, 0) = lay.x(0, 0) + cfg.delta / 2;
    CHECK_THROWS_AS(validate_layout(lay, cfg), std::invalid_argument);
    // Spacing exactly delta is legal.
    lay = uniform_layout(cfg);
    lay.x(1, 0) = lay.x(0, 0) + cfg.delta;
    validate_layout(lay, cfg);
}

TEST_CASE("scenario sampling: bounds, determinism, seed sensitivity") {
    auto cfg = SystemConfig::defaults();
    auto sc = sample_scenario(cfg, 42);
    REQUIRE(sc.users.size() == 3);
    auto in_area = [&](const Eigen::Vector2d& p) {
        return p.x() >= cfg.D && p.x() <= cfg.D + cfg.D_x && std::abs(p.y()) <= cfg.D_y / 2;
    };
    for (const auto& u : sc.users) CHECK(in_area(u));
    CHECK(in_area(sc.target));

    auto sc2 = sample_scenario(cfg, 42);
    CHECK(sc2.target.x() == sc.target.x());
    CHECK(sc2.users[2].y() == sc.users[2].y());
    CHECK(sc2.beta == sc.beta);

    auto sc3 = sample_scenario(cfg, 43);
    CHECK(sc3.target != sc.target);
}

TEST_CASE("beta follows the round-trip free-space rule") {
    auto cfg = SystemConfig::defaults();
    auto d = derive_constants(cfg);
    auto sc = sample_scenario(cfg, 7);
    double d_t = sc.target.norm();
    CHECK(std::abs(sc.beta) == doctest::Approx(1.0 / (2 * d.kappa_c * d_t)).epsilon(1e-12));
    auto expect = std::polar(1.0 / (2 * d.kappa_c * d_t), -d.kappa_c * d_t);
    CHECK(std::abs(sc.beta - expect) <= 1e-15);

    cfg.beta_override = std::complex<double>(1e-4, -2e-4);
    auto sc2 = sample_scenario(cfg, 7);
    CHECK(sc2.beta == std::complex<double>(1e-4, -2e-4));
    CHECK(sc2.target == sc.target);  // override leaves geometry alone
}

TEST_CASE("counter rng is stateless and splittable") {
    SplitRng r(123);
    CHECK(r.u01(0) == r.u01(0));
    CHECK(r.u01(0) != r.u01(1));
    CHECK(r.split(1).u01(0) != r.split(2).u01(0));
    double mean = 0.0;
    for (int i = 0; i < 4096; ++i) mean += r.u01(i);
    mean /= 4096;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.05));
}

// Shared helpers for the test suite: deterministic Gaussian draws and
// random Hermitian-PSD matrices built on the project's counter RNG.
#pragma once

#include <cmath>
#include <complex>
#include <numbers>

#include <Eigen/Dense>

#include "passim/scene.hpp"

namespace passim::testing {

struct TestRand {
    SplitRng rng;
    std::uint64_t ctr = 0;

    explicit TestRand(std::uint64_t seed) : rng(seed) {}

    double uniform() { return rng.u01(ctr++); }

    double normal() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::complex<double> cnormal() {
        double re = normal(), im = normal();
        return std::complex<double>(re, im) / std::sqrt(2.0);
    }
};

inline Eigen::MatrixXcd random_matrix(int rows, int cols, std::uint64_t seed) {
    TestRand tr(seed);
    Eigen::MatrixXcd B(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            B(i, j) = std::complex<double>(tr.normal(), tr.normal()) / std::sqrt(2.0);
    return B;
}

// Hermitian positive semidefinite with unit-scale trace.
inline Eigen::MatrixXcd random_psd(int n, std::uint64_t seed) {
    Eigen::MatrixXcd B = random_matrix(n, n, seed);
    Eigen::MatrixXcd R = B * B.adjoint();
    return R / R.trace().real() * static_cast<double>(n);
}

inline Eigen::MatrixXd random_sym(int n, std::uint64_t seed) {
    TestRand tr(seed ^ 0x5ca1ab1e);
    Eigen::MatrixXd A(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) A(i, j) = tr.normal();
    return 0.5 * (A + A.transpose());
}

}  // namespace passim::testing

// passim - pinching-antenna ISAC system simulator
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Digital beamforming stage: for fixed antenna positions, jointly optimizes
// the per-user transmit beamformers and the sensing covariance so that the
// position-error bound is minimized subject to per-user SINR targets and a
// total power budget. The relaxation is a semidefinite program (the CRB
// enters through a linear matrix inequality in an auxiliary 2x2 matrix),
// and a closed-form construction recovers rank-one beamformers without
// changing the objective.

#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "passim/conic.hpp"
#include "passim/scene.hpp"
#include "passim/sensing.hpp"

namespace passim {

// Thrown when the SINR targets cannot all be met at the power budget.
// `users` lists the indices whose margin constraints remain violated.
struct InfeasibleDesign : std::runtime_error {
    std::vector<int> users;
    InfeasibleDesign(std::string msg, std::vector<int> u)
        : std::runtime_error(std::move(msg)), users(std::move(u)) {}
};

struct BeamformingSolution {
    Eigen::MatrixXcd W;                      // N x K, beamformer columns
    std::vector<Eigen::MatrixXcd> W_k_psd;   // K Hermitian PSD N x N
    Eigen::MatrixXcd R_s;                    // Hermitian PSD sensing covariance
    Eigen::Matrix2d U;                       // CRB epigraph certificate
    double crb_trace = 0.0;                  // [m^2]

    // Total transmit covariance W*W^H is not the right quantity for the
    // relaxed solution; use the PSD blocks, which cover both cases.
    Eigen::MatrixXcd total_covariance() const;
};

// Semidefinite relaxation of the digital stage together with the diagonal
// scalings applied to the Fisher-information blocks. The raw blocks differ
// by many orders of magnitude, so the LMI is conditioned through a
// congruence with diag(d1*I, d2*I); the reported objective must be
// unscaled by d1^2 to be a CRB trace again.
//
// u_scale additionally splits the U/V variable pair: the solver works with
// U/u_scale and u_scale*V, which keeps both epigraph blocks near unity when
// the achievable Fisher Schur complement is many orders below ||J11|| (tiny
// apertures make one localization direction nearly unobservable and the
// epigraph otherwise spans the same orders inside a single LMI).
struct SdrProblem {
    conic::SdpProblem problem;
    double d1 = 1.0;
    double d2 = 1.0;
    double u_scale = 1.0;
    int N = 0;
    int K = 0;
    double P = 0.0;
    // Block handles inside `problem`.
    std::vector<int> w_blocks;
    int rs_block = -1;
    int u_block = -1;
    int v_block = -1;
};

SdrProblem build_sdr(const Eigen::MatrixXcd& H, const FimCoefficients& coeffs,
                     const Eigen::VectorXd& gamma, double P, double sigma0_sq,
                     double u_scale = 1.0);

// Margin SDP: minimizes the total fractional SINR shortfall over all power
// allocations. A zero optimum certifies the target set is feasible.
struct SinrFeasibility {
    bool feasible = false;
    Eigen::VectorXd deficit;  // per-user shortfall as a fraction of sigma0^2
};

SinrFeasibility check_sinr_feasibility(const Eigen::MatrixXcd& H, const Eigen::VectorXd& gamma,
                                       double P, double sigma0_sq);

// Solves the relaxed problem from explicit channel data. Throws
// InfeasibleDesign when the SINR targets are unattainable and
// std::runtime_error when the solver fails to converge.
BeamformingSolution solve_digital_channels(const Eigen::MatrixXcd& H,
                                           const FimCoefficients& coeffs,
                                           const Eigen::VectorXd& gamma, double P,
                                           double sigma0_sq,
                                           const conic::SdpTols& tols = {});

// Convenience entry: derives channels and Fisher coefficients from the
// scene and solves the relaxed digital stage for the given layout.
BeamformingSolution solve_digital(const SystemConfig& config, const PaLayout& layout,
                                  const Scenario& scenario);

// Closed-form rank-one recovery; preserves the total covariance, the CRB,
// the power, and every user's received signal power exactly.
BeamformingSolution extract_rank_one(const BeamformingSolution& relaxed,
                                     const Eigen::MatrixXcd& H);

// Per-user SINR with the sensing signal treated as interference.
Eigen::VectorXd sinr(const Eigen::MatrixXcd& H, const Eigen::MatrixXcd& W,
                     const Eigen::MatrixXcd& R_s, double sigma0_sq);

}  // namespace passim

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

#pragma once

#include <array>
#include <complex>

#include <Eigen/Dense>

#include "passim/channel.hpp"
#include "passim/scene.hpp"

namespace passim {

// Analytic derivatives of the two-hop target response w.r.t. the target
// position, with the rank-one factors kept alongside the assembled
// matrices: A = a*h^H, A_dot_x = da_dx*h^H + a*dh_dx^H (same for y).
struct TargetDerivatives {
    Eigen::VectorXcd h;               // effective transmit-side target channel
    Eigen::VectorXcd dh_dx, dh_dy;
    Eigen::VectorXcd a, da_dx, da_dy; // receive steering and its derivatives
    Eigen::MatrixXcd A, A_dot_x, A_dot_y;  // M_r x N
    double theta = 0.0;
};

// Assembles derivatives from precomputed transmit-side parts; the steering
// side is rebuilt from the target position. Lets the baseline arrays reuse
// the same Fisher-information machinery.
TargetDerivatives target_derivatives_from_parts(const Eigen::VectorXcd& h,
                                                const Eigen::VectorXcd& dh_dx,
                                                const Eigen::VectorXcd& dh_dy,
                                                const Eigen::Vector2d& target, int M_r);

TargetDerivatives target_derivatives(const Scenario& sc, const PaLayout& layout,
                                     const DerivedConstants& k, double rho, int M_r);

// 4x4 Fisher information for eta = [x_t, y_t, Re(beta), Im(beta)], in the
// 2x2 block form used by the positioning bound.
struct FimBlocks {
    Eigen::Matrix2d J11, J12, J22;
    Eigen::Matrix4d J;
};

FimBlocks fim(const Eigen::MatrixXcd& R, const TargetDerivatives& d, std::complex<double> beta,
              int T, double sigma_s_sq);

struct CrbResult {
    Eigen::Matrix2d crb;  // position block of the inverse FIM [m^2]
    double trace = 0.0;   // [m^2]
    double rcrb = 0.0;    // sqrt(trace) [m]
};

// Schur-complement evaluation: crb = (J11 - J12*J22^{-1}*J12^T)^{-1}.
// Throws std::runtime_error when the target is unobservable (singular J22
// or Schur complement).
CrbResult crb(const FimBlocks& blocks);

// Every FIM entry is linear in R: entry(R) = Re tr(C * R) with the
// Hermitian-symmetrized coefficients below. This is what makes the
// CRB LMI affine in the beamforming variables.
struct FimCoefficients {
    std::array<std::array<Eigen::MatrixXcd, 2>, 2> c11;
    std::array<std::array<Eigen::MatrixXcd, 2>, 2> c12;
    Eigen::MatrixXcd c22;  // J22 = Re tr(c22 * R) * I_2
};

FimCoefficients fim_linear_coefficients(const TargetDerivatives& d, std::complex<double> beta,
                                        int T, double sigma_s_sq);

FimBlocks fim_from_coefficients(const FimCoefficients& c, const Eigen::MatrixXcd& R);

}  // namespace passim

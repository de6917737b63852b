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

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "passim/scene.hpp"

namespace passim {

// Spherical-wave link gain (2*kappa_c)^{-1} * e^{-j*kappa_c*r} / r.
std::complex<double> spherical_entry(double r, const DerivedConstants& k);

// Free-space PA-to-point gains, entry (m, n) for PA m on waveguide n.
// Distances are 3-D: the point sits on the ground plane, PAs at `height`.
struct RawChannel {
    Eigen::MatrixXcd entries;  // M x N
};

RawChannel raw_channel(const PaLayout& layout, const Eigen::Vector2d& point,
                       const DerivedConstants& k);

// Gradients of the raw entries w.r.t. the point's ground coordinates.
struct RawChannelGrad {
    Eigen::MatrixXcd dx, dy;  // M x N each
};

RawChannelGrad raw_channel_grad(const PaLayout& layout, const Eigen::Vector2d& point,
                                const DerivedConstants& k);

// In-waveguide response rho * e^{-j*kappa_g*(x - feed_x)} per PA.
struct WaveguidePhases {
    Eigen::MatrixXcd entries;  // M x N
};

WaveguidePhases waveguide_phases(const PaLayout& layout, const DerivedConstants& k, double rho);

// Effective per-waveguide channel h (dimension N) and its per-PA-index
// decomposition: h = sum_m per_pa[m], [per_pa[m]]_n = phases(m,n)*raw(m,n).
struct EffectiveChannel {
    Eigen::VectorXcd h;
    std::vector<Eigen::VectorXcd> per_pa;  // M vectors of dimension N
};

EffectiveChannel effective_channel(const RawChannel& raw, const WaveguidePhases& phases);

// All K user channels stacked: H is N x K with H = sum_m per_pa[m].
struct UserChannels {
    Eigen::MatrixXcd H;
    std::vector<Eigen::MatrixXcd> per_pa;  // M matrices, N x K
};

UserChannels user_channel_matrix(const PaLayout& layout, const Scenario& sc,
                                 const DerivedConstants& k, double rho);

// Receive ULA response, half-wavelength spacing: [a]_i = e^{-j*pi*(i-1)*sin(theta)}.
struct SteeringVector {
    Eigen::VectorXcd a;
    double theta = 0.0;
};

// Angle of a ground point seen from the receive ULA at the origin.
// Throws for x <= 0 (behind the array plane the angle is undefined).
double target_angle(const Eigen::Vector2d& point);

SteeringVector steering_vector(double theta, int M_r);

// Rank-one two-hop map A = a(theta) * h_t^H (M_r x N).
Eigen::MatrixXcd target_matrix(const Scenario& sc, const PaLayout& layout,
                               const DerivedConstants& k, double rho, int M_r);

// --- conventional-MIMO baselines -------------------------------------------

enum class BsScheme { FullDigital, Hybrid };

// Half-wavelength ULA along the y-axis, centered at the origin, at height
// d_h. FullDigital: N elements, one per RF chain. Hybrid: N*M elements in N
// contiguous M-element subarrays behind phase shifters.
struct BsArray {
    Eigen::Matrix3Xd elem;  // element positions, 3 x E
    int per_chain = 1;      // elements per RF chain
};

BsArray bs_ula(const SystemConfig& cfg, BsScheme scheme);

struct BsChannels {
    BsArray array;
    Eigen::MatrixXcd H_elem;   // E x K per-element user channels
    Eigen::VectorXcd ht_elem;  // E   per-element target channel
    Eigen::VectorXcd dht_dx_elem, dht_dy_elem;
    Eigen::MatrixXcd analog;   // E x N combiner, unit-norm columns

    Eigen::MatrixXcd H() const { return analog.adjoint() * H_elem; }      // N x K
    Eigen::VectorXcd h_t() const { return analog.adjoint() * ht_elem; }   // N
    Eigen::VectorXcd dht_dx() const { return analog.adjoint() * dht_dx_elem; }
    Eigen::VectorXcd dht_dy() const { return analog.adjoint() * dht_dy_elem; }
};

// Initial analog stage: per-element conjugate phase matching toward the
// target, columns scaled to unit norm so RF-chain power equals radiated
// power. Hybrid with M = 1 degenerates to the identity (full digital).
BsChannels baseline_mimo_channel(const Scenario& sc, const SystemConfig& cfg, BsScheme scheme);

// Rebuilds the power-normalized block-diagonal combiner from per-element
// phases (phases.size() == E); used by the hybrid analog refinement.
Eigen::MatrixXcd subarray_analog(const BsArray& array, const Eigen::VectorXd& phases);

}  // namespace passim

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

#include "passim/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace passim {

namespace {
using cplx = std::complex<double>;
const cplx kJ(0.0, 1.0);

double pa_distance(const PaLayout& layout, int m, int n, const Eigen::Vector2d& p) {
    double dx = layout.x(m, n) - p.x();
    double dy = layout.wg_y(n) - p.y();
    return std::sqrt(dx * dx + dy * dy + layout.height * layout.height);
}
}  // namespace

cplx spherical_entry(double r, const DerivedConstants& k) {
    if (!(r > 0.0)) throw std::invalid_argument("channel: zero distance to antenna");
    return std::polar(1.0 / (2.0 * k.kappa_c * r), -k.kappa_c * r);
}

RawChannel raw_channel(const PaLayout& layout, const Eigen::Vector2d& point,
                       const DerivedConstants& k) {
    RawChannel rc;
    rc.entries.resize(layout.x.rows(), layout.x.cols());
    for (int n = 0; n < layout.x.cols(); ++n)
        for (int m = 0; m < layout.x.rows(); ++m)
            rc.entries(m, n) = spherical_entry(pa_distance(layout, m, n, point), k);
    return rc;
}

RawChannelGrad raw_channel_grad(const PaLayout& layout, const Eigen::Vector2d& point,
                                const DerivedConstants& k) {
    RawChannelGrad g;
    g.dx.resize(layout.x.rows(), layout.x.cols());
    g.dy.resize(layout.x.rows(), layout.x.cols());
    for (int n = 0; n < layout.x.cols(); ++n) {
        for (int m = 0; m < layout.x.rows(); ++m) {
            double r = pa_distance(layout, m, n, point);
            if (!(r > 0.0)) throw std::invalid_argument("channel: zero distance to antenna");
            // d/dr of the spherical entry, times dr/d(point coordinate).
            cplx common = -std::polar(1.0 / (2.0 * k.kappa_c), -k.kappa_c * r) *
                          (1.0 / (r * r * r) + kJ * k.kappa_c / (r * r));
            g.dx(m, n) = (point.x() - layout.x(m, n)) * common;
            g.dy(m, n) = (point.y() - layout.wg_y(n)) * common;
        }
    }
    return g;
}

WaveguidePhases waveguide_phases(const PaLayout& layout, const DerivedConstants& k, double rho) {
    WaveguidePhases wp;
    wp.entries.resize(layout.x.rows(), layout.x.cols());
    for (int n = 0; n < layout.x.cols(); ++n)
        for (int m = 0; m < layout.x.rows(); ++m)
            wp.entries(m, n) = std::polar(rho, -k.kappa_g * (layout.x(m, n) - layout.feed_x));
    return wp;
}

EffectiveChannel effective_channel(const RawChannel& raw, const WaveguidePhases& phases) {
    if (raw.entries.rows() != phases.entries.rows() || raw.entries.cols() != phases.entries.cols())
        throw std::invalid_argument("channel: raw/phase shape mismatch");
    const int M = static_cast<int>(raw.entries.rows());
    const int N = static_cast<int>(raw.entries.cols());
    EffectiveChannel ec;
    ec.h = Eigen::VectorXcd::Zero(N);
    ec.per_pa.assign(static_cast<std::size_t>(M), Eigen::VectorXcd::Zero(N));
    for (int m = 0; m < M; ++m) {
        for (int n = 0; n < N; ++n) {
            cplx v = phases.entries(m, n) * raw.entries(m, n);
            ec.per_pa[static_cast<std::size_t>(m)](n) = v;
            ec.h(n) += v;
        }
    }
    return ec;
}

UserChannels user_channel_matrix(const PaLayout& layout, const Scenario& sc,
                                 const DerivedConstants& k, double rho) {
    const int M = static_cast<int>(layout.x.rows());
    const int N = static_cast<int>(layout.x.cols());
    const int K = static_cast<int>(sc.users.size());
    UserChannels uc;
    uc.H = Eigen::MatrixXcd::Zero(N, K);
    uc.per_pa.assign(static_cast<std::size_t>(M), Eigen::MatrixXcd::Zero(N, K));
    WaveguidePhases wp = waveguide_phases(layout, k, rho);
    for (int kk = 0; kk < K; ++kk) {
        EffectiveChannel ec = effective_channel(raw_channel(layout, sc.users[static_cast<std::size_t>(kk)], k), wp);
        uc.H.col(kk) = ec.h;
        for (int m = 0; m < M; ++m) uc.per_pa[static_cast<std::size_t>(m)].col(kk) = ec.per_pa[static_cast<std::size_t>(m)];
    }
    return uc;
}

double target_angle(const Eigen::Vector2d& point) {
    if (!(point.x() > 0.0))
        throw std::invalid_argument("channel: angle undefined for a point with x <= 0");
    return std::atan(point.y() / point.x());
}

SteeringVector steering_vector(double theta, int M_r) {
    if (M_r < 1) throw std::invalid_argument("channel: M_r must be >= 1");
    SteeringVector sv;
    sv.theta = theta;
    sv.a.resize(M_r);
    double s = std::sin(theta);
    for (int i = 0; i < M_r; ++i) sv.a(i) = std::polar(1.0, -std::numbers::pi * i * s);
    return sv;
}

Eigen::MatrixXcd target_matrix(const Scenario& sc, const PaLayout& layout,
                               const DerivedConstants& k, double rho, int M_r) {
    EffectiveChannel ht =
        effective_channel(raw_channel(layout, sc.target, k), waveguide_phases(layout, k, rho));
    SteeringVector a = steering_vector(target_angle(sc.target), M_r);
    return a.a * ht.h.adjoint();
}

// --- conventional-MIMO baselines -------------------------------------------

BsArray bs_ula(const SystemConfig& cfg, BsScheme scheme) {
    DerivedConstants k = derive_constants(cfg);
    BsArray arr;
    arr.per_chain = (scheme == BsScheme::Hybrid) ? cfg.M : 1;
    const int E = cfg.N * arr.per_chain;
    arr.elem.resize(3, E);
    double spacing = k.lambda_c / 2.0;
    for (int i = 0; i < E; ++i) {
        arr.elem(0, i) = 0.0;
        arr.elem(1, i) = (i - (E - 1) / 2.0) * spacing;
        arr.elem(2, i) = cfg.d_h;
    }
    return arr;
}

namespace {
Eigen::VectorXcd elem_channel(const BsArray& arr, const Eigen::Vector2d& p,
                              const DerivedConstants& k) {
    const int E = static_cast<int>(arr.elem.cols());
    Eigen::VectorXcd h(E);
    for (int i = 0; i < E; ++i) {
        Eigen::Vector3d d(p.x() - arr.elem(0, i), p.y() - arr.elem(1, i), -arr.elem(2, i));
        h(i) = spherical_entry(d.norm(), k);
    }
    return h;
}
}  // namespace

Eigen::MatrixXcd subarray_analog(const BsArray& array, const Eigen::VectorXd& phases) {
    const int E = static_cast<int>(array.elem.cols());
    if (phases.size() != E) throw std::invalid_argument("channel: one analog phase per element");
    const int N = E / array.per_chain;
    Eigen::MatrixXcd F = Eigen::MatrixXcd::Zero(E, N);
    double scale = 1.0 / std::sqrt(static_cast<double>(array.per_chain));
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < array.per_chain; ++j) {
            int i = n * array.per_chain + j;
            F(i, n) = std::polar(scale, phases(i));
        }
    return F;
}

BsChannels baseline_mimo_channel(const Scenario& sc, const SystemConfig& cfg, BsScheme scheme) {
    DerivedConstants k = derive_constants(cfg);
    BsChannels bc;
    bc.array = bs_ula(cfg, scheme);
    const int E = static_cast<int>(bc.array.elem.cols());
    const int K = static_cast<int>(sc.users.size());
    bc.H_elem.resize(E, K);
    for (int kk = 0; kk < K; ++kk) bc.H_elem.col(kk) = elem_channel(bc.array, sc.users[static_cast<std::size_t>(kk)], k);
    bc.ht_elem = elem_channel(bc.array, sc.target, k);
    bc.dht_dx_elem.resize(E);
    bc.dht_dy_elem.resize(E);
    const std::complex<double> j(0.0, 1.0);
    for (int i = 0; i < E; ++i) {
        Eigen::Vector3d d(sc.target.x() - bc.array.elem(0, i), sc.target.y() - bc.array.elem(1, i),
                          -bc.array.elem(2, i));
        double r = d.norm();
        std::complex<double> common = -std::polar(1.0 / (2.0 * k.kappa_c), -k.kappa_c * r) *
                                      (1.0 / (r * r * r) + j * k.kappa_c / (r * r));
        bc.dht_dx_elem(i) = d.x() * common;
        bc.dht_dy_elem(i) = d.y() * common;
    }
    if (scheme == BsScheme::FullDigital || bc.array.per_chain == 1) {
        bc.analog = Eigen::MatrixXcd::Identity(E, E);
    } else {
        // Co-phases the subarray toward the target: e^{-j*phi_i} * ht_i real
        // and positive requires phi_i = arg(ht_i).
        Eigen::VectorXd phases(E);
        for (int i = 0; i < E; ++i) phases(i) = std::arg(bc.ht_elem(i));
        bc.analog = subarray_analog(bc.array, phases);
    }
    return bc;
}

}  // namespace passim

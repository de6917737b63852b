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

#include "passim/sensing.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace passim {

namespace {
using cplx = std::complex<double>;
const cplx kJ(0.0, 1.0);

void check_hermitian(const Eigen::MatrixXcd& R) {
    double scale = R.norm();
    if ((R - R.adjoint()).norm() > 1e-10 * (scale > 0 ? scale : 1.0))
        throw std::invalid_argument("sensing: covariance must be Hermitian");
}
}  // namespace

TargetDerivatives target_derivatives_from_parts(const Eigen::VectorXcd& h,
                                                const Eigen::VectorXcd& dh_dx,
                                                const Eigen::VectorXcd& dh_dy,
                                                const Eigen::Vector2d& target, int M_r) {
    TargetDerivatives d;
    d.h = h;
    d.dh_dx = dh_dx;
    d.dh_dy = dh_dy;
    d.theta = target_angle(target);
    d.a = steering_vector(d.theta, M_r).a;

    // Chain rule of the half-wavelength steering phase pi*(i-1)*sin(theta)
    // through theta(x_t, y_t) = arctan(y_t/x_t).
    const double x = target.x(), y = target.y();
    const double rho2 = x * x + y * y;
    const double denom = std::pow(rho2, 1.5);
    cplx fx = kJ * std::numbers::pi * x * y / denom;
    cplx fy = -kJ * std::numbers::pi * x * x / denom;
    d.da_dx.resize(M_r);
    d.da_dy.resize(M_r);
    for (int i = 0; i < M_r; ++i) {
        d.da_dx(i) = fx * static_cast<double>(i) * d.a(i);
        d.da_dy(i) = fy * static_cast<double>(i) * d.a(i);
    }

    d.A = d.a * d.h.adjoint();
    d.A_dot_x = d.da_dx * d.h.adjoint() + d.a * d.dh_dx.adjoint();
    d.A_dot_y = d.da_dy * d.h.adjoint() + d.a * d.dh_dy.adjoint();
    return d;
}

TargetDerivatives target_derivatives(const Scenario& sc, const PaLayout& layout,
                                     const DerivedConstants& k, double rho, int M_r) {
    WaveguidePhases wp = waveguide_phases(layout, k, rho);
    EffectiveChannel ec = effective_channel(raw_channel(layout, sc.target, k), wp);
    RawChannelGrad g = raw_channel_grad(layout, sc.target, k);
    const int N = static_cast<int>(layout.x.cols());
    const int M = static_cast<int>(layout.x.rows());
    Eigen::VectorXcd dhx = Eigen::VectorXcd::Zero(N), dhy = Eigen::VectorXcd::Zero(N);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
            dhx(n) += wp.entries(m, n) * g.dx(m, n);
            dhy(n) += wp.entries(m, n) * g.dy(m, n);
        }
    return target_derivatives_from_parts(ec.h, dhx, dhy, sc.target, M_r);
}

FimBlocks fim(const Eigen::MatrixXcd& R, const TargetDerivatives& d, cplx beta, int T,
              double sigma_s_sq) {
    check_hermitian(R);
    if (T < 1) throw std::invalid_argument("sensing: T must be >= 1");
    const double c0 = 2.0 * static_cast<double>(T) / sigma_s_sq;
    const double c1 = c0 * std::norm(beta);

    const Eigen::MatrixXcd* dots[2] = {&d.A_dot_x, &d.A_dot_y};
    FimBlocks b;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            b.J11(i, j) = c1 * ((*dots[j]) * R * dots[i]->adjoint()).trace().real();
    for (int i = 0; i < 2; ++i) {
        cplx z = ((*dots[i]) * R * d.A.adjoint()).trace();
        b.J12(i, 0) = c0 * (beta * z).real();
        b.J12(i, 1) = c0 * (beta * z).imag();
    }
    double c = c0 * (d.A * R * d.A.adjoint()).trace().real();
    b.J22 = c * Eigen::Matrix2d::Identity();

    b.J.topLeftCorner<2, 2>() = b.J11;
    b.J.topRightCorner<2, 2>() = b.J12;
    b.J.bottomLeftCorner<2, 2>() = b.J12.transpose();
    b.J.bottomRightCorner<2, 2>() = b.J22;
    return b;
}

CrbResult crb(const FimBlocks& blocks) {
    const double c = blocks.J22(0, 0);
    double scale = blocks.J11.norm() + c;
    if (!(c > 1e-14 * scale))
        throw std::runtime_error("sensing: unobservable target (singular reflectivity block)");
    Eigen::Matrix2d schur = blocks.J11 - blocks.J12 * blocks.J12.transpose() / c;
    double det = schur(0, 0) * schur(1, 1) - schur(0, 1) * schur(1, 0);
    if (!(std::abs(det) > 1e-14 * schur.norm() * schur.norm()) || !(det > 0))
        throw std::runtime_error("sensing: unobservable target (singular Schur complement)");
    CrbResult r;
    r.crb(0, 0) = schur(1, 1) / det;
    r.crb(1, 1) = schur(0, 0) / det;
    r.crb(0, 1) = -schur(0, 1) / det;
    r.crb(1, 0) = -schur(1, 0) / det;
    r.trace = r.crb(0, 0) + r.crb(1, 1);
    r.rcrb = std::sqrt(r.trace);
    return r;
}

FimCoefficients fim_linear_coefficients(const TargetDerivatives& d, cplx beta, int T,
                                        double sigma_s_sq) {
    const double c0 = 2.0 * static_cast<double>(T) / sigma_s_sq;
    const double c1 = c0 * std::norm(beta);
    const Eigen::MatrixXcd* dots[2] = {&d.A_dot_x, &d.A_dot_y};
    auto herm = [](const Eigen::MatrixXcd& C) -> Eigen::MatrixXcd {
        return 0.5 * (C + C.adjoint());
    };
    FimCoefficients c;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            c.c11[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                herm(c1 * (dots[i]->adjoint() * (*dots[j])));
    for (int i = 0; i < 2; ++i) {
        Eigen::MatrixXcd base = c0 * beta * (d.A.adjoint() * (*dots[i]));
        c.c12[static_cast<std::size_t>(i)][0] = herm(base);
        c.c12[static_cast<std::size_t>(i)][1] = herm(-kJ * base);
    }
    c.c22 = herm(c0 * (d.A.adjoint() * d.A));
    return c;
}

FimBlocks fim_from_coefficients(const FimCoefficients& c, const Eigen::MatrixXcd& R) {
    auto ev = [&](const Eigen::MatrixXcd& C) { return (C * R).trace().real(); };
    FimBlocks b;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            b.J11(i, j) = ev(c.c11[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    for (int i = 0; i < 2; ++i)
        for (int q = 0; q < 2; ++q)
            b.J12(i, q) = ev(c.c12[static_cast<std::size_t>(i)][static_cast<std::size_t>(q)]);
    b.J22 = ev(c.c22) * Eigen::Matrix2d::Identity();
    b.J.topLeftCorner<2, 2>() = b.J11;
    b.J.topRightCorner<2, 2>() = b.J12;
    b.J.bottomLeftCorner<2, 2>() = b.J12.transpose();
    b.J.bottomRightCorner<2, 2>() = b.J22;
    return b;
}

}  // namespace passim

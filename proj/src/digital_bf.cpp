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

#include "passim/digital_bf.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "passim/channel.hpp"

namespace passim {

namespace {
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::Matrix2d;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using cd = std::complex<double>;

MatrixXcd real_entry(int i, int j) {
    MatrixXcd E = MatrixXcd::Zero(2, 2);
    if (i == j) {
        E(i, i) = 1.0;
    } else {
        E(i, j) = 0.5;
        E(j, i) = 0.5;
    }
    return E;
}
}  // namespace

Eigen::MatrixXcd BeamformingSolution::total_covariance() const {
    MatrixXcd R = R_s;
    for (const auto& Wk : W_k_psd) R += Wk;
    return R;
}

SdrProblem build_sdr(const MatrixXcd& H, const FimCoefficients& coeffs, const VectorXd& gamma,
                     double P, double sigma0_sq, double u_scale) {
    const int N = static_cast<int>(H.rows());
    const int K = static_cast<int>(H.cols());
    if (gamma.size() != K) throw std::invalid_argument("build_sdr: gamma size mismatch");
    if (P <= 0) throw std::invalid_argument("build_sdr: power budget must be positive");
    if (!(u_scale > 0) || !std::isfinite(u_scale))
        throw std::invalid_argument("build_sdr: u_scale must be positive and finite");

    SdrProblem out;
    out.N = N;
    out.K = K;
    out.P = P;
    out.u_scale = u_scale;

    // Condition the Fisher blocks at the isotropic full-power covariance.
    MatrixXcd R0 = (P / N) * MatrixXcd::Identity(N, N);
    FimBlocks blocks0 = fim_from_coefficients(coeffs, R0);
    out.d1 = 1.0 / std::sqrt(std::max(blocks0.J11.norm(), 1e-300));
    out.d2 = 1.0 / std::sqrt(std::max(blocks0.J22.norm(), 1e-300));

    conic::SdpProblem& p = out.problem;
    for (int k = 0; k < K; ++k)
        out.w_blocks.push_back(p.add_hermitian_block("W" + std::to_string(k + 1), N));
    out.rs_block = p.add_hermitian_block("Rs", N);
    out.u_block = p.add_real_block("U", 2);
    out.v_block = p.add_real_block("V", 2);

    p.add_objective(out.v_block, MatrixXcd::Identity(2, 2));

    // All variables are expressed in units of P: the physical covariance is
    // P * (sum_k W_k + R_s), keeping block magnitudes near unity.
    auto fim_terms = [&](const MatrixXcd& coef, double scale) {
        std::vector<conic::LinTerm> terms;
        for (int k = 0; k < K; ++k) terms.push_back({out.w_blocks[static_cast<std::size_t>(k)], scale * P * coef});
        terms.push_back({out.rs_block, scale * P * coef});
        return terms;
    };

    // Four-by-four bound: [[J11 - U, J12], [J12^T, J22]] >= 0 after the
    // diag(d1, d1, d2, d2) congruence.
    int lmi1 = p.add_lmi(4);
    double d11 = out.d1 * out.d1, d12 = out.d1 * out.d2, d22 = out.d2 * out.d2;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j <= i; ++j) {
            // The solver variable is the conditioned matrix d1^2 * U / u_scale,
            // so it enters with a -u_scale coefficient against the scaled J11
            // terms.
            auto terms = fim_terms(coeffs.c11[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], d11);
            terms.push_back({out.u_block, -u_scale * real_entry(i, j)});
            p.set_lmi_entry(lmi1, i, j, std::move(terms), 0.0);
        }
    for (int i = 0; i < 2; ++i)      // row of J12 (column in the lower block)
        for (int j = 0; j < 2; ++j)  // column of J12^T block row
            p.set_lmi_entry(lmi1, 2 + j, i,
                            fim_terms(coeffs.c12[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], d12), 0.0);
    p.set_lmi_entry(lmi1, 2, 2, fim_terms(coeffs.c22, d22), 0.0);
    p.set_lmi_entry(lmi1, 3, 2, {}, 0.0);
    p.set_lmi_entry(lmi1, 3, 3, fim_terms(coeffs.c22, d22), 0.0);

    // Epigraph of tr(U^{-1}): [[V, I], [I, U]] >= 0, minimize tr(V).
    int lmi2 = p.add_lmi(4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j <= i; ++j) {
            p.set_lmi_entry(lmi2, i, j, {{out.v_block, real_entry(i, j)}}, 0.0);
            p.set_lmi_entry(lmi2, 2 + i, 2 + j, {{out.u_block, real_entry(i, j)}}, 0.0);
        }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            p.set_lmi_entry(lmi2, 2 + i, j, {}, i == j ? 1.0 : 0.0);

    // Per-user SINR in covariance form:
    // (1/gamma_k) tr(h h^H W_k) - sum_{i != k} tr(h h^H W_i) - tr(h h^H Rs) >= sigma0^2.
    for (int k = 0; k < K; ++k) {
        if (gamma(k) <= 0) throw std::invalid_argument("build_sdr: SINR targets must be positive");
        MatrixXcd hhH = H.col(k) * H.col(k).adjoint();
        std::vector<conic::LinTerm> terms;
        for (int i = 0; i < K; ++i) {
            double c = (i == k) ? 1.0 / gamma(k) : -1.0;
            terms.push_back({out.w_blocks[static_cast<std::size_t>(i)], c * P * hhH});
        }
        terms.push_back({out.rs_block, -P * hhH});
        p.add_constraint(std::move(terms), conic::Sense::Ge, sigma0_sq);
    }

    // Power budget in normalized units.
    {
        std::vector<conic::LinTerm> terms;
        for (int k = 0; k < K; ++k)
            terms.push_back({out.w_blocks[static_cast<std::size_t>(k)], MatrixXcd::Identity(N, N)});
        terms.push_back({out.rs_block, MatrixXcd::Identity(N, N)});
        p.add_constraint(std::move(terms), conic::Sense::Le, 1.0);
    }
    return out;
}

SinrFeasibility check_sinr_feasibility(const MatrixXcd& H, const VectorXd& gamma, double P,
                                       double sigma0_sq) {
    const int N = static_cast<int>(H.rows());
    const int K = static_cast<int>(H.cols());
    conic::SdpProblem p;
    std::vector<int> wb, vb;
    for (int k = 0; k < K; ++k) wb.push_back(p.add_hermitian_block("W" + std::to_string(k + 1), N));
    for (int k = 0; k < K; ++k) {
        vb.push_back(p.add_real_block("v" + std::to_string(k + 1), 1));
        p.add_objective(vb.back(), MatrixXcd::Ones(1, 1));
    }
    for (int k = 0; k < K; ++k) {
        MatrixXcd hhH = H.col(k) * H.col(k).adjoint();
        std::vector<conic::LinTerm> terms;
        for (int i = 0; i < K; ++i) {
            double c = (i == k) ? 1.0 / gamma(k) : -1.0;
            terms.push_back({wb[static_cast<std::size_t>(i)], c * P * hhH});
        }
        // v_k absorbs any shortfall, measured in units of the noise power.
        terms.push_back({vb[static_cast<std::size_t>(k)], sigma0_sq * MatrixXcd::Ones(1, 1)});
        p.add_constraint(std::move(terms), conic::Sense::Ge, sigma0_sq);
    }
    {
        std::vector<conic::LinTerm> terms;
        for (int k = 0; k < K; ++k)
            terms.push_back({wb[static_cast<std::size_t>(k)], MatrixXcd::Identity(N, N)});
        p.add_constraint(std::move(terms), conic::Sense::Le, 1.0);
    }
    conic::SdpSolution s = conic::solve_sdp(p);
    SinrFeasibility out;
    out.deficit = VectorXd::Zero(K);
    if (s.status != conic::SolveStatus::Optimal)
        throw std::runtime_error("SINR feasibility margin SDP did not converge");
    for (int k = 0; k < K; ++k)
        out.deficit(k) = std::max(0.0, std::real(s.blocks[static_cast<std::size_t>(vb[static_cast<std::size_t>(k)])](0, 0)));
    out.feasible = out.deficit.sum() <= 1e-6 * K;
    return out;
}

namespace {

// Fallback for geometries whose achievable position information is many
// decades below the other Fisher blocks (e.g. a half-wavelength transmit
// aperture observing a far target, which barely resolves range). The CRB
// epigraph then spans those same decades and the interior point cannot
// close its duality gap at any scaling. Recast the stage as information
// maximization: maximize t subject to
//   [[J11 - t * t0 * D, J12], [J12^T, J22]] >= 0
// under the unchanged SINR and power constraints, where D spans the
// eigenvectors of the Schur complement at the isotropic covariance,
// weighted toward the starved direction, and t0 normalizes t to order one.
// At the optimum the bound is tight along the weak direction, so the
// maximizer also minimizes the dominant CRB term. The exact CRB is
// evaluated afterwards from the returned covariance, and acceptance is
// decided by physical feasibility of that covariance rather than by the
// solver's own status, which on these instances reports a stalled gap a
// few decades above target while the primal is already exact.
BeamformingSolution solve_degenerate_rescue(const MatrixXcd& H, const FimCoefficients& coeffs,
                                            const VectorXd& gamma, double P, double sigma0_sq,
                                            const conic::SdpTols& tols) {
    const int N = static_cast<int>(H.rows());
    const int K = static_cast<int>(H.cols());

    MatrixXcd R0 = (P / N) * MatrixXcd::Identity(N, N);
    FimBlocks b0 = fim_from_coefficients(coeffs, R0);
    const double d1 = 1.0 / std::sqrt(std::max(b0.J11.norm(), 1e-300));
    const double d2 = 1.0 / std::sqrt(std::max(b0.J22.norm(), 1e-300));
    Matrix2d S0 = b0.J11 - b0.J12 * b0.J22.ldlt().solve(b0.J12.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix2d> es(Matrix2d(0.5 * (S0 + S0.transpose())));
    const double lw = es.eigenvalues()(0);  // starved direction
    const double ls = es.eigenvalues()(1);
    if (!(ls > 0) || !std::isfinite(ls))
        throw std::runtime_error("digital stage SDP did not converge");
    Eigen::Vector2d u = es.eigenvectors().col(0), v = es.eigenvectors().col(1);
    // Anchor t to the strong eigenvalue; anchoring to the weak one makes the
    // t coefficient vanish against J11 and the iterates run away.
    Matrix2d D = u * u.transpose() + (std::max(lw, 0.0) / ls) * (v * v.transpose());
    const double t0 = ls;

    conic::SdpProblem p;
    std::vector<int> wb;
    for (int k = 0; k < K; ++k)
        wb.push_back(p.add_hermitian_block("W" + std::to_string(k + 1), N));
    int rs = p.add_hermitian_block("Rs", N);
    int tb = p.add_real_block("t", 1);
    p.add_objective(tb, -MatrixXcd::Identity(1, 1));  // maximize t

    // Same normalization as the main formulation: variables in units of P.
    auto fim_terms = [&](const MatrixXcd& coef, double scale) {
        std::vector<conic::LinTerm> terms;
        for (int k = 0; k < K; ++k)
            terms.push_back({wb[static_cast<std::size_t>(k)], scale * P * coef});
        terms.push_back({rs, scale * P * coef});
        return terms;
    };

    int lmi = p.add_lmi(4);
    const double d11 = d1 * d1, d12 = d1 * d2, d22 = d2 * d2;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j <= i; ++j) {
            auto terms =
                fim_terms(coeffs.c11[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], d11);
            terms.push_back({tb, -t0 * d11 * D(i, j) * MatrixXcd::Identity(1, 1)});
            p.set_lmi_entry(lmi, i, j, std::move(terms), 0.0);
        }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            p.set_lmi_entry(
                lmi, 2 + j, i,
                fim_terms(coeffs.c12[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], d12),
                0.0);
    p.set_lmi_entry(lmi, 2, 2, fim_terms(coeffs.c22, d22), 0.0);
    p.set_lmi_entry(lmi, 3, 2, {}, 0.0);
    p.set_lmi_entry(lmi, 3, 3, fim_terms(coeffs.c22, d22), 0.0);

    for (int k = 0; k < K; ++k) {
        MatrixXcd hhH = H.col(k) * H.col(k).adjoint();
        std::vector<conic::LinTerm> terms;
        for (int i = 0; i < K; ++i) {
            double c = (i == k) ? 1.0 / gamma(k) : -1.0;
            terms.push_back({wb[static_cast<std::size_t>(i)], c * P * hhH});
        }
        terms.push_back({rs, -P * hhH});
        p.add_constraint(std::move(terms), conic::Sense::Ge, sigma0_sq);
    }
    {
        std::vector<conic::LinTerm> terms;
        for (int k = 0; k < K; ++k)
            terms.push_back({wb[static_cast<std::size_t>(k)], MatrixXcd::Identity(N, N)});
        terms.push_back({rs, MatrixXcd::Identity(N, N)});
        p.add_constraint(std::move(terms), conic::Sense::Le, 1.0);
    }

    conic::SdpSolution s = conic::solve_sdp(p, tols);

    BeamformingSolution out;
    out.W_k_psd.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        MatrixXcd Wk = P * s.blocks[static_cast<std::size_t>(wb[static_cast<std::size_t>(k)])];
        out.W_k_psd[static_cast<std::size_t>(k)] = 0.5 * (Wk + MatrixXcd(Wk.adjoint()));
    }
    MatrixXcd Rs = P * s.blocks[static_cast<std::size_t>(rs)];
    out.R_s = 0.5 * (Rs + MatrixXcd(Rs.adjoint()));

    MatrixXcd Rtot = out.total_covariance();
    if (!(std::real(Rtot.trace()) <= P * (1.0 + 1e-7)))
        throw std::runtime_error("digital stage SDP did not converge");
    for (int k = 0; k < K; ++k) {
        VectorXcd hk = H.col(k);
        double sig = std::real((hk.adjoint() * out.W_k_psd[static_cast<std::size_t>(k)] * hk)(0));
        double interf = sigma0_sq + std::real((hk.adjoint() * out.R_s * hk)(0));
        for (int i = 0; i < K; ++i)
            if (i != k)
                interf +=
                    std::real((hk.adjoint() * out.W_k_psd[static_cast<std::size_t>(i)] * hk)(0));
        if (!(sig >= gamma(k) * (1.0 - 1e-7) * interf))
            throw std::runtime_error("digital stage SDP did not converge");
    }

    FimBlocks fb = fim_from_coefficients(coeffs, Rtot);
    CrbResult cr = crb(fb);  // throws if the target stays unobservable
    out.crb_trace = cr.trace;
    Matrix2d S = fb.J11 - fb.J12 * fb.J22.ldlt().solve(fb.J12.transpose());
    out.U = 0.5 * (S + S.transpose());

    out.W = MatrixXcd::Zero(N, K);
    for (int k = 0; k < K; ++k) {
        VectorXcd hk = H.col(k);
        double pw = std::real((hk.adjoint() * out.W_k_psd[static_cast<std::size_t>(k)] * hk)(0));
        if (pw > 0) out.W.col(k) = out.W_k_psd[static_cast<std::size_t>(k)] * hk / std::sqrt(pw);
    }
    return out;
}

}  // namespace

BeamformingSolution solve_digital_channels(const MatrixXcd& H, const FimCoefficients& coeffs,
                                           const VectorXd& gamma, double P, double sigma0_sq,
                                           const conic::SdpTols& tols) {
    SinrFeasibility feas = check_sinr_feasibility(H, gamma, P, sigma0_sq);
    if (!feas.feasible) {
        std::vector<int> users;
        std::ostringstream msg;
        msg << "SINR targets infeasible at the power budget; shortfall users:";
        for (int k = 0; k < feas.deficit.size(); ++k)
            if (feas.deficit(k) > 1e-7) {
                users.push_back(k);
                msg << " " << k;
            }
        throw InfeasibleDesign(msg.str(), std::move(users));
    }

    // Solve, rescaling the CRB epigraph pair on a stall. When the achievable
    // Fisher information is poor (degenerate geometries), U and 1/U straddle
    // many orders of magnitude and the interior point loses the central path;
    // the stalled iterate still reveals U's true scale, so fold it into the
    // formulation and re-solve at a conditioned operating point.
    SdrProblem sdr = build_sdr(H, coeffs, gamma, P, sigma0_sq);
    conic::SdpSolution s = conic::solve_sdp(sdr.problem, tols);
    for (int rescale = 0; rescale < 2 && s.status == conic::SolveStatus::MaxIter; ++rescale) {
        Matrix2d Ustall = s.blocks[static_cast<std::size_t>(sdr.u_block)].real();
        double det = Ustall.determinant();
        if (!(det > 0) || !std::isfinite(det)) break;
        const double u_scale = sdr.u_scale * std::sqrt(det);
        if (!(u_scale > 0) || !std::isfinite(u_scale) ||
            std::abs(std::log(u_scale / sdr.u_scale)) < 0.5)
            break;
        sdr = build_sdr(H, coeffs, gamma, P, sigma0_sq, u_scale);
        s = conic::solve_sdp(sdr.problem, tols);
    }
    if (s.status == conic::SolveStatus::Infeasible)
        throw InfeasibleDesign("digital stage SDP reported infeasibility", {});
    if (s.status != conic::SolveStatus::Optimal)
        return solve_degenerate_rescue(H, coeffs, gamma, P, sigma0_sq, tols);

    BeamformingSolution out;
    out.W_k_psd.resize(static_cast<std::size_t>(sdr.K));
    for (int k = 0; k < sdr.K; ++k) {
        MatrixXcd Wk = P * s.blocks[static_cast<std::size_t>(sdr.w_blocks[static_cast<std::size_t>(k)])];
        out.W_k_psd[static_cast<std::size_t>(k)] = 0.5 * (Wk + MatrixXcd(Wk.adjoint()));
    }
    MatrixXcd Rs = P * s.blocks[static_cast<std::size_t>(sdr.rs_block)];
    out.R_s = 0.5 * (Rs + MatrixXcd(Rs.adjoint()));

    // Undo the conditioning congruence: U_phys = u_scale * U_scaled / d1^2.
    Matrix2d Uscaled = s.blocks[static_cast<std::size_t>(sdr.u_block)].real();
    out.U = (sdr.u_scale / (sdr.d1 * sdr.d1)) * Uscaled;
    double det = Uscaled.determinant();
    if (det <= 0 || Uscaled.trace() <= 0)
        throw std::runtime_error("digital stage produced a degenerate CRB certificate");
    out.crb_trace = (sdr.d1 * sdr.d1 / sdr.u_scale) * Uscaled.inverse().trace();

    // Canonical beamformer candidates (exact after rank-one extraction).
    out.W = MatrixXcd::Zero(sdr.N, sdr.K);
    for (int k = 0; k < sdr.K; ++k) {
        VectorXcd hk = H.col(k);
        double power = std::real((hk.adjoint() * out.W_k_psd[static_cast<std::size_t>(k)] * hk)(0));
        if (power > 0)
            out.W.col(k) = out.W_k_psd[static_cast<std::size_t>(k)] * hk / std::sqrt(power);
    }
    return out;
}

BeamformingSolution solve_digital(const SystemConfig& config, const PaLayout& layout,
                                  const Scenario& scenario) {
    DerivedConstants k = derive_constants(config);
    UserChannels uc = user_channel_matrix(layout, scenario, k, config.rho_pa);
    TargetDerivatives d = target_derivatives(scenario, layout, k, config.rho_pa, config.M_r);
    FimCoefficients coeffs =
        fim_linear_coefficients(d, scenario.beta, config.T, config.sigma_s_sq);
    VectorXd gamma = Eigen::Map<const VectorXd>(config.gamma.data(),
                                                static_cast<Eigen::Index>(config.gamma.size()));
    return solve_digital_channels(uc.H, coeffs, gamma, config.P, config.sigma0_sq);
}

BeamformingSolution extract_rank_one(const BeamformingSolution& relaxed, const MatrixXcd& H) {
    const int N = static_cast<int>(H.rows());
    const int K = static_cast<int>(H.cols());
    if (static_cast<int>(relaxed.W_k_psd.size()) != K)
        throw std::invalid_argument("extract_rank_one: user count mismatch");

    BeamformingSolution out = relaxed;
    out.W = MatrixXcd::Zero(N, K);
    MatrixXcd sum_hat = MatrixXcd::Zero(N, N);
    MatrixXcd sum_bar = MatrixXcd::Zero(N, N);
    for (int k = 0; k < K; ++k) {
        const MatrixXcd& Wk = relaxed.W_k_psd[static_cast<std::size_t>(k)];
        VectorXcd hk = H.col(k);
        double power = std::real((hk.adjoint() * Wk * hk)(0));
        if (power <= 1e-300 * std::max(1.0, Wk.norm()))
            throw std::runtime_error("extract_rank_one: degenerate beam for user " +
                                     std::to_string(k));
        VectorXcd wbar = Wk * hk / std::sqrt(power);
        out.W.col(k) = wbar;
        sum_hat += Wk;
        sum_bar += wbar * wbar.adjoint();
        out.W_k_psd[static_cast<std::size_t>(k)] = wbar * wbar.adjoint();
    }
    // Push the removed covariance into the sensing signal so the total
    // covariance (and with it power, SINR budget, and CRB) is untouched.
    out.R_s = relaxed.R_s + sum_hat - sum_bar;
    out.R_s = 0.5 * (out.R_s + MatrixXcd(out.R_s.adjoint()));
    return out;
}

VectorXd sinr(const MatrixXcd& H, const MatrixXcd& W, const MatrixXcd& R_s, double sigma0_sq) {
    const int K = static_cast<int>(H.cols());
    if (W.cols() != K || W.rows() != H.rows())
        throw std::invalid_argument("sinr: shape mismatch");
    VectorXd out(K);
    for (int k = 0; k < K; ++k) {
        VectorXcd hk = H.col(k);
        double signal = std::norm((hk.adjoint() * W.col(k))(0));
        double interf = sigma0_sq + std::real((hk.adjoint() * R_s * hk)(0));
        for (int i = 0; i < K; ++i)
            if (i != k) interf += std::norm((hk.adjoint() * W.col(i))(0));
        out(k) = signal / interf;
    }
    return out;
}

}  // namespace passim

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

#include <doctest.h>

#include <cmath>
#include <complex>
#include <sstream>

#include "passim/conic.hpp"
#include "test_util.hpp"

using namespace passim::conic;
using passim::testing::TestRand;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using cd = std::complex<double>;

namespace {

// Hermitian coefficient that picks out Re X_ij / Im X_ij via tr(C X).
MatrixXcd pick_re(int n, int i, int j) {
    MatrixXcd E = MatrixXcd::Zero(n, n);
    E(i, j) += 0.5;
    E(j, i) += 0.5;
    return E;
}
MatrixXcd pick_im(int n, int i, int j) {
    MatrixXcd E = MatrixXcd::Zero(n, n);
    E(i, j) += cd(0, 0.5);
    E(j, i) += cd(0, -0.5);
    return E;
}
MatrixXd sym_entry(int n, int i, int j) {
    MatrixXd E = MatrixXd::Zero(n, n);
    if (i == j) {
        E(i, i) = 1.0;
    } else {
        E(i, j) = 0.5;
        E(j, i) = 0.5;
    }
    return E;
}

double ellipsoid_value(const VectorXcd& q, const MatrixXcd& Phi, const VectorXcd& b, double d) {
    return std::real((q.adjoint() * Phi * q)(0)) + 2.0 * std::real(b.adjoint().dot(q.conjugate())) + d;
}

}  // namespace

TEST_CASE("hermitian embedding preserves spectrum and inner products") {
    for (int trial = 0; trial < 6; ++trial) {
        int n = 2 + trial % 4;
        MatrixXcd B = passim::testing::random_matrix(n, n, 611 + 2 * trial);
        MatrixXcd H = 0.5 * (B + MatrixXcd(B.adjoint()));
        MatrixXd E = embed_hermitian(H);

        Eigen::SelfAdjointEigenSolver<MatrixXcd> eh(H);
        Eigen::SelfAdjointEigenSolver<MatrixXd> ee(E);
        // Each eigenvalue of H appears twice in the embedding.
        for (int i = 0; i < n; ++i) {
            CHECK(ee.eigenvalues()(2 * i) == doctest::Approx(eh.eigenvalues()(i)).epsilon(1e-10));
            CHECK(ee.eigenvalues()(2 * i + 1) == doctest::Approx(eh.eigenvalues()(i)).epsilon(1e-10));
        }
        CHECK(E.trace() == doctest::Approx(2.0 * H.real().trace()).epsilon(1e-12));
        CHECK((extract_hermitian(E) - H).norm() <= 1e-12 * (1.0 + H.norm()));

        MatrixXcd B2 = passim::testing::random_matrix(n, n, 612 + 2 * trial);
        MatrixXcd H2 = 0.5 * (B2 + MatrixXcd(B2.adjoint()));
        double lhs = (embed_hermitian(H).array() * embed_hermitian(H2).array()).sum();
        double rhs = 2.0 * std::real((H * H2).trace());
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
    MatrixXcd NH = MatrixXcd::Zero(2, 2);
    NH(0, 1) = 1.0;
    CHECK_THROWS_AS(embed_hermitian(NH), std::invalid_argument);
}

TEST_CASE("linear program in nonnegative scalars") {
    SdpProblem p;
    int x1 = p.add_real_block("x1", 1);
    int x2 = p.add_real_block("x2", 1);
    p.add_objective(x1, MatrixXcd::Ones(1, 1));
    p.add_objective(x2, 2.0 * MatrixXcd::Ones(1, 1));
    p.add_constraint({{x1, MatrixXcd::Ones(1, 1)}, {x2, MatrixXcd::Ones(1, 1)}}, Sense::Eq, 1.0);
    SdpSolution s = solve_sdp(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::real(s.blocks[0](0, 0)) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(std::abs(s.blocks[1](0, 0)) <= 1e-7);
    // Dual of the budget row: max y s.t. y <= 1, y <= 2.
    CHECK(s.duals(0) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("inequality senses add slack automatically") {
    {
        SdpProblem p;
        int x = p.add_real_block("x", 1);
        p.add_objective(x, MatrixXcd::Ones(1, 1));
        p.add_constraint({{x, MatrixXcd::Ones(1, 1)}}, Sense::Ge, 3.0);
        SdpSolution s = solve_sdp(p);
        REQUIRE(s.status == SolveStatus::Optimal);
        CHECK(s.objective == doctest::Approx(3.0).epsilon(1e-8));
    }
    {
        SdpProblem p;
        int x = p.add_real_block("x", 1);
        p.add_objective(x, -MatrixXcd::Ones(1, 1));
        p.add_constraint({{x, MatrixXcd::Ones(1, 1)}}, Sense::Le, 5.0);
        SdpSolution s = solve_sdp(p);
        REQUIRE(s.status == SolveStatus::Optimal);
        CHECK(s.objective == doctest::Approx(-5.0).epsilon(1e-8));
        CHECK(std::real(s.blocks[0](0, 0)) == doctest::Approx(5.0).epsilon(1e-7));
    }
}

TEST_CASE("trace minimization over matrices dominating the identity") {
    for (int n : {3, 5}) {
        SdpProblem p;
        int X = p.add_real_block("X", n);
        p.add_objective(X, MatrixXcd::Identity(n, n));
        int lmi = p.add_lmi(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j)
                p.set_lmi_entry(lmi, i, j, {{X, sym_entry(n, i, j).cast<cd>()}},
                                i == j ? -1.0 : 0.0);
        SdpSolution s = solve_sdp(p);
        REQUIRE(s.status == SolveStatus::Optimal);
        CHECK(std::abs(s.objective - n) <= 1e-8 * n);
        CHECK((s.blocks[0] - MatrixXcd::Identity(n, n)).norm() <= 1e-6);
        CHECK(s.max_violation <= 1e-7);
    }
}

TEST_CASE("two-by-two linear matrix inequality with closed-form optimum") {
    // min t subject to [[t, 1], [1, s]] >= 0 and t + s = 3.
    // The PSD condition is t*s >= 1 with t,s >= 0, so t(3-t) >= 1 and
    // the best t is the smaller root (3 - sqrt(5))/2.
    SdpProblem p;
    int t = p.add_real_block("t", 1);
    int sblk = p.add_real_block("s", 1);
    p.add_objective(t, MatrixXcd::Ones(1, 1));
    p.add_constraint({{t, MatrixXcd::Ones(1, 1)}, {sblk, MatrixXcd::Ones(1, 1)}}, Sense::Eq, 3.0);
    int lmi = p.add_lmi(2);
    p.set_lmi_entry(lmi, 0, 0, {{t, MatrixXcd::Ones(1, 1)}}, 0.0);
    p.set_lmi_entry(lmi, 1, 0, {}, 1.0);
    p.set_lmi_entry(lmi, 1, 1, {{sblk, MatrixXcd::Ones(1, 1)}}, 0.0);
    SdpSolution s = solve_sdp(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    double expect = 0.5 * (3.0 - std::sqrt(5.0));
    CHECK(s.objective == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("unset LMI entries are pinned to zero") {
    // [[t, ?], [?, t]] >= I with the off-diagonal left unset forces a
    // diagonal matrix, so the optimum is t = 1.
    SdpProblem p;
    int t = p.add_real_block("t", 1);
    p.add_objective(t, MatrixXcd::Ones(1, 1));
    int lmi = p.add_lmi(2);
    p.set_lmi_entry(lmi, 0, 0, {{t, MatrixXcd::Ones(1, 1)}}, -1.0);
    p.set_lmi_entry(lmi, 1, 1, {{t, MatrixXcd::Ones(1, 1)}}, -1.0);
    SdpSolution s = solve_sdp(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("hermitian dominance problem matches eigenvalue clamp oracle") {
    for (int trial = 0; trial < 4; ++trial) {
        int n = 3 + trial % 2;
        MatrixXcd B = passim::testing::random_matrix(n, n, 907 + trial);
        MatrixXcd M = B + MatrixXcd(B.adjoint());  // mixed-sign spectrum

        // min tr(H) s.t. H >= 0 (cone block), H - Y = M with Y >= 0, i.e. H >= M.
        SdpProblem p;
        int H = p.add_hermitian_block("H", n);
        int Y = p.add_hermitian_block("Y", n);
        p.add_objective(H, MatrixXcd::Identity(n, n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) {
                p.add_constraint({{H, pick_re(n, i, j)}, {Y, -pick_re(n, i, j)}}, Sense::Eq,
                                 std::real(M(i, j)));
                if (i != j)
                    p.add_constraint({{H, pick_im(n, i, j)}, {Y, -pick_im(n, i, j)}}, Sense::Eq,
                                     std::imag(M(i, j)));
            }
        SdpSolution s = solve_sdp(p);
        REQUIRE(s.status == SolveStatus::Optimal);

        Eigen::SelfAdjointEigenSolver<MatrixXcd> es(M);
        VectorXd pos = es.eigenvalues().cwiseMax(0.0);
        MatrixXcd Mplus = es.eigenvectors() * pos.asDiagonal() * es.eigenvectors().adjoint();
        CHECK(s.objective == doctest::Approx(pos.sum()).epsilon(1e-6));
        CHECK((s.blocks[0] - Mplus).norm() <= 1e-5 * (1.0 + Mplus.norm()));
    }
}

TEST_CASE("constructed instances recover a certified optimal value") {
    TestRand rng(1213);
    for (int trial = 0; trial < 5; ++trial) {
        SdpProblem p;
        int R = p.add_real_block("R", 3);
        int H = p.add_hermitian_block("H", 2 + trial % 2);
        int nH = p.block_dim(H);

        // Strictly feasible primal/dual pair by construction.
        std::uint64_t sb = 1213 + 100 * static_cast<std::uint64_t>(trial);
        MatrixXd X0r = passim::testing::random_psd(3, sb).real() + MatrixXd::Identity(3, 3);
        MatrixXcd X0h = passim::testing::random_psd(nH, sb + 1) + MatrixXcd::Identity(nH, nH);
        int mrows = 4;
        std::vector<MatrixXcd> Ar, Ah;
        VectorXd b(mrows + 1), y0(mrows + 1);
        for (int i = 0; i < mrows; ++i) {
            MatrixXcd Br =
                passim::testing::random_matrix(3, 3, sb + 2 + 2 * static_cast<std::uint64_t>(i))
                    .real()
                    .cast<cd>();
            Ar.push_back(0.5 * (Br + MatrixXcd(Br.adjoint())));
            MatrixXcd Bh = passim::testing::random_matrix(
                nH, nH, sb + 3 + 2 * static_cast<std::uint64_t>(i));
            Ah.push_back(0.5 * (Bh + MatrixXcd(Bh.adjoint())));
            b(i) = std::real((Ar[i] * X0r.cast<cd>()).trace() + (Ah[i] * X0h).trace());
            y0(i) = rng.normal();
        }
        // One Le row with interior slack 0.7 and a negative dual multiplier.
        MatrixXcd Aineq = MatrixXcd::Identity(3, 3);
        b(mrows) = std::real((Aineq * X0r.cast<cd>()).trace()) + 0.7;
        y0(mrows) = -std::abs(rng.normal()) - 0.1;

        MatrixXcd Z0r = passim::testing::random_psd(3, sb + 20).real().cast<cd>() +
                        0.5 * MatrixXcd::Identity(3, 3);
        MatrixXcd Z0h =
            passim::testing::random_psd(nH, sb + 21) + 0.5 * MatrixXcd::Identity(nH, nH);
        MatrixXcd Cr = Z0r, Ch = Z0h;
        for (int i = 0; i < mrows; ++i) {
            Cr += y0(i) * Ar[i];
            Ch += y0(i) * Ah[i];
        }
        Cr += y0(mrows) * Aineq;

        p.add_objective(R, Cr);
        p.add_objective(H, Ch);
        for (int i = 0; i < mrows; ++i)
            p.add_constraint({{R, Ar[i]}, {H, Ah[i]}}, Sense::Eq, b(i));
        p.add_constraint({{R, Aineq}}, Sense::Le, b(mrows));

        SdpSolution s = solve_sdp(p);
        REQUIRE(s.status == SolveStatus::Optimal);
        double upper = std::real((Cr * X0r.cast<cd>()).trace() + (Ch * X0h).trace());
        double lower = b.dot(y0);
        double scale = 1.0 + std::abs(upper) + std::abs(lower);
        CHECK(s.objective <= upper + 1e-6 * scale);
        CHECK(s.objective >= lower - 1e-6 * scale);
        CHECK(s.max_violation <= 1e-6 * (1.0 + b.cwiseAbs().maxCoeff()));
        // Returned cone blocks stay PSD up to roundoff.
        for (int blk : {R, H}) {
            Eigen::SelfAdjointEigenSolver<MatrixXcd> es(s.blocks[static_cast<std::size_t>(blk)]);
            CHECK(es.eigenvalues()(0) >= -1e-9 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff()));
        }
        // Near-feasible iterates respect weak duality.
        for (const auto& st : s.trace)
            if (st.pinf <= 1e-7 && st.dinf <= 1e-7)
                CHECK(st.pobj - st.dobj >= -1e-6 * (1.0 + std::abs(st.pobj) + std::abs(st.dobj)));
    }
}

TEST_CASE("infeasible trace constraint is certified") {
    SdpProblem p;
    int X = p.add_real_block("X", 3);
    p.add_objective(X, MatrixXcd::Identity(3, 3));
    p.add_constraint({{X, MatrixXcd::Identity(3, 3)}}, Sense::Eq, -1.0);
    SdpSolution s = solve_sdp(p);
    CHECK(s.status == SolveStatus::Infeasible);
}

TEST_CASE("solver runs are deterministic") {
    auto build = [] {
        SdpProblem p;
        int X = p.add_real_block("X", 4);
        int H = p.add_hermitian_block("H", 3);
        MatrixXcd C = MatrixXcd::Identity(4, 4);
        C(0, 1) = C(1, 0) = 0.25;
        p.add_objective(X, C);
        p.add_objective(H, MatrixXcd::Identity(3, 3));
        p.add_constraint({{X, MatrixXcd::Identity(4, 4)}}, Sense::Eq, 7.0);
        p.add_constraint({{H, MatrixXcd::Identity(3, 3)}}, Sense::Ge, 2.0);
        return p;
    };
    SdpProblem p1 = build(), p2 = build();
    SdpSolution a = solve_sdp(p1), bsol = solve_sdp(p2);
    REQUIRE(a.trace.size() == bsol.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].mu == bsol.trace[i].mu);
        CHECK(a.trace[i].pobj == bsol.trace[i].pobj);
    }
    CHECK((a.blocks[0] - bsol.blocks[0]).norm() == 0.0);
    CHECK(a.objective == bsol.objective);
}

TEST_CASE("problem dump lists structure") {
    SdpProblem p;
    int X = p.add_real_block("X", 2);
    p.add_objective(X, MatrixXcd::Identity(2, 2));
    p.add_constraint({{X, MatrixXcd::Identity(2, 2)}}, Sense::Eq, 1.0);
    int lmi = p.add_lmi(2);
    p.set_lmi_entry(lmi, 0, 0, {{X, MatrixXcd::Identity(2, 2)}}, -0.5);
    std::ostringstream os;
    p.dump(os);
    std::string text = os.str();
    CHECK(text.find("sdp-problem") != std::string::npos);
    CHECK(text.find("block X real-sym dim 2") != std::string::npos);
    CHECK(text.find("lmi dim 2") != std::string::npos);
}

TEST_CASE("builder rejects malformed input") {
    SdpProblem p;
    int X = p.add_real_block("X", 2);
    CHECK_THROWS_AS(p.add_objective(X, MatrixXcd::Identity(3, 3)), std::invalid_argument);
    CHECK_THROWS_AS(p.add_objective(7, MatrixXcd::Identity(2, 2)), std::invalid_argument);
    MatrixXcd Cim = MatrixXcd::Zero(2, 2);
    Cim(0, 1) = cd(0, 1);
    Cim(1, 0) = cd(0, -1);
    CHECK_THROWS_AS(p.add_objective(X, Cim), std::invalid_argument);  // real block, complex coef
    int lmi = p.add_lmi(2);
    CHECK_THROWS_AS(p.set_lmi_entry(lmi, 0, 1, {}, 0.0), std::invalid_argument);  // upper triangle
    CHECK_THROWS_AS(p.add_lmi(0), std::invalid_argument);
}

TEST_CASE("ellipsoid projection: interior point is a fixed point") {
    MatrixXcd Phi = MatrixXcd::Identity(2, 2);
    VectorXcd b = VectorXcd::Zero(2);
    VectorXcd c(2);
    c << cd(0.3, 0.1), cd(-0.2, 0.0);
    EllipsoidProjection r = project_ellipsoid(c, Phi, b, -1.0);
    CHECK((r.q - c).norm() == 0.0);
    CHECK(r.multiplier == 0.0);
}

TEST_CASE("ellipsoid projection: unit sphere has closed form") {
    MatrixXcd Phi = MatrixXcd::Identity(2, 2);
    VectorXcd b = VectorXcd::Zero(2);
    VectorXcd c(2);
    c << cd(2.0, 0.0), cd(0.0, 0.0);
    EllipsoidProjection r = project_ellipsoid(c, Phi, b, -1.0);
    CHECK(std::abs(r.q(0) - cd(1.0, 0.0)) <= 1e-9);
    CHECK(std::abs(r.q(1)) <= 1e-12);
    CHECK(r.multiplier == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(r.constraint_value) <= 1e-10);
}

TEST_CASE("ellipsoid projection satisfies KKT and beats sampled feasible points") {
    TestRand rng(1733);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + trial % 4;
        MatrixXcd Phi = passim::testing::random_psd(n, 1733 + static_cast<std::uint64_t>(trial)) +
                        0.05 * MatrixXcd::Identity(n, n);
        VectorXcd b(n);
        for (int i = 0; i < n; ++i) b(i) = rng.cnormal();
        VectorXcd center = -Phi.ldlt().solve(b);
        double gmin = ellipsoid_value(center, Phi, b, 0.0);
        double d = -gmin - 0.5;  // ensures min of g is -0.5
        VectorXcd c(n);
        for (int i = 0; i < n; ++i) c(i) = center(i) + 2.0 * rng.cnormal();

        EllipsoidProjection r = project_ellipsoid(c, Phi, b, d);
        double gq = ellipsoid_value(r.q, Phi, b, d);
        double scale = 1.0 + std::abs(d);
        CHECK(gq <= 1e-8 * scale);
        CHECK(r.multiplier >= 0.0);
        CHECK(std::abs(r.multiplier * gq) <= 1e-8 * scale);
        VectorXcd stat = (r.q - c) + r.multiplier * (Phi * r.q + b);
        CHECK(stat.norm() <= 1e-8 * (1.0 + c.norm()));
        CHECK(r.kkt_residual <= 1e-8);

        // No sampled feasible point may be closer to c.
        double dist = (r.q - c).norm();
        for (int k = 0; k < 40; ++k) {
            VectorXcd u(n);
            for (int i = 0; i < n; ++i) u(i) = rng.cnormal();
            u /= u.norm();
            double quad = std::real((u.adjoint() * Phi * u)(0));
            double rho = std::sqrt(0.5 / quad);  // g(center + rho*u) = 0
            double sfac = 0.05 + 0.95 * rng.uniform();
            VectorXcd z = center + sfac * rho * u;
            CHECK((z - c).norm() >= dist - 1e-7 * (1.0 + dist));
        }
    }
}

TEST_CASE("ellipsoid projection handles a flat direction in Phi") {
    // Phi singular with b pointing into the null space: the set is unbounded
    // and always nonempty.
    MatrixXcd Phi = MatrixXcd::Zero(2, 2);
    Phi(0, 0) = 1.0;
    VectorXcd b(2);
    b << cd(0.0, 0.0), cd(0.5, 0.0);
    VectorXcd c(2);
    c << cd(1.0, 0.0), cd(2.0, 0.0);
    double d = 10.0;
    EllipsoidProjection r = project_ellipsoid(c, Phi, b, d);
    CHECK(ellipsoid_value(r.q, Phi, b, d) <= 1e-8 * (1.0 + d));
    VectorXcd stat = (r.q - c) + r.multiplier * (Phi * r.q + b);
    CHECK(stat.norm() <= 1e-8 * (1.0 + c.norm()));
}

TEST_CASE("ellipsoid projection rejects an empty set") {
    MatrixXcd Phi = MatrixXcd::Identity(2, 2);
    VectorXcd b = VectorXcd::Zero(2);
    VectorXcd c(2);
    c << cd(1.0, 0.0), cd(0.0, 0.0);
    CHECK_THROWS_AS(project_ellipsoid(c, Phi, b, 1.0), std::runtime_error);
}

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

#include "passim/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace passim::conic {

namespace {
using Eigen::MatrixXd;
using Eigen::MatrixXcd;
using Eigen::VectorXd;
using Eigen::VectorXcd;

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("conic: ") + msg);
}
}  // namespace

MatrixXd embed_hermitian(const MatrixXcd& H) {
    const double scale = H.norm();
    require((H - H.adjoint()).norm() <= 1e-12 * (scale > 0 ? scale : 1.0),
            "embed_hermitian: input not Hermitian");
    const int n = static_cast<int>(H.rows());
    MatrixXd E(2 * n, 2 * n);
    E.topLeftCorner(n, n) = H.real();
    E.bottomRightCorner(n, n) = H.real();
    E.topRightCorner(n, n) = -H.imag();
    E.bottomLeftCorner(n, n) = H.imag();
    return E;
}

MatrixXcd extract_hermitian(const MatrixXd& E) {
    require(E.rows() % 2 == 0 && E.rows() == E.cols(), "extract_hermitian: bad shape");
    const int n = static_cast<int>(E.rows()) / 2;
    MatrixXcd H = 0.5 * (E.topLeftCorner(n, n) + E.bottomRightCorner(n, n)) +
                  std::complex<double>(0, 0.5) *
                      (E.bottomLeftCorner(n, n) - E.topRightCorner(n, n));
    return 0.5 * (H + MatrixXcd(H.adjoint()));
}

// --- problem construction ---------------------------------------------------

void SdpProblem::check_term(const LinTerm& t) const {
    require(t.block >= 0 && t.block < num_blocks(), "term references undeclared block");
    const Block& b = blocks_[static_cast<std::size_t>(t.block)];
    require(t.coef.rows() == b.dim && t.coef.cols() == b.dim, "term coefficient shape mismatch");
    if (b.kind == BlockKind::RealSym)
        require(t.coef.imag().norm() <= 1e-14 * (1.0 + t.coef.norm()),
                "real block takes a real coefficient");
}

int SdpProblem::add_real_block(const std::string& name, int dim) {
    require(dim >= 1, "block dimension must be positive");
    blocks_.push_back({name, BlockKind::RealSym, dim});
    return num_blocks() - 1;
}

int SdpProblem::add_hermitian_block(const std::string& name, int dim) {
    require(dim >= 1, "block dimension must be positive");
    blocks_.push_back({name, BlockKind::ComplexHerm, dim});
    return num_blocks() - 1;
}

void SdpProblem::add_objective(int block, const MatrixXcd& coef) {
    check_term({block, coef});
    objective_.emplace_back(block, coef);
}

int SdpProblem::add_constraint(std::vector<LinTerm> terms, Sense sense, double rhs) {
    for (const auto& t : terms) check_term(t);
    constraints_.push_back({std::move(terms), sense, rhs});
    return static_cast<int>(constraints_.size()) - 1;
}

int SdpProblem::add_lmi(int dim) {
    require(dim >= 1, "LMI dimension must be positive");
    lmis_.push_back({dim, {}});
    return static_cast<int>(lmis_.size()) - 1;
}

void SdpProblem::set_lmi_entry(int lmi, int i, int j, std::vector<LinTerm> terms, double constant) {
    require(lmi >= 0 && lmi < static_cast<int>(lmis_.size()), "unknown LMI");
    Lmi& L = lmis_[static_cast<std::size_t>(lmi)];
    require(i >= 0 && j >= 0 && i < L.dim && j <= i, "LMI entries are set for i >= j only");
    for (const auto& t : terms) check_term(t);
    L.entries.push_back({i, j, std::move(terms), constant});
}

void SdpProblem::dump(std::ostream& os) const {
    os << "sdp-problem v1\n";
    os << "blocks " << blocks_.size() << "\n";
    for (const auto& b : blocks_)
        os << "  block " << b.name << " " << (b.kind == BlockKind::RealSym ? "real-sym" : "herm")
           << " dim " << b.dim << "\n";
    auto put_terms = [&](const std::vector<LinTerm>& terms) {
        for (const auto& t : terms) {
            os << "    term block " << t.block << "\n";
            for (int r = 0; r < t.coef.rows(); ++r) {
                os << "     ";
                for (int c = 0; c < t.coef.cols(); ++c)
                    os << " " << t.coef(r, c).real() << (t.coef(r, c).imag() < 0 ? "-" : "+")
                       << std::abs(t.coef(r, c).imag()) << "i";
                os << "\n";
            }
        }
    };
    os << "objective terms " << objective_.size() << "  (minimize sum of tr(coef*X))\n";
    for (const auto& [b, C] : objective_) put_terms({{b, C}});
    os << "constraints " << constraints_.size() << "\n";
    for (const auto& c : constraints_) {
        os << "  constraint "
           << (c.sense == Sense::Eq ? "==" : (c.sense == Sense::Le ? "<=" : ">=")) << " " << c.rhs
           << "\n";
        put_terms(c.terms);
    }
    os << "lmis " << lmis_.size() << "\n";
    for (const auto& L : lmis_) {
        os << "  lmi dim " << L.dim << "  (affine matrix must be PSD)\n";
        for (const auto& e : L.entries) {
            os << "   entry " << e.i << " " << e.j << " const " << e.constant << "\n";
            put_terms(e.terms);
        }
    }
}

// --- lowering to equality standard form -------------------------------------

namespace {

struct StdTerm {
    int block;
    MatrixXd A;
};

struct StdCon {
    std::vector<StdTerm> terms;
    double rhs;
};

MatrixXd lower_coef(BlockKind kind, const MatrixXcd& coef) {
    if (kind == BlockKind::RealSym) {
        MatrixXd A = coef.real();
        return 0.5 * (A + A.transpose());
    }
    MatrixXcd H = 0.5 * (coef + MatrixXcd(coef.adjoint()));
    return 0.5 * embed_hermitian(H);  // tr(E(C)/2 * E(X)) == tr(C*X)
}

}  // namespace

struct Lowering {
    std::vector<int> dims;          // std block dims
    std::vector<MatrixXd> C;        // std objective per block
    std::vector<StdCon> cons;
    std::vector<int> user_block;    // declared -> std index
    std::vector<BlockKind> kind;
    int n_user_cons = 0;
    std::vector<double> row_scale;
    double obj_scale = 1.0;
    const SdpProblem* src = nullptr;

    explicit Lowering(const SdpProblem& p) : src(&p) {
        // Declared blocks.
        for (int b = 0; b < p.num_blocks(); ++b) {
            user_block.push_back(static_cast<int>(dims.size()));
            kind.push_back(p.block_kind(b));
            dims.push_back(p.block_kind(b) == BlockKind::RealSym ? p.block_dim(b)
                                                                 : 2 * p.block_dim(b));
        }
        C.assign(dims.size(), MatrixXd());
        for (std::size_t i = 0; i < dims.size(); ++i)
            C[i] = MatrixXd::Zero(dims[i], dims[i]);
        for (const auto& [b, coef] : p.objective_)
            C[static_cast<std::size_t>(user_block[static_cast<std::size_t>(b)])] +=
                lower_coef(p.block_kind(b), coef);

        auto lowered_terms = [&](const std::vector<LinTerm>& terms) {
            std::vector<StdTerm> out;
            for (const auto& t : terms)
                out.push_back({user_block[static_cast<std::size_t>(t.block)],
                               lower_coef(p.block_kind(t.block), t.coef)});
            return out;
        };

        // Rows are normalized by their user-data magnitude only. Slack
        // coefficients are appended afterwards at unit size, so rows whose
        // data is many orders below 1 (e.g. noise-power right-hand sides)
        // still register against the solver's relative feasibility norm.
        auto data_scale = [](const std::vector<StdTerm>& terms, double rhs) {
            double s = std::abs(rhs);
            for (const auto& t : terms) s = std::max(s, t.A.norm());
            return (s > 1e-300) ? s : 1.0;
        };

        // User linear constraints; inequalities get 1x1 slack blocks.
        n_user_cons = static_cast<int>(p.constraints_.size());
        for (const auto& c : p.constraints_) {
            StdCon sc{lowered_terms(c.terms), c.rhs};
            double s = data_scale(sc.terms, sc.rhs);
            sc.rhs /= s;
            for (auto& t : sc.terms) t.A /= s;
            if (c.sense != Sense::Eq) {
                int slack = static_cast<int>(dims.size());
                dims.push_back(1);
                C.emplace_back(MatrixXd::Zero(1, 1));
                double sign = (c.sense == Sense::Le) ? 1.0 : -1.0;
                sc.terms.push_back({slack, sign * MatrixXd::Ones(1, 1)});
            }
            cons.push_back(std::move(sc));
            row_scale.push_back(s);
        }

        // LMIs become slack PSD blocks linked entrywise. One shared scale
        // per LMI: dividing every entry by the same factor is a congruence
        // of the slack block, so positive semidefiniteness is untouched.
        for (const auto& L : p.lmis_) {
            int slack = static_cast<int>(dims.size());
            dims.push_back(L.dim);
            C.emplace_back(MatrixXd::Zero(L.dim, L.dim));
            double alpha = 0.0;
            std::vector<std::vector<StdTerm>> entry_terms;
            for (const auto& e : L.entries) {
                entry_terms.push_back(lowered_terms(e.terms));
                alpha = std::max(alpha, data_scale(entry_terms.back(), e.constant));
            }
            if (alpha <= 1e-300) alpha = 1.0;
            std::vector<std::vector<char>> set(static_cast<std::size_t>(L.dim),
                                               std::vector<char>(static_cast<std::size_t>(L.dim), 0));
            for (std::size_t ei = 0; ei < L.entries.size(); ++ei) {
                const auto& e = L.entries[ei];
                require(!set[static_cast<std::size_t>(e.i)][static_cast<std::size_t>(e.j)],
                        "duplicate LMI entry");
                set[static_cast<std::size_t>(e.i)][static_cast<std::size_t>(e.j)] = 1;
                StdCon sc{std::move(entry_terms[ei]), -e.constant / alpha};
                for (auto& t : sc.terms) t.A /= alpha;
                MatrixXd E = MatrixXd::Zero(L.dim, L.dim);
                if (e.i == e.j) {
                    E(e.i, e.i) = -1.0;
                } else {
                    E(e.i, e.j) = -0.5;
                    E(e.j, e.i) = -0.5;
                }
                sc.terms.push_back({slack, E});
                cons.push_back(std::move(sc));
                row_scale.push_back(alpha);
            }
            // Unset entries pin the slack entry to zero.
            for (int i = 0; i < L.dim; ++i)
                for (int j = 0; j <= i; ++j) {
                    if (set[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
                    StdCon sc{{}, 0.0};
                    MatrixXd E = MatrixXd::Zero(L.dim, L.dim);
                    if (i == j) E(i, i) = -1.0;
                    else { E(i, j) = -0.5; E(j, i) = -0.5; }
                    sc.terms.push_back({slack, E});
                    cons.push_back(std::move(sc));
                    row_scale.push_back(alpha);
                }
        }

        double cn = 0.0;
        for (const auto& Cb : C) cn = std::max(cn, Cb.norm());
        obj_scale = (cn > 1e-300) ? cn : 1.0;
        for (auto& Cb : C) Cb /= obj_scale;
    }
};

// --- interior-point solver --------------------------------------------------

namespace {

struct BlockMats {
    std::vector<MatrixXd> m;
    explicit BlockMats(const std::vector<int>& dims) {
        for (int d : dims) m.emplace_back(MatrixXd::Zero(d, d));
    }
    void set_identity(double s) {
        for (auto& X : m) X = s * MatrixXd::Identity(X.rows(), X.cols());
    }
};

double block_dot(const MatrixXd& A, const MatrixXd& B) { return (A.array() * B.array()).sum(); }

// max alpha in (0, 1] with S + alpha*dS >= 0, given S = L L^T.
double psd_step(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& dS, double tau) {
    MatrixXd B = llt.matrixL().solve(dS);
    B = llt.matrixL().solve(MatrixXd(B.transpose()));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (B + MatrixXd(B.transpose())),
                                               Eigen::EigenvaluesOnly);
    double lam_min = es.eigenvalues()(0);
    if (lam_min >= 0) return 1.0;
    return std::min(1.0, -tau / lam_min);
}

}  // namespace

SdpSolution solve_sdp(const SdpProblem& problem, const SdpTols& tols) {
    Lowering low(problem);
    const int nb = static_cast<int>(low.dims.size());
    const int m = static_cast<int>(low.cons.size());
    int n_total = 0, n_max = 1;
    for (int d : low.dims) {
        n_total += d;
        n_max = std::max(n_max, d);
    }

    VectorXd b(m);
    for (int i = 0; i < m; ++i) b(i) = low.cons[static_cast<std::size_t>(i)].rhs;

    auto apply_A = [&](const BlockMats& X) {
        VectorXd v(m);
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (const auto& t : low.cons[static_cast<std::size_t>(i)].terms)
                s += block_dot(t.A, X.m[static_cast<std::size_t>(t.block)]);
            v(i) = s;
        }
        return v;
    };
    auto apply_At = [&](const VectorXd& y, BlockMats& out) {
        for (auto& M : out.m) M.setZero();
        for (int i = 0; i < m; ++i)
            for (const auto& t : low.cons[static_cast<std::size_t>(i)].terms)
                out.m[static_cast<std::size_t>(t.block)] += y(i) * t.A;
    };

    // Identity-scaled strictly interior start.
    double ratio = 1.0;
    for (int i = 0; i < m; ++i) {
        double an = 0.0;
        for (const auto& t : low.cons[static_cast<std::size_t>(i)].terms) an = std::max(an, t.A.norm());
        ratio = std::max(ratio, (1.0 + std::abs(b(i))) / (1.0 + an));
    }
    double cnorm = 0.0;
    for (const auto& Cb : low.C) cnorm = std::max(cnorm, Cb.norm());
    BlockMats X(low.dims), Z(low.dims);
    X.set_identity(std::max({10.0, std::sqrt(static_cast<double>(n_max)), ratio * std::sqrt(static_cast<double>(n_max))}));
    Z.set_identity(std::max({10.0, std::sqrt(static_cast<double>(n_max)), cnorm}));
    VectorXd y = VectorXd::Zero(m);

    BlockMats Rd(low.dims), AtY(low.dims);
    BlockMats dX(low.dims), dZ(low.dims), Wmat(low.dims);
    std::vector<MatrixXd> G(static_cast<std::size_t>(nb)), Gi(static_cast<std::size_t>(nb));
    std::vector<VectorXd> lam(static_cast<std::size_t>(nb));
    std::vector<std::vector<MatrixXd>> Atil(static_cast<std::size_t>(m));

    SdpSolution sol;
    double tau = 0.98;
    int stall = 0;

    auto record = [&](double mu, double pobj, double dobj, double pinf, double dinf, double relgap,
                      double ap, double ad) {
        sol.trace.push_back({mu, pobj, dobj, pinf, dinf, relgap, ap, ad});
    };

    int it = 0;
    double pinf = 0, dinf = 0, relgap = 0;
    for (it = 0; it < tols.max_iter; ++it) {
        VectorXd Rp = b - apply_A(X);
        apply_At(y, AtY);
        double dinf_acc = 0.0;
        for (int bk = 0; bk < nb; ++bk) {
            Rd.m[static_cast<std::size_t>(bk)] = low.C[static_cast<std::size_t>(bk)] -
                                                 Z.m[static_cast<std::size_t>(bk)] -
                                                 AtY.m[static_cast<std::size_t>(bk)];
            dinf_acc += Rd.m[static_cast<std::size_t>(bk)].squaredNorm();
        }
        double pobj = 0.0;
        for (int bk = 0; bk < nb; ++bk)
            pobj += block_dot(low.C[static_cast<std::size_t>(bk)], X.m[static_cast<std::size_t>(bk)]);
        double dobj = b.dot(y);
        double mu = 0.0;
        for (int bk = 0; bk < nb; ++bk)
            mu += block_dot(X.m[static_cast<std::size_t>(bk)], Z.m[static_cast<std::size_t>(bk)]);
        mu /= n_total;
        pinf = Rp.norm() / (1.0 + b.norm());
        dinf = std::sqrt(dinf_acc) / (1.0 + cnorm);
        relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        record(mu, pobj, dobj, pinf, dinf, relgap, 0, 0);

        if (pinf <= tols.feas && dinf <= tols.feas && relgap <= tols.gap) {
            sol.status = SolveStatus::Optimal;
            break;
        }

        // Farkas-type primal infeasibility certificate: A*(y) ~<= 0, b'y > 0.
        if (it >= 5 && dobj > 0) {
            double vnorm = 0.0, lmax = -std::numeric_limits<double>::infinity();
            for (int bk = 0; bk < nb; ++bk) {
                const MatrixXd& V = AtY.m[static_cast<std::size_t>(bk)];
                vnorm = std::max(vnorm, V.norm());
                Eigen::SelfAdjointEigenSolver<MatrixXd> es(V, Eigen::EigenvaluesOnly);
                lmax = std::max(lmax, es.eigenvalues()(es.eigenvalues().size() - 1));
            }
            if (dobj >= 1e-4 * vnorm && lmax <= 1e-9 * std::max(1.0, vnorm)) {
                sol.status = SolveStatus::Infeasible;
                break;
            }
        }

        // Nesterov-Todd scaling per block via Cholesky + SVD.
        bool fail = false;
        for (int bk = 0; bk < nb; ++bk) {
            auto& Xb = X.m[static_cast<std::size_t>(bk)];
            auto& Zb = Z.m[static_cast<std::size_t>(bk)];
            Eigen::LLT<MatrixXd> lx(Xb), lz(Zb);
            if (lx.info() != Eigen::Success || lz.info() != Eigen::Success) {
                fail = true;
                break;
            }
            MatrixXd Lx = lx.matrixL(), Lz = lz.matrixL();
            Eigen::JacobiSVD<MatrixXd> svd(MatrixXd(Lz.transpose() * Lx),
                                           Eigen::ComputeFullU | Eigen::ComputeFullV);
            VectorXd sv = svd.singularValues();
            VectorXd isq = sv.cwiseSqrt().cwiseInverse();
            G[static_cast<std::size_t>(bk)] = Lx * svd.matrixV() * isq.asDiagonal();
            // G^{-1} = diag(sqrt(sv)) V^T Lx^{-1} via triangular solve.
            MatrixXd VtLxi = Lx.triangularView<Eigen::Lower>()
                                 .transpose()
                                 .solve(svd.matrixV())
                                 .transpose();
            Gi[static_cast<std::size_t>(bk)] = sv.cwiseSqrt().asDiagonal() * VtLxi;
            lam[static_cast<std::size_t>(bk)] = sv;
            Wmat.m[static_cast<std::size_t>(bk)] =
                G[static_cast<std::size_t>(bk)] * G[static_cast<std::size_t>(bk)].transpose();
        }
        if (fail) break;  // lost interiority; report best effort

        // Scaled constraint matrices and Schur complement.
        for (int i = 0; i < m; ++i) {
            Atil[static_cast<std::size_t>(i)].clear();
            for (const auto& t : low.cons[static_cast<std::size_t>(i)].terms)
                Atil[static_cast<std::size_t>(i)].push_back(
                    G[static_cast<std::size_t>(t.block)].transpose() * t.A *
                    G[static_cast<std::size_t>(t.block)]);
        }
        MatrixXd S = MatrixXd::Zero(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) {
                double s = 0.0;
                const auto& ti = low.cons[static_cast<std::size_t>(i)].terms;
                const auto& tj = low.cons[static_cast<std::size_t>(j)].terms;
                for (std::size_t a = 0; a < ti.size(); ++a)
                    for (std::size_t c = 0; c < tj.size(); ++c)
                        if (ti[a].block == tj[c].block)
                            s += block_dot(Atil[static_cast<std::size_t>(i)][a],
                                           Atil[static_cast<std::size_t>(j)][c]);
                S(i, j) = s;
                S(j, i) = s;
            }
        Eigen::LDLT<MatrixXd> schur(S);

        // The normal matrix's diagonal can span many decades (constraint rows
        // scaled by noise powers sit next to unit-scale power rows), which
        // costs the factorization several digits; two refinement passes win
        // them back for the price of two extra backsolves.
        auto refine_solve = [&](const VectorXd& rhs) {
            VectorXd sol_v = schur.solve(rhs);
            for (int pass = 0; pass < 2; ++pass) {
                VectorXd resid = rhs - S * sol_v;
                sol_v += schur.solve(resid);
            }
            return sol_v;
        };

        auto solve_direction = [&](const BlockMats& Rc_scaled, VectorXd& dy, BlockMats& dXo,
                                   BlockMats& dZo) {
            // rhs = Rp + A(W Rd W) - A(G Rc G^T)
            VectorXd rhs = Rp;
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (const auto& t : low.cons[static_cast<std::size_t>(i)].terms) {
                    const auto& Wb = Wmat.m[static_cast<std::size_t>(t.block)];
                    const auto& Gb = G[static_cast<std::size_t>(t.block)];
                    s += block_dot(t.A, MatrixXd(Wb * Rd.m[static_cast<std::size_t>(t.block)] * Wb));
                    s -= block_dot(t.A, MatrixXd(Gb * Rc_scaled.m[static_cast<std::size_t>(t.block)] *
                                                 Gb.transpose()));
                }
                rhs(i) += s;
            }
            dy = (m > 0) ? refine_solve(rhs) : VectorXd();
            apply_At(dy, dZo);
            for (int bk = 0; bk < nb; ++bk) {
                dZo.m[static_cast<std::size_t>(bk)] =
                    Rd.m[static_cast<std::size_t>(bk)] - dZo.m[static_cast<std::size_t>(bk)];
                const auto& Gb = G[static_cast<std::size_t>(bk)];
                const auto& Wb = Wmat.m[static_cast<std::size_t>(bk)];
                dXo.m[static_cast<std::size_t>(bk)] =
                    Gb * Rc_scaled.m[static_cast<std::size_t>(bk)] * Gb.transpose() -
                    Wb * dZo.m[static_cast<std::size_t>(bk)] * Wb;
                dXo.m[static_cast<std::size_t>(bk)] =
                    0.5 * (dXo.m[static_cast<std::size_t>(bk)] +
                           MatrixXd(dXo.m[static_cast<std::size_t>(bk)].transpose()));
                dZo.m[static_cast<std::size_t>(bk)] =
                    0.5 * (dZo.m[static_cast<std::size_t>(bk)] +
                           MatrixXd(dZo.m[static_cast<std::size_t>(bk)].transpose()));
            }
        };

        // Predictor: Rc = -lambda (so G Rc G^T = -X).
        BlockMats Rc(low.dims);
        for (int bk = 0; bk < nb; ++bk)
            Rc.m[static_cast<std::size_t>(bk)] =
                MatrixXd(VectorXd(-lam[static_cast<std::size_t>(bk)]).asDiagonal());
        VectorXd dy_a;
        solve_direction(Rc, dy_a, dX, dZ);

        std::vector<Eigen::LLT<MatrixXd>> lltX(static_cast<std::size_t>(nb)),
            lltZ(static_cast<std::size_t>(nb));
        for (int bk = 0; bk < nb; ++bk) {
            lltX[static_cast<std::size_t>(bk)].compute(X.m[static_cast<std::size_t>(bk)]);
            lltZ[static_cast<std::size_t>(bk)].compute(Z.m[static_cast<std::size_t>(bk)]);
        }
        double ap = 1.0, ad = 1.0;
        for (int bk = 0; bk < nb; ++bk) {
            ap = std::min(ap, psd_step(lltX[static_cast<std::size_t>(bk)],
                                       dX.m[static_cast<std::size_t>(bk)], tau));
            ad = std::min(ad, psd_step(lltZ[static_cast<std::size_t>(bk)],
                                       dZ.m[static_cast<std::size_t>(bk)], tau));
        }
        double mu_aff = 0.0;
        for (int bk = 0; bk < nb; ++bk)
            mu_aff += block_dot(
                MatrixXd(X.m[static_cast<std::size_t>(bk)] + ap * dX.m[static_cast<std::size_t>(bk)]),
                MatrixXd(Z.m[static_cast<std::size_t>(bk)] + ad * dZ.m[static_cast<std::size_t>(bk)]));
        mu_aff = std::max(mu_aff / n_total, 0.0);
        double sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 1e-6, 0.999);

        // Corrector with Mehrotra second-order term.
        for (int bk = 0; bk < nb; ++bk) {
            const auto& Gb = G[static_cast<std::size_t>(bk)];
            const auto& Gib = Gi[static_cast<std::size_t>(bk)];
            MatrixXd dXh = Gib * dX.m[static_cast<std::size_t>(bk)] * Gib.transpose();
            MatrixXd dZh = Gb.transpose() * dZ.m[static_cast<std::size_t>(bk)] * Gb;
            const VectorXd& l = lam[static_cast<std::size_t>(bk)];
            MatrixXd H = -0.5 * (dXh * dZh + dZh * dXh);
            for (int r = 0; r < H.rows(); ++r) H(r, r) += sigma * mu - l(r) * l(r);
            for (int r = 0; r < H.rows(); ++r)
                for (int c = 0; c < H.cols(); ++c)
                    H(r, c) /= 0.5 * (l(r) + l(c));
            Rc.m[static_cast<std::size_t>(bk)] = 0.5 * (H + MatrixXd(H.transpose()));
        }
        VectorXd dy;
        solve_direction(Rc, dy, dX, dZ);
        ap = 1.0;
        ad = 1.0;
        for (int bk = 0; bk < nb; ++bk) {
            ap = std::min(ap, psd_step(lltX[static_cast<std::size_t>(bk)],
                                       dX.m[static_cast<std::size_t>(bk)], tau));
            ad = std::min(ad, psd_step(lltZ[static_cast<std::size_t>(bk)],
                                       dZ.m[static_cast<std::size_t>(bk)], tau));
        }
        for (int bk = 0; bk < nb; ++bk) {
            X.m[static_cast<std::size_t>(bk)] += ap * dX.m[static_cast<std::size_t>(bk)];
            Z.m[static_cast<std::size_t>(bk)] += ad * dZ.m[static_cast<std::size_t>(bk)];
        }
        if (m > 0) y += ad * dy;
        sol.trace.back().alpha_p = ap;
        sol.trace.back().alpha_d = ad;

        if (std::min(ap, ad) < 1e-7) {
            if (++stall >= 3) { ++it; break; }
        } else {
            stall = 0;
        }
    }

    sol.iterations = it;
    if (sol.status != SolveStatus::Optimal && sol.status != SolveStatus::Infeasible) {
        if (pinf <= tols.accept_feas && dinf <= tols.accept_feas && relgap <= tols.accept_gap)
            sol.status = SolveStatus::Optimal;
        else
            sol.status = SolveStatus::MaxIter;
    }
    sol.duality_gap = relgap;

    // Report in original (unscaled) units.
    double pobj_raw = 0.0;
    for (int bk = 0; bk < nb; ++bk)
        pobj_raw += block_dot(low.C[static_cast<std::size_t>(bk)], X.m[static_cast<std::size_t>(bk)]);
    sol.objective = pobj_raw * low.obj_scale;

    sol.blocks.resize(static_cast<std::size_t>(problem.num_blocks()));
    for (int bdecl = 0; bdecl < problem.num_blocks(); ++bdecl) {
        const MatrixXd& Xb = X.m[static_cast<std::size_t>(low.user_block[static_cast<std::size_t>(bdecl)])];
        if (problem.block_kind(bdecl) == BlockKind::RealSym)
            sol.blocks[static_cast<std::size_t>(bdecl)] =
                (0.5 * (Xb + MatrixXd(Xb.transpose()))).cast<std::complex<double>>();
        else
            sol.blocks[static_cast<std::size_t>(bdecl)] = extract_hermitian(Xb);
    }
    sol.duals.resize(low.n_user_cons);
    for (int i = 0; i < low.n_user_cons; ++i)
        sol.duals(i) = y(i) * low.obj_scale / low.row_scale[static_cast<std::size_t>(i)];

    // Max violation over the user-level constraints, unscaled.
    double viol = 0.0;
    {
        VectorXd v = apply_A(X);
        for (int i = 0; i < m; ++i) {
            double raw = (v(i) - b(i)) * low.row_scale[static_cast<std::size_t>(i)];
            viol = std::max(viol, std::abs(raw));
        }
    }
    sol.max_violation = viol;
    return sol;
}

// --- ellipsoid projection ---------------------------------------------------

EllipsoidProjection project_ellipsoid(const VectorXcd& c, const MatrixXcd& Phi,
                                      const VectorXcd& b, double d) {
    const int n = static_cast<int>(c.size());
    require(Phi.rows() == n && Phi.cols() == n && b.size() == n, "project_ellipsoid: shape mismatch");
    double phinorm = Phi.norm();
    require((Phi - Phi.adjoint()).norm() <= 1e-10 * (phinorm > 0 ? phinorm : 1.0),
            "project_ellipsoid: Phi not Hermitian");

    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(0.5 * (Phi + MatrixXcd(Phi.adjoint())));
    VectorXd w = es.eigenvalues().cwiseMax(0.0);  // PSD up to roundoff
    VectorXcd ct = es.eigenvectors().adjoint() * c;
    VectorXcd bt = es.eigenvectors().adjoint() * b;

    auto qt_of = [&](double lam) {
        VectorXcd q(n);
        for (int i = 0; i < n; ++i) q(i) = (ct(i) - lam * bt(i)) / (1.0 + lam * w(i));
        return q;
    };
    auto g_of = [&](const VectorXcd& qt) {
        double v = d;
        for (int i = 0; i < n; ++i)
            v += w(i) * std::norm(qt(i)) + 2.0 * std::real(std::conj(bt(i)) * qt(i));
        return v;
    };
    auto gprime = [&](double lam) {
        double v = 0.0;
        for (int i = 0; i < n; ++i) {
            std::complex<double> qi = (ct(i) - lam * bt(i)) / (1.0 + lam * w(i));
            std::complex<double> dqi = (-bt(i) - w(i) * ct(i)) / std::pow(1.0 + lam * w(i), 2);
            v += 2.0 * std::real(std::conj(w(i) * qi + bt(i)) * dqi);
        }
        return v;
    };

    EllipsoidProjection out;
    double g0 = g_of(ct);
    double scale = std::max({1.0, std::abs(g0), std::abs(d)});
    if (g0 <= 0.0) {
        out.q = c;
        out.multiplier = 0.0;
        out.constraint_value = g0;
        out.kkt_residual = 0.0;
        return out;
    }

    // Feasibility: min over q of g equals the lambda -> inf limit.
    double gmin = d;
    bool unbounded_drift = false;
    for (int i = 0; i < n; ++i) {
        if (w(i) > 1e-14 * std::max(1.0, w.maxCoeff())) {
            gmin -= std::norm(bt(i)) / w(i);
        } else if (std::abs(bt(i)) > 1e-14) {
            unbounded_drift = true;  // linear descent direction: always feasible
        }
    }
    if (!unbounded_drift && gmin > -1e-12 * scale)
        throw std::runtime_error("project_ellipsoid: constraint set is empty");

    // Bracket then safeguarded Newton on the monotone secular function.
    double lo = 0.0, hi = 1.0;
    while (g_of(qt_of(hi)) > 0.0) {
        lo = hi;
        hi *= 4.0;
        if (hi > 1e18) throw std::runtime_error("project_ellipsoid: multiplier overflow");
    }
    double lam = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        double g = g_of(qt_of(lam));
        if (std::abs(g) <= 1e-14 * scale) break;
        if (g > 0) lo = lam; else hi = lam;
        double gp = gprime(lam);
        double next = (gp < 0) ? lam - g / gp : 0.5 * (lo + hi);
        lam = (next > lo && next < hi) ? next : 0.5 * (lo + hi);
        if (hi - lo <= 1e-16 * std::max(1.0, hi)) break;
    }

    VectorXcd qt = qt_of(lam);
    out.q = es.eigenvectors() * qt;
    out.multiplier = lam;
    out.constraint_value = g_of(qt);
    // Stationarity (q - c) + lam*(Phi q + b) = 0 holds by construction;
    // report the achieved residual as a cross-check.
    out.kkt_residual =
        ((out.q - c) + lam * (Phi * out.q + b)).norm() / std::max(1.0, c.norm());
    return out;
}

}  // namespace passim::conic

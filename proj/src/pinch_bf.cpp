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

#include "passim/pinch_bf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "passim/channel.hpp"
#include "passim/conic.hpp"
#include "passim/sensing.hpp"

namespace passim {

namespace {
using cplx = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;
const cplx kJ(0.0, 1.0);
constexpr double kInf = std::numeric_limits<double>::infinity();

// Receive-side constants of the Fisher information. The steering vector
// depends only on the target, so while antenna positions move these six
// scalars stay fixed.
struct ASide {
    double s_aa = 0.0;   // a^H a
    cplx s_ad[2];        // a^H da_i
    cplx s_dd[2][2];     // da_i^H da_j
    double c0 = 0.0, c1 = 0.0;
    cplx beta;
};

// Transmit-side quadratic forms in the fixed covariance R. Together with
// ASide they determine the whole 4x4 Fisher information, so moving one
// antenna only requires rank-one updates of these six scalars.
struct Forms {
    cplx P;        // h^H R h
    cplx G[2];     // h^H R dh_i
    cplx D[2][2];  // D[j][i] = dh_j^H R dh_i
};

// tr(CRB) from the scalar forms; +inf when the target is unobservable
// (mirrors the guards of crb()).
double crb_trace_from(const ASide& A, const Forms& f) {
    Eigen::Matrix2d J11, J12;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            cplx t = f.P * A.s_dd[i][j] + f.G[i] * A.s_ad[j] +
                     std::conj(f.G[j]) * std::conj(A.s_ad[i]) + f.D[j][i] * A.s_aa;
            J11(i, j) = A.c1 * t.real();
        }
    for (int i = 0; i < 2; ++i) {
        cplx z = f.P * A.s_ad[i] + std::conj(f.G[i]) * A.s_aa;
        J12(i, 0) = A.c0 * (A.beta * z).real();
        J12(i, 1) = A.c0 * (A.beta * z).imag();
    }
    const double c = A.c0 * f.P.real() * A.s_aa;
    if (!(c > 1e-14 * (J11.norm() + c))) return kInf;
    Eigen::Matrix2d schur = J11 - J12 * J12.transpose() / c;
    double det = schur(0, 0) * schur(1, 1) - schur(0, 1) * schur(1, 0);
    if (!(std::abs(det) > 1e-14 * schur.norm() * schur.norm()) || !(det > 0)) return kInf;
    return (schur(0, 0) + schur(1, 1)) / det;
}

// Coordinate-descent engine for the antenna positions. Holds the per-PA
// channel contributions, the aggregate target-channel vectors, and the
// quadratic forms above; evaluating a candidate position touches a single
// vector entry, so the objective update is O(1) instead of O(M_r N^2).
class XStepEngine {
  public:
    XStepEngine(const SystemConfig& cfg, const Scenario& sc, const DerivedConstants& k,
                MatrixXcd R, double c_h, double grid_divisor, std::optional<int> discrete_Z)
        : R_(std::move(R)),
          inv_ch_(1.0 / c_h),
          kc_(k.kappa_c),
          kg_(k.kappa_g),
          rho_amp_(cfg.rho_pa),
          xmin_(cfg.D),
          xmax_(cfg.D + cfg.L),
          delta_(cfg.delta),
          tgx_(sc.target.x()),
          tgy_(sc.target.y()),
          M_(cfg.M),
          N_(cfg.N),
          K_(static_cast<int>(sc.users.size())),
          discrete_Z_(discrete_Z) {
        if (!(grid_divisor >= 1.0))
            throw std::invalid_argument("pinch: grid divisor must be >= 1");
        if (discrete_Z_ && *discrete_Z_ < 1)
            throw std::invalid_argument("pinch: discrete lattice needs Z >= 1");
        ux_.resize(static_cast<std::size_t>(K_));
        uy_.resize(static_cast<std::size_t>(K_));
        for (int u = 0; u < K_; ++u) {
            ux_[static_cast<std::size_t>(u)] = sc.users[static_cast<std::size_t>(u)].x();
            uy_[static_cast<std::size_t>(u)] = sc.users[static_cast<std::size_t>(u)].y();
        }
        lat_step_ = k.lambda_c / grid_divisor;
        lat_count_ = static_cast<int>(std::floor(cfg.L / lat_step_ + 1e-9)) + 1;
        gold_tol_ = k.lambda_c / (10.0 * grid_divisor);
        cache_.resize(static_cast<std::size_t>(N_));
        scratch_.resize(static_cast<std::size_t>(K_));

        TargetDerivatives td0 = target_derivatives_from_parts(
            VectorXcd::Zero(N_), VectorXcd::Zero(N_), VectorXcd::Zero(N_), sc.target, cfg.M_r);
        const VectorXcd* da[2] = {&td0.da_dx, &td0.da_dy};
        aside_.s_aa = td0.a.squaredNorm();
        for (int i = 0; i < 2; ++i) {
            aside_.s_ad[i] = td0.a.dot(*da[i]);
            for (int j = 0; j < 2; ++j) aside_.s_dd[i][j] = da[i]->dot(*da[j]);
        }
        aside_.c0 = 2.0 * static_cast<double>(cfg.T) / cfg.sigma_s_sq;
        aside_.c1 = aside_.c0 * std::norm(sc.beta);
        aside_.beta = sc.beta;
    }

    void set_layout(const PaLayout& layout) {
        X_ = layout;
        h2_ = layout.height * layout.height;
        feed_x_ = layout.feed_x;
        wgy_ = layout.wg_y;
        Ct_.resize(M_, N_);
        Ctx_.resize(M_, N_);
        Cty_.resize(M_, N_);
        Cu_.assign(static_cast<std::size_t>(K_), MatrixXcd(M_, N_));
        for (int n = 0; n < N_; ++n)
            for (int m = 0; m < M_; ++m) {
                contribs_at(n, X_.x(m, n), Ct_(m, n), Ctx_(m, n), Cty_(m, n), scratch_.data());
                for (int u = 0; u < K_; ++u) Cu_[static_cast<std::size_t>(u)](m, n) = scratch_[static_cast<std::size_t>(u)];
            }
        refresh();
    }

    const PaLayout& layout() const { return X_; }

    double crb_trace() const { return crb_trace_from(aside_, forms_); }

    // H_m for the current positions, in normalized units.
    MatrixXcd normalized_per_pa(int m) const {
        MatrixXcd out(N_, K_);
        for (int n = 0; n < N_; ++n)
            for (int u = 0; u < K_; ++u) out(n, u) = Cu_[static_cast<std::size_t>(u)](m, n) * inv_ch_;
        return out;
    }

    // sum_m ||Qm - Hm||_F^2 in normalized units.
    double penalty_total(const std::vector<MatrixXcd>& Qm) const {
        double s = 0.0;
        for (int m = 0; m < M_; ++m)
            for (int n = 0; n < N_; ++n)
                for (int u = 0; u < K_; ++u)
                    s += std::norm(Qm[static_cast<std::size_t>(m)](n, u) -
                                   Cu_[static_cast<std::size_t>(u)](m, n) * inv_ch_);
        return s;
    }

    struct Search {
        double x = 0.0;
        double total = 0.0, crbv = 0.0, pen = 0.0;
    };

    // Minimizes tr(CRB) + inv_rho * sum_k |Qm(n,k) - Hm(n,k)|^2 over the
    // neighbor-feasible positions of antenna (m, n), everything else fixed.
    Search search_pa(int m, int n, const MatrixXcd& Qm, double inv_rho) const {
        const double x_cur = X_.x(m, n);
        double lo = xmin_, hi = xmax_;
        if (m > 0) {
            const double xp = X_.x(m - 1, n);
            lo = xp + delta_;
            // validate_layout() compares spacings with no slack, so nudge
            // until the rounded sum really clears delta.
            while (lo - xp < delta_) lo = std::nextafter(lo, kInf);
            lo = std::max(lo, xmin_);
        }
        if (m + 1 < M_) {
            const double xn = X_.x(m + 1, n);
            hi = xn - delta_;
            while (xn - hi < delta_) hi = std::nextafter(hi, -kInf);
            hi = std::min(hi, xmax_);
        }

        // Base state for the rank-one form updates.
        const cplx whn = wh_(n), wxn = wx_(n), wyn = wy_(n);
        const cplx Rnn = R_(n, n);
        const cplx c_t0 = Ct_(m, n), c_tx = Ctx_(m, n), c_ty = Cty_(m, n);

        auto eval = [&](cplx t0, cplx tx, cplx ty, const cplx* u, Eigen::Index ustride) -> Search {
            const cplx ah = t0 - c_t0, ax = tx - c_tx, ay = ty - c_ty;
            Forms f = forms_;
            f.P += ah * std::conj(whn) + std::conj(ah) * whn + std::conj(ah) * ah * Rnn;
            f.G[0] += ax * std::conj(whn) + std::conj(ah) * wxn + std::conj(ah) * ax * Rnn;
            f.G[1] += ay * std::conj(whn) + std::conj(ah) * wyn + std::conj(ah) * ay * Rnn;
            f.D[0][0] += ax * std::conj(wxn) + std::conj(ax) * wxn + std::conj(ax) * ax * Rnn;
            f.D[0][1] += ay * std::conj(wxn) + std::conj(ax) * wyn + std::conj(ax) * ay * Rnn;
            f.D[1][0] += ax * std::conj(wyn) + std::conj(ay) * wxn + std::conj(ay) * ax * Rnn;
            f.D[1][1] += ay * std::conj(wyn) + std::conj(ay) * wyn + std::conj(ay) * ay * Rnn;
            Search out;
            out.crbv = crb_trace_from(aside_, f);
            out.pen = 0.0;
            for (int u_i = 0; u_i < K_; ++u_i)
                out.pen += std::norm(Qm(n, u_i) - u[u_i * ustride] * inv_ch_);
            out.total = out.crbv + inv_rho * out.pen;
            return out;
        };
        auto eval_direct = [&](double x) -> Search {
            cplx t0, tx, ty;
            contribs_at(n, x, t0, tx, ty, scratch_.data());
            Search s = eval(t0, tx, ty, scratch_.data(), 1);
            s.x = x;
            return s;
        };

        // The incumbent is always a candidate, so the update never
        // degrades the objective.
        Search best;
        {
            for (int u = 0; u < K_; ++u) scratch_[static_cast<std::size_t>(u)] = Cu_[static_cast<std::size_t>(u)](m, n);
            best = eval(c_t0, c_tx, c_ty, scratch_.data(), 1);
            best.x = x_cur;
        }
        if (!(hi >= lo)) return best;  // defensive: empty interval keeps the incumbent

        auto consider = [&](const Search& s) {
            if (s.total < best.total) best = s;
        };

        if (discrete_Z_) {
            const double step = (xmax_ - xmin_) / static_cast<double>(*discrete_Z_);
            for (int i = 0; i <= *discrete_Z_; ++i) {
                const double x = xmin_ + step * i;
                if (x < lo || x > hi) continue;
                consider(eval_direct(x));
            }
            return best;
        }

        double spacing = lat_step_;
        const double interval = hi - lo;
        if (interval <= 50.0 * lat_step_) {
            // Short interval: local uniform grid, 51 points inclusive.
            spacing = interval / 50.0;
            for (int i = 0; i <= 50; ++i) consider(eval_direct(lo + interval * i / 50.0));
        } else {
            build_cache(n);
            const WgCache& c = cache_[static_cast<std::size_t>(n)];
            int i0 = static_cast<int>(std::ceil((lo - xmin_) / lat_step_ - 1e-12));
            int i1 = static_cast<int>(std::floor((hi - xmin_) / lat_step_ + 1e-12));
            i0 = std::max(i0, 0);
            i1 = std::min(i1, lat_count_ - 1);
            for (int i = i0; i <= i1; ++i) {
                const double x = xmin_ + lat_step_ * i;
                if (x < lo || x > hi) continue;
                Search s = eval(c.t0(i), c.tx(i), c.ty(i), c.u.data() + i, c.u.rows());
                s.x = x;
                consider(s);
            }
            consider(eval_direct(lo));
            consider(eval_direct(hi));
        }

        // Golden-section refinement around the best grid point.
        double gl = std::max(lo, best.x - spacing), gr = std::min(hi, best.x + spacing);
        const double invphi = 0.6180339887498949;
        if (gr - gl > gold_tol_) {
            double x1 = gr - invphi * (gr - gl), x2 = gl + invphi * (gr - gl);
            Search f1 = eval_direct(x1), f2 = eval_direct(x2);
            consider(f1);
            consider(f2);
            for (int it = 0; it < 80 && gr - gl > gold_tol_; ++it) {
                if (f1.total <= f2.total) {
                    gr = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = gr - invphi * (gr - gl);
                    f1 = eval_direct(x1);
                    consider(f1);
                } else {
                    gl = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = gl + invphi * (gr - gl);
                    f2 = eval_direct(x2);
                    consider(f2);
                }
            }
        }
        return best;
    }

    void apply(int m, int n, double x) {
        X_.x(m, n) = x;
        contribs_at(n, x, Ct_(m, n), Ctx_(m, n), Cty_(m, n), scratch_.data());
        for (int u = 0; u < K_; ++u) Cu_[static_cast<std::size_t>(u)](m, n) = scratch_[static_cast<std::size_t>(u)];
        refresh();
    }

    bool optimize_pa(int m, int n, const MatrixXcd& Qm, double inv_rho) {
        Search s = search_pa(m, n, Qm, inv_rho);
        if (s.x == X_.x(m, n)) return false;
        apply(m, n, s.x);
        return true;
    }

  private:
    struct WgCache {
        bool built = false;
        VectorXcd t0, tx, ty;
        MatrixXcd u;  // lat_count x K, column-major => row stride lat_count
    };

    // Contribution of a single PA on waveguide n at position x to the
    // target channel entry, its target-position derivatives, and the K
    // user channel entries. Formulas match the channel module exactly.
    void contribs_at(int n, double x, cplx& t0, cplx& tx, cplx& ty, cplx* u) const {
        const cplx wp = std::polar(rho_amp_, -kg_ * (x - feed_x_));
        const double dx = x - tgx_, dy = wgy_(n) - tgy_;
        const double r = std::sqrt(dx * dx + dy * dy + h2_);
        if (!(r > 0.0)) {
            t0 = tx = ty = cplx(std::numeric_limits<double>::quiet_NaN(), 0.0);
        } else {
            t0 = wp * std::polar(1.0 / (2.0 * kc_ * r), -kc_ * r);
            const cplx common = -std::polar(1.0 / (2.0 * kc_), -kc_ * r) *
                                (1.0 / (r * r * r) + kJ * kc_ / (r * r));
            tx = wp * ((tgx_ - x) * common);
            ty = wp * ((tgy_ - wgy_(n)) * common);
        }
        for (int u_i = 0; u_i < K_; ++u_i) {
            const double ddx = x - ux_[static_cast<std::size_t>(u_i)];
            const double ddy = wgy_(n) - uy_[static_cast<std::size_t>(u_i)];
            const double rr = std::sqrt(ddx * ddx + ddy * ddy + h2_);
            u[u_i] = (rr > 0.0) ? wp * std::polar(1.0 / (2.0 * kc_ * rr), -kc_ * rr)
                                : cplx(std::numeric_limits<double>::quiet_NaN(), 0.0);
        }
    }

    // Rebuilds the aggregates and quadratic forms from the stored per-PA
    // contributions. O(N^2 + M N K), so running it after every accepted
    // move keeps the incremental path free of drift.
    void refresh() {
        h_ = Ct_.colwise().sum().transpose();
        dhx_ = Ctx_.colwise().sum().transpose();
        dhy_ = Cty_.colwise().sum().transpose();
        wh_ = R_ * h_;
        wx_ = R_ * dhx_;
        wy_ = R_ * dhy_;
        forms_.P = h_.dot(wh_);
        forms_.G[0] = h_.dot(wx_);
        forms_.G[1] = h_.dot(wy_);
        forms_.D[0][0] = dhx_.dot(wx_);
        forms_.D[0][1] = dhx_.dot(wy_);
        forms_.D[1][0] = dhy_.dot(wx_);
        forms_.D[1][1] = dhy_.dot(wy_);
    }

    void build_cache(int n) const {
        WgCache& c = cache_[static_cast<std::size_t>(n)];
        if (c.built) return;
        c.t0.resize(lat_count_);
        c.tx.resize(lat_count_);
        c.ty.resize(lat_count_);
        c.u.resize(lat_count_, K_);
        std::vector<cplx> buf(static_cast<std::size_t>(K_));
        for (int i = 0; i < lat_count_; ++i) {
            contribs_at(n, xmin_ + lat_step_ * i, c.t0(i), c.tx(i), c.ty(i), buf.data());
            for (int u = 0; u < K_; ++u) c.u(i, u) = buf[static_cast<std::size_t>(u)];
        }
        c.built = true;
    }

    MatrixXcd R_;
    double inv_ch_;
    double kc_, kg_, rho_amp_;
    double xmin_, xmax_, delta_;
    double tgx_, tgy_;
    int M_, N_, K_;
    std::optional<int> discrete_Z_;
    double lat_step_ = 0.0, gold_tol_ = 0.0;
    int lat_count_ = 0;
    std::vector<double> ux_, uy_;
    ASide aside_;

    PaLayout X_;
    double h2_ = 0.0, feed_x_ = 0.0;
    Eigen::VectorXd wgy_;
    MatrixXcd Ct_, Ctx_, Cty_;       // per-PA contributions, M x N
    std::vector<MatrixXcd> Cu_;      // per user, M x N
    VectorXcd h_, dhx_, dhy_;        // aggregates, dimension N
    VectorXcd wh_, wx_, wy_;         // R * aggregates
    Forms forms_;
    mutable std::vector<WgCache> cache_;
    mutable std::vector<cplx> scratch_;
};

double sq_dist(const VectorXcd& a, const VectorXcd& b) { return (a - b).squaredNorm(); }
}  // namespace

VectorXcd sca_update_q(const VectorXcd& q0, const VectorXcd& c, const MatrixXcd& W,
                       const MatrixXcd& R_s, int user, double gamma_k, double sigma0_sq,
                       double eps, int max_iter) {
    const int N = static_cast<int>(q0.size());
    const int K = static_cast<int>(W.cols());
    if (W.rows() != N || R_s.rows() != N || R_s.cols() != N || c.size() != N)
        throw std::invalid_argument("sca: dimension mismatch");
    if (user < 0 || user >= K) throw std::invalid_argument("sca: user index out of range");
    if (!(gamma_k > 0)) throw std::invalid_argument("sca: SINR target must be positive");

    MatrixXcd Phi = R_s;
    for (int i = 0; i < K; ++i)
        if (i != user) Phi += W.col(i) * W.col(i).adjoint();
    Phi = 0.5 * (Phi + MatrixXcd(Phi.adjoint()));
    const VectorXcd wk = W.col(user);
    const double inv_g = 1.0 / gamma_k;
    auto quad_of = [&](const VectorXcd& q) {
        return std::real(q.dot(Phi * q)) - inv_g * std::norm(wk.dot(q));
    };

    // Shortcut: when the target itself meets the SINR constraint the
    // projection is the identity.
    if (quad_of(c) + sigma0_sq <= 0.0) return c;

    // SCA from a given feasible expansion point; each round projects onto
    // the convexified constraint, which is exact, so the distance to c is
    // non-increasing. Returns the fixed point and its distance.
    auto run = [&](VectorXcd q) -> std::pair<VectorXcd, double> {
        double prev = sq_dist(q, c);
        for (int it = 0; it < max_iter; ++it) {
            // The expansion point must satisfy the original constraint,
            // which every projection output does by construction.
            // Rounding can leave it a hair on the wrong side, so rescale
            // q up (the quadratic part is strictly negative there).
            cplx wq = wk.dot(q);
            double quad = std::real(q.dot(Phi * q)) - inv_g * std::norm(wq);
            if (quad + sigma0_sq > 0.0) {
                if (!(quad < 0.0))
                    throw std::invalid_argument(
                        "sca: expansion point violates the SINR constraint");
                const double t = std::sqrt((sigma0_sq * (1.0 + 1e-10) + 1e-30) / -quad);
                if (t > 1.0) {
                    q *= t;
                    wq = wk.dot(q);
                }
            }
            VectorXcd b = -inv_g * wk * wq;
            const double d = inv_g * std::norm(wq) + sigma0_sq;
            q = conic::project_ellipsoid(c, Phi, b, d).q;
            const double cur = sq_dist(q, c);
            if (prev - cur < eps * std::max(prev, 1e-300)) break;
            prev = cur;
        }
        return {q, sq_dist(q, c)};
    };

    // The feasible set is nonconvex (signal-dominated "sheets" around the
    // beam direction), and SCA stays inside the sheet of its expansion
    // point. Start from the carried point and from the feasibility-scaled
    // beam direction aligned with c, and keep the better fixed point; when
    // c's own ray reaches the set, try that sheet as well.
    std::pair<VectorXcd, double> best(q0, kInf);
    auto consider = [&](const VectorXcd& start) {
        std::pair<VectorXcd, double> r = run(start);
        if (r.second < best.second) best = std::move(r);
    };
    consider(q0);
    const double quad_c = quad_of(c);
    if (quad_c < 0.0) {
        const double t = std::sqrt((sigma0_sq * (1.0 + 1e-10) + 1e-30) / -quad_c);
        consider(t * c);
    }
    const double quad_w = quad_of(wk);
    if (quad_w < 0.0) {
        const double s = std::sqrt((sigma0_sq * (1.0 + 1e-10) + 1e-30) / -quad_w);
        const cplx align = wk.dot(c);
        const cplx phase = (std::abs(align) > 0) ? align / std::abs(align) : cplx(1.0, 0.0);
        consider(s * phase * wk);
    }
    return best.first;
}

std::vector<MatrixXcd> closed_form_qm(const MatrixXcd& Q, const std::vector<MatrixXcd>& H_m) {
    const std::size_t M = H_m.size();
    if (M == 0) throw std::invalid_argument("qm update: need at least one antenna");
    MatrixXcd sum = MatrixXcd::Zero(Q.rows(), Q.cols());
    for (const auto& H : H_m) {
        if (H.rows() != Q.rows() || H.cols() != Q.cols())
            throw std::invalid_argument("qm update: shape mismatch");
        sum += H;
    }
    const MatrixXcd B = (Q - sum) / static_cast<double>(M + 1);
    std::vector<MatrixXcd> out;
    out.reserve(M);
    for (const auto& H : H_m) out.push_back(H + B);
    return out;
}

PaObjective eval_pa_objective(const SystemConfig& cfg, const Scenario& sc, PaLayout layout,
                              const BeamformingSolution& digital,
                              const std::vector<MatrixXcd>& Q_m_norm, double c_h, double rho_pen,
                              int m, int n, double x) {
    if (m < 0 || m >= cfg.M || n < 0 || n >= cfg.N)
        throw std::invalid_argument("pinch: antenna index out of range");
    if (!(rho_pen > 0) || !(c_h > 0))
        throw std::invalid_argument("pinch: penalty factor and channel scale must be positive");
    layout.x(m, n) = x;
    const DerivedConstants k = derive_constants(cfg);
    const MatrixXcd R = digital.total_covariance();
    TargetDerivatives td = target_derivatives(sc, layout, k, cfg.rho_pa, cfg.M_r);
    PaObjective out;
    out.crb_trace = crb(fim(R, td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
    UserChannels uc = user_channel_matrix(layout, sc, k, cfg.rho_pa);
    const MatrixXcd& Hm = uc.per_pa[static_cast<std::size_t>(m)];
    const MatrixXcd& Qm = Q_m_norm[static_cast<std::size_t>(m)];
    out.penalty = 0.0;
    for (int u = 0; u < static_cast<int>(sc.users.size()); ++u)
        out.penalty += std::norm(Qm(n, u) - Hm(n, u) / c_h);
    out.total = out.crb_trace + out.penalty / rho_pen;
    return out;
}

GridSearchResult grid_search_pa(const SystemConfig& cfg, const Scenario& sc,
                                const PaLayout& layout, const BeamformingSolution& digital,
                                const std::vector<MatrixXcd>& Q_m_norm, double c_h, double rho_pen,
                                int m, int n, const PinchOptions& opt) {
    if (m < 0 || m >= cfg.M || n < 0 || n >= cfg.N)
        throw std::invalid_argument("pinch: antenna index out of range");
    if (static_cast<int>(Q_m_norm.size()) != cfg.M)
        throw std::invalid_argument("pinch: need one Q_m per antenna index");
    if (!(rho_pen > 0) || !(c_h > 0))
        throw std::invalid_argument("pinch: penalty factor and channel scale must be positive");
    validate_layout(layout, cfg);
    const DerivedConstants k = derive_constants(cfg);
    XStepEngine eng(cfg, sc, k, digital.total_covariance(), c_h, opt.grid_divisor,
                    opt.x_window_lambda, opt.discrete_Z);
    eng.set_layout(layout);
    XStepEngine::Search s =
        eng.search_pa(m, n, Q_m_norm[static_cast<std::size_t>(m)], 1.0 / rho_pen);
    GridSearchResult out;
    out.x = s.x;
    out.objective.total = s.total;
    out.objective.crb_trace = s.crbv;
    out.objective.penalty = s.pen;
    return out;
}

PinchResult penalty_loop(const SystemConfig& cfg, const Scenario& sc, const PaLayout& layout0,
                         const BeamformingSolution& digital, const PinchOptions& opt) {
    const int N = cfg.N, M = cfg.M;
    const int K = static_cast<int>(sc.users.size());
    if (static_cast<int>(cfg.gamma.size()) != K || !(cfg.rho_pa > 0))
        throw std::invalid_argument("pinch: config must be finalized for this scenario");
    if (digital.W.rows() != N || digital.W.cols() != K)
        throw std::invalid_argument("pinch: digital stage shape mismatch");
    if (!(opt.mu > 0.0 && opt.mu < 1.0))
        throw std::invalid_argument("pinch: penalty shrink factor must lie in (0, 1)");
    validate_layout(layout0, cfg);
    const DerivedConstants k = derive_constants(cfg);
    const MatrixXcd R = digital.total_covariance();

    // Channel normalization: entries of H are ~1e-4, so Frobenius gaps in
    // physical units would pass any fixed threshold vacuously. Scaling Q,
    // Q_m, H by the RMS entry magnitude (and sigma0^2 by its square, which
    // leaves the SINR constraint unchanged) makes the violation O(1).
    UserChannels uc0 = user_channel_matrix(layout0, sc, k, cfg.rho_pa);
    const double c_h = uc0.H.norm() / std::sqrt(static_cast<double>(N) * K);
    if (!(c_h > 0)) throw std::invalid_argument("pinch: degenerate zero channel");
    const double sigma0n = cfg.sigma0_sq / (c_h * c_h);

    if (!(opt.initial_penalty_fraction > 0.0) || !(opt.escalation_factor >= 1.0) ||
        opt.max_attempts < 1)
        throw std::invalid_argument("pinch: invalid penalty weight ladder");

    XStepEngine eng(cfg, sc, k, R, c_h, opt.grid_divisor, opt.x_window_lambda, opt.discrete_Z);
    eng.set_layout(layout0);
    const double crb0 = eng.crb_trace();
    if (!std::isfinite(crb0))
        throw std::runtime_error("pinch: target unobservable at the initial layout");

    // One run of Algorithm 3 at a fixed initial weight. The engine is reset
    // to layout0 on entry so every attempt starts from the same state.
    auto run_attempt = [&](int attempt, double rho0) {
        eng.set_layout(layout0);
        PenaltyState st;
        st.mu = opt.mu;
        st.rho_pen = rho0;
        st.Q = uc0.H / c_h;
        st.Q_m.clear();
        st.Q_m.reserve(static_cast<std::size_t>(M));
        for (int m = 0; m < M; ++m)
            st.Q_m.push_back(uc0.per_pa[static_cast<std::size_t>(m)] / c_h);

        auto current_violation = [&]() {
            MatrixXcd gap = st.Q;
            for (int m = 0; m < M; ++m) gap -= st.Q_m[static_cast<std::size_t>(m)];
            return gap.squaredNorm() + eng.penalty_total(st.Q_m);
        };

        PinchResult res;
        res.converged = false;
        int outer = 0;
        for (outer = 1; outer <= opt.max_outer; ++outer) {
            const double inv_rho = 1.0 / st.rho_pen;
            auto emit = [&](int inner, const char* step, double viol) {
                PinchTraceRecord rec;
                rec.attempt = attempt;
                rec.outer = outer;
                rec.inner = inner;
                rec.step = step;
                rec.crb_trace = eng.crb_trace();
                rec.violation = viol;
                rec.objective = rec.crb_trace + inv_rho * viol;
                rec.rho_pen = st.rho_pen;
                opt.trace(rec);
            };
            double obj_prev = kInf;
            for (int inner = 1; inner <= opt.max_inner; ++inner) {
                // Q-step: per-user SCA, each round an exact projection.
                for (int u = 0; u < K; ++u) {
                    VectorXcd cvec = VectorXcd::Zero(N);
                    for (int m = 0; m < M; ++m) cvec += st.Q_m[static_cast<std::size_t>(m)].col(u);
                    st.Q.col(u) = sca_update_q(st.Q.col(u), cvec, digital.W, digital.R_s, u,
                                               cfg.gamma[static_cast<std::size_t>(u)], sigma0n,
                                               opt.eps_sca, opt.max_sca);
                }
                if (opt.trace) emit(inner, "q", current_violation());
                // Q_m-step: closed form against the current channel split.
                std::vector<MatrixXcd> Hm_norm;
                Hm_norm.reserve(static_cast<std::size_t>(M));
                for (int m = 0; m < M; ++m) Hm_norm.push_back(eng.normalized_per_pa(m));
                st.Q_m = closed_form_qm(st.Q, Hm_norm);
                if (opt.trace) emit(inner, "qm", current_violation());
                // X-step: coordinate sweeps over the antennas. The opening
                // sweep scans whole intervals; the rest are windowed
                // refinements (with automatic widening on demand).
                for (int sweep = 0; sweep < opt.max_x_sweeps; ++sweep) {
                    const bool dense = sweep == 0;
                    const double before = eng.crb_trace() + inv_rho * eng.penalty_total(st.Q_m);
                    bool moved = false;
                    for (int n = 0; n < N; ++n)
                        for (int m = 0; m < M; ++m)
                            moved = eng.optimize_pa(m, n, st.Q_m[static_cast<std::size_t>(m)],
                                                    inv_rho, dense) ||
                                    moved;
                    if (!moved) break;
                    const double after = eng.crb_trace() + inv_rho * eng.penalty_total(st.Q_m);
                    if (before - after <= opt.eps_inner * std::max(std::abs(before), 1e-300))
                        break;
                }

                st.violation = current_violation();
                const double obj = eng.crb_trace() + inv_rho * st.violation;
                if (opt.trace) emit(inner, "x", st.violation);
                if (obj_prev - obj < opt.eps_inner * std::max(std::abs(obj_prev), 1e-300)) break;
                obj_prev = obj;
            }
            if (st.violation < opt.eps_violation) {
                res.converged = true;
                break;
            }
            if (outer < opt.max_outer) st.rho_pen *= st.mu;
        }
        res.outer_iters = std::min(outer, opt.max_outer);
        res.attempts = attempt;
        res.layout = eng.layout();
        validate_layout(res.layout, cfg);
        res.violation = st.violation;
        // Report the bound of the returned layout from a full recomputation
        // rather than the engine's running forms.
        TargetDerivatives td = target_derivatives(sc, res.layout, k, cfg.rho_pa, cfg.M_r);
        res.crb_trace = crb(fim(R, td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
        return res;
    };

    // Weight ladder: 1/rho equal to fraction*crb0 per unit of normalized
    // violation, so a full-scale channel mismatch initially costs that
    // fraction of the sensing objective. Block descent on the penalized
    // problem can stall at a joint stationary point whose violation sits
    // above the threshold; restarting with a stronger weight trades some
    // sensing improvement for feasibility, and in the limit freezes the
    // positions at the feasible starting layout.
    PinchResult best;
    double fraction = opt.initial_penalty_fraction;
    for (int attempt = 1; attempt <= opt.max_attempts; ++attempt) {
        PinchResult res = run_attempt(attempt, 1.0 / (fraction * crb0));
        if (res.converged) return res;
        if (attempt == 1 || res.violation < best.violation) best = res;
        fraction *= opt.escalation_factor;
    }
    best.attempts = opt.max_attempts;
    return best;
}

}  // namespace passim

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
// Pinching beamforming stage: optimizes the antenna positions along the
// waveguides for fixed digital beamformers. The user channels are decoupled
// from the position variables through auxiliary matrices Q (per-user
// surrogate channels) and Q_m (per-antenna splits), glued back together by
// an exterior penalty whose weight grows geometrically. Each penalty round
// runs block-coordinate descent: an SCA pass on Q (each user solves an
// exact ellipsoid projection), a closed-form Q_m update, and an
// element-wise one-dimensional grid search per antenna position.

#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "passim/digital_bf.hpp"
#include "passim/scene.hpp"

namespace passim {

// Auxiliary-variable state of the penalty method. Q and Q_m live in
// channel-normalized units (entries scaled by the RMS magnitude of the
// initial channel matrix) so the violation threshold is dimensionless.
struct PenaltyState {
    Eigen::MatrixXcd Q;                 // N x K
    std::vector<Eigen::MatrixXcd> Q_m;  // M matrices, N x K
    double rho_pen = 1.0;               // penalty factor; weight is 1/rho_pen
    double mu = 0.5;                    // shrink factor per outer round, in (0,1)
    double violation = 0.0;             // ||Q-sum Qm||_F^2 + sum_m ||Qm-Hm||_F^2
};

struct PinchTraceRecord {
    int attempt = 1;          // restart index when the weight ladder escalates
    int outer = 0;
    int inner = 0;
    const char* step = "x";   // which block update completed: "q", "qm", "x"
    double objective = 0.0;   // penalized objective, normalized units
    double crb_trace = 0.0;   // [m^2]
    double violation = 0.0;
    double rho_pen = 0.0;
};

struct PinchOptions {
    double eps_sca = 1e-4;        // SCA fractional-decrease exit
    double eps_inner = 1e-4;      // inner block-descent fractional-decrease exit
    double eps_violation = 1e-4;  // outer exit threshold on the violation
    double mu = 0.5;
    int max_outer = 20;
    int max_inner = 30;
    int max_sca = 50;
    int max_x_sweeps = 5;
    // Grid spacing is lambda_c/grid_divisor (or interval/50 when smaller);
    // the refinement pass stops at lambda_c/(10*grid_divisor).
    double grid_divisor = 20.0;
    // Initial penalty weight: 1/rho_pen is chosen so one unit of violation
    // costs initial_penalty_fraction * tr(CRB) of the starting layout. If a
    // run stalls above eps_violation, it restarts from the initial layout
    // with the fraction multiplied by escalation_factor; a strong enough
    // weight pins the positions at the (feasible) starting layout, so the
    // ladder always terminates with a converged attempt in practice. The
    // default ladder spans fractions 0.1 .. 1000 in half-decade steps.
    double initial_penalty_fraction = 0.1;
    double escalation_factor = 3.1622776601683795;  // sqrt(10)
    int max_attempts = 9;
    // When set, positions are restricted to the Z+1 evenly spaced points
    // over [D, D+L] and the refinement pass is skipped.
    std::optional<int> discrete_Z;
    std::function<void(const PinchTraceRecord&)> trace;
};

struct PinchResult {
    PaLayout layout;
    double crb_trace = 0.0;  // CRB of the returned layout on true channels
    double violation = 0.0;  // final normalized violation
    int outer_iters = 0;     // outer rounds used by the reported attempt
    int attempts = 1;        // penalty-weight ladder rungs tried
    bool converged = false;  // violation threshold met before the outer cap
};

// One SCA pass for a single user: minimizes ||q - c||^2 subject to the
// convexified SINR constraint expanded at q0. W columns are the rank-one
// beamformers; sigma0_sq must be in the same (normalized) units as q.
// Iterates the projection until the fractional decrease drops below eps.
Eigen::VectorXcd sca_update_q(const Eigen::VectorXcd& q0, const Eigen::VectorXcd& c,
                              const Eigen::MatrixXcd& W, const Eigen::MatrixXcd& R_s, int user,
                              double gamma_k, double sigma0_sq, double eps, int max_iter);

// Stationary point of ||Q - sum Qm||^2 + sum ||Qm - Hm||^2 over the Qm:
// Qm = (Q - sum_i Hi)/(M+1) + Hm.
std::vector<Eigen::MatrixXcd> closed_form_qm(const Eigen::MatrixXcd& Q,
                                             const std::vector<Eigen::MatrixXcd>& H_m);

// Reference (full-recompute) evaluation of the element-wise objective for
// antenna (m, n) placed at x: tr(CRB) + (1/rho_pen) * sum_k |Qm_nk - Hm_nk|^2
// with Qm in normalized units and c_h the normalization constant.
struct PaObjective {
    double total = 0.0;
    double crb_trace = 0.0;
    double penalty = 0.0;
};
PaObjective eval_pa_objective(const SystemConfig& cfg, const Scenario& sc, PaLayout layout,
                              const BeamformingSolution& digital,
                              const std::vector<Eigen::MatrixXcd>& Q_m_norm, double c_h,
                              double rho_pen, int m, int n, double x);

// One-dimensional search for antenna (m, n): returns the minimizing
// position over the neighbor-feasible interval and its objective value.
struct GridSearchResult {
    double x = 0.0;
    PaObjective objective;
};
GridSearchResult grid_search_pa(const SystemConfig& cfg, const Scenario& sc,
                                const PaLayout& layout, const BeamformingSolution& digital,
                                const std::vector<Eigen::MatrixXcd>& Q_m_norm, double c_h,
                                double rho_pen, int m, int n, const PinchOptions& opt = {});

// Full penalty loop (fixed digital stage). The returned layout always
// satisfies the placement constraints; `converged` reports whether the
// violation threshold was met before the outer-iteration cap. On a stalled
// attempt the loop restarts from layout0 with a stronger initial weight
// (see PinchOptions); if no attempt converges, the one with the smallest
// final violation is returned.
PinchResult penalty_loop(const SystemConfig& cfg, const Scenario& sc, const PaLayout& layout0,
                         const BeamformingSolution& digital, const PinchOptions& opt = {});

}  // namespace passim

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

#include "passim/orchestrator.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "passim/channel.hpp"
#include "passim/sensing.hpp"

namespace passim {

namespace {
using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Slack for the monotone-acceptance test across outer iterations: numeric
// noise plus the digital stage's own solver tolerance.
constexpr double kAcceptSlack = 1e-8;

VectorXd gamma_vector(const SystemConfig& cfg) {
    return Eigen::Map<const VectorXd>(cfg.gamma.data(),
                                      static_cast<Eigen::Index>(cfg.gamma.size()));
}

// Digital stage at a PASS layout plus the bound recomputed on the
// extracted (rank-one) covariance.
struct DigitalEval {
    BeamformingSolution dig;
    MatrixXcd H;
    double crb_trace = 0.0;
};

DigitalEval digital_at_layout(const SystemConfig& cfg, const Scenario& sc, const PaLayout& L,
                              const DerivedConstants& k) {
    DigitalEval ev;
    UserChannels uc = user_channel_matrix(L, sc, k, cfg.rho_pa);
    BeamformingSolution rel = solve_digital(cfg, L, sc);
    ev.dig = extract_rank_one(rel, uc.H);
    ev.H = std::move(uc.H);
    TargetDerivatives td = target_derivatives(sc, L, k, cfg.rho_pa, cfg.M_r);
    ev.crb_trace = crb(fim(ev.dig.total_covariance(), td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
    return ev;
}

// Digital stage on explicit baseline channels (ULA schemes).
DigitalEval digital_at_channels(const SystemConfig& cfg, const Scenario& sc, const MatrixXcd& H,
                                const TargetDerivatives& td) {
    DigitalEval ev;
    FimCoefficients coeffs = fim_linear_coefficients(td, sc.beta, cfg.T, cfg.sigma_s_sq);
    BeamformingSolution rel =
        solve_digital_channels(H, coeffs, gamma_vector(cfg), cfg.P, cfg.sigma0_sq);
    ev.dig = extract_rank_one(rel, H);
    ev.H = H;
    ev.crb_trace = crb(fim(ev.dig.total_covariance(), td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
    return ev;
}

IsacDesign finish_design(SchemeSpec scheme, const SystemConfig& cfg, DigitalEval ev,
                         std::vector<AoTraceRecord> trace, int iterations, bool converged) {
    IsacDesign d;
    d.scheme = scheme;
    d.crb_trace = ev.crb_trace;
    d.rcrb = std::sqrt(ev.crb_trace);
    d.sinrs = sinr(ev.H, ev.dig.W, ev.dig.R_s, cfg.sigma0_sq);
    d.power_used = ev.dig.total_covariance().trace().real();
    d.beamforming = std::move(ev.dig);
    d.iterations = iterations;
    d.converged = converged;
    d.trace = std::move(trace);
    return d;
}

void push_trace(std::vector<AoTraceRecord>& tr, const AoOptions& opt, int it, double crb_v) {
    AoTraceRecord rec;
    rec.iteration = it;
    rec.crb_trace = crb_v;
    rec.rcrb = std::sqrt(crb_v);
    tr.push_back(rec);
    if (opt.trace) opt.trace(rec);
}

IsacDesign pass_ao(const SchemeSpec& scheme, const SystemConfig& cfg, const Scenario& sc,
                   const AoOptions& opt) {
    if (opt.max_outer < 1) throw std::invalid_argument("ao: need at least one outer iteration");
    const DerivedConstants k = derive_constants(cfg);
    PinchOptions popt = opt.pinch;
    if (scheme.kind == Scheme::DiscretePass) {
        popt.discrete_Z = scheme.discrete_Z;
        // A coarse placement lattice has no sub-wavelength moves, so the
        // penalty anchor that works for continuous refinement freezes every
        // antenna (one lattice hop costs more feasibility than any single
        // move can buy back in CRB). Start two decades weaker so hops are
        // affordable, and run a single attempt: the re-solved digital stage
        // below restores exact feasibility at the explored layout, which is
        // the penalty escalation ladder's job in the continuous case.
        popt.initial_penalty_fraction *= 1e-2;
        popt.max_attempts = 1;
    }

    PaLayout layout = uniform_layout(cfg);
    DigitalEval cur = digital_at_layout(cfg, sc, layout, k);
    std::vector<AoTraceRecord> tr;
    push_trace(tr, opt, 1, cur.crb_trace);

    PaLayout best_layout = layout;
    DigitalEval best = cur;
    int iters = 1;
    bool converged = (opt.max_outer == 1);
    const double frac_cap =
        popt.initial_penalty_fraction *
        std::pow(popt.escalation_factor, std::max(popt.max_attempts - 1, 0));
    for (int it = 2; it <= opt.max_outer; ++it) {
        PinchResult pin = penalty_loop(cfg, sc, layout, cur.dig, popt);
        // Warm-start the next round's weight ladder at the rung that just
        // won: the winning rung rarely changes between AO rounds, and
        // re-climbing from the bottom repeats every failed attempt.
        popt.initial_penalty_fraction =
            std::min(frac_cap, popt.initial_penalty_fraction *
                                   std::pow(popt.escalation_factor,
                                            std::max(pin.attempts - 1, 0)));
        DigitalEval next;
        try {
            next = digital_at_layout(cfg, sc, pin.layout, k);
        } catch (const InfeasibleDesign&) {
            // The explored layout cannot meet the SINR targets under the
            // power budget; keep the incumbent and stop.
            converged = true;
            break;
        }
        iters = it;
        if (next.crb_trace > best.crb_trace * (1.0 + kAcceptSlack)) {
            // The pinch stage made the re-solved objective worse: revert
            // to the incumbent and stop. Keeps the trace monotone and the
            // returned design the best visited.
            converged = true;
            break;
        }
        const double frac = (cur.crb_trace - next.crb_trace) / cur.crb_trace;
        layout = pin.layout;
        cur = std::move(next);
        push_trace(tr, opt, it, cur.crb_trace);
        if (cur.crb_trace < best.crb_trace) {
            best = cur;
            best_layout = layout;
        }
        if (frac < opt.eps) {
            converged = true;
            break;
        }
    }
    IsacDesign d = finish_design(scheme, cfg, std::move(best), std::move(tr), iters, converged);
    d.layout = std::move(best_layout);
    return d;
}

IsacDesign uniform_pass(const SystemConfig& cfg, const Scenario& sc, const AoOptions& opt) {
    const DerivedConstants k = derive_constants(cfg);
    PaLayout layout = uniform_layout(cfg);
    DigitalEval ev = digital_at_layout(cfg, sc, layout, k);
    std::vector<AoTraceRecord> tr;
    push_trace(tr, opt, 1, ev.crb_trace);
    IsacDesign d = finish_design(SchemeSpec{Scheme::UniformPass, 0}, cfg, std::move(ev),
                                 std::move(tr), 1, true);
    d.layout = std::move(layout);
    return d;
}

TargetDerivatives combined_parts(const BsChannels& bc, const Eigen::Vector2d& target, int M_r) {
    return target_derivatives_from_parts(bc.h_t(), bc.dht_dx(), bc.dht_dy(), target, M_r);
}

IsacDesign full_digital_mimo(SchemeSpec tag, const SystemConfig& cfg, const Scenario& sc,
                             const AoOptions& opt) {
    BsChannels bc = baseline_mimo_channel(sc, cfg, BsScheme::FullDigital);
    DigitalEval ev = digital_at_channels(cfg, sc, bc.H(), combined_parts(bc, sc.target, cfg.M_r));
    std::vector<AoTraceRecord> tr;
    push_trace(tr, opt, 1, ev.crb_trace);
    return finish_design(tag, cfg, std::move(ev), std::move(tr), 1, true);
}

// One coordinate-descent pass over all analog phases: each element tries
// the grid of candidate phases and keeps a strictly better one, with the
// digital covariance held fixed. Returns whether anything moved.
bool refine_phases(const BsChannels& bc, const SystemConfig& cfg, const Scenario& sc,
                   const MatrixXcd& R, int grid, VectorXd& phases) {
    const int E = static_cast<int>(phases.size());
    auto crb_at = [&](const VectorXd& ph) {
        MatrixXcd F = subarray_analog(bc.array, ph);
        TargetDerivatives td = target_derivatives_from_parts(
            F.adjoint() * bc.ht_elem, F.adjoint() * bc.dht_dx_elem, F.adjoint() * bc.dht_dy_elem,
            sc.target, cfg.M_r);
        try {
            return crb(fim(R, td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
        } catch (const std::runtime_error&) {
            return kInf;
        }
    };
    bool moved = false;
    VectorXd ph = phases;
    for (int e = 0; e < E; ++e) {
        double best_phi = ph(e);
        double best_val = crb_at(ph);
        for (int g = 0; g < grid; ++g) {
            const double phi = 2.0 * std::numbers::pi * g / grid - std::numbers::pi;
            ph(e) = phi;
            const double val = crb_at(ph);
            if (val < best_val) {
                best_val = val;
                best_phi = phi;
                moved = true;
            }
        }
        ph(e) = best_phi;
    }
    phases = ph;
    return moved;
}

IsacDesign hybrid_mmimo(const SystemConfig& cfg, const Scenario& sc, const AoOptions& opt) {
    if (opt.max_outer < 1) throw std::invalid_argument("ao: need at least one outer iteration");
    BsChannels bc = baseline_mimo_channel(sc, cfg, BsScheme::Hybrid);
    const SchemeSpec tag{Scheme::Mmimo, 0};
    if (bc.array.per_chain == 1) {
        // One element per chain: the phase degree of freedom is absorbed
        // by the digital beamformer, so the scheme is exactly Mimo.
        IsacDesign d = full_digital_mimo(tag, cfg, sc, opt);
        return d;
    }
    const int E = static_cast<int>(bc.array.elem.cols());
    VectorXd phases(E);
    for (int i = 0; i < E; ++i) phases(i) = std::arg(bc.ht_elem(i));

    auto eval_at = [&](const VectorXd& ph) {
        MatrixXcd F = subarray_analog(bc.array, ph);
        BsChannels cur = bc;
        cur.analog = F;
        return digital_at_channels(cfg, sc, cur.H(), combined_parts(cur, sc.target, cfg.M_r));
    };

    DigitalEval cur = eval_at(phases);
    std::vector<AoTraceRecord> tr;
    push_trace(tr, opt, 1, cur.crb_trace);

    VectorXd best_phases = phases;
    DigitalEval best = cur;
    int iters = 1;
    bool converged = (opt.max_outer == 1);
    for (int it = 2; it <= opt.max_outer; ++it) {
        VectorXd next_phases = phases;
        const bool moved =
            refine_phases(bc, cfg, sc, cur.dig.total_covariance(), opt.analog_grid, next_phases);
        if (!moved) {
            converged = true;
            break;
        }
        DigitalEval next = eval_at(next_phases);
        iters = it;
        if (next.crb_trace > best.crb_trace * (1.0 + kAcceptSlack)) {
            converged = true;
            break;
        }
        const double frac = (cur.crb_trace - next.crb_trace) / cur.crb_trace;
        phases = std::move(next_phases);
        cur = std::move(next);
        push_trace(tr, opt, it, cur.crb_trace);
        if (cur.crb_trace < best.crb_trace) {
            best = cur;
            best_phases = phases;
        }
        if (frac < opt.eps) {
            converged = true;
            break;
        }
    }
    IsacDesign d = finish_design(tag, cfg, std::move(best), std::move(tr), iters, converged);
    d.analog_phases = std::move(best_phases);
    return d;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

nlohmann::json complex_matrix_json(const MatrixXcd& A) {
    nlohmann::json j;
    j["rows"] = A.rows();
    j["cols"] = A.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(2 * A.size()));
    for (Eigen::Index c = 0; c < A.cols(); ++c)
        for (Eigen::Index r = 0; r < A.rows(); ++r) {
            data.push_back(A(r, c).real());
            data.push_back(A(r, c).imag());
        }
    j["re_im"] = std::move(data);
    return j;
}

}  // namespace

std::string SchemeSpec::tag() const {
    switch (kind) {
        case Scheme::ContinuousPass: return "continuous-pass";
        case Scheme::DiscretePass: return "discrete-pass-" + std::to_string(discrete_Z);
        case Scheme::UniformPass: return "uniform-pass";
        case Scheme::Mimo: return "mimo";
        case Scheme::Mmimo: return "mmimo";
    }
    throw std::logic_error("scheme: unknown kind");
}

SchemeSpec SchemeSpec::parse(const std::string& tag) {
    if (tag == "continuous-pass") return {Scheme::ContinuousPass, 0};
    if (tag == "uniform-pass") return {Scheme::UniformPass, 0};
    if (tag == "mimo") return {Scheme::Mimo, 0};
    if (tag == "mmimo") return {Scheme::Mmimo, 0};
    const std::string prefix = "discrete-pass-";
    if (tag.rfind(prefix, 0) == 0) {
        const std::string num = tag.substr(prefix.size());
        std::size_t used = 0;
        int z = 0;
        try {
            z = std::stoi(num, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("scheme: bad lattice size in '" + tag + "'");
        }
        if (used != num.size() || z < 1)
            throw std::invalid_argument("scheme: bad lattice size in '" + tag + "'");
        return {Scheme::DiscretePass, z};
    }
    throw std::invalid_argument("scheme: unknown tag '" + tag + "'");
}

IsacDesign alternating_optimization(const SystemConfig& cfg, const Scenario& sc,
                                    const AoOptions& opt) {
    return pass_ao(SchemeSpec{Scheme::ContinuousPass, 0}, cfg, sc, opt);
}

IsacDesign run_baseline(const SchemeSpec& scheme, const SystemConfig& cfg, const Scenario& sc,
                        const AoOptions& opt) {
    switch (scheme.kind) {
        case Scheme::ContinuousPass: return pass_ao(scheme, cfg, sc, opt);
        case Scheme::DiscretePass:
            if (scheme.discrete_Z < 1)
                throw std::invalid_argument("scheme: discrete lattice needs Z >= 1");
            return pass_ao(scheme, cfg, sc, opt);
        case Scheme::UniformPass: return uniform_pass(cfg, sc, opt);
        case Scheme::Mimo: return full_digital_mimo(scheme, cfg, sc, opt);
        case Scheme::Mmimo: return hybrid_mmimo(cfg, sc, opt);
    }
    throw std::logic_error("scheme: unknown kind");
}

AuditReport audit_design(const IsacDesign& d, const SystemConfig& cfg, const Scenario& sc) {
    const DerivedConstants k = derive_constants(cfg);
    MatrixXcd H;
    TargetDerivatives td;
    switch (d.scheme.kind) {
        case Scheme::ContinuousPass:
        case Scheme::DiscretePass:
        case Scheme::UniformPass: {
            validate_layout(d.layout, cfg);
            UserChannels uc = user_channel_matrix(d.layout, sc, k, cfg.rho_pa);
            H = std::move(uc.H);
            td = target_derivatives(sc, d.layout, k, cfg.rho_pa, cfg.M_r);
            break;
        }
        case Scheme::Mimo: {
            BsChannels bc = baseline_mimo_channel(sc, cfg, BsScheme::FullDigital);
            H = bc.H();
            td = combined_parts(bc, sc.target, cfg.M_r);
            break;
        }
        case Scheme::Mmimo: {
            BsChannels bc = baseline_mimo_channel(sc, cfg, BsScheme::Hybrid);
            if (bc.array.per_chain > 1) bc.analog = subarray_analog(bc.array, d.analog_phases);
            H = bc.H();
            td = combined_parts(bc, sc.target, cfg.M_r);
            break;
        }
    }

    AuditReport rep;
    const MatrixXcd R = d.beamforming.total_covariance();
    const double crb_v = crb(fim(R, td, sc.beta, cfg.T, cfg.sigma_s_sq)).trace;
    const VectorXd s = sinr(H, d.beamforming.W, d.beamforming.R_s, cfg.sigma0_sq);
    const double power = R.trace().real();

    rep.max_rel_err = rel_err(d.crb_trace, crb_v);
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(d.rcrb, std::sqrt(crb_v)));
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(d.power_used, power));
    for (Eigen::Index i = 0; i < s.size(); ++i)
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err(d.sinrs(i), s(i)));

    rep.sinr_ok = true;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) < cfg.gamma[static_cast<std::size_t>(i)] * (1.0 - 1e-6)) rep.sinr_ok = false;
    rep.power_ok = power <= cfg.P * (1.0 + 1e-7);
    rep.ok = rep.max_rel_err <= 1e-9 && rep.sinr_ok && rep.power_ok;
    return rep;
}

std::string design_to_json(const IsacDesign& d) {
    nlohmann::json j;
    j["scheme"] = d.scheme.tag();
    if (d.scheme.kind == Scheme::DiscretePass) j["discrete_Z"] = d.scheme.discrete_Z;
    if (d.layout.x.size() > 0) {
        nlohmann::json lay;
        std::vector<std::vector<double>> rows;
        for (Eigen::Index m = 0; m < d.layout.x.rows(); ++m) {
            std::vector<double> row;
            for (Eigen::Index n = 0; n < d.layout.x.cols(); ++n)
                row.push_back(d.layout.x(m, n));
            rows.push_back(std::move(row));
        }
        lay["x"] = std::move(rows);
        lay["wg_y"] = std::vector<double>(d.layout.wg_y.data(),
                                          d.layout.wg_y.data() + d.layout.wg_y.size());
        lay["feed_x"] = d.layout.feed_x;
        lay["height"] = d.layout.height;
        j["layout"] = std::move(lay);
    }
    if (d.analog_phases.size() > 0)
        j["analog_phases"] = std::vector<double>(
            d.analog_phases.data(), d.analog_phases.data() + d.analog_phases.size());
    j["W"] = complex_matrix_json(d.beamforming.W);
    j["R_s"] = complex_matrix_json(d.beamforming.R_s);
    j["crb_trace_m2"] = d.crb_trace;
    j["rcrb_m"] = d.rcrb;
    j["sinrs"] = std::vector<double>(d.sinrs.data(), d.sinrs.data() + d.sinrs.size());
    j["power_w"] = d.power_used;
    j["iterations"] = d.iterations;
    j["converged"] = d.converged;
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& r : d.trace) {
        nlohmann::json rec;
        rec["iteration"] = r.iteration;
        rec["crb_trace_m2"] = r.crb_trace;
        rec["rcrb_m"] = r.rcrb;
        tr.push_back(std::move(rec));
    }
    j["trace"] = std::move(tr);
    return j.dump(2);
}

}  // namespace passim

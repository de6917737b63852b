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
// Outer alternating optimization and the baseline schemes. One design run
// alternates the digital stage (beamformers + sensing covariance at fixed
// antenna positions) with the pinching stage (positions at fixed
// beamformers) until the sensing objective stops improving, and emits a
// fully audited design: beamformers, layout, achieved bound, per-user
// SINRs, transmit power, and the per-iteration convergence trace.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "passim/digital_bf.hpp"
#include "passim/pinch_bf.hpp"
#include "passim/scene.hpp"

namespace passim {

enum class Scheme {
    ContinuousPass,  // joint digital + continuous antenna placement
    DiscretePass,    // placement restricted to Z+1 lattice points
    UniformPass,     // fixed uniform placement, digital stage only
    Mimo,            // conventional N-element half-wavelength ULA
    Mmimo,           // N*M-element hybrid ULA, per-element phase shifters
};

struct SchemeSpec {
    Scheme kind = Scheme::ContinuousPass;
    int discrete_Z = 30;  // lattice resolution, DiscretePass only

    // CSV/CLI tag, e.g. "continuous-pass", "discrete-pass-30", "mimo".
    std::string tag() const;
    // Inverse of tag(); throws std::invalid_argument on unknown names.
    static SchemeSpec parse(const std::string& tag);
};

struct AoTraceRecord {
    int iteration = 0;       // outer iteration, 1-based
    double crb_trace = 0.0;  // objective after that iteration's digital stage [m^2]
    double rcrb = 0.0;       // [m]
};

struct AoOptions {
    double eps = 1e-3;  // fractional objective-decrease exit
    int max_outer = 50;
    int analog_grid = 64;  // hybrid baseline: phase candidates per element
    PinchOptions pinch;    // inner pinching-stage options
    std::function<void(const AoTraceRecord&)> trace;
};

// A finished design with its audit quantities. Either `layout` (PASS
// schemes) or `analog_phases` (hybrid baseline) describes the antenna
// stage; both are empty for the full-digital ULA baseline.
struct IsacDesign {
    SchemeSpec scheme;
    PaLayout layout;                // antenna positions (PASS schemes)
    Eigen::VectorXd analog_phases;  // per-element phases (hybrid baseline)
    BeamformingSolution beamforming;
    double crb_trace = 0.0;  // [m^2], recomputed on the returned design
    double rcrb = 0.0;       // sqrt(crb_trace) [m]
    Eigen::VectorXd sinrs;   // per-user, linear scale
    double power_used = 0.0;  // [W]
    int iterations = 0;       // outer iterations run
    bool converged = false;
    std::vector<AoTraceRecord> trace;
};

// Overall AO for the continuous placement scheme: digital stage first,
// then the penalty-method pinching stage, repeated until the fractional
// decrease of tr(CRB) drops below opt.eps or the iteration cap. The trace
// of accepted objectives is non-increasing (a worsening update is
// reverted and the loop stops); the returned design is the best visited,
// re-solved digitally at its final layout so the SINR and power
// guarantees hold on the true channels.
IsacDesign alternating_optimization(const SystemConfig& cfg, const Scenario& sc,
                                    const AoOptions& opt = {});

// Dispatch over all schemes. ContinuousPass is alternating_optimization;
// DiscretePass restricts the placement grid; UniformPass and Mimo are
// single digital solves on their respective channels; Mmimo alternates a
// per-element analog phase refinement with the digital stage. The hybrid
// baseline with one element per chain reduces exactly to Mimo.
IsacDesign run_baseline(const SchemeSpec& scheme, const SystemConfig& cfg, const Scenario& sc,
                        const AoOptions& opt = {});

// Independent re-audit: rebuilds the channels of the design's antenna
// stage from scratch and recomputes SINRs, power, and the bound.
struct AuditReport {
    double max_rel_err = 0.0;  // worst stored-vs-recomputed relative error
    bool sinr_ok = false;      // all SINRs >= gamma * (1 - 1e-6)
    bool power_ok = false;     // power <= P * (1 + 1e-7)
    bool ok = false;           // max_rel_err <= 1e-9 and both flags
};
AuditReport audit_design(const IsacDesign& d, const SystemConfig& cfg, const Scenario& sc);

// JSON emission: layout and phase arrays as-is, complex matrices as
// interleaved [re, im] pairs in column-major order, plus the trace.
std::string design_to_json(const IsacDesign& d);

}  // namespace passim

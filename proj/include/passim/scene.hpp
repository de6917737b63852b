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
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace passim {

// Carrier/guide wavelengths and wavenumbers derived from the carrier
// frequency and the waveguide's effective refractive index.
struct DerivedConstants {
    double lambda_c = 0.0;  // free-space wavelength [m]
    double kappa_c = 0.0;   // free-space wavenumber 2*pi/lambda_c [rad/m]
    double lambda_g = 0.0;  // in-waveguide wavelength lambda_c/n_e [m]
    double kappa_g = 0.0;   // in-waveguide wavenumber 2*pi/lambda_g [rad/m]
};

double dbm_to_watts(double dbm);
double watts_to_dbm(double watts);

// Static system description. Distances in meters, powers in watts,
// SINR targets linear. `gamma` holds one target per user.
struct SystemConfig {
    double f_c = 28e9;   // carrier frequency [Hz]
    double n_e = 1.4;    // waveguide effective refractive index
    int N = 4;           // number of waveguides (transmit RF chains)
    int M = 4;           // pinching antennas per waveguide
    int M_r = 8;         // receive ULA elements
    int K = 3;           // communication users
    int T = 256;         // sensing coherent snapshots
    double D = 5.0;      // standoff of the service area from the BS [m]
    double L = 15.0;     // waveguide length [m]
    double d_h = 1.0;    // waveguide deployment height [m]
    double D_x = 15.0;   // service-area extent along x [m]
    double D_y = 15.0;   // service-area extent along y [m]
    double delta = 0.0;  // minimum pinching-antenna spacing [m]; 0 => lambda_c/2
    double P = 1.0;                 // transmit power budget [W]
    double sigma0_sq = 1e-12;       // per-user noise power [W]
    double sigma_s_sq = 1e-12;      // sensing receiver noise power [W]
    std::vector<double> gamma;      // per-user SINR targets, linear; empty => 6 dB each
    double rho_pa = 0.0;            // per-PA amplitude coupling; 0 => 1/sqrt(M)
    std::optional<std::complex<double>> beta_override;  // fixed target reflectivity

    // Fills the deferred defaults (delta, gamma, rho_pa) and checks ranges.
    // Throws std::invalid_argument naming the offending field.
    void finalize();

    static SystemConfig defaults();
    static SystemConfig from_json_text(const std::string& text);
    static SystemConfig from_json_file(const std::string& path);
    std::string to_json_text() const;
};

DerivedConstants derive_constants(const SystemConfig& cfg);

// One random drop: K users and one target on the ground plane (z = 0),
// uniform over [D, D+D_x] x [-D_y/2, D_y/2].
struct Scenario {
    std::vector<Eigen::Vector2d> users;
    Eigen::Vector2d target = Eigen::Vector2d::Zero();
    std::complex<double> beta;  // round-trip target reflectivity
    std::uint64_t seed = 0;
};

Scenario sample_scenario(const SystemConfig& cfg, std::uint64_t seed);

// Pinching-antenna positions. x(m, n) is the position of PA m along
// waveguide n, sorted ascending per waveguide; waveguides run parallel to
// the x-axis at height `height`, offset wg_y(n) along y, fed at x = feed_x.
struct PaLayout {
    Eigen::MatrixXd x;      // M x N
    Eigen::VectorXd wg_y;   // N
    double feed_x = 0.0;    // D
    double height = 0.0;    // d_h
};

// Waveguide y-offsets: N values equally spaced over [-D_y/2, D_y/2].
Eigen::VectorXd waveguide_y_offsets(const SystemConfig& cfg);

// Equally spaced PAs over [D, D+L] per waveguide (single PA at the midpoint).
PaLayout uniform_layout(const SystemConfig& cfg);

// Throws std::invalid_argument if any PA leaves [D, D+L] or two consecutive
// PAs on a waveguide are closer than delta.
void validate_layout(const PaLayout& layout, const SystemConfig& cfg);

// Splittable counter-based generator (SplitMix64 finalizer). Stateless:
// draw i of stream s under key k is a pure function of (k, s, i), so
// scenarios are bit-reproducible across platforms and thread schedules.
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t key) : key_(key) {}

    SplitRng split(std::uint64_t stream) const;
    std::uint64_t bits(std::uint64_t counter) const;
    double u01(std::uint64_t counter) const;  // [0, 1)

  private:
    std::uint64_t key_;
};

}  // namespace passim

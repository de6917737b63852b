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

#include "passim/scene.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace passim {

namespace {
constexpr double kSpeedOfLight = 299792458.0;  // [m/s]

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
}
}  // namespace

double dbm_to_watts(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }

double watts_to_dbm(double watts) {
    if (!(watts > 0.0)) throw std::invalid_argument("watts_to_dbm: non-positive power");
    return 10.0 * std::log10(watts / 1e-3);
}

DerivedConstants derive_constants(const SystemConfig& cfg) {
    DerivedConstants d;
    d.lambda_c = kSpeedOfLight / cfg.f_c;
    d.kappa_c = 2.0 * std::numbers::pi / d.lambda_c;
    d.lambda_g = d.lambda_c / cfg.n_e;
    d.kappa_g = 2.0 * std::numbers::pi / d.lambda_g;
    return d;
}

void SystemConfig::finalize() {
    require(f_c > 0, "f_c must be positive");
    require(n_e >= 1.0, "n_e must be >= 1");
    require(N >= 1, "N must be >= 1");
    require(M >= 1, "M must be >= 1");
    require(M_r >= 2, "M_r must be >= 2");
    require(K >= 1, "K must be >= 1");
    require(T >= 1, "T must be >= 1");
    require(D > 0, "D must be positive (BS at x=0 must be outside the service area)");
    require(L > 0, "L must be positive");
    require(d_h >= 0, "d_h must be non-negative");
    require(D_x > 0 && D_y > 0, "service area extents must be positive");
    if (delta == 0.0) delta = derive_constants(*this).lambda_c / 2.0;
    require(delta > 0, "delta must be positive");
    require((M - 1) * delta <= L, "M antennas at spacing delta do not fit on a waveguide of length L");
    require(P > 0, "P must be positive");
    require(sigma0_sq > 0 && sigma_s_sq > 0, "noise powers must be positive");
    if (gamma.empty()) gamma.assign(static_cast<std::size_t>(K), std::pow(10.0, 0.6));
    if (gamma.size() == 1 && K > 1) gamma.assign(static_cast<std::size_t>(K), gamma[0]);
    require(static_cast<int>(gamma.size()) == K, "gamma must hold one target per user");
    for (double g : gamma) require(g > 0, "SINR targets must be positive");
    if (rho_pa == 0.0) rho_pa = 1.0 / std::sqrt(static_cast<double>(M));
    require(rho_pa > 0 && rho_pa <= 1.0, "rho_pa must lie in (0, 1]");
}

SystemConfig SystemConfig::defaults() {
    SystemConfig cfg;
    cfg.finalize();
    return cfg;
}

namespace {

std::vector<double> parse_gamma(const nlohmann::json& v, bool in_db) {
    std::vector<double> out;
    if (v.is_number()) {
        out.push_back(v.get<double>());
    } else if (v.is_array()) {
        for (const auto& e : v) out.push_back(e.get<double>());
    } else {
        throw std::invalid_argument("config: gamma must be a number or an array");
    }
    if (in_db)
        for (double& g : out) g = std::pow(10.0, g / 10.0);
    return out;
}

}  // namespace

SystemConfig SystemConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    SystemConfig cfg;
    for (const auto& [key, val] : j.items()) {
        if (key == "f_c") cfg.f_c = val.get<double>();
        else if (key == "n_e") cfg.n_e = val.get<double>();
        else if (key == "N") cfg.N = val.get<int>();
        else if (key == "M") cfg.M = val.get<int>();
        else if (key == "M_r") cfg.M_r = val.get<int>();
        else if (key == "K") cfg.K = val.get<int>();
        else if (key == "T") cfg.T = val.get<int>();
        else if (key == "D") cfg.D = val.get<double>();
        else if (key == "L") cfg.L = val.get<double>();
        else if (key == "d_h") cfg.d_h = val.get<double>();
        else if (key == "D_x") cfg.D_x = val.get<double>();
        else if (key == "D_y") cfg.D_y = val.get<double>();
        else if (key == "delta") cfg.delta = val.get<double>();
        else if (key == "P") cfg.P = val.get<double>();
        else if (key == "P_dbm") cfg.P = dbm_to_watts(val.get<double>());
        else if (key == "sigma0_sq") cfg.sigma0_sq = val.get<double>();
        else if (key == "sigma0_sq_dbm") cfg.sigma0_sq = dbm_to_watts(val.get<double>());
        else if (key == "sigma_s_sq") cfg.sigma_s_sq = val.get<double>();
        else if (key == "sigma_s_sq_dbm") cfg.sigma_s_sq = dbm_to_watts(val.get<double>());
        else if (key == "gamma") cfg.gamma = parse_gamma(val, false);
        else if (key == "gamma_db") cfg.gamma = parse_gamma(val, true);
        else if (key == "rho_pa") cfg.rho_pa = val.get<double>();
        else if (key == "beta") {
            if (!val.is_array() || val.size() != 2)
                throw std::invalid_argument("config: beta must be [re, im]");
            cfg.beta_override = std::complex<double>(val[0].get<double>(), val[1].get<double>());
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    cfg.finalize();
    return cfg;
}

SystemConfig SystemConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string SystemConfig::to_json_text() const {
    nlohmann::json j;
    j["f_c"] = f_c;
    j["n_e"] = n_e;
    j["N"] = N;
    j["M"] = M;
    j["M_r"] = M_r;
    j["K"] = K;
    j["T"] = T;
    j["D"] = D;
    j["L"] = L;
    j["d_h"] = d_h;
    j["D_x"] = D_x;
    j["D_y"] = D_y;
    j["delta"] = delta;
    j["P"] = P;
    j["sigma0_sq"] = sigma0_sq;
    j["sigma_s_sq"] = sigma_s_sq;
    j["gamma"] = gamma;
    j["rho_pa"] = rho_pa;
    if (beta_override) j["beta"] = {beta_override->real(), beta_override->imag()};
    return j.dump(2);
}

// --- splittable counter-based RNG -------------------------------------------

namespace {
inline std::uint64_t splitmix_fin(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

SplitRng SplitRng::split(std::uint64_t stream) const {
    return SplitRng(splitmix_fin(key_ ^ (0xd1b54a32d192ed03ULL * (stream + 1))));
}

std::uint64_t SplitRng::bits(std::uint64_t counter) const {
    return splitmix_fin(key_ + 0x9e3779b97f4a7c15ULL * (counter + 1));
}

double SplitRng::u01(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------

Scenario sample_scenario(const SystemConfig& cfg, std::uint64_t seed) {
    SplitRng rng(seed);
    Scenario sc;
    sc.seed = seed;
    sc.users.reserve(static_cast<std::size_t>(cfg.K));
    auto draw_point = [&](std::uint64_t base) {
        double x = cfg.D + cfg.D_x * rng.u01(base);
        double y = -cfg.D_y / 2.0 + cfg.D_y * rng.u01(base + 1);
        return Eigen::Vector2d(x, y);
    };
    for (int k = 0; k < cfg.K; ++k) sc.users.push_back(draw_point(2 * static_cast<std::uint64_t>(k)));
    sc.target = draw_point(2 * static_cast<std::uint64_t>(cfg.K));
    if (cfg.beta_override) {
        sc.beta = *cfg.beta_override;
    } else {
        // Round-trip reflectivity pinned to the geometry: free-space gain at
        // the BS-to-target distance with the matching carrier phase.
        DerivedConstants dc = derive_constants(cfg);
        double d_t = sc.target.norm();
        sc.beta = std::polar(1.0 / (2.0 * dc.kappa_c * d_t), -dc.kappa_c * d_t);
    }
    return sc;
}

Eigen::VectorXd waveguide_y_offsets(const SystemConfig& cfg) {
    Eigen::VectorXd y(cfg.N);
    if (cfg.N == 1) {
        y(0) = 0.0;
        return y;
    }
    double step = cfg.D_y / static_cast<double>(cfg.N - 1);
    for (int n = 0; n < cfg.N; ++n) y(n) = -cfg.D_y / 2.0 + step * n;
    return y;
}

PaLayout uniform_layout(const SystemConfig& cfg) {
    PaLayout layout;
    layout.x.resize(cfg.M, cfg.N);
    layout.wg_y = waveguide_y_offsets(cfg);
    layout.height = cfg.d_h;
    for (int n = 0; n < cfg.N; ++n) {
        if (cfg.M == 1) {
            layout.x(0, n) = cfg.D + cfg.L / 2.0;
        } else {
            double step = cfg.L / static_cast<double>(cfg.M - 1);
            for (int m = 0; m < cfg.M; ++m) layout.x(m, n) = cfg.D + step * m;
        }
    }
    return layout;
}

void validate_layout(const PaLayout& layout, const SystemConfig& cfg) {
    if (layout.x.rows() != cfg.M || layout.x.cols() != cfg.N)
        throw std::invalid_argument("layout: position matrix must be M x N");
    if (layout.wg_y.size() != cfg.N)
        throw std::invalid_argument("layout: need one y-offset per waveguide");
    const double lo = cfg.D, hi = cfg.D + cfg.L;
    for (int n = 0; n < cfg.N; ++n) {
        for (int m = 0; m < cfg.M; ++m) {
            double x = layout.x(m, n);
            if (!(x >= lo && x <= hi)) {
                std::ostringstream os;
                os << "layout: PA " << m << " on waveguide " << n << " at x=" << x
                   << " outside [" << lo << ", " << hi << "]";
                throw std::invalid_argument(os.str());
            }
            if (m > 0 && !(x - layout.x(m - 1, n) >= cfg.delta)) {
                std::ostringstream os;
                os << "layout: PAs " << m - 1 << "," << m << " on waveguide " << n
                   << " closer than delta=" << cfg.delta;
                throw std::invalid_argument(os.str());
            }
        }
    }
}

}  // namespace passim

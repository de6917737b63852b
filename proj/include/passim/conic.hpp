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
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace passim::conic {

// Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix.
// Eigenvalues double in multiplicity; PSD-ness is preserved both ways.
Eigen::MatrixXd embed_hermitian(const Eigen::MatrixXcd& H);
Eigen::MatrixXcd extract_hermitian(const Eigen::MatrixXd& E);

enum class BlockKind { RealSym, ComplexHerm };
enum class Sense { Eq, Le, Ge };
enum class SolveStatus { Optimal, Infeasible, MaxIter };

// One summand of a trace-linear functional: tr(coef * X_block). For real
// blocks the imaginary part of coef must be zero; Hermitian coefficients
// pair with Hermitian blocks so the value is real.
struct LinTerm {
    int block = -1;
    Eigen::MatrixXcd coef;
};

// Dense semidefinite program over mixed real/Hermitian PSD blocks:
//   minimize   sum_b tr(C_b X_b)
//   subject to trace-linear (in)equalities, affine LMIs, X_b >= 0.
// LMIs and inequalities are lowered to slack blocks and equalities before
// the interior-point solve.
class SdpProblem {
  public:
    int add_real_block(const std::string& name, int dim);
    int add_hermitian_block(const std::string& name, int dim);
    void add_objective(int block, const Eigen::MatrixXcd& coef);
    int add_constraint(std::vector<LinTerm> terms, Sense sense, double rhs);

    // Affine-PSD coupling: the dim x dim real symmetric matrix whose entry
    // (i, j) equals sum of its terms plus `constant` must be PSD. Entries
    // are set for i >= j only; unset entries are zero.
    int add_lmi(int dim);
    void set_lmi_entry(int lmi, int i, int j, std::vector<LinTerm> terms, double constant);

    // Self-describing text dump for offline cross-checking.
    void dump(std::ostream& os) const;

    int num_blocks() const { return static_cast<int>(blocks_.size()); }
    int block_dim(int b) const { return blocks_[static_cast<std::size_t>(b)].dim; }
    BlockKind block_kind(int b) const { return blocks_[static_cast<std::size_t>(b)].kind; }

  private:
    struct Block {
        std::string name;
        BlockKind kind;
        int dim;
    };
    struct Constraint {
        std::vector<LinTerm> terms;
        Sense sense;
        double rhs;
    };
    struct LmiEntry {
        int i, j;
        std::vector<LinTerm> terms;
        double constant;
    };
    struct Lmi {
        int dim;
        std::vector<LmiEntry> entries;
    };

    std::vector<Block> blocks_;
    std::vector<std::pair<int, Eigen::MatrixXcd>> objective_;
    std::vector<Constraint> constraints_;
    std::vector<Lmi> lmis_;

    void check_term(const LinTerm& t) const;
    friend struct Lowering;
};

struct SdpTols {
    double feas = 1e-9;       // target primal/dual residual
    double gap = 1e-8;        // target relative duality gap
    double accept_feas = 1e-7;  // fallback acceptance at the iteration cap
    double accept_gap = 1e-6;
    int max_iter = 200;
};

struct IterStat {
    double mu, pobj, dobj, pinf, dinf, relgap, alpha_p, alpha_d;
};

struct SdpSolution {
    SolveStatus status = SolveStatus::MaxIter;
    double objective = 0.0;
    double duality_gap = 0.0;     // relative duality gap at exit
    double max_violation = 0.0;   // max absolute constraint violation
    int iterations = 0;
    std::vector<Eigen::MatrixXcd> blocks;  // declared blocks (real => 0 imag)
    Eigen::VectorXd duals;                 // per user linear constraint
    std::vector<IterStat> trace;

    Eigen::MatrixXd real_block(int b) const { return blocks[static_cast<std::size_t>(b)].real(); }
    const Eigen::MatrixXcd& hermitian_block(int b) const { return blocks[static_cast<std::size_t>(b)]; }
};

SdpSolution solve_sdp(const SdpProblem& problem, const SdpTols& tols = {});

// Exact minimizer of ||q - c||^2 over {q : q^H Phi q + 2 Re(b^H q) + d <= 0}
// (Phi Hermitian PSD) via a single-multiplier secular equation.
struct EllipsoidProjection {
    Eigen::VectorXcd q;
    double multiplier = 0.0;        // KKT lambda >= 0
    double constraint_value = 0.0;  // g(q) at the solution
    double kkt_residual = 0.0;      // stationarity residual norm
};

EllipsoidProjection project_ellipsoid(const Eigen::VectorXcd& c, const Eigen::MatrixXcd& Phi,
                                      const Eigen::VectorXcd& b, double d);

}  // namespace passim::conic

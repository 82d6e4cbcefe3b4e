#pragma once

#include "diffbench/core.hpp"

namespace diffbench::linalg {

// Eigendecomposition of a symmetric matrix: M = V diag(values) V^T with
// eigenvalues ascending and orthonormal columns in V.
struct SymEig {
    std::vector<double> values;
    Matrix vectors;  // column j is the eigenvector of values[j]
};

// Householder tridiagonalization followed by implicit-shift QL. Input is
// symmetrized internally; throws NumericError if the asymmetry exceeds tol.
SymEig sym_eig(const Matrix& m, double symmetry_tol = 1e-8);

// Lower-triangular L with L L^T = m. Throws NumericError if not positive
// definite (within jitter).
Matrix cholesky(const Matrix& m, double jitter = 0.0);

// Solve (m) x = b for symmetric positive definite m via Cholesky.
std::vector<double> solve_spd(const Matrix& m, const std::vector<double>& b);

// log det of an SPD matrix from its Cholesky factor.
double log_det_spd(const Matrix& m);

// V diag(f(values)) V^T for a previously computed decomposition.
Matrix reassemble(const SymEig& eig, const std::vector<double>& mapped_values);

bool is_symmetric(const Matrix& m, double tol);
Matrix symmetrize(const Matrix& m);

}  // namespace diffbench::linalg

#include "diffbench/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace diffbench::linalg {

namespace {

double hypot2(double a, double b) { return std::sqrt(a * a + b * b); }

// Householder reduction of a symmetric matrix to tridiagonal form.
// a: in/out, on exit holds the accumulated orthogonal transform Q.
// d: diagonal, e: off-diagonal (e[0] unused).
void tridiagonalize(Matrix& a, std::vector<double>& d, std::vector<double>& e) {
    const size_t n = a.rows();
    for (size_t i = n - 1; i > 0; --i) {
        size_t l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (size_t k = 0; k <= l; ++k) scale += std::fabs(a(i, k));
            if (scale == 0.0) {
                e[i] = a(i, l);
            } else {
                for (size_t k = 0; k <= l; ++k) {
                    a(i, k) /= scale;
                    h += a(i, k) * a(i, k);
                }
                double f = a(i, l);
                double g = (f >= 0.0) ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                a(i, l) = f - g;
                f = 0.0;
                for (size_t j = 0; j <= l; ++j) {
                    a(j, i) = a(i, j) / h;
                    g = 0.0;
                    for (size_t k = 0; k <= j; ++k) g += a(j, k) * a(i, k);
                    for (size_t k = j + 1; k <= l; ++k) g += a(k, j) * a(i, k);
                    e[j] = g / h;
                    f += e[j] * a(i, j);
                }
                double hh = f / (h + h);
                for (size_t j = 0; j <= l; ++j) {
                    f = a(i, j);
                    e[j] = g = e[j] - hh * f;
                    for (size_t k = 0; k <= j; ++k)
                        a(j, k) -= f * e[k] + g * a(i, k);
                }
            }
        } else {
            e[i] = a(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (d[i] != 0.0) {
            for (size_t j = 0; j < i; ++j) {
                double g = 0.0;
                for (size_t k = 0; k < i; ++k) g += a(i, k) * a(k, j);
                for (size_t k = 0; k < i; ++k) a(k, j) -= g * a(k, i);
            }
        }
        d[i] = a(i, i);
        a(i, i) = 1.0;
        for (size_t j = 0; j < i; ++j) a(j, i) = a(i, j) = 0.0;
    }
}

// Implicit-shift QL on a tridiagonal matrix with eigenvector accumulation.
void ql_implicit(std::vector<double>& d, std::vector<double>& e, Matrix& z) {
    const size_t n = d.size();
    for (size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (size_t l = 0; l < n; ++l) {
        int iter = 0;
        size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
                if (std::fabs(e[m]) <= 1e-300 || std::fabs(e[m]) <= 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (++iter == 60) throw NumericError("sym_eig: QL iteration failed to converge");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = hypot2(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::fabs(r) : -std::fabs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (size_t i = m; i-- > l;) {
                    double f = s * e[i];
                    double b = c * e[i];
                    r = hypot2(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (size_t k = 0; k < n; ++k) {
                        f = z(k, i + 1);
                        z(k, i + 1) = s * z(k, i) + c * f;
                        z(k, i) = c * z(k, i) - s * f;
                    }
                }
                if (r == 0.0 && m - l > 1) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

}  // namespace

bool is_symmetric(const Matrix& m, double tol) {
    if (m.rows() != m.cols()) return false;
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = i + 1; j < m.cols(); ++j)
            if (std::fabs(m(i, j) - m(j, i)) > tol) return false;
    return true;
}

Matrix symmetrize(const Matrix& m) {
    Matrix s(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
    return s;
}

SymEig sym_eig(const Matrix& m, double symmetry_tol) {
    if (m.rows() != m.cols()) throw ShapeError("sym_eig: matrix not square");
    if (!is_symmetric(m, symmetry_tol)) throw NumericError("sym_eig: matrix not symmetric within tolerance");
    const size_t n = m.rows();
    SymEig out;
    out.values.assign(n, 0.0);
    if (n == 0) return out;
    Matrix a = symmetrize(m);
    std::vector<double> e(n, 0.0);
    if (n == 1) {
        out.values[0] = a(0, 0);
        out.vectors = Matrix::identity(1);
        return out;
    }
    tridiagonalize(a, out.values, e);
    ql_implicit(out.values, e, a);
    out.vectors = std::move(a);
    // sort ascending, carrying eigenvector columns
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return out.values[x] < out.values[y]; });
    std::vector<double> vals(n);
    Matrix vecs(n, n);
    for (size_t j = 0; j < n; ++j) {
        vals[j] = out.values[order[j]];
        for (size_t i = 0; i < n; ++i) vecs(i, j) = out.vectors(i, order[j]);
    }
    out.values = std::move(vals);
    out.vectors = std::move(vecs);
    return out;
}

Matrix cholesky(const Matrix& m, double jitter) {
    if (m.rows() != m.cols()) throw ShapeError("cholesky: matrix not square");
    const size_t n = m.rows();
    Matrix l(n, n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = m(i, j);
            for (size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
            if (i == j) {
                sum += jitter;
                if (sum <= 0.0) throw NumericError("cholesky: matrix not positive definite");
                l(i, j) = std::sqrt(sum);
            } else {
                l(i, j) = sum / l(j, j);
            }
        }
    }
    return l;
}

std::vector<double> solve_spd(const Matrix& m, const std::vector<double>& b) {
    Matrix l = cholesky(m);
    const size_t n = b.size();
    if (n != m.rows()) throw ShapeError("solve_spd: size mismatch");
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (size_t k = 0; k < i; ++k) sum -= l(i, k) * y[k];
        y[i] = sum / l(i, i);
    }
    std::vector<double> x(n);
    for (size_t i = n; i-- > 0;) {
        double sum = y[i];
        for (size_t k = i + 1; k < n; ++k) sum -= l(k, i) * x[k];
        x[i] = sum / l(i, i);
    }
    return x;
}

double log_det_spd(const Matrix& m) {
    Matrix l = cholesky(m);
    double acc = 0.0;
    for (size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
    return 2.0 * acc;
}

Matrix reassemble(const SymEig& eig, const std::vector<double>& mapped) {
    const size_t n = eig.values.size();
    if (mapped.size() != n) throw ShapeError("reassemble: value count mismatch");
    Matrix out(n, n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < n; ++k)
                acc += eig.vectors(i, k) * mapped[k] * eig.vectors(j, k);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    }
    return out;
}

}  // namespace diffbench::linalg

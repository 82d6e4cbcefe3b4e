#include "diffbench/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <thread>

namespace diffbench {

double Rng::normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

uint64_t Rng::below(uint64_t n) {
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

Rng Rng::split(uint64_t stream) const {
    uint64_t z = seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (size_t r = 0; r < rows_; ++r)
        for (size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
    if (cols_ != rhs.rows_) throw ShapeError("matrix product: inner dimensions differ");
    Matrix out(rows_, rhs.cols_);
    for (size_t r = 0; r < rows_; ++r) {
        for (size_t k = 0; k < cols_; ++k) {
            double a = (*this)(r, k);
            if (a == 0.0) continue;
            const double* rp = rhs.row_ptr(k);
            double* op = out.row_ptr(r);
            for (size_t c = 0; c < rhs.cols_; ++c) op[c] += a * rp[c];
        }
    }
    return out;
}

std::vector<double> Matrix::apply(const std::vector<double>& v) const {
    if (v.size() != cols_) throw ShapeError("matrix apply: vector length mismatch");
    std::vector<double> out(rows_, 0.0);
    for (size_t r = 0; r < rows_; ++r) {
        const double* rp = row_ptr(r);
        double acc = 0.0;
        for (size_t c = 0; c < cols_; ++c) acc += rp[c] * v[c];
        out[r] = acc;
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data()) acc += v * v;
    return std::sqrt(acc);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

std::string Shape3::str() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "(%zu,%zu,%zu)", c, h, w);
    return buf;
}

ImageBatch ImageBatch::slice(size_t begin, size_t end) const {
    if (begin > end || end > n_) throw ShapeError("batch slice out of range");
    ImageBatch out(end - begin, shape_);
    std::copy(sample_ptr(begin), sample_ptr(begin) + (end - begin) * sample_size(),
              out.data_.begin());
    return out;
}

ImageBatch ImageBatch::gather(const std::vector<size_t>& indices) const {
    ImageBatch out(indices.size(), shape_);
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n_) throw ShapeError("gather index out of range");
        std::copy(sample_ptr(indices[i]), sample_ptr(indices[i]) + sample_size(),
                  out.sample_ptr(i));
    }
    return out;
}

void ImageBatch::append(const ImageBatch& other) {
    if (shape_.numel() == 0 && n_ == 0) {
        // untyped accumulator adopts the first batch's shape
        *this = other;
        return;
    }
    if (!(other.shape_ == shape_)) throw ShapeError("append: sample shape mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    n_ += other.n_;
}

Matrix ImageBatch::as_matrix() const {
    Matrix m(n_, sample_size());
    m.data() = data_;
    return m;
}

ImageBatch ImageBatch::from_matrix(const Matrix& m, Shape3 shape) {
    if (shape.numel() != m.cols()) throw ShapeError("from_matrix: shape does not match columns");
    ImageBatch b(m.rows(), shape);
    b.data() = m.data();
    return b;
}

void require_finite(const ImageBatch& x, const char* what) {
    for (double v : x.data())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite input in ") + what);
}

void Fnv1a::update(const void* bytes, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
        hash_ ^= p[i];
        hash_ *= 0x100000001b3ull;
    }
}

uint64_t fnv1a(const void* bytes, size_t len) {
    Fnv1a h;
    h.update(bytes, len);
    return h.value();
}

uint64_t fnv1a(const std::vector<double>& v) {
    return fnv1a(v.data(), v.size() * sizeof(double));
}

std::string digest_hex(uint64_t digest) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
    return buf;
}

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads.store(std::max(1, n)); }
int thread_count() { return g_threads.load(); }

void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body) {
    int nt = thread_count();
    if (nt <= 1 || n < 2) {
        body(0, n);
        return;
    }
    size_t chunks = std::min<size_t>(nt, n);
    size_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    for (size_t c = 0; c < chunks; ++c) {
        size_t b = c * per, e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& t : pool) t.join();
}

double pairwise_sum(const double* v, size_t n) {
    if (n <= 8) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += v[i];
        return acc;
    }
    size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int prec = 1; prec <= 16; ++prec) {
        char trial[40];
        std::snprintf(trial, sizeof(trial), "%.*g", prec, v);
        if (std::strtod(trial, nullptr) == v) return trial;
    }
    return buf;
}

}  // namespace diffbench

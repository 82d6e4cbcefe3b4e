#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffbench {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes, so keep the hierarchy
// flat: ConfigError -> 2, DataError -> 3, NumericError -> 4.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct ShapeError : DataError {
    using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Deterministic PRNG. splitmix64 core with an explicit Box-Muller normal so
// results are bit-identical across standard libraries and platforms. Every
// source of randomness in the project flows through one of these, seeded
// explicitly; sub-streams are derived with split() so batch partitioning
// never changes results.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (cosine branch only, no cached state)
    double normal();

    // integer in [0, n)
    uint64_t below(uint64_t n);

    // Counter-based sub-stream derivation from the construction seed. The
    // parent's consumption state does not influence the child.
    Rng split(uint64_t stream) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles. Covariances, feature clouds and vector
// datasets all live here; the heavier factorizations are in linalg.hpp.
// ---------------------------------------------------------------------------

class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(size_t rows, size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(size_t n);
    static Matrix diagonal(const std::vector<double>& d);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }

    double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
    double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    double* row_ptr(size_t r) { return data_.data() + r * cols_; }
    const double* row_ptr(size_t r) const { return data_.data() + r * cols_; }
    std::vector<double> row(size_t r) const {
        return std::vector<double>(row_ptr(r), row_ptr(r) + cols_);
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Matrix transposed() const;
    Matrix operator*(const Matrix& rhs) const;
    std::vector<double> apply(const std::vector<double>& v) const;

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    size_t rows_, cols_;
    std::vector<double> data_;
};

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// ImageBatch: the universal sample container, shape (n, c, h, w), doubles.
// Vector-valued data is carried as (n, d, 1, 1).
// ---------------------------------------------------------------------------

struct Shape3 {
    size_t c = 0, h = 0, w = 0;
    size_t numel() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

class ImageBatch {
public:
    ImageBatch() : n_(0) {}
    ImageBatch(size_t n, Shape3 shape, double fill = 0.0)
        : n_(n), shape_(shape), data_(n * shape.numel(), fill) {}
    ImageBatch(size_t n, size_t c, size_t h, size_t w, double fill = 0.0)
        : ImageBatch(n, Shape3{c, h, w}, fill) {}

    size_t count() const { return n_; }
    Shape3 sample_shape() const { return shape_; }
    size_t sample_size() const { return shape_.numel(); }
    size_t size() const { return data_.size(); }

    double& at(size_t i, size_t c, size_t y, size_t x) {
        return data_[((i * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    double at(size_t i, size_t c, size_t y, size_t x) const {
        return data_[((i * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    double* sample_ptr(size_t i) { return data_.data() + i * sample_size(); }
    const double* sample_ptr(size_t i) const { return data_.data() + i * sample_size(); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    ImageBatch slice(size_t begin, size_t end) const;
    ImageBatch sample(size_t i) const { return slice(i, i + 1); }
    ImageBatch gather(const std::vector<size_t>& indices) const;
    void append(const ImageBatch& other);

    // flat (n x d) view of the batch
    Matrix as_matrix() const;
    static ImageBatch from_matrix(const Matrix& m, Shape3 shape);
    static ImageBatch from_matrix(const Matrix& m) {
        return from_matrix(m, Shape3{m.cols(), 1, 1});
    }

private:
    size_t n_;
    Shape3 shape_;
    std::vector<double> data_;
};

void require_finite(const ImageBatch& x, const char* what);

// ---------------------------------------------------------------------------
// FNV-1a 64-bit digest, used for dataset footers and manifest integrity.
// ---------------------------------------------------------------------------

class Fnv1a {
public:
    void update(const void* bytes, size_t len);
    uint64_t value() const { return hash_; }

private:
    uint64_t hash_ = 0xcbf29ce484222325ull;
};

uint64_t fnv1a(const void* bytes, size_t len);
uint64_t fnv1a(const std::vector<double>& v);
std::string digest_hex(uint64_t digest);

// ---------------------------------------------------------------------------
// Threading. parallel_for partitions [0, n) into contiguous ranges with
// disjoint writes, so results are independent of the thread count.
// ---------------------------------------------------------------------------

void set_thread_count(int n);
int thread_count();
void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body);

// Deterministic pairwise (fixed fan-in 2) summation; the reduction tree
// depends only on the element count.
double pairwise_sum(const double* v, size_t n);

// Shortest round-trip decimal rendering for CSV and manifests.
std::string format_double(double v);

}  // namespace diffbench

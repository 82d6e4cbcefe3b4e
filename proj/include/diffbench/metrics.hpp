#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/nn.hpp"

namespace diffbench::metrics {

// ---------------------------------------------------------------------------
// Gaussian summary of a feature cloud.
// ---------------------------------------------------------------------------

struct FeatureStats {
    std::vector<double> mean;
    Matrix covariance;
    size_t count = 0;
    std::string extractor_id;  // stamped when produced through an extractor

    size_t dim() const { return mean.size(); }
    uint64_t digest() const;
};

// column means and unbiased sample covariance; requires n >= 2
FeatureStats compute_stats(const Matrix& features);

// Symmetric PSD square root via eigendecomposition. Eigenvalues below
// 1e-10 are clamped to zero; values beyond -1e-8 (relative) raise.
Matrix matrix_sqrt_psd(const Matrix& m);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// ---------------------------------------------------------------------------
// Feature extractors standing in for the usual deep features: raw pixels
// for oracle-checkable tests, seeded random projections and random conv
// features for deep-feature-like behavior. Extraction is deterministic
// given the kind parameters.
// ---------------------------------------------------------------------------

class FeatureExtractor {
public:
    enum class Kind { raw_pixels, random_projection, random_conv };

    static FeatureExtractor raw_pixels(size_t downsample = 1);
    static FeatureExtractor random_projection(size_t dim, uint64_t seed);
    static FeatureExtractor random_conv(uint64_t arch_seed, size_t out_dim);

    Kind kind() const { return kind_; }
    const std::string& id() const { return id_; }

    Matrix extract(const ImageBatch& batch) const;
    FeatureStats stats(const ImageBatch& batch) const;

private:
    FeatureExtractor() = default;

    Kind kind_ = Kind::raw_pixels;
    size_t downsample_ = 1;
    size_t dim_ = 0;
    uint64_t seed_ = 0;
    std::string id_;

    struct Cache;
    std::shared_ptr<Cache> cache_;  // lazily built projection / conv net
};

// ---------------------------------------------------------------------------
// FID and protocols.
// ---------------------------------------------------------------------------

double fid(const FeatureStats& real, const FeatureStats& generated);
double fid(const ImageBatch& real, const ImageBatch& generated, const FeatureExtractor& ex);
double fid(const FeatureStats& real, const ImageBatch& generated, const FeatureExtractor& ex);

// FID between a uniformly random disjoint half/half split of one dataset.
double optimal_fid(const ImageBatch& dataset, const FeatureExtractor& ex, uint64_t split_seed);

// n distinct indices drawn from [0, pool) without replacement
std::vector<size_t> subsample_indices(size_t pool, size_t n, uint64_t seed);

enum class VarianceMode { vary_real, vary_generated };

struct VarianceProtocol {
    VarianceMode mode = VarianceMode::vary_real;
    int repeats = 10;
    size_t n_real = 0;  // real subsample size per repeat (0: whole pool)
    uint64_t master_seed = 0;
    std::vector<uint64_t> repeat_seeds;  // optional; derived from master when empty
};

struct VarianceResult {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::vector<double> values;
    std::vector<uint64_t> seeds;
    double mean_pairwise_overlap = 0.0;  // real-subsample overlap fraction, vary_real only
};

// vary_real: one fixed generated set (generate(master_seed)), fresh real
// subsample per repeat. vary_generated: one fixed real subsample, fresh
// generation seed per repeat.
VarianceResult fid_variance_protocol(const VarianceProtocol& protocol, const ImageBatch& real_pool,
                                     const std::function<ImageBatch(uint64_t)>& generate,
                                     const FeatureExtractor& ex);

// ---------------------------------------------------------------------------
// Result record and stats cache formats.
// ---------------------------------------------------------------------------

struct FidRecord {
    std::string extractor;
    size_t n_real = 0;
    size_t n_gen = 0;
    uint64_t seed = 0;
    double value = 0.0;
    std::string real_stats_digest;
    std::string gen_stats_digest;

    std::string to_json() const;
};

// returns the payload digest stored in the file footer
uint64_t save_stats(const std::string& path, const FeatureStats& stats);
FeatureStats load_stats(const std::string& path);

}  // namespace diffbench::metrics

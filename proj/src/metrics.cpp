#include "diffbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "diffbench/linalg.hpp"
#include "diffbench/wire.hpp"

#include "json.hpp"

namespace diffbench::metrics {

uint64_t FeatureStats::digest() const {
    Fnv1a h;
    uint64_t c = count;
    h.update(&c, sizeof(c));
    h.update(mean.data(), mean.size() * sizeof(double));
    h.update(covariance.data().data(), covariance.data().size() * sizeof(double));
    h.update(extractor_id.data(), extractor_id.size());
    return h.value();
}

FeatureStats compute_stats(const Matrix& features) {
    const size_t n = features.rows(), d = features.cols();
    if (n < 2) throw DataError("compute_stats: need at least 2 rows");
    FeatureStats s;
    s.count = n;
    s.mean.assign(d, 0.0);
    // column means via deterministic pairwise reduction
    std::vector<double> column(n);
    for (size_t j = 0; j < d; ++j) {
        for (size_t i = 0; i < n; ++i) column[i] = features(i, j);
        s.mean[j] = pairwise_sum(column.data(), n) / double(n);
    }
    Matrix centered(n, d);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) centered(i, j) = features(i, j) - s.mean[j];
    s.covariance = Matrix(d, d);
    Matrix& cov = s.covariance;
    parallel_for(d, [&](size_t j0, size_t j1) {
        std::vector<double> products(n);
        for (size_t j = j0; j < j1; ++j) {
            for (size_t k = j; k < d; ++k) {
                for (size_t i = 0; i < n; ++i) products[i] = centered(i, j) * centered(i, k);
                double v = pairwise_sum(products.data(), n) / double(n - 1);
                cov(j, k) = v;
            }
        }
    });
    for (size_t j = 0; j < d; ++j)
        for (size_t k = 0; k < j; ++k) cov(j, k) = cov(k, j);
    return s;
}

Matrix matrix_sqrt_psd(const Matrix& m) {
    linalg::SymEig eig = linalg::sym_eig(m, 1e-8);
    double top = eig.values.empty() ? 0.0 : std::max(0.0, eig.values.back());
    double neg_tol = 1e-8 * std::max(1.0, top);
    std::vector<double> mapped(eig.values.size());
    for (size_t i = 0; i < eig.values.size(); ++i) {
        double v = eig.values[i];
        if (v < -neg_tol)
            throw NumericError("matrix_sqrt_psd: eigenvalue " + format_double(v) +
                               " below PSD tolerance");
        mapped[i] = v < 1e-10 ? 0.0 : std::sqrt(v);
    }
    return linalg::reassemble(eig, mapped);
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim()) throw ShapeError("frechet_distance: dimension mismatch");
    const size_t d = a.dim();
    double mean_term = 0.0;
    for (size_t i = 0; i < d; ++i) {
        double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }
    double trace_a = 0.0, trace_b = 0.0;
    for (size_t i = 0; i < d; ++i) {
        trace_a += a.covariance(i, i);
        trace_b += b.covariance(i, i);
    }
    // sqrt of the symmetrized product: Sa^1/2 Sb Sa^1/2
    Matrix sa_half = matrix_sqrt_psd(a.covariance);
    Matrix inner = sa_half * b.covariance * sa_half;
    linalg::SymEig eig = linalg::sym_eig(linalg::symmetrize(inner), 1e-6);
    double top = eig.values.empty() ? 0.0 : std::max(0.0, eig.values.back());
    double neg_tol = 1e-8 * std::max(1.0, top);
    double trace_sqrt = 0.0;
    for (double v : eig.values) {
        if (v < -neg_tol && v < -1e-10)
            throw NumericError("frechet_distance: product matrix not PSD");
        if (v > 1e-10) trace_sqrt += std::sqrt(v);
    }
    double value = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    // exact-zero case loses to roundoff; clamp tiny negatives
    return value < 0.0 ? 0.0 : value;
}

// ------------------------------ extractors ---------------------------------

struct FeatureExtractor::Cache {
    std::mutex mu;
    bool built = false;
    Shape3 input_shape{};
    Matrix projection;     // random_projection
    nn::Network conv_net;  // random_conv
};

FeatureExtractor FeatureExtractor::raw_pixels(size_t downsample) {
    if (downsample == 0) throw ConfigError("raw_pixels: downsample must be positive");
    FeatureExtractor ex;
    ex.kind_ = Kind::raw_pixels;
    ex.downsample_ = downsample;
    ex.id_ = downsample == 1 ? "raw_pixels" : "raw_pixels_ds" + std::to_string(downsample);
    ex.cache_ = std::make_shared<Cache>();
    return ex;
}

FeatureExtractor FeatureExtractor::random_projection(size_t dim, uint64_t seed) {
    if (dim == 0) throw ConfigError("random_projection: dim must be positive");
    FeatureExtractor ex;
    ex.kind_ = Kind::random_projection;
    ex.dim_ = dim;
    ex.seed_ = seed;
    ex.id_ = "random_projection_d" + std::to_string(dim) + "_s" + std::to_string(seed);
    ex.cache_ = std::make_shared<Cache>();
    return ex;
}

FeatureExtractor FeatureExtractor::random_conv(uint64_t arch_seed, size_t out_dim) {
    if (out_dim == 0) throw ConfigError("random_conv: out_dim must be positive");
    FeatureExtractor ex;
    ex.kind_ = Kind::random_conv;
    ex.dim_ = out_dim;
    ex.seed_ = arch_seed;
    ex.id_ = "random_conv_d" + std::to_string(out_dim) + "_s" + std::to_string(arch_seed);
    ex.cache_ = std::make_shared<Cache>();
    return ex;
}

Matrix FeatureExtractor::extract(const ImageBatch& batch) const {
    if (batch.count() == 0) throw DataError("extract: empty batch");
    const Shape3 shape = batch.sample_shape();

    if (kind_ == Kind::raw_pixels) {
        if (downsample_ == 1) return batch.as_matrix();
        const size_t f = downsample_;
        const size_t oh = (shape.h + f - 1) / f, ow = (shape.w + f - 1) / f;
        Matrix out(batch.count(), shape.c * oh * ow);
        parallel_for(batch.count(), [&](size_t s0, size_t s1) {
            for (size_t s = s0; s < s1; ++s) {
                size_t col = 0;
                for (size_t c = 0; c < shape.c; ++c) {
                    for (size_t by = 0; by < oh; ++by) {
                        for (size_t bx = 0; bx < ow; ++bx) {
                            double acc = 0.0;
                            size_t cnt = 0;
                            for (size_t y = by * f; y < std::min(shape.h, (by + 1) * f); ++y)
                                for (size_t x = bx * f; x < std::min(shape.w, (bx + 1) * f); ++x) {
                                    acc += batch.at(s, c, y, x);
                                    ++cnt;
                                }
                            out(s, col++) = acc / double(cnt);
                        }
                    }
                }
            }
        });
        return out;
    }

    // seeded kinds build their transform lazily for the first input shape
    {
        std::lock_guard<std::mutex> lock(cache_->mu);
        if (!cache_->built) {
            cache_->input_shape = shape;
            Rng rng(seed_);
            if (kind_ == Kind::random_projection) {
                const size_t din = shape.numel();
                Matrix proj(dim_, din);
                double scale = 1.0 / std::sqrt(double(din));
                for (auto& v : proj.data()) v = scale * rng.normal();
                cache_->projection = std::move(proj);
            } else {
                if (shape.h < 4 || shape.w < 4)
                    throw ShapeError("random_conv: needs spatial extent of at least 4x4");
                std::vector<nn::LayerSpec> layers = {
                    nn::Conv{shape.c, 8, 3, 2},  nn::Act{nn::Activation::relu},
                    nn::Conv{8, 16, 3, 2},       nn::Act{nn::Activation::relu},
                    nn::Flatten{},
                };
                nn::Network stem(shape, layers);
                size_t flat = stem.output_shape().numel();
                layers.push_back(nn::Dense{flat, dim_});
                cache_->conv_net = nn::Network(shape, layers);
                cache_->conv_net.initialize(rng);
            }
            cache_->built = true;
        } else if (!(cache_->input_shape == shape)) {
            throw ShapeError("extractor " + id_ + " was built for " + cache_->input_shape.str() +
                             ", got " + shape.str());
        }
    }

    if (kind_ == Kind::random_projection) {
        const Matrix& proj = cache_->projection;
        Matrix out(batch.count(), dim_);
        parallel_for(batch.count(), [&](size_t s0, size_t s1) {
            for (size_t s = s0; s < s1; ++s) {
                const double* xs = batch.sample_ptr(s);
                for (size_t j = 0; j < dim_; ++j) {
                    const double* row = proj.row_ptr(j);
                    double acc = 0.0;
                    for (size_t i = 0; i < proj.cols(); ++i) acc += row[i] * xs[i];
                    out(s, j) = acc;
                }
            }
        });
        return out;
    }

    ImageBatch features = cache_->conv_net.forward(batch, nn::Mode::eval);
    return features.as_matrix();
}

FeatureStats FeatureExtractor::stats(const ImageBatch& batch) const {
    FeatureStats s = compute_stats(extract(batch));
    s.extractor_id = id_;
    return s;
}

// --------------------------------- fid --------------------------------------

double fid(const FeatureStats& real, const FeatureStats& generated) {
    if (!real.extractor_id.empty() && !generated.extractor_id.empty() &&
        real.extractor_id != generated.extractor_id)
        throw ConfigError("fid: extractor mismatch (" + real.extractor_id + " vs " +
                          generated.extractor_id + ")");
    return frechet_distance(real, generated);
}

double fid(const ImageBatch& real, const ImageBatch& generated, const FeatureExtractor& ex) {
    return fid(ex.stats(real), ex.stats(generated));
}

double fid(const FeatureStats& real, const ImageBatch& generated, const FeatureExtractor& ex) {
    if (!real.extractor_id.empty() && real.extractor_id != ex.id())
        throw ConfigError("fid: cached stats were computed with " + real.extractor_id +
                          ", requested " + ex.id());
    return fid(real, ex.stats(generated));
}

double optimal_fid(const ImageBatch& dataset, const FeatureExtractor& ex, uint64_t split_seed) {
    const size_t n = dataset.count();
    if (n < 4) throw DataError("optimal_fid: dataset too small (need >= 4)");
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(split_seed);
    for (size_t i = n; i-- > 1;) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<size_t> left(idx.begin(), idx.begin() + n / 2);
    std::vector<size_t> right(idx.begin() + n / 2, idx.end());
    return fid(dataset.gather(left), dataset.gather(right), ex);
}

std::vector<size_t> subsample_indices(size_t pool, size_t n, uint64_t seed) {
    if (n > pool) throw DataError("subsample: requested more elements than the pool holds");
    std::vector<size_t> idx(pool);
    for (size_t i = 0; i < pool; ++i) idx[i] = i;
    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
        size_t j = i + size_t(rng.below(pool - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
}

VarianceResult fid_variance_protocol(const VarianceProtocol& protocol,
                                     const ImageBatch& real_pool,
                                     const std::function<ImageBatch(uint64_t)>& generate,
                                     const FeatureExtractor& ex) {
    if (protocol.repeats < 2) throw ConfigError("fid_variance_protocol: repeats must be >= 2");
    if (!protocol.repeat_seeds.empty() &&
        protocol.repeat_seeds.size() != size_t(protocol.repeats))
        throw ConfigError("fid_variance_protocol: one seed per repeat required");
    const size_t pool = real_pool.count();
    size_t n_real = protocol.n_real == 0 ? pool : protocol.n_real;
    if (n_real > pool) throw DataError("fid_variance_protocol: real pool smaller than subsample");

    Rng master(protocol.master_seed);
    VarianceResult result;
    result.seeds.reserve(protocol.repeats);
    for (int r = 0; r < protocol.repeats; ++r)
        result.seeds.push_back(protocol.repeat_seeds.empty() ? master.split(uint64_t(r)).seed()
                                                             : protocol.repeat_seeds[r]);

    std::vector<std::vector<size_t>> used_subsamples;
    if (protocol.mode == VarianceMode::vary_real) {
        ImageBatch generated = generate(protocol.master_seed);
        FeatureStats gen_stats = ex.stats(generated);
        for (int r = 0; r < protocol.repeats; ++r) {
            std::vector<size_t> idx = subsample_indices(pool, n_real, result.seeds[r]);
            used_subsamples.push_back(idx);
            FeatureStats real_stats = ex.stats(real_pool.gather(idx));
            result.values.push_back(fid(real_stats, gen_stats));
        }
        // record how much the real subsamples overlapped
        double overlap_acc = 0.0;
        size_t pairs = 0;
        for (size_t a = 0; a < used_subsamples.size(); ++a) {
            for (size_t b = a + 1; b < used_subsamples.size(); ++b) {
                std::vector<size_t> sa = used_subsamples[a], sb = used_subsamples[b];
                std::sort(sa.begin(), sa.end());
                std::sort(sb.begin(), sb.end());
                std::vector<size_t> inter;
                std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                                      std::back_inserter(inter));
                overlap_acc += double(inter.size()) / double(n_real);
                ++pairs;
            }
        }
        result.mean_pairwise_overlap = pairs ? overlap_acc / double(pairs) : 0.0;
    } else {
        std::vector<size_t> idx = subsample_indices(pool, n_real, protocol.master_seed);
        FeatureStats real_stats = ex.stats(real_pool.gather(idx));
        for (int r = 0; r < protocol.repeats; ++r)
            result.values.push_back(fid(real_stats, generate(result.seeds[r]), ex));
    }

    double mean = pairwise_sum(result.values.data(), result.values.size()) /
                  double(result.values.size());
    double ss = 0.0;
    for (double v : result.values) ss += (v - mean) * (v - mean);
    result.mean = mean;
    result.stddev = std::sqrt(ss / double(result.values.size() - 1));
    return result;
}

// ----------------------- records and stats cache ----------------------------

std::string FidRecord::to_json() const {
    nlohmann::json j;
    j["extractor"] = extractor;
    j["n_real"] = n_real;
    j["n_gen"] = n_gen;
    j["seed"] = seed;
    j["value"] = value;
    j["real_stats_digest"] = real_stats_digest;
    j["gen_stats_digest"] = gen_stats_digest;
    return j.dump();
}

namespace {
constexpr char kStatsMagic[4] = {'D', 'B', 'F', 'S'};
constexpr uint32_t kStatsVersion = 1;
}  // namespace

uint64_t save_stats(const std::string& path, const FeatureStats& stats) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("stats cache: cannot open " + path + " for writing");
    std::ostringstream body;
    wire::put_bytes(body, kStatsMagic, 4);
    wire::put_u32(body, kStatsVersion);
    wire::put_string(body, stats.extractor_id);
    wire::put_u64(body, stats.count);
    wire::put_u32(body, uint32_t(stats.dim()));
    for (double v : stats.mean) wire::put_f64(body, v);
    for (double v : stats.covariance.data()) wire::put_f64(body, v);
    std::string payload = body.str();
    uint64_t digest = fnv1a(payload.data(), payload.size());
    wire::put_bytes(os, payload.data(), payload.size());
    wire::put_u64(os, digest);
    if (!os) throw DataError("stats cache: write failed for " + path);
    return digest;
}

FeatureStats load_stats(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("stats cache: cannot open " + path);
    char magic[4];
    wire::get_bytes(is, magic, 4, "stats cache");
    if (std::memcmp(magic, kStatsMagic, 4) != 0) throw DataError("stats cache: bad magic");
    uint32_t version = wire::get_u32(is, "stats cache");
    if (version != kStatsVersion) throw DataError("stats cache: unsupported version");
    FeatureStats s;
    s.extractor_id = wire::get_string(is, "stats cache");
    s.count = wire::get_u64(is, "stats cache");
    uint32_t d = wire::get_u32(is, "stats cache");
    s.mean.resize(d);
    for (auto& v : s.mean) v = wire::get_f64(is, "stats cache");
    s.covariance = Matrix(d, d);
    for (auto& v : s.covariance.data()) v = wire::get_f64(is, "stats cache");
    uint64_t stored = wire::get_u64(is, "stats cache");
    // recompute digest over the payload bytes
    is.clear();
    is.seekg(0, std::ios::end);
    std::streamoff total = is.tellg();
    is.seekg(0);
    std::string payload(size_t(total) - 8, '\0');
    wire::get_bytes(is, payload.data(), payload.size(), "stats cache");
    if (fnv1a(payload.data(), payload.size()) != stored)
        throw DataError("stats cache: digest mismatch");
    return s;
}

}  // namespace diffbench::metrics

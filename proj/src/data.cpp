#include "diffbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "diffbench/linalg.hpp"
#include "diffbench/wire.hpp"

namespace diffbench::data {

void FrameDataset::validate() const {
    if (manifest.size() != images.count())
        throw DataError("dataset: manifest length does not match image count");
    if (!(normalization.native_hi > normalization.native_lo))
        throw DataError("dataset: degenerate normalization range");
}

uint64_t FrameDataset::content_digest() const {
    Fnv1a h;
    for (const ManifestEntry& e : manifest) {
        h.update(e.source_id.data(), e.source_id.size());
        h.update(&e.frame_index, sizeof(e.frame_index));
    }
    h.update(images.data().data(), images.data().size() * sizeof(double));
    return h.value();
}

std::vector<size_t> subsample_indices(size_t frame_count, size_t stride) {
    if (frame_count == 0) throw DataError("subsample_frames: empty video");
    if (stride == 0) throw ConfigError("subsample_frames: stride must be >= 1");
    std::vector<size_t> kept;
    for (size_t i = 0; i < frame_count; i += stride) kept.push_back(i);
    return kept;
}

FrameDataset subsample_frames(const FrameDataset& video, size_t stride) {
    std::vector<size_t> idx = subsample_indices(video.images.count(), stride);
    FrameDataset out;
    out.images = video.images.gather(idx);
    for (size_t i : idx) out.manifest.push_back(video.manifest[i]);
    out.normalization = video.normalization;
    return out;
}

ImageBatch resize_bilinear(const ImageBatch& images, size_t out_h, size_t out_w) {
    const Shape3 in = images.sample_shape();
    if (in.h == 0 || in.w == 0) throw DataError("resize: zero-sized input");
    if (out_h == 0 || out_w == 0) throw ConfigError("resize: target dims must be positive");
    if (in.h == out_h && in.w == out_w) return images;
    ImageBatch out(images.count(), Shape3{in.c, out_h, out_w});
    const double sy = double(in.h) / double(out_h);
    const double sx = double(in.w) / double(out_w);
    parallel_for(images.count(), [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            for (size_t c = 0; c < in.c; ++c) {
                for (size_t oy = 0; oy < out_h; ++oy) {
                    double fy = (double(oy) + 0.5) * sy - 0.5;
                    double cy = std::clamp(fy, 0.0, double(in.h - 1));
                    size_t y0 = size_t(cy);
                    size_t y1 = std::min(y0 + 1, in.h - 1);
                    double wy = cy - double(y0);
                    for (size_t ox = 0; ox < out_w; ++ox) {
                        double fx = (double(ox) + 0.5) * sx - 0.5;
                        double cx = std::clamp(fx, 0.0, double(in.w - 1));
                        size_t x0 = size_t(cx);
                        size_t x1 = std::min(x0 + 1, in.w - 1);
                        double wx = cx - double(x0);
                        double v = (1.0 - wy) * ((1.0 - wx) * images.at(s, c, y0, x0) +
                                                 wx * images.at(s, c, y0, x1)) +
                                   wy * ((1.0 - wx) * images.at(s, c, y1, x0) +
                                         wx * images.at(s, c, y1, x1));
                        out.at(s, c, oy, ox) = v;
                    }
                }
            }
        }
    });
    return out;
}

// ------------------------------- phantoms ----------------------------------

void PhantomParams::validate() const {
    if (height == 0 || width == 0) throw ConfigError("phantom: zero resolution");
    if (!(sector_angle_deg > 0.0 && sector_angle_deg < 180.0))
        throw ConfigError("phantom: sector angle must be inside (0, 180) degrees");
    if (intensity_weights.empty() || intensity_weights.size() != intensity_means.size() ||
        intensity_weights.size() != intensity_stds.size())
        throw ConfigError("phantom: intensity GMM fields must have matching lengths");
    double total = 0.0;
    for (size_t i = 0; i < intensity_weights.size(); ++i) {
        if (!(intensity_weights[i] > 0.0)) throw ConfigError("phantom: weights must be positive");
        if (!(intensity_stds[i] > 0.0)) throw ConfigError("phantom: stds must be positive");
        total += intensity_weights[i];
    }
    if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("phantom: weights must sum to 1");
    if (!(speckle_grain >= 0.0)) throw ConfigError("phantom: speckle grain must be >= 0");
}

std::vector<uint8_t> sector_mask(const PhantomParams& p) {
    p.validate();
    std::vector<uint8_t> mask(p.height * p.width, 0);
    const double ax = p.apex_x * double(p.width);
    const double ay = p.apex_y * double(p.height);
    const double half = 0.5 * p.sector_angle_deg * M_PI / 180.0;
    const double rmax = 0.92 * double(p.height);
    for (size_t y = 0; y < p.height; ++y) {
        for (size_t x = 0; x < p.width; ++x) {
            double vx = (double(x) + 0.5) - ax;
            double vy = (double(y) + 0.5) - ay;
            if (vy <= 0.0) continue;
            double r = std::sqrt(vx * vx + vy * vy);
            if (r > rmax) continue;
            if (std::fabs(std::atan2(vx, vy)) <= half) mask[y * p.width + x] = 1;
        }
    }
    return mask;
}

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

double intensity_gmm_cdf(const PhantomParams& p, double v) {
    double acc = 0.0;
    for (size_t k = 0; k < p.intensity_weights.size(); ++k)
        acc += p.intensity_weights[k] * std_normal_cdf((v - p.intensity_means[k]) / p.intensity_stds[k]);
    return acc;
}

double intensity_gmm_quantile(const PhantomParams& p, double u) {
    double lo = p.intensity_means[0], hi = p.intensity_means[0];
    for (size_t k = 0; k < p.intensity_means.size(); ++k) {
        lo = std::min(lo, p.intensity_means[k] - 10.0 * p.intensity_stds[k]);
        hi = std::max(hi, p.intensity_means[k] + 10.0 * p.intensity_stds[k]);
    }
    for (int iter = 0; iter < 80; ++iter) {
        double mid = 0.5 * (lo + hi);
        if (intensity_gmm_cdf(p, mid) < u)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

FrameDataset generate_phantoms(const PhantomParams& p, size_t n, uint64_t seed) {
    p.validate();
    if (n == 0) throw ConfigError("phantom: n must be >= 1");
    const size_t h = p.height, w = p.width;
    std::vector<uint8_t> mask = sector_mask(p);
    std::vector<size_t> inside;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) inside.push_back(i);
    if (inside.empty()) throw ConfigError("phantom: sector mask is empty");

    // anatomical field: a fixed blob mixture drawn once from the structure seed
    struct Blob {
        double cx, cy, radius, amplitude;
    };
    Rng structure(p.structure_seed);
    std::vector<Blob> blobs;
    const int blob_count = 6;
    for (int b = 0; b < blob_count; ++b) {
        Blob blob;
        blob.cx = structure.uniform(0.1, 0.9) * double(w);
        blob.cy = structure.uniform(0.15, 0.95) * double(h);
        blob.radius = structure.uniform(0.08, 0.30) * double(h);
        blob.amplitude = structure.uniform(-1.0, 1.0);
        blobs.push_back(blob);
    }
    double tilt_x = structure.uniform(-0.5, 0.5);
    double tilt_y = structure.uniform(-0.5, 0.5);
    std::vector<double> field(h * w, 0.0);
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            double v = tilt_x * double(x) / double(w) + tilt_y * double(y) / double(h);
            for (const Blob& b : blobs) {
                double dx = (double(x) + 0.5) - b.cx;
                double dy = (double(y) + 0.5) - b.cy;
                v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
            }
            field[y * w + x] = std::exp(v);  // positive smooth field
        }
    }

    FrameDataset out;
    out.normalization = Normalization{0.0, 1.0};
    out.images = ImageBatch(n, Shape3{1, h, w}, out.normalization.to_normalized(0.0));
    out.manifest.resize(n);

    Rng master(seed);
    // order of raw values is per-pixel stable, so ranking is deterministic
    parallel_for(n, [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            Rng img_rng = master.split(s);
            std::vector<double> raw(inside.size());
            for (size_t j = 0; j < inside.size(); ++j) {
                double speckle =
                    p.speckle_grain == 0.0 ? 1.0 : std::exp(p.speckle_grain * img_rng.normal());
                raw[j] = field[inside[j]] * speckle;
            }
            // rank-map the in-mask values onto the configured intensity GMM
            std::vector<size_t> order(raw.size());
            std::iota(order.begin(), order.end(), size_t(0));
            std::stable_sort(order.begin(), order.end(),
                             [&raw](size_t a, size_t b) { return raw[a] < raw[b]; });
            double* img = out.images.sample_ptr(s);
            for (size_t rank = 0; rank < order.size(); ++rank) {
                double u = (double(rank) + 0.5) / double(order.size());
                double native = std::clamp(intensity_gmm_quantile(p, u), 0.0, 1.0);
                img[inside[order[rank]]] = out.normalization.to_normalized(native);
            }
        }
    });
    for (size_t s = 0; s < n; ++s)
        out.manifest[s] = ManifestEntry{"phantom", uint32_t(s)};
    return out;
}

// ----------------------------- GMM datasets ---------------------------------

namespace {

void validate_gmm_spec(const std::vector<diffusion::GmmComponent>& spec) {
    if (spec.empty()) throw ConfigError("gmm dataset: no components");
    double total = 0.0;
    for (const auto& c : spec) {
        if (!(c.weight > 0.0)) throw ConfigError("gmm dataset: weights must be positive");
        if (c.mean.size() != spec.front().mean.size())
            throw ConfigError("gmm dataset: component dimensions differ");
        total += c.weight;
    }
    if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("gmm dataset: weights must sum to 1");
}

}  // namespace

std::vector<size_t> gmm_component_assignments(const std::vector<diffusion::GmmComponent>& spec,
                                              size_t n, uint64_t seed) {
    validate_gmm_spec(spec);
    std::vector<size_t> out(n);
    Rng master(seed);
    for (size_t i = 0; i < n; ++i) {
        Rng draw = master.split(i);
        double u = draw.uniform();
        double acc = 0.0;
        size_t pick = spec.size() - 1;
        for (size_t k = 0; k < spec.size(); ++k) {
            acc += spec[k].weight;
            if (u < acc) {
                pick = k;
                break;
            }
        }
        out[i] = pick;
    }
    return out;
}

Matrix generate_gmm_dataset(const std::vector<diffusion::GmmComponent>& spec, size_t n,
                            uint64_t seed) {
    validate_gmm_spec(spec);
    const size_t d = spec.front().mean.size();
    std::vector<Matrix> chol;
    for (const auto& c : spec) {
        if (!linalg::is_symmetric(c.covariance, 1e-10))
            throw ConfigError("gmm dataset: covariance not symmetric");
        chol.push_back(linalg::cholesky(c.covariance));
    }
    Matrix out(n, d);
    Rng master(seed);
    parallel_for(n, [&](size_t s0, size_t s1) {
        std::vector<double> z(d);
        for (size_t i = s0; i < s1; ++i) {
            Rng draw = master.split(i);
            double u = draw.uniform();
            double acc = 0.0;
            size_t pick = spec.size() - 1;
            for (size_t k = 0; k < spec.size(); ++k) {
                acc += spec[k].weight;
                if (u < acc) {
                    pick = k;
                    break;
                }
            }
            for (size_t j = 0; j < d; ++j) z[j] = draw.normal();
            const Matrix& l = chol[pick];
            double* row = out.row_ptr(i);
            for (size_t r = 0; r < d; ++r) {
                double accv = spec[pick].mean[r];
                for (size_t c = 0; c <= r; ++c) accv += l(r, c) * z[c];
                row[r] = accv;
            }
        }
    });
    return out;
}

// ----------------------------- file format ----------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'B', 'D', 'S'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;
constexpr uint8_t kDtypeF32 = 2;

}  // namespace

void save_dataset(const std::string& path, const FrameDataset& dataset, bool as_f32) {
    dataset.validate();
    std::ostringstream body(std::ios::binary);
    wire::put_bytes(body, kMagic, 4);
    wire::put_u32(body, kVersion);
    wire::put_u64(body, dataset.images.count());
    Shape3 s = dataset.images.sample_shape();
    wire::put_u32(body, uint32_t(s.c));
    wire::put_u32(body, uint32_t(s.h));
    wire::put_u32(body, uint32_t(s.w));
    wire::put_u8(body, as_f32 ? kDtypeF32 : kDtypeF64);
    wire::put_f64(body, dataset.normalization.native_lo);
    wire::put_f64(body, dataset.normalization.native_hi);
    for (const ManifestEntry& e : dataset.manifest) {
        wire::put_string(body, e.source_id);
        wire::put_u32(body, e.frame_index);
    }
    if (as_f32) {
        for (double v : dataset.images.data()) {
            float f = float(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            wire::put_u32(body, bits);
        }
    } else {
        for (double v : dataset.images.data()) wire::put_f64(body, v);
    }
    std::string payload = body.str();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("dataset: cannot open " + path + " for writing");
    wire::put_bytes(os, payload.data(), payload.size());
    wire::put_u64(os, fnv1a(payload.data(), payload.size()));
    if (!os) throw DataError("dataset: write failed for " + path);
}

FrameDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open " + path);
    is.seekg(0, std::ios::end);
    std::streamoff total = is.tellg();
    is.seekg(0);
    if (total < 8) throw DataError("dataset: truncated payload (no digest footer)");

    char magic[4];
    wire::get_bytes(is, magic, 4, "dataset");
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("dataset: corrupt header (bad magic)");
    uint32_t version = wire::get_u32(is, "dataset");
    if (version != kVersion)
        throw DataError("dataset: version mismatch (file has " + std::to_string(version) + ")");
    uint64_t count = wire::get_u64(is, "dataset");
    Shape3 shape;
    shape.c = wire::get_u32(is, "dataset");
    shape.h = wire::get_u32(is, "dataset");
    shape.w = wire::get_u32(is, "dataset");
    uint8_t dtype = wire::get_u8(is, "dataset");
    if (dtype != kDtypeF64 && dtype != kDtypeF32)
        throw DataError("dataset: corrupt header (unknown dtype)");
    FrameDataset out;
    out.normalization.native_lo = wire::get_f64(is, "dataset");
    out.normalization.native_hi = wire::get_f64(is, "dataset");
    out.manifest.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        out.manifest[i].source_id = wire::get_string(is, "dataset");
        out.manifest[i].frame_index = wire::get_u32(is, "dataset");
    }
    out.images = ImageBatch(count, shape);
    if (dtype == kDtypeF64) {
        for (auto& v : out.images.data()) v = wire::get_f64(is, "dataset");
    } else {
        for (auto& v : out.images.data()) {
            uint32_t bits = wire::get_u32(is, "dataset");
            float f;
            std::memcpy(&f, &bits, 4);
            v = double(f);
        }
    }
    std::streamoff payload_end = is.tellg();
    if (payload_end < 0 || payload_end + 8 > total)
        throw DataError("dataset: truncated payload");
    uint64_t stored = wire::get_u64(is, "dataset");
    if (payload_end + 8 != total) throw DataError("dataset: trailing bytes after digest");
    // verify the digest over the payload bytes
    is.clear();
    is.seekg(0);
    std::string payload(size_t(payload_end), '\0');
    wire::get_bytes(is, payload.data(), payload.size(), "dataset");
    if (fnv1a(payload.data(), payload.size()) != stored)
        throw DataError("dataset: content digest mismatch");
    return out;
}

uint64_t dataset_file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open " + path);
    is.seekg(0, std::ios::end);
    std::streamoff total = is.tellg();
    if (total < 8) throw DataError("dataset: truncated payload (no digest footer)");
    is.seekg(total - 8);
    return wire::get_u64(is, "dataset");
}

FrameDataset ingest_frame_dir(const std::string& dir, const std::string& manifest_path, size_t h,
                              size_t w, double native_lo, double native_hi) {
    if (!(native_hi > native_lo)) throw ConfigError("ingest: degenerate native range");
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("ingest: cannot open manifest " + manifest_path);
    FrameDataset out;
    out.normalization = Normalization{native_lo, native_hi};
    out.images = ImageBatch(0, Shape3{1, h, w});
    std::string line;
    size_t line_no = 0;
    while (std::getline(mf, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string filename;
        long frame_index = -1;
        if (!(ls >> e.source_id >> frame_index >> filename) || frame_index < 0)
            throw DataError("ingest: bad manifest line " + std::to_string(line_no));
        e.frame_index = uint32_t(frame_index);
        std::filesystem::path fp = std::filesystem::path(dir) / filename;
        std::ifstream frame(fp, std::ios::binary);
        if (!frame) throw DataError("ingest: missing frame file " + fp.string());
        ImageBatch one(1, Shape3{1, h, w});
        for (auto& v : one.data())
            v = out.normalization.to_normalized(wire::get_f64(frame, "frame file"));
        out.images.append(one);
        out.manifest.push_back(e);
    }
    if (out.images.count() == 0) throw DataError("ingest: manifest lists no frames");
    return out;
}

}  // namespace diffbench::data

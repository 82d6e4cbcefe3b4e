#pragma once

#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/diffusion.hpp"

namespace diffbench::data {

// ---------------------------------------------------------------------------
// Dataset container. Images are stored normalized to [-1, 1]; the affine
// map back to the native range travels with the dataset.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string source_id;
    uint32_t frame_index = 0;
    bool operator==(const ManifestEntry&) const = default;
};

struct Normalization {
    double native_lo = -1.0;
    double native_hi = 1.0;

    double to_normalized(double v) const {
        return 2.0 * (v - native_lo) / (native_hi - native_lo) - 1.0;
    }
    double to_native(double v) const {
        return native_lo + (v + 1.0) * 0.5 * (native_hi - native_lo);
    }
};

struct FrameDataset {
    ImageBatch images;
    std::vector<ManifestEntry> manifest;
    Normalization normalization;

    void validate() const;
    uint64_t content_digest() const;
};

// ---------------------------------------------------------------------------
// Frame selection and resizing.
// ---------------------------------------------------------------------------

// indices 0, stride, 2*stride, ...; count = ceil(len / stride)
std::vector<size_t> subsample_indices(size_t frame_count, size_t stride);

template <typename T>
std::vector<T> subsample_frames(const std::vector<T>& frames, size_t stride) {
    if (frames.empty()) throw DataError("subsample_frames: empty video");
    std::vector<T> kept;
    for (size_t i : subsample_indices(frames.size(), stride)) kept.push_back(frames[i]);
    return kept;
}

FrameDataset subsample_frames(const FrameDataset& video, size_t stride);

// Bilinear interpolation, half-pixel-center convention; no overshoot beyond
// the input range. Operates on every image in the batch.
ImageBatch resize_bilinear(const ImageBatch& images, size_t out_h, size_t out_w);

// ---------------------------------------------------------------------------
// Synthetic ultrasound phantoms: a sector mask, a smooth anatomical field
// drawn from the structure seed, multiplicative speckle per image, and
// in-mask intensities mapped onto a configured 1-D GMM marginal.
// ---------------------------------------------------------------------------

struct PhantomParams {
    size_t height = 64;
    size_t width = 64;
    double sector_angle_deg = 75.0;
    double apex_x = 0.5;   // normalized [0,1] image coordinates
    double apex_y = 0.06;
    double speckle_grain = 0.35;  // log-std of the multiplicative speckle
    std::vector<double> intensity_weights{0.45, 0.40, 0.15};
    std::vector<double> intensity_means{0.18, 0.45, 0.75};
    std::vector<double> intensity_stds{0.06, 0.10, 0.08};
    uint64_t structure_seed = 1;

    void validate() const;
};

// background (outside the sector cone) is exactly -1 after normalization
FrameDataset generate_phantoms(const PhantomParams& params, size_t n, uint64_t seed);

// 1 inside the cone, 0 outside; row-major h*w
std::vector<uint8_t> sector_mask(const PhantomParams& params);

// CDF and quantile of the configured 1-D intensity mixture
double intensity_gmm_cdf(const PhantomParams& params, double v);
double intensity_gmm_quantile(const PhantomParams& params, double u);

// ---------------------------------------------------------------------------
// GMM vector datasets for the analytic oracles.
// ---------------------------------------------------------------------------

Matrix generate_gmm_dataset(const std::vector<diffusion::GmmComponent>& spec, size_t n,
                            uint64_t seed);
// per-draw component assignments for the same seed (testing hook)
std::vector<size_t> gmm_component_assignments(const std::vector<diffusion::GmmComponent>& spec,
                                              size_t n, uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk dataset format: "DBDS" magic, version, dims, manifest block,
// row-major little-endian payload, FNV-1a digest footer.
// ---------------------------------------------------------------------------

void save_dataset(const std::string& path, const FrameDataset& dataset, bool as_f32 = false);
FrameDataset load_dataset(const std::string& path);
uint64_t dataset_file_digest(const std::string& path);  // digest stored in the footer

// Ingest a directory of raw grayscale frame files (h*w little-endian f64
// values each) with a text manifest of "source_id frame_index filename"
// lines. Native intensities are normalized into [-1, 1].
FrameDataset ingest_frame_dir(const std::string& dir, const std::string& manifest_path, size_t h,
                              size_t w, double native_lo = 0.0, double native_hi = 1.0);

}  // namespace diffbench::data

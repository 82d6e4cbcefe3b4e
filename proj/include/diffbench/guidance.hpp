#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/diffusion.hpp"
#include "diffbench/metrics.hpp"
#include "diffbench/nn.hpp"

namespace diffbench::guidance {

// ---------------------------------------------------------------------------
// Guidance weights. The per-stage weights are relative: they are normalized
// by the largest stage weight, and dg_scale sets the absolute strength of
// the density-ratio gradient added to the score. With the defaults (5, 0, 2)
// the predictor stage carries the full dg_scale of 2 and the corrector none;
// (1, 1, 1) adds exactly the unit ratio gradient at both stages, which makes
// guided sampling with the optimal discriminator track the real score.
// ---------------------------------------------------------------------------

struct GuidanceConfig {
    double weight_first_order = 5.0;  // relative weight, predictor evaluations
    double weight_correction = 0.0;   // relative weight, corrector evaluations
    double dg_scale = 2.0;            // absolute scale of the ratio gradient

    void validate() const;
    double stage_multiplier(diffusion::EvalStage stage) const {
        double peak = weight_first_order > weight_correction ? weight_first_order
                                                             : weight_correction;
        if (peak == 0.0) return 0.0;
        double w = stage == diffusion::EvalStage::predictor ? weight_first_order
                                                            : weight_correction;
        return w * dg_scale / peak;
    }
    bool is_null() const { return weight_first_order == 0.0 && weight_correction == 0.0; }
};

// ---------------------------------------------------------------------------
// Real-vs-generated discriminators. logits() returns log(d/(1-d)) per
// sample; its input gradient is the density-ratio gradient used by guided
// sampling.
// ---------------------------------------------------------------------------

class Discriminator {
public:
    virtual ~Discriminator() = default;
    virtual Shape3 sample_shape() const = 0;
    virtual std::vector<double> logits(const ImageBatch& x, double sigma) const = 0;
    virtual ImageBatch logit_input_grad(const ImageBatch& x, double sigma) const = 0;
};

// Optimal discriminator between two known noisy-marginal families:
// d(x, sigma) = p_sigma / (p_sigma + q_sigma), so the logit is
// log p_sigma - log q_sigma exactly.
class AnalyticDiscriminator final : public Discriminator {
public:
    AnalyticDiscriminator(const diffusion::Density& real, const diffusion::Density& model,
                          Shape3 shape = {});
    Shape3 sample_shape() const override { return shape_; }
    std::vector<double> logits(const ImageBatch& x, double sigma) const override;
    ImageBatch logit_input_grad(const ImageBatch& x, double sigma) const override;

private:
    std::unique_ptr<diffusion::Density> real_;
    std::unique_ptr<diffusion::Density> model_;
    Shape3 shape_;
};

// Neural discriminator: network takes (c+1, h, w) with a c_noise(sigma)
// conditioning channel and emits one pre-sigmoid logit.
class NeuralDiscriminator final : public Discriminator {
public:
    NeuralDiscriminator(nn::Network net, Shape3 data_shape);
    Shape3 sample_shape() const override { return shape_; }
    std::vector<double> logits(const ImageBatch& x, double sigma) const override;
    ImageBatch logit_input_grad(const ImageBatch& x, double sigma) const override;

    const nn::Network& network() const { return net_; }
    nn::Network& network() { return net_; }

    // conv encoder for images, MLP for vector data
    static nn::Network default_architecture(Shape3 data_shape);

private:
    nn::Network net_;
    Shape3 shape_;
};

// grad_x log(d/(1-d)); raises if any |logit| exceeds 30 (gradient unreliable)
ImageBatch density_ratio_grad(const Discriminator& disc, const ImageBatch& x, double sigma);

constexpr double kLogitSaturation = 30.0;

// ---------------------------------------------------------------------------
// Guided denoiser: shifts the base denoiser output by
// sigma^2 * stage_multiplier * density_ratio_grad, which is equivalent to
// adding the weighted ratio gradient to the score.
// ---------------------------------------------------------------------------

class GuidedDenoiser final : public diffusion::Denoiser {
public:
    GuidedDenoiser(const diffusion::Denoiser& base, const Discriminator& disc,
                   GuidanceConfig config);
    Shape3 sample_shape() const override { return base_.sample_shape(); }
    ImageBatch denoise(const ImageBatch& x, double sigma,
                       diffusion::EvalStage stage = diffusion::EvalStage::predictor)
        const override;
    const GuidanceConfig& config() const { return config_; }

private:
    const diffusion::Denoiser& base_;
    const Discriminator& disc_;
    GuidanceConfig config_;
};

// ---------------------------------------------------------------------------
// Discriminator training: every example is partially noised with a sigma
// drawn from the schedule's training distribution before classification,
// so the discriminator is trained at all noise levels. One checkpoint is
// retained per epoch.
// ---------------------------------------------------------------------------

struct DiscEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct DiscTrainResult {
    std::shared_ptr<NeuralDiscriminator> discriminator;  // final epoch
    std::vector<nn::Network> checkpoints;                // one per epoch
    std::vector<DiscEpochLog> log;
    Shape3 data_shape;
};

DiscTrainResult train_discriminator(const ImageBatch& real, const ImageBatch& generated,
                                    const diffusion::NoiseSchedule& schedule, int epochs,
                                    double lr, uint64_t seed, size_t batch_size = 128,
                                    double val_fraction = 0.1);

// ---------------------------------------------------------------------------
// Checkpoint selection: guided FID per epoch at desk-scale n, argmin with
// ties broken by the lowest epoch index.
// ---------------------------------------------------------------------------

struct EpochSelection {
    size_t best_index = 0;
    std::vector<double> per_epoch_fid;
};

// argmin with ties broken by the lowest index
size_t select_best_index(const std::vector<double>& per_epoch_fid);

EpochSelection epoch_selection(const std::vector<nn::Network>& checkpoints, Shape3 data_shape,
                               const diffusion::Denoiser& model, const GuidanceConfig& config,
                               const diffusion::NoiseSchedule& schedule, int steps,
                               const metrics::FeatureStats& real_stats,
                               const metrics::FeatureExtractor& extractor, size_t n_per_eval,
                               uint64_t seed);

// JSON sidecar stored next to discriminator checkpoints: schedule, epochs,
// seed, selection metric per epoch.
std::string discriminator_sidecar_json(const diffusion::NoiseSchedule& schedule, int epochs,
                                       double lr, uint64_t seed,
                                       const std::vector<DiscEpochLog>& log,
                                       const std::vector<double>& per_epoch_fid,
                                       size_t best_epoch);

}  // namespace diffbench::guidance

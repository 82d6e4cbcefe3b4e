#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/linalg.hpp"
#include "diffbench/nn.hpp"

namespace diffbench::diffusion {

// Defaults adopted for the preconditioned parametrization and the training
// sigma distribution; overridable per run and stamped into manifests.
constexpr double kSigmaDataDefault = 0.5;
constexpr double kPMean = -1.2;
constexpr double kPStd = 1.2;

// ---------------------------------------------------------------------------
// Noise schedules: continuous sigma(t) families plus discretization into a
// strictly decreasing sigma sequence with a terminal 0.
// ---------------------------------------------------------------------------

enum class ScheduleKind { edm, vp, ve };

std::string schedule_kind_name(ScheduleKind k);
ScheduleKind schedule_kind_from(const std::string& name);

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::edm;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;          // power-rule exponent, edm kind only
    double vp_beta_d = 19.9;   // vp kind only
    double vp_beta_min = 0.1;  // vp kind only

    static NoiseSchedule edm(double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0);
    static NoiseSchedule vp(double beta_d = 19.9, double beta_min = 0.1);
    static NoiseSchedule ve(double sigma_min = 0.02, double sigma_max = 100.0);

    void validate() const;

    // continuous noise level as a function of schedule time
    double sigma_from_time(double t) const;
    double time_from_sigma(double sigma) const;

    // noise level drawn for one training example: log-normal for the edm
    // kind, log-uniform over [sigma_min, sigma_max] otherwise
    double sample_training_sigma(Rng& rng) const;
};

// n_steps+1 values: sigma_0 = sigma_max down to sigma_min, then terminal 0.
std::vector<double> sigma_steps(const NoiseSchedule& schedule, int n_steps);

// ---------------------------------------------------------------------------
// Preconditioning coefficients for the neural denoiser wrapper.
// ---------------------------------------------------------------------------

struct Precondition {
    double sigma_data = kSigmaDataDefault;

    double c_skip(double sigma) const {
        double s2 = sigma_data * sigma_data;
        return s2 / (sigma * sigma + s2);
    }
    double c_out(double sigma) const {
        double s2 = sigma_data * sigma_data;
        return sigma * sigma_data / std::sqrt(sigma * sigma + s2);
    }
    double c_in(double sigma) const {
        double s2 = sigma_data * sigma_data;
        return 1.0 / std::sqrt(sigma * sigma + s2);
    }
    double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
};

// ---------------------------------------------------------------------------
// Analytic densities over the noisy marginals. These are the oracle layer:
// exact posterior means, scores and log densities for Gaussian and GMM data.
// ---------------------------------------------------------------------------

// Common interface over the noisy marginals p_sigma of a data distribution.
class Density {
public:
    virtual ~Density() = default;
    virtual size_t dim() const = 0;
    virtual std::vector<double> posterior_mean(const std::vector<double>& x, double sigma) const = 0;
    virtual std::vector<double> score(const std::vector<double>& x, double sigma) const = 0;
    virtual double log_density(const std::vector<double>& x, double sigma) const = 0;
    virtual std::unique_ptr<Density> clone() const = 0;
};

class GaussianDensity final : public Density {
public:
    GaussianDensity(std::vector<double> mean, Matrix covariance);

    size_t dim() const override { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const Matrix& covariance() const { return cov_; }

    // E[x0 | x0 + sigma*eps = x]
    std::vector<double> posterior_mean(const std::vector<double>& x, double sigma) const override;
    // grad_x log N(x; mean, cov + sigma^2 I)
    std::vector<double> score(const std::vector<double>& x, double sigma) const override;
    double log_density(const std::vector<double>& x, double sigma) const override;
    std::unique_ptr<Density> clone() const override {
        return std::make_unique<GaussianDensity>(*this);
    }

private:
    std::vector<double> mean_;
    Matrix cov_;
    linalg::SymEig eig_;  // of cov_, reused across sigma
};

struct GmmComponent {
    double weight = 1.0;
    std::vector<double> mean;
    Matrix covariance;
};

class GmmDensity final : public Density {
public:
    explicit GmmDensity(std::vector<GmmComponent> components);

    size_t dim() const override { return components_.front().mean.size(); }
    const std::vector<GmmComponent>& components() const { return components_; }

    std::vector<double> posterior_mean(const std::vector<double>& x, double sigma) const override;
    std::vector<double> score(const std::vector<double>& x, double sigma) const override;
    double log_density(const std::vector<double>& x, double sigma) const override;
    std::unique_ptr<Density> clone() const override { return std::make_unique<GmmDensity>(*this); }

private:
    std::vector<GmmComponent> components_;
    std::vector<GaussianDensity> parts_;
    std::vector<double> log_weights_;
};

// ---------------------------------------------------------------------------
// Denoiser abstraction. Immutable after construction; the sampler tells the
// denoiser which stage of a step is being evaluated so guidance wrappers can
// weight predictor and corrector evaluations differently.
// ---------------------------------------------------------------------------

enum class EvalStage { predictor, corrector };

class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Shape3 sample_shape() const = 0;
    virtual ImageBatch denoise(const ImageBatch& x, double sigma,
                               EvalStage stage = EvalStage::predictor) const = 0;
};

class GaussianDenoiser final : public Denoiser {
public:
    GaussianDenoiser(std::vector<double> mean, Matrix covariance, Shape3 shape = {});
    Shape3 sample_shape() const override { return shape_; }
    ImageBatch denoise(const ImageBatch& x, double sigma,
                       EvalStage stage = EvalStage::predictor) const override;
    const GaussianDensity& density() const { return density_; }

private:
    GaussianDensity density_;
    Shape3 shape_;
};

class GmmDenoiser final : public Denoiser {
public:
    explicit GmmDenoiser(std::vector<GmmComponent> components, Shape3 shape = {});
    Shape3 sample_shape() const override { return shape_; }
    ImageBatch denoise(const ImageBatch& x, double sigma,
                       EvalStage stage = EvalStage::predictor) const override;
    const GmmDensity& density() const { return density_; }

private:
    GmmDensity density_;
    Shape3 shape_;
};

// Neural denoiser: D(x; sigma) = c_skip*x + c_out*F(c_in*x ++ noise channel).
// The wrapped network takes (c+1, h, w) input, the extra channel filled with
// c_noise(sigma), and produces (c, h, w).
class NeuralDenoiser final : public Denoiser {
public:
    NeuralDenoiser(nn::Network net, Shape3 data_shape, double sigma_data = kSigmaDataDefault);
    Shape3 sample_shape() const override { return shape_; }
    ImageBatch denoise(const ImageBatch& x, double sigma,
                       EvalStage stage = EvalStage::predictor) const override;

    const nn::Network& network() const { return net_; }
    nn::Network& network() { return net_; }
    double sigma_data() const { return pre_.sigma_data; }
    const Precondition& precondition() const { return pre_; }

    // builds a stack suitable for the given data shape: an MLP for vector
    // data, a stride-1 conv stack for images
    static nn::Network default_architecture(Shape3 data_shape, size_t hidden, double dropout_rate);

private:
    nn::Network net_;
    Shape3 shape_;
    Precondition pre_;
};

// Counts evaluations; used to verify sampler NFE accounting.
class CountingDenoiser final : public Denoiser {
public:
    explicit CountingDenoiser(const Denoiser& inner) : inner_(inner) {}
    Shape3 sample_shape() const override { return inner_.sample_shape(); }
    ImageBatch denoise(const ImageBatch& x, double sigma,
                       EvalStage stage = EvalStage::predictor) const override {
        ++calls_;
        return inner_.denoise(x, sigma, stage);
    }
    long calls() const { return calls_; }

private:
    const Denoiser& inner_;
    mutable long calls_ = 0;
};

// append one channel holding a constant value (the noise embedding)
ImageBatch append_channel(const ImageBatch& x, const std::vector<double>& per_sample_value);

// D(x; sigma) through the preconditioned wrapper for an arbitrary network.
ImageBatch precondition_apply(const nn::Network& net, const ImageBatch& x, double sigma,
                              double sigma_data);

// Tweedie conversion s(x, sigma) = (D(x; sigma) - x) / sigma^2.
ImageBatch score_from_denoiser(const Denoiser& d, const ImageBatch& x, double sigma,
                               EvalStage stage = EvalStage::predictor);

// ---------------------------------------------------------------------------
// Training loss: per-sample sigma ~ exp(N(P_mean, P_std^2)) unless forced,
// lambda(sigma) * ||D(x + sigma*eps; sigma) - x||^2 averaged over the batch.
// Returns the loss and the parameter gradient of the wrapped network.
// ---------------------------------------------------------------------------

struct EdmLoss {
    double loss = 0.0;
    std::vector<double> param_grads;
};

EdmLoss edm_train_loss(const NeuralDenoiser& d, const ImageBatch& batch, Rng& rng,
                       std::optional<double> forced_sigma = std::nullopt);

double edm_loss_weight(double sigma, double sigma_data);

// ---------------------------------------------------------------------------
// Plain-text serialization of analytic denoisers (means/covariances as
// nested arrays).
// ---------------------------------------------------------------------------

std::string analytic_denoiser_to_text(const Denoiser& d);
std::unique_ptr<Denoiser> analytic_denoiser_from_text(const std::string& text);
std::unique_ptr<Denoiser> load_analytic_denoiser(const std::string& path);
void save_analytic_denoiser(const std::string& path, const Denoiser& d);

}  // namespace diffbench::diffusion

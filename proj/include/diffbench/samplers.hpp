#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/diffusion.hpp"
#include "diffbench/guidance.hpp"
#include "diffbench/metrics.hpp"

namespace diffbench::samplers {

enum class Method { euler, heun };

std::string method_name(Method m);
Method method_from(const std::string& name);

// exact denoiser-evaluation count: heun 2*steps-1, euler steps
long nfe_for(int steps, Method method);

struct SamplerRun {
    int steps = 0;
    long nfe = 0;
    uint64_t seed = 0;
    diffusion::NoiseSchedule schedule;
    std::optional<guidance::GuidanceConfig> guidance;
    ImageBatch samples;
};

// Deterministic probability-flow integration. Chain i is initialized as
// sigma_0 * eps with eps drawn from the counter-derived sub-stream i of the
// master seed, so sample count and batch partitioning never change results.
SamplerRun sample(Method method, const diffusion::Denoiser& d,
                  const diffusion::NoiseSchedule& schedule, int steps, size_t n, uint64_t seed);

SamplerRun sample_heun(const diffusion::Denoiser& d, const diffusion::NoiseSchedule& schedule,
                       int steps, size_t n, uint64_t seed);
SamplerRun sample_euler(const diffusion::Denoiser& d, const diffusion::NoiseSchedule& schedule,
                        int steps, size_t n, uint64_t seed);

// guided variants: wrap the denoiser with the discriminator and record the
// config in the run
SamplerRun sample(Method method, const diffusion::Denoiser& d,
                  const guidance::Discriminator& disc, const guidance::GuidanceConfig& config,
                  const diffusion::NoiseSchedule& schedule, int steps, size_t n, uint64_t seed);

// ---------------------------------------------------------------------------
// FID-vs-NFE sweep. One row per step count; samples are regenerated per
// entry with a sub-seed derived from the step count, so duplicate entries
// produce identical rows.
// ---------------------------------------------------------------------------

struct MetricContext {
    metrics::FeatureExtractor extractor;
    metrics::FeatureStats real_stats;
};

struct SweepPoint {
    int steps = 0;
    long nfe = 0;
    double fid = 0.0;
    size_t n_samples = 0;
    uint64_t seed = 0;
};

std::vector<SweepPoint> fid_vs_nfe_sweep(const diffusion::Denoiser& d,
                                         const diffusion::NoiseSchedule& schedule,
                                         const std::vector<int>& step_list, size_t n_per_point,
                                         uint64_t master_seed, const MetricContext& context,
                                         Method method = Method::heun);

// CSV with header "steps,nfe,fid,n_samples,seed"
std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace diffbench::samplers

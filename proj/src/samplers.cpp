#include "diffbench/samplers.hpp"

#include <cmath>
#include <sstream>

namespace diffbench::samplers {

std::string method_name(Method m) { return m == Method::euler ? "euler" : "heun"; }

Method method_from(const std::string& name) {
    if (name == "euler") return Method::euler;
    if (name == "heun") return Method::heun;
    throw ConfigError("unknown sampler method '" + name + "'");
}

long nfe_for(int steps, Method method) {
    if (steps < 1) throw ConfigError("nfe_for: steps must be >= 1");
    return method == Method::heun ? 2L * steps - 1 : long(steps);
}

namespace {

ImageBatch initial_noise(Shape3 shape, size_t n, uint64_t seed, double sigma0) {
    ImageBatch x(n, shape);
    Rng master(seed);
    parallel_for(n, [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            Rng chain = master.split(s);
            double* p = x.sample_ptr(s);
            for (size_t j = 0; j < shape.numel(); ++j) p[j] = sigma0 * chain.normal();
        }
    });
    return x;
}

ImageBatch integrate(Method method, const diffusion::Denoiser& d,
                     const std::vector<double>& sigmas, size_t n, uint64_t seed, long& nfe) {
    const Shape3 shape = d.sample_shape();
    ImageBatch x = initial_noise(shape, n, seed, sigmas.front());
    nfe = 0;
    const size_t total = x.data().size();
    std::vector<double> slope(total);
    for (size_t i = 0; i + 1 < sigmas.size(); ++i) {
        const double sigma = sigmas[i], sigma_next = sigmas[i + 1];
        const double dt = sigma_next - sigma;
        ImageBatch denoised = d.denoise(x, sigma, diffusion::EvalStage::predictor);
        ++nfe;
        for (size_t j = 0; j < total; ++j)
            slope[j] = (x.data()[j] - denoised.data()[j]) / sigma;
        if (method == Method::heun && sigma_next > 0.0) {
            ImageBatch predicted(n, shape);
            for (size_t j = 0; j < total; ++j)
                predicted.data()[j] = x.data()[j] + dt * slope[j];
            ImageBatch denoised2 = d.denoise(predicted, sigma_next, diffusion::EvalStage::corrector);
            ++nfe;
            for (size_t j = 0; j < total; ++j) {
                double slope2 = (predicted.data()[j] - denoised2.data()[j]) / sigma_next;
                x.data()[j] += dt * 0.5 * (slope[j] + slope2);
            }
        } else {
            for (size_t j = 0; j < total; ++j) x.data()[j] += dt * slope[j];
        }
    }
    return x;
}

}  // namespace

SamplerRun sample(Method method, const diffusion::Denoiser& d,
                  const diffusion::NoiseSchedule& schedule, int steps, size_t n, uint64_t seed) {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (n < 1) throw ConfigError("sampler: n must be >= 1");
    SamplerRun run;
    run.steps = steps;
    run.seed = seed;
    run.schedule = schedule;
    std::vector<double> sigmas = diffusion::sigma_steps(schedule, steps);
    run.samples = integrate(method, d, sigmas, n, seed, run.nfe);
    return run;
}

SamplerRun sample_heun(const diffusion::Denoiser& d, const diffusion::NoiseSchedule& schedule,
                       int steps, size_t n, uint64_t seed) {
    return sample(Method::heun, d, schedule, steps, n, seed);
}

SamplerRun sample_euler(const diffusion::Denoiser& d, const diffusion::NoiseSchedule& schedule,
                        int steps, size_t n, uint64_t seed) {
    return sample(Method::euler, d, schedule, steps, n, seed);
}

SamplerRun sample(Method method, const diffusion::Denoiser& d,
                  const guidance::Discriminator& disc, const guidance::GuidanceConfig& config,
                  const diffusion::NoiseSchedule& schedule, int steps, size_t n, uint64_t seed) {
    guidance::GuidedDenoiser guided(d, disc, config);
    SamplerRun run = sample(method, guided, schedule, steps, n, seed);
    run.guidance = config;
    return run;
}

std::vector<SweepPoint> fid_vs_nfe_sweep(const diffusion::Denoiser& d,
                                         const diffusion::NoiseSchedule& schedule,
                                         const std::vector<int>& step_list, size_t n_per_point,
                                         uint64_t master_seed, const MetricContext& context,
                                         Method method) {
    if (step_list.empty()) throw ConfigError("fid_vs_nfe_sweep: empty step list");
    Rng master(master_seed);
    std::vector<SweepPoint> points;
    points.reserve(step_list.size());
    for (int steps : step_list) {
        // sub-seed keyed by the step count so duplicate entries match exactly
        uint64_t sub_seed = master.split(uint64_t(steps)).seed();
        SamplerRun run = sample(method, d, schedule, steps, n_per_point, sub_seed);
        SweepPoint p;
        p.steps = steps;
        p.nfe = run.nfe;
        p.fid = metrics::fid(context.real_stats, run.samples, context.extractor);
        p.n_samples = n_per_point;
        p.seed = sub_seed;
        points.push_back(p);
    }
    return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    os << "steps,nfe,fid,n_samples,seed\n";
    for (const SweepPoint& p : points)
        os << p.steps << "," << p.nfe << "," << format_double(p.fid) << "," << p.n_samples << ","
           << p.seed << "\n";
    return os.str();
}

}  // namespace diffbench::samplers

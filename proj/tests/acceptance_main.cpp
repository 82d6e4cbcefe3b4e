// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criterion 10 drives the actual CLI binary end to end
// (path supplied via --cli).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diffbench/data.hpp"
#include "diffbench/guidance.hpp"
#include "diffbench/linalg.hpp"
#include "diffbench/metrics.hpp"
#include "diffbench/samplers.hpp"
#include "diffbench/shift.hpp"
#include "test_util.hpp"

using namespace diffbench;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failures = 0;

    void run(const std::string& name, const std::function<bool(std::string&)>& body) {
        auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = body(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] %-38s (%6.2f s)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), secs,
                    detail.empty() ? "" : "  ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// least-squares slope of ln(err) against ln(steps)
double loglog_slope(const std::vector<int>& steps, const std::vector<double>& errors) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = double(steps.size());
    for (size_t i = 0; i < steps.size(); ++i) {
        double x = std::log(double(steps[i]));
        double y = std::log(errors[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return "<missing:" + path + ">";
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// 1. NFE accounting
// ---------------------------------------------------------------------------
bool crit_nfe(std::string& detail) {
    bool ok = samplers::nfe_for(30, samplers::Method::heun) == 59 &&
              samplers::nfe_for(18, samplers::Method::heun) == 35;
    detail = "nfe(30)=" + std::to_string(samplers::nfe_for(30, samplers::Method::heun)) +
             " nfe(18)=" + std::to_string(samplers::nfe_for(18, samplers::Method::heun));
    return ok;
}

// ---------------------------------------------------------------------------
// 2. FID closed form: matrix path vs diagonal closed form, 1000 random pairs
// ---------------------------------------------------------------------------
bool crit_fid_closed_form(std::string& detail) {
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        size_t d = 1 + rng.below(24);
        metrics::FeatureStats a, b;
        a.mean.resize(d);
        b.mean.resize(d);
        std::vector<double> va(d), vb(d);
        double closed = 0.0;
        for (size_t i = 0; i < d; ++i) {
            a.mean[i] = 2.0 * rng.normal();
            b.mean[i] = 2.0 * rng.normal();
            va[i] = 0.05 + 4.0 * rng.uniform();
            vb[i] = 0.05 + 4.0 * rng.uniform();
            double dm = a.mean[i] - b.mean[i];
            double ds = std::sqrt(va[i]) - std::sqrt(vb[i]);
            closed += dm * dm + ds * ds;
        }
        a.covariance = Matrix::diagonal(va);
        b.covariance = Matrix::diagonal(vb);
        a.count = b.count = 1000;
        worst = std::max(worst, std::fabs(metrics::frechet_distance(a, b) - closed));
    }
    detail = "max |matrix - closed| = " + fmt(worst);
    return worst < 1e-8;
}

// ---------------------------------------------------------------------------
// 3. Matrix sqrt reconstruction on 200 random SPD matrices up to 128x128
// ---------------------------------------------------------------------------
bool crit_matrix_sqrt(std::string& detail) {
    Rng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        size_t d = 2 + rng.below(127);  // up to 128
        Matrix a = testutil::random_spd(d, rng, 1e-6);
        Matrix s = metrics::matrix_sqrt_psd(a);
        Matrix rec = s * s;
        double num = 0.0;
        for (size_t i = 0; i < rec.data().size(); ++i) {
            double diff = rec.data()[i] - a.data()[i];
            num += diff * diff;
        }
        worst = std::max(worst, std::sqrt(num) / frobenius_norm(a));
    }
    detail = "max Frobenius rel err = " + fmt(worst);
    return worst < 1e-8;
}

// ---------------------------------------------------------------------------
// 4. Optimal-discriminator guidance identity at weights (1,1,1)
// ---------------------------------------------------------------------------
bool crit_guidance_identity(std::string& detail) {
    Rng rng(303);
    const size_t d = 4;
    Matrix cov = testutil::random_spd(d, rng, 0.5);
    std::vector<double> mu_p = testutil::random_vector(d, rng);
    std::vector<double> mu_q = testutil::random_vector(d, rng);
    diffusion::GaussianDenoiser model(mu_q, cov);
    diffusion::GaussianDensity real(mu_p, cov);
    guidance::AnalyticDiscriminator disc(real, model.density());
    guidance::GuidedDenoiser guided(model, disc, guidance::GuidanceConfig{1.0, 1.0, 1.0});

    double worst = 0.0;
    for (double sigma : {0.1, 1.0, 10.0}) {
        ImageBatch probes(100, Shape3{d, 1, 1});
        for (auto& v : probes.data()) v = 3.0 * rng.normal();
        ImageBatch score = diffusion::score_from_denoiser(guided, probes, sigma);
        for (size_t s = 0; s < probes.count(); ++s) {
            std::vector<double> xi(probes.sample_ptr(s), probes.sample_ptr(s) + d);
            std::vector<double> expected = real.score(xi, sigma);
            for (size_t j = 0; j < d; ++j)
                worst = std::max(worst, std::fabs(score.sample_ptr(s)[j] - expected[j]));
        }
    }
    detail = "max |guided - real score| = " + fmt(worst);
    return worst < 1e-10;
}

// ---------------------------------------------------------------------------
// 5. Guidance improvement at default weights (5, 0, 2), 5/5 seeds, n = 20000
// ---------------------------------------------------------------------------
bool crit_guidance_improvement(std::string& detail) {
    const size_t d = 8;
    std::vector<double> mu_p(d, 0.0), mu_q(d, 0.0);
    mu_q[0] = 0.6;
    mu_q[1] = -0.5;
    Matrix cov = Matrix::identity(d);
    diffusion::GaussianDenoiser model(mu_q, cov);
    diffusion::GaussianDensity real(mu_p, cov);
    guidance::AnalyticDiscriminator disc(real, model.density());
    diffusion::NoiseSchedule sch = diffusion::NoiseSchedule::edm();  // default 0.002 .. 80

    metrics::FeatureExtractor ex = metrics::FeatureExtractor::raw_pixels();
    metrics::FeatureStats real_stats;
    real_stats.mean = mu_p;
    real_stats.covariance = cov;
    real_stats.count = 1000000;
    real_stats.extractor_id = ex.id();

    const int steps = 30;  // the reference operating point: 59 NFE
    const size_t n = 20000;
    int wins = 0;
    std::ostringstream log;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        samplers::SamplerRun unguided = samplers::sample_heun(model, sch, steps, n, seed);
        samplers::SamplerRun guided =
            samplers::sample(samplers::Method::heun, model, disc,
                             guidance::GuidanceConfig{5.0, 0.0, 2.0}, sch, steps, n, seed);
        double f_un = metrics::fid(real_stats, unguided.samples, ex);
        double f_gd = metrics::fid(real_stats, guided.samples, ex);
        if (f_gd < f_un) ++wins;
        if (seed == 1) log << "seed1: " << fmt(f_un) << " -> " << fmt(f_gd) << " ";
    }
    detail = log.str() + "wins " + std::to_string(wins) + "/5";
    return wins == 5;
}

// ---------------------------------------------------------------------------
// 6. Sampler convergence orders against a 10000-step reference
// ---------------------------------------------------------------------------
bool crit_convergence_orders(std::string& detail) {
    Rng rng(404);
    const size_t d = 3, n = 48;
    Matrix cov = testutil::random_spd(d, rng, 0.5);
    std::vector<double> mu = testutil::random_vector(d, rng);
    diffusion::GaussianDenoiser den(mu, cov);
    diffusion::NoiseSchedule sch = diffusion::NoiseSchedule::edm(0.002, 10.0, 7.0);
    const uint64_t seed = 5;

    ImageBatch reference = samplers::sample_heun(den, sch, 10000, n, seed).samples;
    auto rms_error = [&](const ImageBatch& got) {
        double acc = 0.0;
        for (size_t i = 0; i < got.data().size(); ++i) {
            double diff = got.data()[i] - reference.data()[i];
            acc += diff * diff;
        }
        return std::sqrt(acc / double(got.count()));
    };

    std::vector<int> steps = {10, 20, 40, 80, 160};
    std::vector<double> heun_err, euler_err;
    for (int s : steps) {
        heun_err.push_back(rms_error(samplers::sample_heun(den, sch, s, n, seed).samples));
        euler_err.push_back(rms_error(samplers::sample_euler(den, sch, s, n, seed).samples));
    }
    double heun_slope = loglog_slope(steps, heun_err);
    double euler_slope = loglog_slope(steps, euler_err);
    detail = "heun slope " + fmt(heun_slope) + ", euler slope " + fmt(euler_slope);
    return heun_slope <= -1.8 && euler_slope >= -1.3 && euler_slope <= -0.7;
}

// ---------------------------------------------------------------------------
// 7. Gradient checks on 20 random small networks
// ---------------------------------------------------------------------------
bool crit_gradient_checks(std::string& detail) {
    Rng rng(505);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        // alternate between dense stacks and conv stacks
        nn::Network net = [&]() {
            switch (trial % 4) {
                case 0:
                    return nn::Network(Shape3{3, 1, 1}, {nn::Dense{3, 5},
                                                         nn::Act{nn::Activation::silu},
                                                         nn::Dense{5, 2}});
                case 1:
                    return nn::Network(Shape3{1, 5, 5},
                                       {nn::Conv{1, 2, 3, 2}, nn::Act{nn::Activation::relu},
                                        nn::Flatten{}, nn::Dense{18, 1}});
                case 2:
                    return nn::Network(Shape3{2, 4, 4},
                                       {nn::Conv{2, 3, 3, 1}, nn::ChannelNorm{},
                                        nn::Act{nn::Activation::sigmoid}, nn::GlobalAvgPool{},
                                        nn::Dense{3, 2}});
                default:
                    return nn::Network(Shape3{4, 1, 1}, {nn::Dense{4, 4},
                                                         nn::Act{nn::Activation::relu},
                                                         nn::Dense{4, 3}});
            }
        }();
        net.initialize(rng);
        ImageBatch input(2, net.input_shape());
        for (auto& v : input.data()) v = rng.normal();
        const bool use_bce = trial % 2 == 0;
        std::vector<double> target(net.output_shape().numel() * input.count());
        for (auto& t : target) t = use_bce ? double(rng.next_u64() % 2) : rng.normal();

        auto loss_of = [&](const std::vector<double>& params) {
            nn::Network probe = net;
            probe.params() = params;
            ImageBatch out = probe.forward(input, nn::Mode::eval);
            std::vector<double> pred(out.data().begin(), out.data().end());
            if (use_bce) {
                for (double& p : pred) p = 1.0 / (1.0 + std::exp(-p));
                return nn::bce_loss(pred, target).loss;
            }
            return nn::mse_loss(pred, target).loss;
        };

        nn::ForwardTrace trace;
        ImageBatch out = net.forward(input, nn::Mode::eval, nullptr, &trace);
        std::vector<double> pred(out.data().begin(), out.data().end());
        std::vector<double> upstream_flat;
        if (use_bce) {
            std::vector<double> probs(pred.size());
            for (size_t i = 0; i < pred.size(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-pred[i]));
            nn::LossResult loss = nn::bce_loss(probs, target);
            upstream_flat.resize(pred.size());
            for (size_t i = 0; i < pred.size(); ++i)
                upstream_flat[i] = loss.grad[i] * probs[i] * (1.0 - probs[i]);
        } else {
            upstream_flat = nn::mse_loss(pred, target).grad;
        }
        ImageBatch upstream(out.count(), out.sample_shape());
        upstream.data() = upstream_flat;
        std::vector<double> analytic = net.backward(trace, upstream).params;
        std::vector<double> reference =
            testutil::finite_difference_grad(net.params(), loss_of, 1e-5);
        worst = std::max(worst, testutil::max_rel_error(analytic, reference));
    }
    detail = "max rel err = " + fmt(worst);
    return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// 8. Shift-classifier calibration at the exact study protocol
// ---------------------------------------------------------------------------
bool crit_shift_calibration(std::string& detail) {
    const size_t d = 8, n = 10000;
    shift::ShiftStudyConfig cfg;
    cfg.classifier = shift::ClassifierKind::linear;
    cfg.epochs = 50;
    cfg.lr = 1e-4;
    cfg.split = 0.9;
    cfg.n_real = cfg.n_gen = n;
    cfg.batch_size = 128;

    // chance level on identical distributions
    ImageBatch pool(n, Shape3{d, 1, 1});
    Rng rng(606);
    for (auto& v : pool.data()) v = rng.normal();
    cfg.seed = 1;
    shift::ShiftTrainResult chance = shift::train_shift_classifier(pool, pool, cfg);
    bool chance_ok = chance.best_val_accuracy >= 0.45 && chance.best_val_accuracy <= 0.55;

    // analytic Bayes accuracy for an equal-covariance pair
    const double shift_size = 2.0;  // Bayes = Phi(1) = 0.8413
    ImageBatch real(n, Shape3{d, 1, 1}), fake(n, Shape3{d, 1, 1});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            real.sample_ptr(i)[j] = rng.normal() + (j == 0 ? 0.5 * shift_size : 0.0);
            fake.sample_ptr(i)[j] = rng.normal() - (j == 0 ? 0.5 * shift_size : 0.0);
        }
    double bayes = testutil::std_normal_cdf(shift_size / 2.0);
    cfg.seed = 2;
    shift::ShiftTrainResult sep = shift::train_shift_classifier(real, fake, cfg);
    bool bayes_ok = std::fabs(sep.best_val_accuracy - bayes) < 0.03;

    detail = "chance " + fmt(chance.best_val_accuracy) + ", bayes " +
             fmt(sep.best_val_accuracy) + " vs " + fmt(bayes);
    return chance_ok && bayes_ok;
}

// ---------------------------------------------------------------------------
// 9. FID-variance protocol structure
// ---------------------------------------------------------------------------
bool crit_fid_variance(std::string& detail) {
    Rng rng(707);
    ImageBatch pool(3000, Shape3{4, 1, 1});
    for (auto& v : pool.data()) v = rng.normal();
    metrics::FeatureExtractor ex = metrics::FeatureExtractor::raw_pixels();
    diffusion::GaussianDenoiser den(std::vector<double>(4, 0.1), Matrix::identity(4));
    diffusion::NoiseSchedule sch = diffusion::NoiseSchedule::edm(0.002, 10.0, 7.0);
    auto generate = [&](uint64_t seed) {
        return samplers::sample_heun(den, sch, 8, 1200, seed).samples;
    };

    metrics::VarianceProtocol vary_real;
    vary_real.mode = metrics::VarianceMode::vary_real;
    vary_real.repeats = 10;
    vary_real.n_real = 1000;
    vary_real.master_seed = 11;
    metrics::VarianceResult r1 = metrics::fid_variance_protocol(vary_real, pool, generate, ex);

    metrics::VarianceProtocol fixed_gen;
    fixed_gen.mode = metrics::VarianceMode::vary_generated;
    fixed_gen.repeats = 10;
    fixed_gen.n_real = 1000;
    fixed_gen.master_seed = 11;
    fixed_gen.repeat_seeds.assign(10, 42);  // identical generation seeds
    metrics::VarianceResult r2 = metrics::fid_variance_protocol(fixed_gen, pool, generate, ex);

    detail = "vary_real std " + fmt(r1.stddev) + ", fixed-seed std " + fmt(r2.stddev);
    return r1.stddev > 0.0 && r2.stddev == 0.0;
}

// ---------------------------------------------------------------------------
// 10. End-to-end CLI reproducibility (byte-identical outputs)
// ---------------------------------------------------------------------------
bool crit_cli_reproducibility(std::string& detail, const std::string& cli) {
    if (cli.empty()) {
        detail = "no --cli path provided";
        return false;
    }
    fs::path work = fs::temp_directory_path() / "diffbench_acceptance_cli";
    fs::remove_all(work);
    fs::create_directories(work);
    std::string cfg_path = (work / "smoke.cfg").string();
    {
        std::ofstream cfg(cfg_path);
        cfg << "run.id = smoke\n"
               "run.seed = 21\n"
               "denoiser.kind = gaussian\n"
               "denoiser.mean = 0.2, -0.4, 0.0\n"
               "denoiser.cov_diag = 1.0, 0.5, 2.0\n"
               "schedule.kind = edm\n"
               "schedule.sigma_max = 10\n"
               "sampler.method = heun\n"
               "sampler.steps = 12\n"
               "sampler.n = 256\n";
    }
    auto run = [&](const std::string& out) {
        std::string cmd = cli + " generate --config " + cfg_path + " --output " + out +
                          " > " + out + ".log 2>&1";
        return std::system(cmd.c_str());
    };
    std::string out1 = (work / "out1").string(), out2 = (work / "out2").string();
    if (run(out1) != 0 || run(out2) != 0) {
        detail = "CLI exited nonzero; see " + out1 + ".log";
        return false;
    }
    bool samples_equal =
        read_file(out1 + "/samples.dbds") == read_file(out2 + "/samples.dbds");
    bool manifest_equal =
        read_file(out1 + "/manifest.json") == read_file(out2 + "/manifest.json");

    // a second protocol: fid of the generated set against a synthetic pool
    std::string fid_cfg = (work / "fid.cfg").string();
    {
        std::ofstream cfg(fid_cfg);
        cfg << "run.id = smoke-fid\n"
               "run.seed = 22\n"
               "dataset.kind = gmm\n"
               "dataset.n = 512\n"
               "dataset.gmm.weights = 1\n"
               "dataset.gmm.means = 0, 0, 0\n"
               "dataset.gmm.vars = 1, 1, 1\n"
               "generated.kind = file\n"
               "generated.path = " << out1 << "/samples.dbds\n"
               "metric.extractor = raw\n"
               "metric.pin_subsample = true\n"
               "metric.n = 400\n";
    }
    auto run_fid = [&](const std::string& out) {
        std::string cmd = cli + " fid --config " + fid_cfg + " --output " + out + " > " + out +
                          ".log 2>&1";
        return std::system(cmd.c_str());
    };
    std::string fid1 = (work / "fid1").string(), fid2 = (work / "fid2").string();
    if (run_fid(fid1) != 0 || run_fid(fid2) != 0) {
        detail = "fid CLI exited nonzero; see " + fid1 + ".log";
        return false;
    }
    bool fid_equal = read_file(fid1 + "/fid.json") == read_file(fid2 + "/fid.json") &&
                     read_file(fid1 + "/manifest.json") == read_file(fid2 + "/manifest.json") &&
                     read_file(fid1 + "/real_subsample.idx") ==
                         read_file(fid2 + "/real_subsample.idx");

    // exit-code contract: a config error must exit with code 2
    std::string bad_cfg = (work / "bad.cfg").string();
    {
        std::ofstream cfg(bad_cfg);
        cfg << "run.id = bad\nsampler.stepz = 1\n";
    }
    std::string bad_out = (work / "bad_out").string();
    int status = std::system(
        (cli + " generate --config " + bad_cfg + " --output " + bad_out + " > /dev/null 2>&1")
            .c_str());
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    bool exit_ok = code == 2;

    detail = std::string("samples ") + (samples_equal ? "ok" : "DIFFER") + ", manifests " +
             (manifest_equal ? "ok" : "DIFFER") + ", fid " + (fid_equal ? "ok" : "DIFFER") +
             ", config-error exit " + std::to_string(code);
    bool ok = samples_equal && manifest_equal && fid_equal && exit_ok;
    if (ok) fs::remove_all(work);
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--cli") cli = argv[i + 1];

    Harness h;
    h.run("nfe accounting", crit_nfe);
    h.run("fid diagonal closed form", crit_fid_closed_form);
    h.run("matrix sqrt reconstruction", crit_matrix_sqrt);
    h.run("optimal-discriminator identity", crit_guidance_identity);
    h.run("guidance improvement (5 seeds)", crit_guidance_improvement);
    h.run("sampler convergence orders", crit_convergence_orders);
    h.run("gradient checks", crit_gradient_checks);
    h.run("shift-classifier calibration", crit_shift_calibration);
    h.run("fid-variance protocol", crit_fid_variance);
    h.run("cli reproducibility", [&](std::string& d) { return crit_cli_reproducibility(d, cli); });

    if (h.failures) {
        std::printf("%d criterion(s) failed\n", h.failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

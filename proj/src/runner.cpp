#include "diffbench/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "diffbench/data.hpp"
#include "diffbench/guidance.hpp"
#include "diffbench/metrics.hpp"
#include "diffbench/samplers.hpp"
#include "diffbench/shift.hpp"
#include "diffbench/wire.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace diffbench::runner {

using config::ConfigReader;
using config::RunManifest;

namespace {

// ---------------------------------------------------------------------------
// Output directory with an exclusive lock for the duration of the run.
// ---------------------------------------------------------------------------

class OutputDir {
public:
    explicit OutputDir(const std::string& dir) : dir_(dir) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw DataError("cannot create output directory " + dir_);
        lock_path_ = (fs::path(dir_) / "lock").string();
        std::FILE* f = std::fopen(lock_path_.c_str(), "wx");
        if (!f)
            throw DataError("output directory " + dir_ +
                            " is locked by another run (remove 'lock' if stale)");
        std::fclose(f);
    }
    ~OutputDir() {
        std::error_code ec;
        fs::remove(lock_path_, ec);
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

private:
    std::string dir_;
    std::string lock_path_;
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw DataError("write failed for " + path);
}

// timings go to their own file: wall-clock values must not perturb the
// byte-stable outputs
void write_timings(const OutputDir& out, const std::string& command, double seconds) {
    std::ostringstream os;
    os << command << " wall_seconds=" << format_double(seconds) << "\n";
    write_text(out.path("timings.txt"), os.str());
}

struct CommonConfig {
    std::string run_id;
    uint64_t seed = 0;
    std::string output_dir;
};

CommonConfig read_common(ConfigReader& cfg, const RunOptions& options) {
    CommonConfig c;
    c.run_id = cfg.get_string("run.id");
    if (options.seed_override)
        cfg.override_value("run.seed", std::to_string(*options.seed_override));
    c.seed = cfg.get_uint("run.seed", 0);
    // the output location does not affect results and stays out of the
    // resolved config, so manifests are byte-stable across output dirs
    c.output_dir = cfg.peek_string("output.dir", "out");
    if (!options.output_dir.empty()) c.output_dir = options.output_dir;
    return c;
}

// ---------------------------------------------------------------------------
// Spec builders shared by the commands.
// ---------------------------------------------------------------------------

std::vector<diffusion::GmmComponent> read_gmm_components(ConfigReader& cfg,
                                                         const std::string& prefix) {
    std::vector<double> weights = cfg.get_real_list(prefix + ".weights");
    std::vector<double> means = cfg.get_real_list(prefix + ".means");
    std::vector<double> vars = cfg.get_real_list(prefix + ".vars");
    size_t k = weights.size();
    if (means.size() % k != 0 || vars.size() != means.size())
        throw ConfigError(prefix + ": means/vars must hold K x dim values");
    size_t d = means.size() / k;
    std::vector<diffusion::GmmComponent> comps(k);
    for (size_t j = 0; j < k; ++j) {
        comps[j].weight = weights[j];
        comps[j].mean.assign(means.begin() + j * d, means.begin() + (j + 1) * d);
        std::vector<double> diag(vars.begin() + j * d, vars.begin() + (j + 1) * d);
        comps[j].covariance = Matrix::diagonal(diag);
    }
    return comps;
}

data::PhantomParams read_phantom_params(ConfigReader& cfg, const std::string& prefix) {
    data::PhantomParams p;
    p.height = cfg.get_uint(prefix + ".height", 64);
    p.width = cfg.get_uint(prefix + ".width", 64);
    p.sector_angle_deg = cfg.get_real(prefix + ".sector_angle", 75.0);
    p.apex_x = cfg.get_real(prefix + ".apex_x", 0.5);
    p.apex_y = cfg.get_real(prefix + ".apex_y", 0.06);
    p.speckle_grain = cfg.get_real(prefix + ".speckle_grain", 0.35);
    p.structure_seed = cfg.get_uint(prefix + ".structure_seed", 1);
    p.intensity_weights = cfg.get_real_list(prefix + ".intensity_weights", p.intensity_weights);
    p.intensity_means = cfg.get_real_list(prefix + ".intensity_means", p.intensity_means);
    p.intensity_stds = cfg.get_real_list(prefix + ".intensity_stds", p.intensity_stds);
    return p;
}

// dataset spec: kind = file | gmm | phantom under the given prefix
ImageBatch build_dataset(ConfigReader& cfg, const std::string& prefix, uint64_t seed) {
    std::string kind = cfg.get_string(prefix + ".kind");
    if (kind == "file") {
        data::FrameDataset ds = data::load_dataset(cfg.get_string(prefix + ".path"));
        return ds.images;
    }
    if (kind == "gmm") {
        size_t n = cfg.get_uint(prefix + ".n");
        auto comps = read_gmm_components(cfg, prefix + ".gmm");
        uint64_t dseed = cfg.get_uint(prefix + ".seed", seed);
        return ImageBatch::from_matrix(data::generate_gmm_dataset(comps, n, dseed));
    }
    if (kind == "phantom") {
        size_t n = cfg.get_uint(prefix + ".n");
        data::PhantomParams p = read_phantom_params(cfg, prefix + ".phantom");
        uint64_t dseed = cfg.get_uint(prefix + ".seed", seed);
        return data::generate_phantoms(p, n, dseed).images;
    }
    throw ConfigError(prefix + ".kind: expected file|gmm|phantom, got '" + kind + "'");
}

struct DenoiserHandle {
    std::unique_ptr<diffusion::Denoiser> owned;
    const diffusion::Denoiser* denoiser = nullptr;
};

DenoiserHandle build_denoiser(ConfigReader& cfg, const std::string& prefix = "denoiser") {
    DenoiserHandle h;
    std::string kind = cfg.get_string(prefix + ".kind");
    if (kind == "gaussian") {
        std::vector<double> mean = cfg.get_real_list(prefix + ".mean");
        std::vector<double> diag = cfg.get_real_list(prefix + ".cov_diag");
        if (diag.size() != mean.size())
            throw ConfigError(prefix + ": mean/cov_diag lengths differ");
        h.owned = std::make_unique<diffusion::GaussianDenoiser>(mean, Matrix::diagonal(diag));
    } else if (kind == "gmm") {
        h.owned = std::make_unique<diffusion::GmmDenoiser>(read_gmm_components(cfg, prefix + ".gmm"));
    } else if (kind == "file") {
        h.owned = diffusion::load_analytic_denoiser(cfg.get_string(prefix + ".path"));
    } else if (kind == "neural") {
        nn::Network net = nn::load_network(cfg.get_string(prefix + ".checkpoint"));
        double sigma_data = cfg.get_real(prefix + ".sigma_data", diffusion::kSigmaDataDefault);
        Shape3 in = net.input_shape();
        Shape3 data_shape{in.c - 1, in.h, in.w};
        h.owned = std::make_unique<diffusion::NeuralDenoiser>(std::move(net), data_shape, sigma_data);
    } else {
        throw ConfigError(prefix + ".kind: expected gaussian|gmm|file|neural, got '" + kind + "'");
    }
    h.denoiser = h.owned.get();
    return h;
}

diffusion::NoiseSchedule build_schedule(ConfigReader& cfg) {
    std::string kind = cfg.get_string("schedule.kind", "edm");
    diffusion::NoiseSchedule s;
    s.kind = diffusion::schedule_kind_from(kind);
    if (s.kind == diffusion::ScheduleKind::vp) {
        diffusion::NoiseSchedule d = diffusion::NoiseSchedule::vp();
        s.vp_beta_d = cfg.get_real("schedule.vp_beta_d", 19.9);
        s.vp_beta_min = cfg.get_real("schedule.vp_beta_min", 0.1);
        s.sigma_min = cfg.get_real("schedule.sigma_min", d.sigma_min);
        s.sigma_max = cfg.get_real("schedule.sigma_max", d.sigma_max);
    } else {
        double dmin = s.kind == diffusion::ScheduleKind::ve ? 0.02 : 0.002;
        double dmax = s.kind == diffusion::ScheduleKind::ve ? 100.0 : 80.0;
        s.sigma_min = cfg.get_real("schedule.sigma_min", dmin);
        s.sigma_max = cfg.get_real("schedule.sigma_max", dmax);
        s.rho = cfg.get_real("schedule.rho", 7.0);
    }
    s.validate();
    return s;
}

metrics::FeatureExtractor build_extractor(ConfigReader& cfg) {
    std::string kind = cfg.get_string("metric.extractor", "raw");
    if (kind == "raw") {
        size_t ds = cfg.get_uint("metric.extractor_downsample", 1);
        return metrics::FeatureExtractor::raw_pixels(ds);
    }
    if (kind == "proj") {
        size_t dim = cfg.get_uint("metric.extractor_dim", 64);
        uint64_t seed = cfg.get_uint("metric.extractor_seed", 0);
        return metrics::FeatureExtractor::random_projection(dim, seed);
    }
    if (kind == "conv") {
        size_t dim = cfg.get_uint("metric.extractor_dim", 64);
        uint64_t seed = cfg.get_uint("metric.extractor_seed", 0);
        return metrics::FeatureExtractor::random_conv(seed, dim);
    }
    throw ConfigError("metric.extractor: expected raw|proj|conv, got '" + kind + "'");
}

struct GuidanceHandle {
    bool enabled = false;
    guidance::GuidanceConfig config;
    std::unique_ptr<diffusion::Denoiser> real_owned, model_owned;
    std::unique_ptr<guidance::Discriminator> discriminator;
    std::unique_ptr<nn::Network> network;
};

const diffusion::Density& density_of(const diffusion::Denoiser& d) {
    if (const auto* g = dynamic_cast<const diffusion::GaussianDenoiser*>(&d)) return g->density();
    if (const auto* g = dynamic_cast<const diffusion::GmmDenoiser*>(&d)) return g->density();
    throw ConfigError("analytic discriminator requires analytic denoiser files");
}

GuidanceHandle build_guidance(ConfigReader& cfg, Shape3 data_shape) {
    GuidanceHandle h;
    h.enabled = cfg.get_bool("guidance.enabled", false);
    if (!h.enabled) return h;
    h.config.weight_first_order = cfg.get_real("guidance.weight_first_order", 5.0);
    h.config.weight_correction = cfg.get_real("guidance.weight_correction", 0.0);
    h.config.dg_scale = cfg.get_real("guidance.dg_scale", 2.0);
    h.config.validate();
    std::string kind = cfg.get_string("guidance.disc.kind");
    if (kind == "analytic") {
        h.real_owned = diffusion::load_analytic_denoiser(cfg.get_string("guidance.disc.real_path"));
        h.model_owned =
            diffusion::load_analytic_denoiser(cfg.get_string("guidance.disc.model_path"));
        h.discriminator = std::make_unique<guidance::AnalyticDiscriminator>(
            density_of(*h.real_owned), density_of(*h.model_owned), data_shape);
    } else if (kind == "checkpoint") {
        nn::Network net = nn::load_network(cfg.get_string("guidance.disc.checkpoint"));
        Shape3 in = net.input_shape();
        Shape3 shape{in.c - 1, in.h, in.w};
        if (!(shape == data_shape))
            throw ConfigError("guidance.disc.checkpoint: discriminator shape mismatch");
        h.discriminator = std::make_unique<guidance::NeuralDiscriminator>(std::move(net), shape);
    } else {
        throw ConfigError("guidance.disc.kind: expected analytic|checkpoint, got '" + kind + "'");
    }
    return h;
}

data::FrameDataset as_generated_dataset(const ImageBatch& samples) {
    data::FrameDataset ds;
    ds.images = samples;
    ds.manifest.resize(samples.count());
    for (size_t i = 0; i < samples.count(); ++i)
        ds.manifest[i] = data::ManifestEntry{"generated", uint32_t(i)};
    ds.normalization = data::Normalization{-1.0, 1.0};
    return ds;
}

RunManifest start_manifest(const CommonConfig& common, const std::string& command) {
    RunManifest m;
    m.run_id = common.run_id;
    m.command = command;
    m.tool_version = config::kToolVersion;
    return m;
}

void finalize(RunManifest& m, ConfigReader& cfg, const OutputDir& out, const Stopwatch& watch,
              const std::string& command) {
    cfg.finish();
    m.resolved_config = cfg.resolved();
    m.save(out.path("manifest.json"));
    write_timings(out, command, watch.seconds());
}

nlohmann::json fid_record_json(const metrics::FidRecord& r) {
    nlohmann::json j = nlohmann::json::parse(r.to_json());
    j["type"] = "fid";
    return j;
}

}  // namespace

// ----------------------------------- generate -------------------------------

RunManifest cmd_generate(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    DenoiserHandle den = build_denoiser(cfg);
    diffusion::NoiseSchedule schedule = build_schedule(cfg);
    samplers::Method method = samplers::method_from(cfg.get_string("sampler.method", "heun"));
    int steps = int(cfg.get_int("sampler.steps", 30));
    size_t n = cfg.get_uint("sampler.n");
    if (n == 0) throw ConfigError("sampler.n must be >= 1");
    GuidanceHandle guide = build_guidance(cfg, den.denoiser->sample_shape());

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    samplers::SamplerRun run =
        guide.enabled
            ? samplers::sample(method, *den.denoiser, *guide.discriminator, guide.config, schedule,
                               steps, n, common.seed)
            : samplers::sample(method, *den.denoiser, schedule, steps, n, common.seed);

    data::FrameDataset ds = as_generated_dataset(run.samples);
    std::string samples_path = out.path("samples.dbds");
    data::save_dataset(samples_path, ds);

    RunManifest m = start_manifest(common, "generate");
    m.artifacts["samples.dbds"] = digest_hex(data::dataset_file_digest(samples_path));
    nlohmann::json rec;
    rec["type"] = "generate";
    rec["method"] = samplers::method_name(method);
    rec["steps"] = run.steps;
    rec["nfe"] = run.nfe;
    rec["n"] = n;
    rec["seed"] = run.seed;
    m.results.push_back(rec.dump());
    finalize(m, cfg, out, watch, "generate");
    return m;
}

// ------------------------------------- fid ----------------------------------

namespace {

// pinned subsample: stored index file referenced by digest in the manifest
std::vector<size_t> pin_subsample(const OutputDir& out, RunManifest& m, size_t pool, size_t n,
                                  uint64_t seed) {
    std::vector<size_t> idx = metrics::subsample_indices(pool, n, seed);
    std::ostringstream body(std::ios::binary);
    wire::put_u64(body, idx.size());
    for (size_t v : idx) wire::put_u64(body, v);
    std::string payload = body.str();
    std::string path = out.path("real_subsample.idx");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    wire::put_bytes(os, payload.data(), payload.size());
    uint64_t digest = fnv1a(payload.data(), payload.size());
    wire::put_u64(os, digest);
    if (!os) throw DataError("cannot write " + path);
    m.artifacts["real_subsample.idx"] = digest_hex(digest);
    return idx;
}

}  // namespace

RunManifest cmd_fid(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch real = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    ImageBatch generated = build_dataset(cfg, "generated", Rng(common.seed).split(2).seed());
    metrics::FeatureExtractor ex = build_extractor(cfg);
    size_t metric_n = cfg.get_uint("metric.n", 10000);
    bool pin = cfg.get_bool("metric.pin_subsample", false);

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    RunManifest m = start_manifest(common, "fid");

    ImageBatch real_used = real;
    if (real.count() > metric_n) {
        if (pin) {
            std::vector<size_t> idx =
                pin_subsample(out, m, real.count(), metric_n, Rng(common.seed).split(3).seed());
            real_used = real.gather(idx);
        } else {
            real_used = real.gather(metrics::subsample_indices(real.count(), metric_n,
                                                               Rng(common.seed).split(3).seed()));
        }
    }
    ImageBatch gen_used = generated;
    if (generated.count() > metric_n)
        gen_used = generated.gather(
            metrics::subsample_indices(generated.count(), metric_n, Rng(common.seed).split(4).seed()));

    metrics::FeatureStats real_stats = ex.stats(real_used);
    metrics::FeatureStats gen_stats = ex.stats(gen_used);
    metrics::FidRecord rec;
    rec.extractor = ex.id();
    rec.n_real = real_used.count();
    rec.n_gen = gen_used.count();
    rec.seed = common.seed;
    rec.value = metrics::fid(real_stats, gen_stats);
    rec.real_stats_digest = digest_hex(real_stats.digest());
    rec.gen_stats_digest = digest_hex(gen_stats.digest());

    m.artifacts["real_stats.dbfs"] = digest_hex(metrics::save_stats(out.path("real_stats.dbfs"),
                                                                    real_stats));
    write_text(out.path("fid.json"), fid_record_json(rec).dump(2) + "\n");
    m.results.push_back(fid_record_json(rec).dump());
    finalize(m, cfg, out, watch, "fid");
    return m;
}

RunManifest cmd_optimal_fid(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch dataset = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    metrics::FeatureExtractor ex = build_extractor(cfg);
    uint64_t split_seed = cfg.get_uint("metric.split_seed", Rng(common.seed).split(5).seed());

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    double value = metrics::optimal_fid(dataset, ex, split_seed);

    RunManifest m = start_manifest(common, "optimal-fid");
    nlohmann::json rec;
    rec["type"] = "optimal_fid";
    rec["extractor"] = ex.id();
    rec["n"] = dataset.count();
    rec["n_left"] = dataset.count() / 2;
    rec["n_right"] = dataset.count() - dataset.count() / 2;
    rec["split_seed"] = split_seed;
    rec["value"] = value;
    write_text(out.path("optimal_fid.json"), rec.dump(2) + "\n");
    m.results.push_back(rec.dump());
    finalize(m, cfg, out, watch, "optimal-fid");
    return m;
}

RunManifest cmd_fid_variance(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch real = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    DenoiserHandle den = build_denoiser(cfg);
    diffusion::NoiseSchedule schedule = build_schedule(cfg);
    samplers::Method method = samplers::method_from(cfg.get_string("sampler.method", "heun"));
    int steps = int(cfg.get_int("sampler.steps", 18));
    size_t gen_n = cfg.get_uint("sampler.n");
    metrics::FeatureExtractor ex = build_extractor(cfg);

    metrics::VarianceProtocol protocol;
    std::string mode = cfg.get_string("metric.variance_mode", "vary_real");
    if (mode == "vary_real")
        protocol.mode = metrics::VarianceMode::vary_real;
    else if (mode == "vary_generated")
        protocol.mode = metrics::VarianceMode::vary_generated;
    else
        throw ConfigError("metric.variance_mode: expected vary_real|vary_generated");
    protocol.repeats = int(cfg.get_int("metric.repeats", 10));
    protocol.n_real = cfg.get_uint("metric.n", 0);
    protocol.master_seed = common.seed;

    auto generate = [&](uint64_t seed) {
        return samplers::sample(method, *den.denoiser, schedule, steps, gen_n, seed).samples;
    };

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    metrics::VarianceResult result = metrics::fid_variance_protocol(protocol, real, generate, ex);

    std::ostringstream csv;
    csv << "repeat,seed,fid\n";
    for (size_t i = 0; i < result.values.size(); ++i)
        csv << i << "," << result.seeds[i] << "," << format_double(result.values[i]) << "\n";
    csv << "# mean=" << format_double(result.mean) << " std=" << format_double(result.stddev)
        << "\n";
    write_text(out.path("fid_variance.csv"), csv.str());

    RunManifest m = start_manifest(common, "fid-variance");
    nlohmann::json rec;
    rec["type"] = "fid_variance";
    rec["mode"] = mode;
    rec["repeats"] = protocol.repeats;
    rec["extractor"] = ex.id();
    rec["mean"] = result.mean;
    rec["std"] = result.stddev;
    nlohmann::json values = nlohmann::json::array(), seeds = nlohmann::json::array();
    for (double v : result.values) values.push_back(v);
    for (uint64_t s : result.seeds) seeds.push_back(s);
    rec["values"] = values;
    rec["repeat_seeds"] = seeds;
    rec["mean_pairwise_overlap"] = result.mean_pairwise_overlap;
    m.results.push_back(rec.dump());
    finalize(m, cfg, out, watch, "fid-variance");
    return m;
}

RunManifest cmd_sweep_nfe(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch real = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    DenoiserHandle den = build_denoiser(cfg);
    diffusion::NoiseSchedule schedule = build_schedule(cfg);
    samplers::Method method = samplers::method_from(cfg.get_string("sampler.method", "heun"));
    std::vector<int> step_list = cfg.get_int_list("sampler.step_list");
    size_t n = cfg.get_uint("sampler.n");
    metrics::FeatureExtractor ex = build_extractor(cfg);

    samplers::MetricContext context{ex, ex.stats(real)};
    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    std::vector<samplers::SweepPoint> points =
        samplers::fid_vs_nfe_sweep(*den.denoiser, schedule, step_list, n, common.seed, context,
                                   method);
    write_text(out.path("sweep.csv"), samplers::sweep_csv(points));

    RunManifest m = start_manifest(common, "sweep-nfe");
    for (const auto& p : points) {
        nlohmann::json rec;
        rec["type"] = "sweep_point";
        rec["steps"] = p.steps;
        rec["nfe"] = p.nfe;
        rec["fid"] = p.fid;
        rec["n_samples"] = p.n_samples;
        rec["seed"] = p.seed;
        m.results.push_back(rec.dump());
    }
    finalize(m, cfg, out, watch, "sweep-nfe");
    return m;
}

// ---------------------------------- training --------------------------------

RunManifest cmd_train_denoiser(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch dataset = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    int epochs = int(cfg.get_int("train.epochs", 10));
    double lr = cfg.get_real("train.lr", 1e-4);
    size_t batch_size = cfg.get_uint("train.batch_size", 512);
    double dropout = cfg.get_real("train.dropout", 0.05);
    size_t hidden = cfg.get_uint("train.hidden", 64);
    double sigma_data = cfg.get_real("denoiser.sigma_data", diffusion::kSigmaDataDefault);
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");

    Shape3 shape = dataset.sample_shape();
    nn::Network net = diffusion::NeuralDenoiser::default_architecture(shape, hidden, dropout);
    Rng master(common.seed);
    Rng init_rng = master.split(0);
    net.initialize(init_rng);
    diffusion::NeuralDenoiser denoiser(std::move(net), shape, sigma_data);
    nn::AdamState adam = nn::AdamState::fresh(denoiser.network().param_count(), lr);

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    RunManifest m = start_manifest(common, "train-denoiser");
    std::ostringstream curve;
    std::vector<double> epoch_losses;
    curve << "epoch,train_loss\n";
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng epoch_rng = master.split(16 + uint64_t(epoch));
        std::vector<size_t> order(dataset.count());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i-- > 1;) std::swap(order[i], order[epoch_rng.below(i + 1)]);
        double loss_acc = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += batch_size) {
            size_t end = std::min(order.size(), start + batch_size);
            ImageBatch batch =
                dataset.gather(std::vector<size_t>(order.begin() + start, order.begin() + end));
            diffusion::EdmLoss loss = diffusion::edm_train_loss(denoiser, batch, epoch_rng);
            nn::adam_step(denoiser.network().params(), loss.param_grads, adam);
            loss_acc += loss.loss;
            ++batches;
        }
        double mean_loss = batches ? loss_acc / double(batches) : 0.0;
        epoch_losses.push_back(mean_loss);
        curve << epoch << "," << format_double(mean_loss) << "\n";
        char name[48];
        std::snprintf(name, sizeof(name), "denoiser_epoch_%03d.dbnn", epoch);
        nn::save_network(out.path(name), denoiser.network());
        std::ifstream ck(out.path(name), std::ios::binary);
        std::ostringstream bytes;
        bytes << ck.rdbuf();
        m.artifacts[name] = digest_hex(fnv1a(bytes.str().data(), bytes.str().size()));
    }
    write_text(out.path("loss_curve.csv"), curve.str());

    nlohmann::json rec;
    rec["type"] = "train_denoiser";
    rec["epochs"] = epochs;
    rec["lr"] = lr;
    rec["batch_size"] = batch_size;
    rec["dropout"] = dropout;
    rec["param_count"] = denoiser.network().param_count();
    rec["loss_curve"] = epoch_losses;  // every CSV number is manifest-traceable
    m.results.push_back(rec.dump());
    finalize(m, cfg, out, watch, "train-denoiser");
    return m;
}

RunManifest cmd_train_discriminator(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch real = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    ImageBatch generated = build_dataset(cfg, "generated", Rng(common.seed).split(2).seed());
    diffusion::NoiseSchedule schedule = build_schedule(cfg);
    int epochs = int(cfg.get_int("train.epochs", 10));
    double lr = cfg.get_real("train.lr", 1e-4);
    size_t batch_size = cfg.get_uint("train.batch_size", 128);
    double val_fraction = cfg.get_real("train.val_fraction", 0.1);

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    guidance::DiscTrainResult result = guidance::train_discriminator(
        real, generated, schedule, epochs, lr, common.seed, batch_size, val_fraction);

    RunManifest m = start_manifest(common, "train-discriminator");
    std::ostringstream curve;
    curve << "epoch,train_loss,val_accuracy\n";
    for (const auto& e : result.log)
        curve << e.epoch << "," << format_double(e.train_loss) << ","
              << format_double(e.val_accuracy) << "\n";
    write_text(out.path("disc_curve.csv"), curve.str());
    for (size_t i = 0; i < result.checkpoints.size(); ++i) {
        char name[48];
        std::snprintf(name, sizeof(name), "disc_epoch_%03d.dbnn", int(i));
        nn::save_network(out.path(name), result.checkpoints[i]);
        std::ifstream ck(out.path(name), std::ios::binary);
        std::ostringstream bytes;
        bytes << ck.rdbuf();
        m.artifacts[name] = digest_hex(fnv1a(bytes.str().data(), bytes.str().size()));
    }
    size_t best = 0;
    for (size_t i = 1; i < result.log.size(); ++i)
        if (result.log[i].val_accuracy > result.log[best].val_accuracy) best = i;
    write_text(out.path("disc_sidecar.json"),
               guidance::discriminator_sidecar_json(schedule, epochs, lr, common.seed, result.log,
                                                    {}, best) +
                   "\n");

    nlohmann::json rec;
    rec["type"] = "train_discriminator";
    rec["epochs"] = epochs;
    rec["final_val_accuracy"] = result.log.back().val_accuracy;
    nlohmann::json losses = nlohmann::json::array(), accs = nlohmann::json::array();
    for (const auto& e : result.log) {
        losses.push_back(e.train_loss);
        accs.push_back(e.val_accuracy);
    }
    rec["loss_curve"] = losses;
    rec["val_accuracy_curve"] = accs;
    m.results.push_back(rec.dump());
    finalize(m, cfg, out, watch, "train-discriminator");
    return m;
}

RunManifest cmd_train_classifier(const RunOptions& options) {
    Stopwatch watch;
    ConfigReader cfg = ConfigReader::from_file(options.config_path);
    CommonConfig common = read_common(cfg, options);
    set_thread_count(options.threads);

    ImageBatch real = build_dataset(cfg, "dataset", Rng(common.seed).split(1).seed());
    ImageBatch gen_pre = build_dataset(cfg, "generated", Rng(common.seed).split(2).seed());
    bool has_post = cfg.has("generated_post.kind");
    ImageBatch gen_post =
        has_post ? build_dataset(cfg, "generated_post", Rng(common.seed).split(3).seed())
                 : ImageBatch();

    shift::ShiftStudyConfig study;
    study.classifier = shift::classifier_from(cfg.get_string("classifier.kind", "linear"));
    study.augment = cfg.get_bool("classifier.augment", false);
    study.epochs = int(cfg.get_int("train.epochs", 50));
    study.lr = cfg.get_real("train.lr", 1e-4);
    study.n_real = cfg.get_uint("classifier.n_real", 10000);
    study.n_gen = cfg.get_uint("classifier.n_gen", 10000);
    study.split = cfg.get_real("classifier.split", 0.9);
    study.batch_size = cfg.get_uint("train.batch_size", 128);
    study.seed = common.seed;

    cfg.finish();  // reject unknown keys before producing any output
    OutputDir out(common.output_dir);
    RunManifest m = start_manifest(common, "train-classifier");
    std::vector<shift::ShiftReportRow> rows;
    if (has_post) {
        rows = shift::shift_report(real, gen_pre, gen_post, {study});
    } else {
        shift::ShiftTrainResult r = shift::train_shift_classifier(real, gen_pre, study);
        shift::ShiftReportRow row;
        row.classifier = shift::classifier_name(study.classifier);
        row.augment = study.augment;
        row.phase = "pre";
        row.seed = study.seed;
        row.best_epoch = r.best_epoch;
        row.val_accuracy = r.best_val_accuracy;
        row.final_val_accuracy = r.final_val_accuracy;
        rows.push_back(row);
    }
    write_text(out.path("shift_report.csv"), shift::shift_report_csv(rows));
    for (const auto& row : rows) {
        nlohmann::json rec;
        rec["type"] = "shift_classifier";
        rec["classifier"] = row.classifier;
        rec["augment"] = row.augment;
        rec["phase"] = row.phase;
        rec["seed"] = row.seed;
        rec["best_epoch"] = row.best_epoch;
        rec["val_accuracy"] = row.val_accuracy;
        rec["final_val_accuracy"] = row.final_val_accuracy;
        m.results.push_back(rec.dump());
    }
    finalize(m, cfg, out, watch, "train-classifier");
    return m;
}

// ----------------------------------- report ---------------------------------

std::string cmd_report(const std::vector<std::string>& manifest_paths) {
    if (manifest_paths.empty()) throw ConfigError("report: no manifests given");
    std::ostringstream csv;
    csv << "run_id,command,type,label,value\n";
    for (const std::string& path : manifest_paths) {
        RunManifest m = RunManifest::load(path);
        // verify artifact digests against the files next to the manifest
        fs::path dir = fs::path(path).parent_path();
        for (const auto& [name, digest] : m.artifacts) {
            fs::path file = dir / name;
            std::ifstream is(file, std::ios::binary);
            if (!is) throw DataError("report: missing artifact " + file.string());
            std::ostringstream buffer;
            buffer << is.rdbuf();
            std::string bytes = buffer.str();
            std::string actual;
            bool has_footer = name.size() > 5 && (name.substr(name.size() - 5) == ".dbds" ||
                                                  name.substr(name.size() - 5) == ".dbfs" ||
                                                  name.substr(name.size() - 4) == ".idx");
            if (has_footer && bytes.size() >= 8) {
                // digest footers cover the payload bytes; recompute, never trust the footer
                actual = digest_hex(fnv1a(bytes.data(), bytes.size() - 8));
            } else {
                actual = digest_hex(fnv1a(bytes.data(), bytes.size()));
            }
            if (actual != digest)
                throw DataError("report: integrity error: artifact " + name + " of run " +
                                m.run_id + " does not match its manifest digest");
        }
        for (const std::string& result : m.results) {
            nlohmann::json rec = nlohmann::json::parse(result);
            std::string type = rec.value("type", "record");
            std::string label, value;
            if (type == "fid") {
                label = rec.value("extractor", "");
                value = format_double(rec.at("value").get<double>());
            } else if (type == "optimal_fid") {
                label = rec.value("extractor", "");
                value = format_double(rec.at("value").get<double>());
            } else if (type == "fid_variance") {
                label = rec.value("mode", "");
                value = format_double(rec.at("mean").get<double>()) + "+-" +
                        format_double(rec.at("std").get<double>());
            } else if (type == "sweep_point") {
                label = "steps=" + std::to_string(rec.at("steps").get<long>());
                value = format_double(rec.at("fid").get<double>());
            } else if (type == "shift_classifier") {
                label = rec.value("classifier", "") + "/" + rec.value("phase", "");
                value = format_double(rec.at("val_accuracy").get<double>());
            } else if (type == "generate") {
                label = "nfe";
                value = std::to_string(rec.at("nfe").get<long>());
            } else if (type == "train_denoiser" || type == "train_discriminator") {
                label = "epochs";
                value = std::to_string(rec.at("epochs").get<long>());
            } else {
                label = "";
                value = rec.dump();
            }
            csv << m.run_id << "," << m.command << "," << type << "," << label << "," << value
                << "\n";
        }
    }
    return csv.str();
}

}  // namespace diffbench::runner

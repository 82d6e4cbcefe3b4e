#include "diffbench/guidance.hpp"

#include <algorithm>
#include <cmath>

#include "diffbench/samplers.hpp"

#include "json.hpp"

namespace diffbench::guidance {

void GuidanceConfig::validate() const {
    for (double v : {weight_first_order, weight_correction, dg_scale})
        if (!(std::isfinite(v) && v >= 0.0))
            throw ConfigError("guidance config: weights must be finite and non-negative");
}

// --------------------------- discriminators --------------------------------

AnalyticDiscriminator::AnalyticDiscriminator(const diffusion::Density& real,
                                             const diffusion::Density& model, Shape3 shape)
    : real_(real.clone()), model_(model.clone()) {
    if (real_->dim() != model_->dim())
        throw ShapeError("analytic discriminator: real/model dimensions differ");
    shape_ = shape.numel() == 0 ? Shape3{real_->dim(), 1, 1} : shape;
    if (shape_.numel() != real_->dim())
        throw ShapeError("analytic discriminator: shape does not match density dimension");
}

std::vector<double> AnalyticDiscriminator::logits(const ImageBatch& x, double sigma) const {
    if (!(sigma > 0.0)) throw NumericError("discriminator: sigma must be positive");
    std::vector<double> out(x.count());
    parallel_for(x.count(), [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            std::vector<double> xi(x.sample_ptr(s), x.sample_ptr(s) + x.sample_size());
            out[s] = real_->log_density(xi, sigma) - model_->log_density(xi, sigma);
        }
    });
    return out;
}

ImageBatch AnalyticDiscriminator::logit_input_grad(const ImageBatch& x, double sigma) const {
    if (!(sigma > 0.0)) throw NumericError("discriminator: sigma must be positive");
    ImageBatch out(x.count(), x.sample_shape());
    parallel_for(x.count(), [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            std::vector<double> xi(x.sample_ptr(s), x.sample_ptr(s) + x.sample_size());
            std::vector<double> sp = real_->score(xi, sigma);
            std::vector<double> sq = model_->score(xi, sigma);
            double* dst = out.sample_ptr(s);
            for (size_t j = 0; j < sp.size(); ++j) dst[j] = sp[j] - sq[j];
        }
    });
    return out;
}

NeuralDiscriminator::NeuralDiscriminator(nn::Network net, Shape3 data_shape)
    : net_(std::move(net)), shape_(data_shape) {
    Shape3 expect{data_shape.c + 1, data_shape.h, data_shape.w};
    if (!(net_.input_shape() == expect))
        throw ShapeError("neural discriminator: network input must be " + expect.str() +
                         ", got " + net_.input_shape().str());
    if (net_.output_shape().numel() != 1)
        throw ShapeError("neural discriminator: network must emit a single logit");
}

namespace {

ImageBatch with_noise_channel(const ImageBatch& x, double sigma) {
    diffusion::Precondition pre;
    return diffusion::append_channel(x, std::vector<double>(x.count(), pre.c_noise(sigma)));
}

}  // namespace

std::vector<double> NeuralDiscriminator::logits(const ImageBatch& x, double sigma) const {
    if (!(sigma > 0.0)) throw NumericError("discriminator: sigma must be positive");
    if (!(x.sample_shape() == shape_))
        throw ShapeError("discriminator input shape " + x.sample_shape().str() +
                         " does not match " + shape_.str());
    ImageBatch out = net_.forward(with_noise_channel(x, sigma), nn::Mode::eval);
    std::vector<double> logits(x.count());
    for (size_t i = 0; i < x.count(); ++i) logits[i] = out.sample_ptr(i)[0];
    return logits;
}

ImageBatch NeuralDiscriminator::logit_input_grad(const ImageBatch& x, double sigma) const {
    if (!(sigma > 0.0)) throw NumericError("discriminator: sigma must be positive");
    nn::ForwardTrace trace;
    ImageBatch input = with_noise_channel(x, sigma);
    net_.forward(input, nn::Mode::eval, nullptr, &trace);
    ImageBatch upstream(x.count(), net_.output_shape(), 1.0);
    nn::Gradients grads = net_.backward(trace, upstream);
    // strip the conditioning channel
    Shape3 s = x.sample_shape();
    ImageBatch out(x.count(), s);
    for (size_t i = 0; i < x.count(); ++i)
        std::copy(grads.input.sample_ptr(i), grads.input.sample_ptr(i) + s.numel(),
                  out.sample_ptr(i));
    return out;
}

nn::Network NeuralDiscriminator::default_architecture(Shape3 data_shape) {
    Shape3 in{data_shape.c + 1, data_shape.h, data_shape.w};
    std::vector<nn::LayerSpec> layers;
    if (data_shape.h == 1 && data_shape.w == 1) {
        layers = {nn::Dense{in.c, 32},          nn::Act{nn::Activation::relu},
                  nn::Dense{32, 32},            nn::Act{nn::Activation::relu},
                  nn::Dense{32, 1}};
    } else {
        // small conv encoder standing in for the UNet encoder
        layers = {nn::Conv{in.c, 16, 3, 2},     nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
                  nn::Conv{16, 32, 3, 2},       nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
                  nn::Conv{32, 32, 3, 2},       nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
                  nn::GlobalAvgPool{},          nn::Dense{32, 1}};
    }
    return nn::Network(in, std::move(layers));
}

ImageBatch density_ratio_grad(const Discriminator& disc, const ImageBatch& x, double sigma) {
    if (!(sigma > 0.0)) throw NumericError("density_ratio_grad: sigma must be positive");
    std::vector<double> l = disc.logits(x, sigma);
    for (double v : l)
        if (std::fabs(v) > kLogitSaturation)
            throw NumericError("discriminator saturated: |logit| = " + format_double(std::fabs(v)) +
                               " exceeds " + format_double(kLogitSaturation));
    return disc.logit_input_grad(x, sigma);
}

// --------------------------- guided denoiser --------------------------------

GuidedDenoiser::GuidedDenoiser(const diffusion::Denoiser& base, const Discriminator& disc,
                               GuidanceConfig config)
    : base_(base), disc_(disc), config_(config) {
    config_.validate();
    if (!(disc_.sample_shape() == base_.sample_shape()))
        throw ShapeError("guided denoiser: discriminator shape does not match denoiser");
}

ImageBatch GuidedDenoiser::denoise(const ImageBatch& x, double sigma,
                                   diffusion::EvalStage stage) const {
    ImageBatch out = base_.denoise(x, sigma, stage);
    const double multiplier = config_.stage_multiplier(stage);
    // zero weight stays bit-identical to the unguided path
    if (multiplier == 0.0 || sigma == 0.0) return out;
    ImageBatch grad = density_ratio_grad(disc_, x, sigma);
    const double scale = sigma * sigma * multiplier;
    for (size_t j = 0; j < out.data().size(); ++j) out.data()[j] += scale * grad.data()[j];
    return out;
}

// ------------------------ discriminator training ----------------------------

namespace {

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i-- > 1;) std::swap(idx[i], idx[rng.below(i + 1)]);
    return idx;
}

}  // namespace

DiscTrainResult train_discriminator(const ImageBatch& real, const ImageBatch& generated,
                                    const diffusion::NoiseSchedule& schedule, int epochs,
                                    double lr, uint64_t seed, size_t batch_size,
                                    double val_fraction) {
    if (real.count() == 0 || generated.count() == 0)
        throw DataError("train_discriminator: empty dataset");
    if (!(real.sample_shape() == generated.sample_shape()))
        throw ShapeError("train_discriminator: real/generated shapes differ");
    if (epochs < 1) throw ConfigError("train_discriminator: epochs must be >= 1");
    schedule.validate();

    const Shape3 shape = real.sample_shape();
    Rng master(seed);

    // stratified train/val split
    Rng split_rng = master.split(0);
    std::vector<size_t> ridx = shuffled_indices(real.count(), split_rng);
    std::vector<size_t> gidx = shuffled_indices(generated.count(), split_rng);
    size_t rv = std::max<size_t>(1, size_t(std::llround(val_fraction * double(real.count()))));
    size_t gv = std::max<size_t>(1, size_t(std::llround(val_fraction * double(generated.count()))));
    if (rv >= real.count() || gv >= generated.count())
        throw DataError("train_discriminator: validation split leaves no training data");

    // pre-noised validation set, fixed across epochs
    Rng val_rng = master.split(1);
    ImageBatch val_inputs(0, shape);
    std::vector<double> val_labels;
    auto add_val = [&](const ImageBatch& src, size_t index, double label) {
        ImageBatch one = src.sample(index);
        double sigma = schedule.sample_training_sigma(val_rng);
        for (double& v : one.data()) v += sigma * val_rng.normal();
        // conditioning channel is appended at evaluation; stash sigma per sample
        val_inputs.append(one);
        val_labels.push_back(label);
        return sigma;
    };
    std::vector<double> val_sigmas;
    for (size_t i = 0; i < rv; ++i) val_sigmas.push_back(add_val(real, ridx[i], 1.0));
    for (size_t i = 0; i < gv; ++i) val_sigmas.push_back(add_val(generated, gidx[i], 0.0));

    std::vector<size_t> train_real(ridx.begin() + rv, ridx.end());
    std::vector<size_t> train_gen(gidx.begin() + gv, gidx.end());

    nn::Network net = NeuralDiscriminator::default_architecture(shape);
    Rng init_rng = master.split(2);
    net.initialize(init_rng);
    nn::AdamState adam = nn::AdamState::fresh(net.param_count(), lr);

    diffusion::Precondition pre;
    DiscTrainResult result;
    result.data_shape = shape;

    auto evaluate = [&](const nn::Network& model) {
        size_t correct = 0;
        for (size_t i = 0; i < val_inputs.count(); ++i) {
            ImageBatch one = val_inputs.sample(i);
            ImageBatch input = diffusion::append_channel(one, {pre.c_noise(val_sigmas[i])});
            ImageBatch out = model.forward(input, nn::Mode::eval);
            bool predicted_real = out.sample_ptr(0)[0] > 0.0;
            if (predicted_real == (val_labels[i] > 0.5)) ++correct;
        }
        return double(correct) / double(val_inputs.count());
    };

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng epoch_rng = master.split(16 + uint64_t(epoch));
        // interleave real/generated examples: label comes from index parity
        size_t n_train = train_real.size() + train_gen.size();
        std::vector<size_t> order = shuffled_indices(n_train, epoch_rng);
        double loss_acc = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < n_train; start += batch_size) {
            size_t end = std::min(n_train, start + batch_size);
            ImageBatch inputs(0, Shape3{shape.c + 1, shape.h, shape.w});
            std::vector<double> labels, probs;
            for (size_t k = start; k < end; ++k) {
                size_t id = order[k];
                bool is_real = id < train_real.size();
                const ImageBatch& src = is_real ? real : generated;
                size_t row = is_real ? train_real[id] : train_gen[id - train_real.size()];
                ImageBatch one = src.sample(row);
                double sigma = schedule.sample_training_sigma(epoch_rng);
                for (double& v : one.data()) v += sigma * epoch_rng.normal();
                inputs.append(diffusion::append_channel(one, {pre.c_noise(sigma)}));
                labels.push_back(is_real ? 1.0 : 0.0);
            }
            nn::ForwardTrace trace;
            ImageBatch logits = net.forward(inputs, nn::Mode::train, &epoch_rng, &trace);
            probs.resize(labels.size());
            for (size_t i = 0; i < labels.size(); ++i)
                probs[i] = 1.0 / (1.0 + std::exp(-logits.sample_ptr(i)[0]));
            nn::LossResult loss = nn::bce_loss(probs, labels);
            loss_acc += loss.loss;
            ++batches;
            ImageBatch upstream(labels.size(), net.output_shape());
            for (size_t i = 0; i < labels.size(); ++i)
                upstream.sample_ptr(i)[0] = loss.grad[i] * probs[i] * (1.0 - probs[i]);
            nn::Gradients grads = net.backward(trace, upstream);
            nn::adam_step(net.params(), grads.params, adam);
        }
        DiscEpochLog log;
        log.epoch = epoch;
        log.train_loss = batches ? loss_acc / double(batches) : 0.0;
        log.val_accuracy = evaluate(net);
        result.log.push_back(log);
        result.checkpoints.push_back(net);  // parameters snapshot per epoch
    }

    result.discriminator = std::make_shared<NeuralDiscriminator>(net, shape);
    return result;
}

EpochSelection epoch_selection(const std::vector<nn::Network>& checkpoints, Shape3 data_shape,
                               const diffusion::Denoiser& model, const GuidanceConfig& config,
                               const diffusion::NoiseSchedule& schedule, int steps,
                               const metrics::FeatureStats& real_stats,
                               const metrics::FeatureExtractor& extractor, size_t n_per_eval,
                               uint64_t seed) {
    if (checkpoints.empty()) throw DataError("epoch_selection: no checkpoints");
    EpochSelection sel;
    for (const nn::Network& net : checkpoints) {
        NeuralDiscriminator disc(net, data_shape);
        samplers::SamplerRun run = samplers::sample(samplers::Method::heun, model, disc, config,
                                                    schedule, steps, n_per_eval, seed);
        sel.per_epoch_fid.push_back(metrics::fid(real_stats, run.samples, extractor));
    }
    sel.best_index = select_best_index(sel.per_epoch_fid);
    return sel;
}

size_t select_best_index(const std::vector<double>& per_epoch_fid) {
    if (per_epoch_fid.empty()) throw DataError("select_best_index: empty table");
    size_t best = 0;
    for (size_t i = 1; i < per_epoch_fid.size(); ++i)
        if (per_epoch_fid[i] < per_epoch_fid[best]) best = i;
    return best;
}

std::string discriminator_sidecar_json(const diffusion::NoiseSchedule& schedule, int epochs,
                                       double lr, uint64_t seed,
                                       const std::vector<DiscEpochLog>& log,
                                       const std::vector<double>& per_epoch_fid,
                                       size_t best_epoch) {
    nlohmann::json j;
    j["schedule"]["kind"] = diffusion::schedule_kind_name(schedule.kind);
    j["schedule"]["sigma_min"] = schedule.sigma_min;
    j["schedule"]["sigma_max"] = schedule.sigma_max;
    j["schedule"]["rho"] = schedule.rho;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["seed"] = seed;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : log) {
        nlohmann::json row;
        row["epoch"] = e.epoch;
        row["train_loss"] = e.train_loss;
        row["val_accuracy"] = e.val_accuracy;
        if (size_t(e.epoch) < per_epoch_fid.size())
            row["selection_fid"] = per_epoch_fid[size_t(e.epoch)];
        entries.push_back(row);
    }
    j["epochs_log"] = entries;
    j["best_epoch"] = best_epoch;
    return j.dump(2);
}

}  // namespace diffbench::guidance

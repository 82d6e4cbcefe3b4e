#include "diffbench/shift.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffbench/data.hpp"

namespace diffbench::shift {

std::string classifier_name(ClassifierKind k) {
    return k == ClassifierKind::linear ? "linear" : "convnet";
}

ClassifierKind classifier_from(const std::string& name) {
    if (name == "linear") return ClassifierKind::linear;
    if (name == "convnet") return ClassifierKind::convnet;
    throw ConfigError("unknown classifier kind '" + name + "'");
}

void ShiftStudyConfig::validate() const {
    if (epochs < 1) throw ConfigError("shift study: epochs must be >= 1");
    if (!(split > 0.0 && split < 1.0)) throw ConfigError("shift study: split must be in (0,1)");
    if (!(lr > 0.0)) throw ConfigError("shift study: lr must be positive");
    if (batch_size == 0) throw ConfigError("shift study: batch size must be >= 1");
}

nn::Network make_classifier(ClassifierKind kind, Shape3 input_shape) {
    if (kind == ClassifierKind::linear) {
        // single affine map to one probability; no non-linearity beyond the
        // output sigmoid
        return nn::Network(input_shape,
                           {nn::Flatten{}, nn::Dense{input_shape.numel(), 1},
                            nn::Act{nn::Activation::sigmoid}});
    }
    // 4-block small convnet standing in for the study's deep classifier
    return nn::Network(
        input_shape,
        {nn::Conv{input_shape.c, 16, 3, 2}, nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
         nn::Conv{16, 32, 3, 2},            nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
         nn::Conv{32, 32, 3, 2},            nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
         nn::Conv{32, 32, 3, 2},            nn::ChannelNorm{}, nn::Act{nn::Activation::relu},
         nn::GlobalAvgPool{},               nn::Dense{32, 1},  nn::Act{nn::Activation::sigmoid}});
}

namespace {

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i-- > 1;) std::swap(idx[i], idx[rng.below(i + 1)]);
    return idx;
}

}  // namespace

SplitIndices stratified_split(size_t n_real, size_t n_gen, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("stratified_split: train fraction must be in (0,1)");
    size_t rv = size_t(std::llround((1.0 - train_fraction) * double(n_real)));
    size_t gv = size_t(std::llround((1.0 - train_fraction) * double(n_gen)));
    if (rv == 0 || gv == 0 || rv >= n_real || gv >= n_gen)
        throw DataError("stratified_split: degenerate split (empty train or validation side)");
    Rng rng = Rng(seed).split(0);
    std::vector<size_t> real_rows = shuffled_indices(n_real, rng);
    std::vector<size_t> gen_rows = shuffled_indices(n_gen, rng);
    SplitIndices out;
    out.val_real.assign(real_rows.begin(), real_rows.begin() + rv);
    out.train_real.assign(real_rows.begin() + rv, real_rows.end());
    out.val_gen.assign(gen_rows.begin(), gen_rows.begin() + gv);
    out.train_gen.assign(gen_rows.begin() + gv, gen_rows.end());
    return out;
}

ShiftTrainResult train_shift_classifier(const ImageBatch& real, const ImageBatch& generated,
                                        const ShiftStudyConfig& cfg) {
    cfg.validate();
    if (real.count() == 0 || generated.count() == 0)
        throw DataError("shift study: empty dataset");
    if (!(real.sample_shape() == generated.sample_shape()))
        throw ShapeError("shift study: real/generated shapes differ");

    const Shape3 shape = real.sample_shape();
    Rng master(cfg.seed);

    // seeded subsample down to the configured study sizes
    size_t n_real = std::min(cfg.n_real, real.count());
    size_t n_gen = std::min(cfg.n_gen, generated.count());
    Rng pick_rng = master.split(7);
    std::vector<size_t> real_rows = shuffled_indices(real.count(), pick_rng);
    std::vector<size_t> gen_rows = shuffled_indices(generated.count(), pick_rng);
    real_rows.resize(n_real);
    gen_rows.resize(n_gen);

    // stratified 90/10 split: equal class counts in both splits within 1
    SplitIndices split = stratified_split(n_real, n_gen, cfg.split, cfg.seed);

    struct Example {
        size_t row;
        bool is_real;
    };
    std::vector<Example> train, val;
    for (size_t i : split.train_real) train.push_back({real_rows[i], true});
    for (size_t i : split.val_real) val.push_back({real_rows[i], true});
    for (size_t i : split.train_gen) train.push_back({gen_rows[i], false});
    for (size_t i : split.val_gen) val.push_back({gen_rows[i], false});

    nn::Network net = make_classifier(cfg.classifier, shape);
    // the linear classifier is a convex logistic fit: zero start, no
    // symmetry to break; the convnet needs random filters
    if (cfg.classifier == ClassifierKind::convnet) {
        Rng init_rng = master.split(1);
        net.initialize(init_rng);
    }
    nn::AdamState adam = nn::AdamState::fresh(net.param_count(), cfg.lr);

    auto fetch = [&](const Example& e) {
        return e.is_real ? real.sample(e.row) : generated.sample(e.row);
    };

    auto evaluate = [&](const nn::Network& model) {
        size_t correct = 0;
        for (const Example& e : val) {
            ImageBatch out = model.forward(fetch(e), nn::Mode::eval);
            bool predicted_real = out.sample_ptr(0)[0] > 0.5;
            if (predicted_real == e.is_real) ++correct;
        }
        return double(correct) / double(val.size());
    };

    ShiftTrainResult result;
    result.best_val_accuracy = -1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = master.split(16 + uint64_t(epoch));
        std::vector<size_t> order = shuffled_indices(train.size(), epoch_rng);
        double loss_acc = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            ImageBatch inputs(0, shape);
            std::vector<double> labels;
            for (size_t k = start; k < end; ++k) {
                const Example& e = train[order[k]];
                ImageBatch one = fetch(e);
                if (cfg.augment) one = augment(one, epoch_rng);
                inputs.append(one);
                labels.push_back(e.is_real ? 1.0 : 0.0);
            }
            nn::ForwardTrace trace;
            ImageBatch probs_batch = net.forward(inputs, nn::Mode::train, &epoch_rng, &trace);
            std::vector<double> probs(labels.size());
            for (size_t i = 0; i < labels.size(); ++i) probs[i] = probs_batch.sample_ptr(i)[0];
            nn::LossResult loss = nn::bce_loss(probs, labels);
            loss_acc += loss.loss;
            ++batches;
            ImageBatch upstream(labels.size(), net.output_shape());
            for (size_t i = 0; i < labels.size(); ++i) upstream.sample_ptr(i)[0] = loss.grad[i];
            nn::Gradients grads = net.backward(trace, upstream);
            nn::adam_step(net.params(), grads.params, adam);
        }
        EpochPoint point;
        point.epoch = epoch;
        point.train_loss = batches ? loss_acc / double(batches) : 0.0;
        point.val_accuracy = evaluate(net);
        result.log.push_back(point);
        if (point.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = point.val_accuracy;
            result.best_epoch = epoch;
        }
    }
    result.final_val_accuracy = result.log.back().val_accuracy;
    result.model = std::move(net);
    return result;
}

// ------------------------------ augmentation --------------------------------

AugmentDraw draw_augment(Rng& rng) {
    AugmentDraw d;
    d.scale = rng.uniform(0.8, 1.0);
    d.crop_x = rng.uniform();
    d.crop_y = rng.uniform();
    d.hflip = rng.uniform() < 0.5;
    d.rotation_deg = rng.uniform(-15.0, 15.0);
    return d;
}

namespace {

ImageBatch rotate_bilinear(const ImageBatch& images, double degrees) {
    const Shape3 s = images.sample_shape();
    const double theta = degrees * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cy = 0.5 * double(s.h - 1), cx = 0.5 * double(s.w - 1);
    ImageBatch out(images.count(), s);
    for (size_t i = 0; i < images.count(); ++i) {
        // fill with the image minimum (black sector exterior)
        double fill = images.sample_ptr(i)[0];
        for (size_t j = 0; j < s.numel(); ++j) fill = std::min(fill, images.sample_ptr(i)[j]);
        for (size_t c = 0; c < s.c; ++c) {
            for (size_t oy = 0; oy < s.h; ++oy) {
                for (size_t ox = 0; ox < s.w; ++ox) {
                    // inverse rotation about the image center
                    double dy = double(oy) - cy, dx = double(ox) - cx;
                    double sy = ct * dy + st * dx + cy;
                    double sx = -st * dy + ct * dx + cx;
                    double v = fill;
                    if (sy >= 0.0 && sy <= double(s.h - 1) && sx >= 0.0 && sx <= double(s.w - 1)) {
                        size_t y0 = size_t(sy), x0 = size_t(sx);
                        size_t y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
                        double wy = sy - double(y0), wx = sx - double(x0);
                        v = (1.0 - wy) * ((1.0 - wx) * images.at(i, c, y0, x0) +
                                          wx * images.at(i, c, y0, x1)) +
                            wy * ((1.0 - wx) * images.at(i, c, y1, x0) +
                                  wx * images.at(i, c, y1, x1));
                    }
                    out.at(i, c, oy, ox) = v;
                }
            }
        }
    }
    return out;
}

}  // namespace

ImageBatch apply_augment(const ImageBatch& images, const AugmentDraw& d) {
    const Shape3 s = images.sample_shape();
    ImageBatch out = images;

    // random resize-crop: take a window of relative size `scale`, resize back
    size_t wh = std::max<size_t>(1, size_t(std::llround(d.scale * double(s.h))));
    size_t ww = std::max<size_t>(1, size_t(std::llround(d.scale * double(s.w))));
    if (wh < s.h || ww < s.w) {
        size_t top = size_t(std::llround(d.crop_y * double(s.h - wh)));
        size_t left = size_t(std::llround(d.crop_x * double(s.w - ww)));
        ImageBatch window(out.count(), Shape3{s.c, wh, ww});
        for (size_t i = 0; i < out.count(); ++i)
            for (size_t c = 0; c < s.c; ++c)
                for (size_t y = 0; y < wh; ++y)
                    for (size_t x = 0; x < ww; ++x)
                        window.at(i, c, y, x) = out.at(i, c, top + y, left + x);
        out = data::resize_bilinear(window, s.h, s.w);
    }

    if (d.hflip) {
        ImageBatch flipped(out.count(), s);
        for (size_t i = 0; i < out.count(); ++i)
            for (size_t c = 0; c < s.c; ++c)
                for (size_t y = 0; y < s.h; ++y)
                    for (size_t x = 0; x < s.w; ++x)
                        flipped.at(i, c, y, x) = out.at(i, c, y, s.w - 1 - x);
        out = std::move(flipped);
    }

    if (d.rotation_deg != 0.0) out = rotate_bilinear(out, d.rotation_deg);
    return out;
}

ImageBatch augment(const ImageBatch& images, Rng& rng) {
    ImageBatch out(0, images.sample_shape());
    for (size_t i = 0; i < images.count(); ++i) {
        AugmentDraw d = draw_augment(rng);
        out.append(apply_augment(images.sample(i), d));
    }
    return out;
}

// -------------------------------- report ------------------------------------

std::vector<ShiftReportRow> shift_report(const ImageBatch& real, const ImageBatch& gen_pre_dg,
                                         const ImageBatch& gen_post_dg,
                                         const std::vector<ShiftStudyConfig>& configs) {
    if (real.count() == 0 || gen_pre_dg.count() == 0 || gen_post_dg.count() == 0)
        throw DataError("shift report: empty dataset");
    std::vector<ShiftReportRow> rows;
    for (const ShiftStudyConfig& cfg : configs) {
        for (const char* phase : {"pre", "post"}) {
            const ImageBatch& gen = phase == std::string("pre") ? gen_pre_dg : gen_post_dg;
            ShiftTrainResult r = train_shift_classifier(real, gen, cfg);
            ShiftReportRow row;
            row.classifier = classifier_name(cfg.classifier);
            row.augment = cfg.augment;
            row.phase = phase;
            row.seed = cfg.seed;
            row.best_epoch = r.best_epoch;
            row.val_accuracy = r.best_val_accuracy;
            row.final_val_accuracy = r.final_val_accuracy;
            rows.push_back(row);
        }
    }
    return rows;
}

std::string shift_report_csv(const std::vector<ShiftReportRow>& rows) {
    std::ostringstream os;
    os << "classifier,augment,phase,seed,best_epoch,val_accuracy\n";
    for (const ShiftReportRow& r : rows)
        os << r.classifier << "," << (r.augment ? "true" : "false") << "," << r.phase << ","
           << r.seed << "," << r.best_epoch << "," << format_double(r.val_accuracy) << "\n";
    return os.str();
}

}  // namespace diffbench::shift

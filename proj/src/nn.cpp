#include "diffbench/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "diffbench/wire.hpp"

namespace diffbench::nn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

size_t conv_out_extent(size_t in, size_t kernel, size_t stride) {
    size_t pad = (kernel - 1) / 2;
    if (in + 2 * pad < kernel) return 0;
    return (in + 2 * pad - kernel) / stride + 1;
}

[[noreturn]] void layer_shape_error(size_t index, const LayerSpec& spec, const std::string& detail) {
    throw ShapeError("layer " + std::to_string(index) + " (" + layer_name(spec) + "): " + detail);
}

}  // namespace

std::string layer_name(const LayerSpec& spec) {
    struct Visitor {
        std::string operator()(const Dense&) const { return "dense"; }
        std::string operator()(const Conv&) const { return "conv"; }
        std::string operator()(const Act& a) const {
            switch (a.fn) {
                case Activation::relu: return "relu";
                case Activation::silu: return "silu";
                case Activation::sigmoid: return "sigmoid";
            }
            return "activation";
        }
        std::string operator()(const Dropout&) const { return "dropout"; }
        std::string operator()(const Flatten&) const { return "flatten"; }
        std::string operator()(const ChannelNorm&) const { return "norm"; }
        std::string operator()(const GlobalAvgPool&) const { return "global_pool"; }
    };
    return std::visit(Visitor{}, spec);
}

Network::Network(Shape3 input_shape, std::vector<LayerSpec> layers)
    : input_shape_(input_shape), layers_(std::move(layers)) {
    shapes_.push_back(input_shape_);
    offsets_.reserve(layers_.size());
    size_t offset = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        Shape3 in = shapes_.back();
        Shape3 out = in;
        offsets_.push_back(offset);
        if (const Dense* d = std::get_if<Dense>(&spec)) {
            if (in.h != 1 || in.w != 1 || in.c != d->in)
                layer_shape_error(i, spec, "expected input (" + std::to_string(d->in) +
                                               ",1,1), got " + in.str());
            if (d->out == 0) layer_shape_error(i, spec, "zero output width");
            out = Shape3{d->out, 1, 1};
            offset += d->out * d->in + d->out;
        } else if (const Conv* c = std::get_if<Conv>(&spec)) {
            if (c->kernel % 2 == 0 || c->kernel == 0)
                layer_shape_error(i, spec, "kernel must be odd");
            if (c->stride == 0) layer_shape_error(i, spec, "stride must be positive");
            if (in.c != c->in_ch)
                layer_shape_error(i, spec, "expected " + std::to_string(c->in_ch) +
                                               " input channels, got " + in.str());
            size_t oh = conv_out_extent(in.h, c->kernel, c->stride);
            size_t ow = conv_out_extent(in.w, c->kernel, c->stride);
            if (oh == 0 || ow == 0) layer_shape_error(i, spec, "output collapses to zero extent");
            out = Shape3{c->out_ch, oh, ow};
            offset += c->out_ch * c->in_ch * c->kernel * c->kernel + c->out_ch;
        } else if (const Dropout* dr = std::get_if<Dropout>(&spec)) {
            if (!(dr->rate >= 0.0 && dr->rate < 1.0))
                layer_shape_error(i, spec, "rate must be in [0,1)");
        } else if (std::get_if<Flatten>(&spec)) {
            out = Shape3{in.numel(), 1, 1};
        } else if (std::get_if<GlobalAvgPool>(&spec)) {
            out = Shape3{in.c, 1, 1};
        }
        shapes_.push_back(out);
    }
    params_.assign(offset, 0.0);
}

size_t Network::layer_param_count(size_t i) const {
    size_t end = (i + 1 < offsets_.size()) ? offsets_[i + 1] : params_.size();
    return end - offsets_[i];
}

void Network::initialize(Rng& rng) {
    for (size_t i = 0; i < layers_.size(); ++i) {
        double* p = params_.data() + offsets_[i];
        if (const Dense* d = std::get_if<Dense>(&layers_[i])) {
            double scale = std::sqrt(2.0 / double(d->in));
            for (size_t k = 0; k < d->out * d->in; ++k) p[k] = scale * rng.normal();
            // biases stay zero
        } else if (const Conv* c = std::get_if<Conv>(&layers_[i])) {
            size_t fan_in = c->in_ch * c->kernel * c->kernel;
            double scale = std::sqrt(2.0 / double(fan_in));
            for (size_t k = 0; k < c->out_ch * fan_in; ++k) p[k] = scale * rng.normal();
        }
    }
}

ImageBatch Network::forward(const ImageBatch& input, Mode mode, Rng* rng,
                            ForwardTrace* trace) const {
    if (!(input.sample_shape() == input_shape_))
        throw ShapeError("network input: expected " + input_shape_.str() + ", got " +
                         input.sample_shape().str());
    if (trace) {
        trace->valid = false;
        trace->mode = mode;
        trace->layer_inputs.clear();
        trace->dropout_masks.assign(layers_.size(), {});
    }
    // dropout sub-streams are derived once per forward so the per-sample
    // masks do not depend on batch traversal order
    uint64_t dropout_base = 0;
    bool needs_rng = false;
    if (mode == Mode::train) {
        for (const auto& l : layers_) {
            if (const Dropout* d = std::get_if<Dropout>(&l); d && d->rate > 0.0) needs_rng = true;
        }
        if (needs_rng) {
            if (!rng) throw Error("train-mode forward with dropout requires a generator");
            dropout_base = rng->next_u64();
        }
    }

    ImageBatch x = input;
    const size_t n = x.count();
    for (size_t li = 0; li < layers_.size(); ++li) {
        if (trace) trace->layer_inputs.push_back(x);
        const LayerSpec& spec = layers_[li];
        const Shape3 out_shape = shapes_[li + 1];
        const double* p = params_.data() + offsets_[li];

        if (const Dense* d = std::get_if<Dense>(&spec)) {
            ImageBatch y(n, out_shape);
            const double* w = p;
            const double* b = p + d->out * d->in;
            parallel_for(n, [&](size_t s0, size_t s1) {
                for (size_t s = s0; s < s1; ++s) {
                    const double* xs = x.sample_ptr(s);
                    double* ys = y.sample_ptr(s);
                    for (size_t o = 0; o < d->out; ++o) {
                        const double* wr = w + o * d->in;
                        double acc = b[o];
                        for (size_t ii = 0; ii < d->in; ++ii) acc += wr[ii] * xs[ii];
                        ys[o] = acc;
                    }
                }
            });
            x = std::move(y);
        } else if (const Conv* c = std::get_if<Conv>(&spec)) {
            const Shape3 in_shape = shapes_[li];
            const size_t k = c->kernel, stride = c->stride;
            const long pad = long(k - 1) / 2;
            const double* w = p;  // (out_ch, in_ch, k, k)
            const double* b = p + c->out_ch * c->in_ch * k * k;
            ImageBatch y(n, out_shape);
            parallel_for(n, [&](size_t s0, size_t s1) {
                for (size_t s = s0; s < s1; ++s) {
                    for (size_t oc = 0; oc < c->out_ch; ++oc) {
                        for (size_t oy = 0; oy < out_shape.h; ++oy) {
                            for (size_t ox = 0; ox < out_shape.w; ++ox) {
                                double acc = b[oc];
                                for (size_t ic = 0; ic < c->in_ch; ++ic) {
                                    const double* wk = w + ((oc * c->in_ch + ic) * k) * k;
                                    for (size_t ky = 0; ky < k; ++ky) {
                                        long iy = long(oy * stride) - pad + long(ky);
                                        if (iy < 0 || iy >= long(in_shape.h)) continue;
                                        for (size_t kx = 0; kx < k; ++kx) {
                                            long ix = long(ox * stride) - pad + long(kx);
                                            if (ix < 0 || ix >= long(in_shape.w)) continue;
                                            acc += wk[ky * k + kx] *
                                                   x.at(s, ic, size_t(iy), size_t(ix));
                                        }
                                    }
                                }
                                y.at(s, oc, oy, ox) = acc;
                            }
                        }
                    }
                }
            });
            x = std::move(y);
        } else if (const Act* a = std::get_if<Act>(&spec)) {
            ImageBatch y(n, out_shape);
            const auto& xin = x.data();
            auto& yout = y.data();
            switch (a->fn) {
                case Activation::relu:
                    for (size_t j = 0; j < xin.size(); ++j) yout[j] = xin[j] > 0.0 ? xin[j] : 0.0;
                    break;
                case Activation::silu:
                    for (size_t j = 0; j < xin.size(); ++j) yout[j] = xin[j] * sigmoid(xin[j]);
                    break;
                case Activation::sigmoid:
                    for (size_t j = 0; j < xin.size(); ++j) yout[j] = sigmoid(xin[j]);
                    break;
            }
            x = std::move(y);
        } else if (const Dropout* dr = std::get_if<Dropout>(&spec)) {
            if (mode == Mode::train && dr->rate > 0.0) {
                const double keep = 1.0 - dr->rate;
                const size_t m = x.sample_size();
                std::vector<double> mask(n * m);
                uint64_t layer_stream = dropout_base ^ (0xa0761d6478bd642full * (li + 1));
                for (size_t s = 0; s < n; ++s) {
                    Rng mask_rng = Rng(layer_stream).split(s);
                    double* row = mask.data() + s * m;
                    for (size_t j = 0; j < m; ++j)
                        row[j] = mask_rng.uniform() < keep ? 1.0 / keep : 0.0;
                }
                auto& vals = x.data();
                for (size_t j = 0; j < vals.size(); ++j) vals[j] *= mask[j];
                if (trace) trace->dropout_masks[li] = std::move(mask);
            }
            // eval mode: identity
        } else if (std::get_if<Flatten>(&spec)) {
            ImageBatch y(n, out_shape);
            y.data() = x.data();
            x = std::move(y);
        } else if (std::get_if<ChannelNorm>(&spec)) {
            const Shape3 in_shape = shapes_[li];
            const size_t m = in_shape.h * in_shape.w;
            ImageBatch y(n, out_shape);
            for (size_t s = 0; s < n; ++s) {
                for (size_t ch = 0; ch < in_shape.c; ++ch) {
                    const double* src = x.sample_ptr(s) + ch * m;
                    double* dst = y.sample_ptr(s) + ch * m;
                    double mean = 0.0;
                    for (size_t j = 0; j < m; ++j) mean += src[j];
                    mean /= double(m);
                    double var = 0.0;
                    for (size_t j = 0; j < m; ++j) var += (src[j] - mean) * (src[j] - mean);
                    var /= double(m);
                    double inv = 1.0 / std::sqrt(var + 1e-5);
                    for (size_t j = 0; j < m; ++j) dst[j] = (src[j] - mean) * inv;
                }
            }
            x = std::move(y);
        } else if (std::get_if<GlobalAvgPool>(&spec)) {
            const Shape3 in_shape = shapes_[li];
            const size_t m = in_shape.h * in_shape.w;
            ImageBatch y(n, out_shape);
            for (size_t s = 0; s < n; ++s) {
                for (size_t ch = 0; ch < in_shape.c; ++ch) {
                    const double* src = x.sample_ptr(s) + ch * m;
                    double acc = 0.0;
                    for (size_t j = 0; j < m; ++j) acc += src[j];
                    y.sample_ptr(s)[ch] = acc / double(m);
                }
            }
            x = std::move(y);
        }
    }
    if (trace) trace->valid = true;
    return x;
}

Gradients Network::backward(const ForwardTrace& trace, const ImageBatch& upstream) const {
    if (!trace.valid)
        throw Error("backward without cached forward pass: run forward with a trace first");
    if (trace.layer_inputs.size() != layers_.size())
        throw Error("backward: trace does not match this network");
    if (!(upstream.sample_shape() == output_shape()))
        throw ShapeError("backward: upstream gradient shape " + upstream.sample_shape().str() +
                         " does not match network output " + output_shape().str());

    Gradients result;
    result.params.assign(params_.size(), 0.0);
    ImageBatch g = upstream;
    const size_t n = upstream.count();

    for (size_t li = layers_.size(); li-- > 0;) {
        const LayerSpec& spec = layers_[li];
        const ImageBatch& xin = trace.layer_inputs[li];
        const Shape3 in_shape = shapes_[li];
        const double* p = params_.data() + offsets_[li];
        double* gp = result.params.data() + offsets_[li];

        if (const Dense* d = std::get_if<Dense>(&spec)) {
            const double* w = p;
            double* gw = gp;
            double* gb = gp + d->out * d->in;
            ImageBatch gx(n, in_shape);
            for (size_t s = 0; s < n; ++s) {
                const double* xs = xin.sample_ptr(s);
                const double* gs = g.sample_ptr(s);
                double* gxs = gx.sample_ptr(s);
                for (size_t o = 0; o < d->out; ++o) {
                    const double go = gs[o];
                    if (go == 0.0) continue;
                    double* gwr = gw + o * d->in;
                    const double* wr = w + o * d->in;
                    for (size_t ii = 0; ii < d->in; ++ii) {
                        gwr[ii] += go * xs[ii];
                        gxs[ii] += go * wr[ii];
                    }
                    gb[o] += go;
                }
            }
            g = std::move(gx);
        } else if (const Conv* c = std::get_if<Conv>(&spec)) {
            const size_t k = c->kernel, stride = c->stride;
            const long pad = long(k - 1) / 2;
            const Shape3 out_shape = shapes_[li + 1];
            const double* w = p;
            double* gw = gp;
            double* gb = gp + c->out_ch * c->in_ch * k * k;
            ImageBatch gx(n, in_shape);
            for (size_t s = 0; s < n; ++s) {
                for (size_t oc = 0; oc < c->out_ch; ++oc) {
                    for (size_t oy = 0; oy < out_shape.h; ++oy) {
                        for (size_t ox = 0; ox < out_shape.w; ++ox) {
                            const double go = g.at(s, oc, oy, ox);
                            if (go == 0.0) continue;
                            gb[oc] += go;
                            for (size_t ic = 0; ic < c->in_ch; ++ic) {
                                const double* wk = w + ((oc * c->in_ch + ic) * k) * k;
                                double* gwk = gw + ((oc * c->in_ch + ic) * k) * k;
                                for (size_t ky = 0; ky < k; ++ky) {
                                    long iy = long(oy * stride) - pad + long(ky);
                                    if (iy < 0 || iy >= long(in_shape.h)) continue;
                                    for (size_t kx = 0; kx < k; ++kx) {
                                        long ix = long(ox * stride) - pad + long(kx);
                                        if (ix < 0 || ix >= long(in_shape.w)) continue;
                                        gwk[ky * k + kx] += go * xin.at(s, ic, size_t(iy), size_t(ix));
                                        gx.at(s, ic, size_t(iy), size_t(ix)) += go * wk[ky * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            g = std::move(gx);
        } else if (const Act* a = std::get_if<Act>(&spec)) {
            const auto& xv = xin.data();
            auto& gv = g.data();
            switch (a->fn) {
                case Activation::relu:
                    for (size_t j = 0; j < gv.size(); ++j) gv[j] = xv[j] > 0.0 ? gv[j] : 0.0;
                    break;
                case Activation::silu:
                    for (size_t j = 0; j < gv.size(); ++j) {
                        double s = sigmoid(xv[j]);
                        gv[j] *= s * (1.0 + xv[j] * (1.0 - s));
                    }
                    break;
                case Activation::sigmoid:
                    for (size_t j = 0; j < gv.size(); ++j) {
                        double s = sigmoid(xv[j]);
                        gv[j] *= s * (1.0 - s);
                    }
                    break;
            }
        } else if (std::get_if<Dropout>(&spec)) {
            const auto& mask = trace.dropout_masks[li];
            if (!mask.empty()) {
                auto& gv = g.data();
                for (size_t j = 0; j < gv.size(); ++j) gv[j] *= mask[j];
            }
        } else if (std::get_if<Flatten>(&spec)) {
            ImageBatch gx(n, in_shape);
            gx.data() = g.data();
            g = std::move(gx);
        } else if (std::get_if<ChannelNorm>(&spec)) {
            const size_t m = in_shape.h * in_shape.w;
            ImageBatch gx(n, in_shape);
            for (size_t s = 0; s < n; ++s) {
                for (size_t ch = 0; ch < in_shape.c; ++ch) {
                    const double* src = xin.sample_ptr(s) + ch * m;
                    const double* gs = g.sample_ptr(s) + ch * m;
                    double* gd = gx.sample_ptr(s) + ch * m;
                    double mean = 0.0;
                    for (size_t j = 0; j < m; ++j) mean += src[j];
                    mean /= double(m);
                    double var = 0.0;
                    for (size_t j = 0; j < m; ++j) var += (src[j] - mean) * (src[j] - mean);
                    var /= double(m);
                    double inv = 1.0 / std::sqrt(var + 1e-5);
                    double gsum = 0.0, gysum = 0.0;
                    for (size_t j = 0; j < m; ++j) {
                        double yj = (src[j] - mean) * inv;
                        gsum += gs[j];
                        gysum += gs[j] * yj;
                    }
                    for (size_t j = 0; j < m; ++j) {
                        double yj = (src[j] - mean) * inv;
                        gd[j] = inv * (gs[j] - gsum / double(m) - yj * gysum / double(m));
                    }
                }
            }
            g = std::move(gx);
        } else if (std::get_if<GlobalAvgPool>(&spec)) {
            const size_t m = in_shape.h * in_shape.w;
            ImageBatch gx(n, in_shape);
            for (size_t s = 0; s < n; ++s) {
                for (size_t ch = 0; ch < in_shape.c; ++ch) {
                    double go = g.sample_ptr(s)[ch] / double(m);
                    double* gd = gx.sample_ptr(s) + ch * m;
                    for (size_t j = 0; j < m; ++j) gd[j] = go;
                }
            }
            g = std::move(gx);
        }
    }
    result.input = std::move(g);
    return result;
}

ImageBatch forward(const Network& net, const ImageBatch& input, Mode mode, Rng* rng,
                   ForwardTrace* trace) {
    return net.forward(input, mode, rng, trace);
}

Gradients backward(const Network& net, const ForwardTrace& trace, const ImageBatch& upstream) {
    return net.backward(trace, upstream);
}

LossResult bce_loss(const std::vector<double>& probs, const std::vector<double>& labels) {
    if (probs.size() != labels.size()) throw ShapeError("bce_loss: length mismatch");
    if (probs.empty()) throw ShapeError("bce_loss: empty input");
    constexpr double eps = 1e-7;
    const double inv_n = 1.0 / double(probs.size());
    LossResult r;
    r.grad.assign(probs.size(), 0.0);
    for (size_t i = 0; i < probs.size(); ++i) {
        double raw = probs[i];
        double pc = std::clamp(raw, eps, 1.0 - eps);
        double y = labels[i];
        r.loss -= inv_n * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
        // zero gradient in the clamped flat region
        if (raw > eps && raw < 1.0 - eps)
            r.grad[i] = inv_n * (pc - y) / (pc * (1.0 - pc));
    }
    return r;
}

LossResult mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw ShapeError("mse_loss: length mismatch");
    if (pred.empty()) throw ShapeError("mse_loss: empty input");
    const double inv_n = 1.0 / double(pred.size());
    LossResult r;
    r.grad.assign(pred.size(), 0.0);
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        r.loss += inv_n * d * d;
        r.grad[i] = 2.0 * inv_n * d;
    }
    return r;
}

AdamState AdamState::fresh(size_t n, double lr_) {
    AdamState s;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    s.lr = lr_;
    return s;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
        params.size() != state.second_moment.size())
        throw ShapeError("adam_step: length mismatch");
    state.step_count += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, double(state.step_count));
    const double c2 = 1.0 - std::pow(b2, double(state.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g;
        state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        double mhat = state.first_moment[i] / c1;
        double vhat = state.second_moment[i] / c2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

// --------------------------- checkpoint format -----------------------------

namespace {

constexpr char kMagic[4] = {'D', 'B', 'N', 'N'};
constexpr uint32_t kVersion = 1;

enum LayerKind : uint8_t {
    kDense = 1,
    kConv = 2,
    kAct = 3,
    kDropout = 4,
    kFlatten = 5,
    kNorm = 6,
    kGlobalPool = 7,
};

}  // namespace

void save_network(const std::string& path, const Network& net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    wire::put_bytes(os, kMagic, 4);
    wire::put_u32(os, kVersion);
    wire::put_u32(os, uint32_t(net.input_shape().c));
    wire::put_u32(os, uint32_t(net.input_shape().h));
    wire::put_u32(os, uint32_t(net.input_shape().w));
    wire::put_u32(os, uint32_t(net.layers().size()));
    for (const LayerSpec& l : net.layers()) {
        std::string rec;
        auto push_u32 = [&rec](uint32_t v) {
            for (int i = 0; i < 4; ++i) rec.push_back(char((v >> (8 * i)) & 0xff));
        };
        if (const Dense* d = std::get_if<Dense>(&l)) {
            rec.push_back(char(kDense));
            push_u32(uint32_t(d->in));
            push_u32(uint32_t(d->out));
        } else if (const Conv* c = std::get_if<Conv>(&l)) {
            rec.push_back(char(kConv));
            push_u32(uint32_t(c->in_ch));
            push_u32(uint32_t(c->out_ch));
            push_u32(uint32_t(c->kernel));
            push_u32(uint32_t(c->stride));
        } else if (const Act* a = std::get_if<Act>(&l)) {
            rec.push_back(char(kAct));
            rec.push_back(char(uint8_t(a->fn)));
        } else if (const Dropout* dr = std::get_if<Dropout>(&l)) {
            rec.push_back(char(kDropout));
            uint64_t bits;
            static_assert(sizeof(double) == 8);
            std::memcpy(&bits, &dr->rate, 8);
            for (int i = 0; i < 8; ++i) rec.push_back(char((bits >> (8 * i)) & 0xff));
        } else if (std::get_if<Flatten>(&l)) {
            rec.push_back(char(kFlatten));
        } else if (std::get_if<ChannelNorm>(&l)) {
            rec.push_back(char(kNorm));
        } else if (std::get_if<GlobalAvgPool>(&l)) {
            rec.push_back(char(kGlobalPool));
        }
        wire::put_u32(os, uint32_t(rec.size()));
        wire::put_bytes(os, rec.data(), rec.size());
    }
    wire::put_u64(os, net.param_count());
    for (double v : net.params()) wire::put_f64(os, v);
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

Network load_network(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    wire::get_bytes(is, magic, 4, "checkpoint");
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
    uint32_t version = wire::get_u32(is, "checkpoint");
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Shape3 shape;
    shape.c = wire::get_u32(is, "checkpoint");
    shape.h = wire::get_u32(is, "checkpoint");
    shape.w = wire::get_u32(is, "checkpoint");
    uint32_t layer_count = wire::get_u32(is, "checkpoint");
    std::vector<LayerSpec> layers;
    layers.reserve(layer_count);
    for (uint32_t i = 0; i < layer_count; ++i) {
        uint32_t len = wire::get_u32(is, "checkpoint");
        std::string rec(len, '\0');
        wire::get_bytes(is, rec.data(), len, "checkpoint");
        if (rec.empty()) throw DataError("checkpoint: corrupt header (empty layer record)");
        size_t pos = 1;
        auto take_u32 = [&rec, &pos]() {
            if (pos + 4 > rec.size()) throw DataError("checkpoint: corrupt header (layer record)");
            uint32_t v = 0;
            for (int b = 0; b < 4; ++b) v |= uint32_t(uint8_t(rec[pos + b])) << (8 * b);
            pos += 4;
            return v;
        };
        switch (uint8_t(rec[0])) {
            case kDense: {
                Dense d;
                d.in = take_u32();
                d.out = take_u32();
                layers.emplace_back(d);
                break;
            }
            case kConv: {
                Conv c;
                c.in_ch = take_u32();
                c.out_ch = take_u32();
                c.kernel = take_u32();
                c.stride = take_u32();
                layers.emplace_back(c);
                break;
            }
            case kAct: {
                if (rec.size() < 2) throw DataError("checkpoint: corrupt header (layer record)");
                layers.emplace_back(Act{Activation(uint8_t(rec[1]))});
                break;
            }
            case kDropout: {
                if (rec.size() < 9) throw DataError("checkpoint: corrupt header (layer record)");
                uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits |= uint64_t(uint8_t(rec[1 + b])) << (8 * b);
                double rate;
                std::memcpy(&rate, &bits, 8);
                layers.emplace_back(Dropout{rate});
                break;
            }
            case kFlatten:
                layers.emplace_back(Flatten{});
                break;
            case kNorm:
                layers.emplace_back(ChannelNorm{});
                break;
            case kGlobalPool:
                layers.emplace_back(GlobalAvgPool{});
                break;
            default:
                throw DataError("checkpoint: unknown layer kind");
        }
    }
    Network net(shape, std::move(layers));
    uint64_t count = wire::get_u64(is, "checkpoint");
    if (count != net.param_count())
        throw DataError("checkpoint: parameter count does not match layer layout");
    for (uint64_t i = 0; i < count; ++i) net.params()[i] = wire::get_f64(is, "checkpoint");
    return net;
}

}  // namespace diffbench::nn

#include "diffbench/diffusion.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace diffbench::diffusion {

std::string schedule_kind_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::edm: return "edm";
        case ScheduleKind::vp: return "vp";
        case ScheduleKind::ve: return "ve";
    }
    return "?";
}

ScheduleKind schedule_kind_from(const std::string& name) {
    if (name == "edm") return ScheduleKind::edm;
    if (name == "vp") return ScheduleKind::vp;
    if (name == "ve") return ScheduleKind::ve;
    throw ConfigError("unknown schedule kind '" + name + "'");
}

NoiseSchedule NoiseSchedule::edm(double sigma_min, double sigma_max, double rho) {
    NoiseSchedule s;
    s.kind = ScheduleKind::edm;
    s.sigma_min = sigma_min;
    s.sigma_max = sigma_max;
    s.rho = rho;
    s.validate();
    return s;
}

NoiseSchedule NoiseSchedule::vp(double beta_d, double beta_min) {
    NoiseSchedule s;
    s.kind = ScheduleKind::vp;
    s.vp_beta_d = beta_d;
    s.vp_beta_min = beta_min;
    // endpoints of the conventional time interval [1e-3, 1]
    s.sigma_min = std::sqrt(std::exp(0.5 * beta_d * 1e-6 + beta_min * 1e-3) - 1.0);
    s.sigma_max = std::sqrt(std::exp(0.5 * beta_d + beta_min) - 1.0);
    s.validate();
    return s;
}

NoiseSchedule NoiseSchedule::ve(double sigma_min, double sigma_max) {
    NoiseSchedule s;
    s.kind = ScheduleKind::ve;
    s.sigma_min = sigma_min;
    s.sigma_max = sigma_max;
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > 0.0) || sigma_min >= sigma_max)
        throw ConfigError("invalid schedule: require 0 < sigma_min < sigma_max");
    if (kind == ScheduleKind::edm && !(rho > 0.0))
        throw ConfigError("invalid schedule: rho must be positive");
    if (kind == ScheduleKind::vp && (!(vp_beta_d > 0.0) || !(vp_beta_min > 0.0)))
        throw ConfigError("invalid schedule: vp betas must be positive");
}

double NoiseSchedule::sigma_from_time(double t) const {
    switch (kind) {
        case ScheduleKind::edm:
            return t;
        case ScheduleKind::vp:
            return std::sqrt(std::exp(0.5 * vp_beta_d * t * t + vp_beta_min * t) - 1.0);
        case ScheduleKind::ve:
            return std::sqrt(t);
    }
    return 0.0;
}

double NoiseSchedule::time_from_sigma(double sigma) const {
    switch (kind) {
        case ScheduleKind::edm:
            return sigma;
        case ScheduleKind::vp: {
            double c = std::log1p(sigma * sigma);
            return (std::sqrt(vp_beta_min * vp_beta_min + 2.0 * vp_beta_d * c) - vp_beta_min) /
                   vp_beta_d;
        }
        case ScheduleKind::ve:
            return sigma * sigma;
    }
    return 0.0;
}

double NoiseSchedule::sample_training_sigma(Rng& rng) const {
    if (kind == ScheduleKind::edm) return std::exp(kPMean + kPStd * rng.normal());
    return std::exp(rng.uniform(std::log(sigma_min), std::log(sigma_max)));
}

std::vector<double> sigma_steps(const NoiseSchedule& schedule, int n_steps) {
    schedule.validate();
    if (n_steps < 1) throw ConfigError("sigma_steps: n_steps must be >= 1");
    const size_t n = size_t(n_steps);
    std::vector<double> out(n + 1, 0.0);
    if (n == 1) {
        out[0] = schedule.sigma_max;
        return out;
    }
    switch (schedule.kind) {
        case ScheduleKind::edm: {
            double inv_rho = 1.0 / schedule.rho;
            double a = std::pow(schedule.sigma_max, inv_rho);
            double b = std::pow(schedule.sigma_min, inv_rho);
            for (size_t i = 0; i < n; ++i)
                out[i] = std::pow(a + (double(i) / double(n - 1)) * (b - a), schedule.rho);
            break;
        }
        case ScheduleKind::vp: {
            double t_hi = schedule.time_from_sigma(schedule.sigma_max);
            double t_lo = schedule.time_from_sigma(schedule.sigma_min);
            for (size_t i = 0; i < n; ++i) {
                double t = t_hi + (double(i) / double(n - 1)) * (t_lo - t_hi);
                out[i] = schedule.sigma_from_time(t);
            }
            break;
        }
        case ScheduleKind::ve: {
            double ratio = schedule.sigma_min / schedule.sigma_max;
            for (size_t i = 0; i < n; ++i)
                out[i] = schedule.sigma_max * std::pow(ratio, double(i) / double(n - 1));
            break;
        }
    }
    out[0] = schedule.sigma_max;
    out[n - 1] = schedule.sigma_min;
    for (size_t i = 0; i + 1 < out.size(); ++i)
        if (!(out[i] > out[i + 1]))
            throw NumericError("sigma_steps: discretization is not strictly decreasing");
    return out;
}

// ------------------------------- densities ---------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dim(size_t expected, size_t got, const char* what) {
    if (expected != got)
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(got) +
                         " vs " + std::to_string(expected) + ")");
}

}  // namespace

GaussianDensity::GaussianDensity(std::vector<double> mean, Matrix covariance)
    : mean_(std::move(mean)), cov_(std::move(covariance)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
        throw ShapeError("gaussian density: mean/covariance sizes disagree");
    if (!linalg::is_symmetric(cov_, 1e-10))
        throw NumericError("gaussian density: covariance not symmetric");
    eig_ = linalg::sym_eig(cov_);
    for (double v : eig_.values)
        if (v <= 0.0) throw NumericError("gaussian density: covariance not positive definite");
}

std::vector<double> GaussianDensity::posterior_mean(const std::vector<double>& x,
                                                    double sigma) const {
    check_dim(dim(), x.size(), "gaussian posterior_mean");
    const size_t d = dim();
    // rotate into the eigenbasis, shrink each coordinate, rotate back
    std::vector<double> delta(d), rot(d, 0.0), out(d);
    for (size_t i = 0; i < d; ++i) delta[i] = x[i] - mean_[i];
    for (size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < d; ++i) acc += eig_.vectors(i, k) * delta[i];
        rot[k] = acc * (eig_.values[k] / (eig_.values[k] + sigma * sigma));
    }
    for (size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (size_t k = 0; k < d; ++k) acc += eig_.vectors(i, k) * rot[k];
        out[i] = mean_[i] + acc;
    }
    return out;
}

std::vector<double> GaussianDensity::score(const std::vector<double>& x, double sigma) const {
    check_dim(dim(), x.size(), "gaussian score");
    const size_t d = dim();
    std::vector<double> delta(d), rot(d, 0.0), out(d);
    for (size_t i = 0; i < d; ++i) delta[i] = x[i] - mean_[i];
    for (size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < d; ++i) acc += eig_.vectors(i, k) * delta[i];
        rot[k] = -acc / (eig_.values[k] + sigma * sigma);
    }
    for (size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (size_t k = 0; k < d; ++k) acc += eig_.vectors(i, k) * rot[k];
        out[i] = acc;
    }
    return out;
}

double GaussianDensity::log_density(const std::vector<double>& x, double sigma) const {
    check_dim(dim(), x.size(), "gaussian log_density");
    const size_t d = dim();
    std::vector<double> delta(d);
    for (size_t i = 0; i < d; ++i) delta[i] = x[i] - mean_[i];
    double quad = 0.0, logdet = 0.0;
    for (size_t k = 0; k < d; ++k) {
        double lam = eig_.values[k] + sigma * sigma;
        double acc = 0.0;
        for (size_t i = 0; i < d; ++i) acc += eig_.vectors(i, k) * delta[i];
        quad += acc * acc / lam;
        logdet += std::log(lam);
    }
    return -0.5 * (double(d) * kLog2Pi + logdet + quad);
}

GmmDensity::GmmDensity(std::vector<GmmComponent> components)
    : components_(std::move(components)) {
    if (components_.empty()) throw ConfigError("gmm density: no components");
    double total = 0.0;
    for (const auto& c : components_) {
        if (!(c.weight > 0.0)) throw ConfigError("gmm density: weights must be positive");
        total += c.weight;
        check_dim(components_.front().mean.size(), c.mean.size(), "gmm density");
    }
    if (std::fabs(total - 1.0) > 1e-12)
        throw ConfigError("gmm density: weights must sum to 1 within 1e-12");
    for (const auto& c : components_) {
        parts_.emplace_back(c.mean, c.covariance);
        log_weights_.push_back(std::log(c.weight));
    }
}

std::vector<double> GmmDensity::posterior_mean(const std::vector<double>& x, double sigma) const {
    const size_t k = parts_.size(), d = dim();
    // log-sum-exp stabilized responsibilities
    std::vector<double> logp(k);
    double peak = -1e300;
    for (size_t j = 0; j < k; ++j) {
        logp[j] = log_weights_[j] + parts_[j].log_density(x, sigma);
        peak = std::max(peak, logp[j]);
    }
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) z += std::exp(logp[j] - peak);
    std::vector<double> out(d, 0.0);
    for (size_t j = 0; j < k; ++j) {
        double r = std::exp(logp[j] - peak) / z;
        if (r == 0.0) continue;
        std::vector<double> pj = parts_[j].posterior_mean(x, sigma);
        for (size_t i = 0; i < d; ++i) out[i] += r * pj[i];
    }
    return out;
}

std::vector<double> GmmDensity::score(const std::vector<double>& x, double sigma) const {
    const size_t k = parts_.size(), d = dim();
    std::vector<double> logp(k);
    double peak = -1e300;
    for (size_t j = 0; j < k; ++j) {
        logp[j] = log_weights_[j] + parts_[j].log_density(x, sigma);
        peak = std::max(peak, logp[j]);
    }
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) z += std::exp(logp[j] - peak);
    std::vector<double> out(d, 0.0);
    for (size_t j = 0; j < k; ++j) {
        double r = std::exp(logp[j] - peak) / z;
        if (r == 0.0) continue;
        std::vector<double> sj = parts_[j].score(x, sigma);
        for (size_t i = 0; i < d; ++i) out[i] += r * sj[i];
    }
    return out;
}

double GmmDensity::log_density(const std::vector<double>& x, double sigma) const {
    double peak = -1e300;
    std::vector<double> logp(parts_.size());
    for (size_t j = 0; j < parts_.size(); ++j) {
        logp[j] = log_weights_[j] + parts_[j].log_density(x, sigma);
        peak = std::max(peak, logp[j]);
    }
    double z = 0.0;
    for (double lp : logp) z += std::exp(lp - peak);
    return peak + std::log(z);
}

// ------------------------------- denoisers ---------------------------------

namespace {

Shape3 default_shape(size_t dim, Shape3 requested) {
    if (requested.numel() == 0) return Shape3{dim, 1, 1};
    if (requested.numel() != dim)
        throw ShapeError("denoiser shape does not match distribution dimension");
    return requested;
}

template <typename Density>
ImageBatch analytic_denoise(const Density& density, Shape3 shape, const ImageBatch& x,
                            double sigma) {
    if (sigma < 0.0) throw NumericError("denoise: sigma must be non-negative");
    require_finite(x, "denoise");
    if (!(x.sample_shape() == shape))
        throw ShapeError("denoise: batch shape " + x.sample_shape().str() +
                         " does not match denoiser shape " + shape.str());
    if (sigma == 0.0) return x;
    ImageBatch out(x.count(), shape);
    parallel_for(x.count(), [&](size_t s0, size_t s1) {
        for (size_t s = s0; s < s1; ++s) {
            std::vector<double> xi(x.sample_ptr(s), x.sample_ptr(s) + x.sample_size());
            std::vector<double> di = density.posterior_mean(xi, sigma);
            std::copy(di.begin(), di.end(), out.sample_ptr(s));
        }
    });
    return out;
}

}  // namespace

GaussianDenoiser::GaussianDenoiser(std::vector<double> mean, Matrix covariance, Shape3 shape)
    : density_(std::move(mean), std::move(covariance)),
      shape_(default_shape(density_.dim(), shape)) {}

ImageBatch GaussianDenoiser::denoise(const ImageBatch& x, double sigma, EvalStage) const {
    return analytic_denoise(density_, shape_, x, sigma);
}

GmmDenoiser::GmmDenoiser(std::vector<GmmComponent> components, Shape3 shape)
    : density_(std::move(components)), shape_(default_shape(density_.dim(), shape)) {}

ImageBatch GmmDenoiser::denoise(const ImageBatch& x, double sigma, EvalStage) const {
    return analytic_denoise(density_, shape_, x, sigma);
}

ImageBatch append_channel(const ImageBatch& x, const std::vector<double>& per_sample_value) {
    if (per_sample_value.size() != x.count())
        throw ShapeError("append_channel: one value per sample required");
    Shape3 s = x.sample_shape();
    ImageBatch out(x.count(), Shape3{s.c + 1, s.h, s.w});
    const size_t plane = s.h * s.w;
    for (size_t i = 0; i < x.count(); ++i) {
        std::copy(x.sample_ptr(i), x.sample_ptr(i) + s.numel(), out.sample_ptr(i));
        double* extra = out.sample_ptr(i) + s.numel();
        std::fill(extra, extra + plane, per_sample_value[i]);
    }
    return out;
}

NeuralDenoiser::NeuralDenoiser(nn::Network net, Shape3 data_shape, double sigma_data)
    : net_(std::move(net)), shape_(data_shape) {
    pre_.sigma_data = sigma_data;
    Shape3 expect{data_shape.c + 1, data_shape.h, data_shape.w};
    if (!(net_.input_shape() == expect))
        throw ShapeError("neural denoiser: network input must be " + expect.str() + ", got " +
                         net_.input_shape().str());
    if (!(net_.output_shape() == data_shape))
        throw ShapeError("neural denoiser: network output must be " + data_shape.str() + ", got " +
                         net_.output_shape().str());
    if (!(sigma_data > 0.0)) throw ConfigError("neural denoiser: sigma_data must be positive");
}

ImageBatch NeuralDenoiser::denoise(const ImageBatch& x, double sigma, EvalStage) const {
    if (sigma < 0.0) throw NumericError("denoise: sigma must be non-negative");
    require_finite(x, "denoise");
    if (sigma == 0.0) return x;
    const double cin = pre_.c_in(sigma), cskip = pre_.c_skip(sigma), cout = pre_.c_out(sigma);
    const double cnoise = pre_.c_noise(sigma);
    ImageBatch scaled = x;
    for (double& v : scaled.data()) v *= cin;
    ImageBatch input = append_channel(scaled, std::vector<double>(x.count(), cnoise));
    ImageBatch f = net_.forward(input, nn::Mode::eval);
    ImageBatch out(x.count(), shape_);
    for (size_t j = 0; j < out.data().size(); ++j)
        out.data()[j] = cskip * x.data()[j] + cout * f.data()[j];
    return out;
}

nn::Network NeuralDenoiser::default_architecture(Shape3 data_shape, size_t hidden,
                                                 double dropout_rate) {
    Shape3 in{data_shape.c + 1, data_shape.h, data_shape.w};
    std::vector<nn::LayerSpec> layers;
    if (data_shape.h == 1 && data_shape.w == 1) {
        layers = {nn::Dense{in.c, hidden},          nn::Act{nn::Activation::silu},
                  nn::Dropout{dropout_rate},        nn::Dense{hidden, hidden},
                  nn::Act{nn::Activation::silu},    nn::Dropout{dropout_rate},
                  nn::Dense{hidden, data_shape.c}};
    } else {
        layers = {nn::Conv{in.c, hidden, 3, 1},     nn::Act{nn::Activation::silu},
                  nn::Dropout{dropout_rate},        nn::Conv{hidden, hidden, 3, 1},
                  nn::Act{nn::Activation::silu},    nn::Dropout{dropout_rate},
                  nn::Conv{hidden, data_shape.c, 3, 1}};
    }
    return nn::Network(in, std::move(layers));
}

ImageBatch precondition_apply(const nn::Network& net, const ImageBatch& x, double sigma,
                              double sigma_data) {
    if (!(sigma > 0.0)) throw NumericError("precondition_apply: sigma must be positive");
    Precondition pre{sigma_data};
    ImageBatch scaled = x;
    for (double& v : scaled.data()) v *= pre.c_in(sigma);
    ImageBatch input = append_channel(scaled, std::vector<double>(x.count(), pre.c_noise(sigma)));
    ImageBatch f = net.forward(input, nn::Mode::eval);
    if (!(f.sample_shape() == x.sample_shape()))
        throw ShapeError("precondition_apply: network output shape mismatch");
    ImageBatch out = x;
    const double cskip = pre.c_skip(sigma), cout = pre.c_out(sigma);
    for (size_t j = 0; j < out.data().size(); ++j)
        out.data()[j] = cskip * x.data()[j] + cout * f.data()[j];
    return out;
}

ImageBatch score_from_denoiser(const Denoiser& d, const ImageBatch& x, double sigma,
                               EvalStage stage) {
    if (!(sigma > 0.0)) throw NumericError("score_from_denoiser: sigma=0 is singular");
    ImageBatch den = d.denoise(x, sigma, stage);
    ImageBatch out(x.count(), x.sample_shape());
    const double inv = 1.0 / (sigma * sigma);
    for (size_t j = 0; j < out.data().size(); ++j)
        out.data()[j] = (den.data()[j] - x.data()[j]) * inv;
    return out;
}

double edm_loss_weight(double sigma, double sigma_data) {
    double num = sigma * sigma + sigma_data * sigma_data;
    double den = sigma * sigma_data;
    return num / (den * den);
}

EdmLoss edm_train_loss(const NeuralDenoiser& d, const ImageBatch& batch, Rng& rng,
                       std::optional<double> forced_sigma) {
    if (batch.count() == 0) throw ShapeError("edm_train_loss: empty batch");
    if (!(batch.sample_shape() == d.sample_shape()))
        throw ShapeError("edm_train_loss: batch shape does not match denoiser");
    const size_t n = batch.count();
    const size_t m = batch.sample_size();
    const Precondition& pre = d.precondition();

    std::vector<double> sigmas(n);
    ImageBatch noisy(n, batch.sample_shape());
    for (size_t i = 0; i < n; ++i) {
        double sigma = forced_sigma ? *forced_sigma
                                    : std::exp(kPMean + kPStd * rng.normal());
        sigmas[i] = sigma;
        const double* xs = batch.sample_ptr(i);
        double* ys = noisy.sample_ptr(i);
        for (size_t j = 0; j < m; ++j) ys[j] = xs[j] + sigma * rng.normal();
    }

    // network input: c_in-scaled noisy batch plus the noise-embedding channel
    ImageBatch scaled = noisy;
    std::vector<double> cnoise(n);
    for (size_t i = 0; i < n; ++i) {
        double cin = pre.c_in(sigmas[i]);
        double* ys = scaled.sample_ptr(i);
        for (size_t j = 0; j < m; ++j) ys[j] *= cin;
        cnoise[i] = pre.c_noise(sigmas[i]);
    }
    ImageBatch input = append_channel(scaled, cnoise);

    nn::ForwardTrace trace;
    ImageBatch f = d.network().forward(input, nn::Mode::train, &rng, &trace);

    EdmLoss result;
    ImageBatch upstream(n, batch.sample_shape());
    const double inv_n = 1.0 / double(n);
    for (size_t i = 0; i < n; ++i) {
        double lambda = edm_loss_weight(sigmas[i], pre.sigma_data);
        double cskip = pre.c_skip(sigmas[i]);
        double cout = pre.c_out(sigmas[i]);
        const double* xs = batch.sample_ptr(i);
        const double* ns = noisy.sample_ptr(i);
        const double* fs = f.sample_ptr(i);
        double* us = upstream.sample_ptr(i);
        for (size_t j = 0; j < m; ++j) {
            double denoised = cskip * ns[j] + cout * fs[j];
            double diff = denoised - xs[j];
            result.loss += inv_n * lambda * diff * diff;
            us[j] = inv_n * lambda * 2.0 * diff * cout;
        }
    }
    nn::Gradients grads = d.network().backward(trace, upstream);
    result.param_grads = std::move(grads.params);
    return result;
}

// --------------------- analytic denoiser text format ------------------------

namespace {

// minimal nested-array value: either a number or a list of values
struct Node {
    bool is_list = false;
    double number = 0.0;
    std::vector<Node> items;
};

struct Parser {
    const std::string& s;
    size_t pos = 0;

    explicit Parser(const std::string& str) : s(str) {}

    void skip_ws() {
        while (pos < s.size() && (std::isspace(uint8_t(s[pos])) || s[pos] == ',')) ++pos;
    }

    Node parse_value() {
        skip_ws();
        if (pos >= s.size()) throw DataError("denoiser text: unexpected end of input");
        if (s[pos] == '[') {
            ++pos;
            Node n;
            n.is_list = true;
            skip_ws();
            while (pos < s.size() && s[pos] != ']') {
                n.items.push_back(parse_value());
                skip_ws();
            }
            if (pos >= s.size()) throw DataError("denoiser text: unterminated '['");
            ++pos;
            return n;
        }
        size_t start = pos;
        while (pos < s.size() && !std::isspace(uint8_t(s[pos])) && s[pos] != ',' && s[pos] != ']')
            ++pos;
        Node n;
        try {
            n.number = std::stod(s.substr(start, pos - start));
        } catch (...) {
            throw DataError("denoiser text: expected a number at offset " + std::to_string(start));
        }
        return n;
    }
};

std::vector<double> as_vector(const Node& n, const char* what) {
    if (!n.is_list) throw DataError(std::string("denoiser text: ") + what + " must be a list");
    std::vector<double> v;
    for (const Node& item : n.items) {
        if (item.is_list) throw DataError(std::string("denoiser text: ") + what + " must be flat");
        v.push_back(item.number);
    }
    return v;
}

Matrix as_matrix(const Node& n, const char* what) {
    if (!n.is_list || n.items.empty())
        throw DataError(std::string("denoiser text: ") + what + " must be a nested list");
    size_t rows = n.items.size();
    std::vector<double> first = as_vector(n.items[0], what);
    Matrix m(rows, first.size());
    for (size_t r = 0; r < rows; ++r) {
        std::vector<double> row = as_vector(n.items[r], what);
        if (row.size() != first.size())
            throw DataError(std::string("denoiser text: ragged rows in ") + what);
        for (size_t c = 0; c < row.size(); ++c) m(r, c) = row[c];
    }
    return m;
}

void write_vector(std::ostream& os, const std::vector<double>& v) {
    os << "[";
    for (size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << format_double(v[i]);
    os << "]";
}

void write_matrix(std::ostream& os, const Matrix& m) {
    os << "[";
    for (size_t r = 0; r < m.rows(); ++r) {
        if (r) os << ", ";
        write_vector(os, m.row(r));
    }
    os << "]";
}

}  // namespace

std::string analytic_denoiser_to_text(const Denoiser& d) {
    std::ostringstream os;
    Shape3 shape = d.sample_shape();
    if (const auto* g = dynamic_cast<const GaussianDenoiser*>(&d)) {
        os << "gaussian\n";
        os << "shape = [" << shape.c << ", " << shape.h << ", " << shape.w << "]\n";
        os << "mean = ";
        write_vector(os, g->density().mean());
        os << "\ncov = ";
        write_matrix(os, g->density().covariance());
        os << "\n";
        return os.str();
    }
    if (const auto* g = dynamic_cast<const GmmDenoiser*>(&d)) {
        os << "gmm\n";
        os << "shape = [" << shape.c << ", " << shape.h << ", " << shape.w << "]\n";
        os << "weights = [";
        const auto& comps = g->density().components();
        for (size_t i = 0; i < comps.size(); ++i)
            os << (i ? ", " : "") << format_double(comps[i].weight);
        os << "]\nmeans = [";
        for (size_t i = 0; i < comps.size(); ++i) {
            if (i) os << ", ";
            write_vector(os, comps[i].mean);
        }
        os << "]\ncovs = [";
        for (size_t i = 0; i < comps.size(); ++i) {
            if (i) os << ", ";
            write_matrix(os, comps[i].covariance);
        }
        os << "]\n";
        return os.str();
    }
    throw DataError("only analytic denoisers have a text serialization");
}

std::unique_ptr<Denoiser> analytic_denoiser_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string kind;
    if (!(is >> kind)) throw DataError("denoiser text: empty input");
    std::map<std::string, Node> fields;
    std::string line;
    std::getline(is, line);  // rest of kind line
    while (std::getline(is, line)) {
        size_t eq = line.find('=');
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        if (eq == std::string::npos) throw DataError("denoiser text: expected 'key = value'");
        std::string key = line.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        std::string value = line.substr(eq + 1);
        Parser p(value);
        fields[key] = p.parse_value();
    }
    auto need = [&fields](const char* key) -> const Node& {
        auto it = fields.find(key);
        if (it == fields.end())
            throw DataError(std::string("denoiser text: missing field '") + key + "'");
        return it->second;
    };
    std::vector<double> shape_v = as_vector(need("shape"), "shape");
    if (shape_v.size() != 3) throw DataError("denoiser text: shape must have 3 entries");
    Shape3 shape{size_t(shape_v[0]), size_t(shape_v[1]), size_t(shape_v[2])};
    if (kind == "gaussian") {
        std::vector<double> mean = as_vector(need("mean"), "mean");
        Matrix cov = as_matrix(need("cov"), "cov");
        return std::make_unique<GaussianDenoiser>(std::move(mean), std::move(cov), shape);
    }
    if (kind == "gmm") {
        std::vector<double> weights = as_vector(need("weights"), "weights");
        const Node& means = need("means");
        const Node& covs = need("covs");
        if (!means.is_list || !covs.is_list || means.items.size() != weights.size() ||
            covs.items.size() != weights.size())
            throw DataError("denoiser text: weights/means/covs count mismatch");
        std::vector<GmmComponent> comps;
        for (size_t i = 0; i < weights.size(); ++i) {
            GmmComponent c;
            c.weight = weights[i];
            c.mean = as_vector(means.items[i], "means");
            c.covariance = as_matrix(covs.items[i], "covs");
            comps.push_back(std::move(c));
        }
        return std::make_unique<GmmDenoiser>(std::move(comps), shape);
    }
    throw DataError("denoiser text: unknown kind '" + kind + "'");
}

std::unique_ptr<Denoiser> load_analytic_denoiser(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open denoiser file " + path);
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return analytic_denoiser_from_text(buffer.str());
}

void save_analytic_denoiser(const std::string& path, const Denoiser& d) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open denoiser file " + path + " for writing");
    os << analytic_denoiser_to_text(d);
    if (!os) throw DataError("write failed for " + path);
}

}  // namespace diffbench::diffusion

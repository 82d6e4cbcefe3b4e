#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "diffbench/guidance.hpp"
#include "diffbench/samplers.hpp"
#include "diffbench/shift.hpp"
#include "test_util.hpp"

using namespace diffbench;
using namespace diffbench::shift;

namespace {

ImageBatch gaussian_cloud(size_t n, size_t d, double mean, double sd, uint64_t seed) {
    ImageBatch b(n, Shape3{d, 1, 1});
    Rng rng(seed);
    for (auto& v : b.data()) v = mean + sd * rng.normal();
    return b;
}

}  // namespace

TEST_CASE("stratified split is disjoint and covers each class exactly once") {
    SplitIndices s = stratified_split(100, 101, 0.9, 7);
    CHECK(s.val_real.size() == 10);
    CHECK(s.val_gen.size() == 10);  // round(0.1 * 101) = 10: counts differ by at most 1
    CHECK(s.train_real.size() + s.val_real.size() == 100);
    CHECK(s.train_gen.size() + s.val_gen.size() == 101);
    std::set<size_t> real_seen(s.train_real.begin(), s.train_real.end());
    real_seen.insert(s.val_real.begin(), s.val_real.end());
    CHECK(real_seen.size() == 100);
    std::set<size_t> gen_seen(s.train_gen.begin(), s.train_gen.end());
    gen_seen.insert(s.val_gen.begin(), s.val_gen.end());
    CHECK(gen_seen.size() == 101);

    CHECK_THROWS_AS(stratified_split(5, 5, 0.99, 1), DataError);  // empty validation
    CHECK_THROWS_AS(stratified_split(10, 10, 1.5, 1), ConfigError);
}

TEST_CASE("identical datasets train to chance-level accuracy") {
    // with no signal the trained separator is a random hyperplane, so the
    // validation accuracy is binomial around one half: the band needs the
    // protocol-sized validation split to be meaningful
    ImageBatch pool = gaussian_cloud(10000, 6, 0.0, 1.0, 3);
    for (ClassifierKind kind : {ClassifierKind::linear, ClassifierKind::convnet}) {
        ShiftStudyConfig cfg;
        cfg.classifier = kind;
        cfg.epochs = kind == ClassifierKind::linear ? 10 : 4;
        cfg.lr = 1e-4;
        cfg.n_real = cfg.n_gen = 10000;
        cfg.batch_size = 64;
        ImageBatch real = pool;
        ImageBatch fake = pool;  // byte-for-byte identical classes
        if (kind == ClassifierKind::convnet) {
            // the band presumes a validation set in the hundreds per class
            real = ImageBatch(5000, Shape3{1, 8, 8});
            Rng rng(5);
            for (auto& v : real.data()) v = rng.normal();
            fake = real;
            cfg.n_real = cfg.n_gen = 5000;
            cfg.epochs = 3;
        }
        for (uint64_t seed : {1, 2, 3, 4, 5}) {
            cfg.seed = seed;
            ShiftTrainResult r = train_shift_classifier(real, fake, cfg);
            CHECK(r.final_val_accuracy >= 0.45);
            CHECK(r.final_val_accuracy <= 0.55);
        }
    }
}

TEST_CASE("linear classifier approaches the analytic Bayes accuracy") {
    // equal-covariance isotropic pair: Bayes accuracy = Phi(||dmu|| / (2 sigma))
    const size_t d = 8, n = 4000;
    const double shift = 2.0;  // along one axis, sigma = 1
    ImageBatch real(n, Shape3{d, 1, 1}), fake(n, Shape3{d, 1, 1});
    Rng rng(11);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            real.sample_ptr(i)[j] = rng.normal() + (j == 0 ? 0.5 * shift : 0.0);
            fake.sample_ptr(i)[j] = rng.normal() - (j == 0 ? 0.5 * shift : 0.0);
        }
    double bayes = testutil::std_normal_cdf(shift / 2.0);  // 0.8413

    ShiftStudyConfig cfg;
    cfg.classifier = ClassifierKind::linear;
    cfg.epochs = 50;
    cfg.lr = 1e-4;
    cfg.n_real = cfg.n_gen = n;
    cfg.seed = 4;
    ShiftTrainResult r = train_shift_classifier(real, fake, cfg);
    CHECK(std::fabs(r.best_val_accuracy - bayes) < 0.03);
}

TEST_CASE("disjoint supports are separated almost perfectly") {
    ImageBatch real = gaussian_cloud(400, 4, 1.0, 0.05, 21);
    ImageBatch zeros(400, Shape3{4, 1, 1}, 0.0);
    ShiftStudyConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 1e-3;
    cfg.n_real = cfg.n_gen = 400;
    cfg.seed = 9;
    ShiftTrainResult r = train_shift_classifier(real, zeros, cfg);
    CHECK(r.best_val_accuracy >= 0.99);
}

TEST_CASE("training validates inputs") {
    ImageBatch a = gaussian_cloud(50, 2, 0.0, 1.0, 1);
    ImageBatch b = gaussian_cloud(50, 3, 0.0, 1.0, 2);
    ShiftStudyConfig cfg;
    CHECK_THROWS_AS(train_shift_classifier(a, b, cfg), ShapeError);
    ImageBatch empty(0, Shape3{2, 1, 1});
    CHECK_THROWS_AS(train_shift_classifier(a, empty, cfg), DataError);
    ShiftStudyConfig bad;
    bad.split = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

// ------------------------------- augmentation --------------------------------

TEST_CASE("null augmentation draw is the identity") {
    Rng rng(31);
    ImageBatch img(1, 1, 9, 9);
    for (auto& v : img.data()) v = rng.normal();
    AugmentDraw d;  // scale 1, no flip, 0 degrees
    ImageBatch out = apply_augment(img, d);
    CHECK(out.data() == img.data());
}

TEST_CASE("augmentation is deterministic under a fixed seed") {
    Rng rng(32);
    ImageBatch img(2, 1, 8, 8);
    for (auto& v : img.data()) v = rng.normal();
    Rng s1(77), s2(77);
    ImageBatch a = augment(img, s1);
    ImageBatch b = augment(img, s2);
    CHECK(a.data() == b.data());
    CHECK(a.sample_shape() == img.sample_shape());
}

TEST_CASE("uniform images are exactly preserved by augmentation") {
    // crops, flips and rotation fill all reproduce the constant, so the
    // pixel-mean drift is zero for uniform-intensity images
    ImageBatch img(1, 1, 8, 8, 0.6);
    Rng rng(33);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        ImageBatch out = augment(img, rng);
        double mean = 0.0;
        for (double v : out.data()) mean += v;
        mean /= double(out.data().size());
        worst = std::max(worst, std::fabs(mean - 0.6) / 0.6);
    }
    CHECK(worst < 0.10);
}

TEST_CASE("flip flips and rotation keeps shape") {
    ImageBatch img(1, 1, 2, 3);
    for (size_t x = 0; x < 3; ++x) img.at(0, 0, 0, x) = double(x);
    AugmentDraw d;
    d.hflip = true;
    ImageBatch flipped = apply_augment(img, d);
    CHECK(flipped.at(0, 0, 0, 0) == 2.0);
    CHECK(flipped.at(0, 0, 0, 2) == 0.0);

    AugmentDraw r;
    r.rotation_deg = 10.0;
    ImageBatch rotated = apply_augment(img, r);
    CHECK(rotated.sample_shape() == img.sample_shape());
}

// ---------------------------------- report -----------------------------------

TEST_CASE("identical pre/post sets give exactly paired rows") {
    ImageBatch real = gaussian_cloud(300, 3, 0.4, 1.0, 41);
    ImageBatch gen = gaussian_cloud(300, 3, -0.4, 1.0, 42);
    ShiftStudyConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 1e-3;
    cfg.n_real = cfg.n_gen = 300;
    cfg.seed = 5;
    std::vector<ShiftReportRow> rows = shift_report(real, gen, gen, {cfg});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].phase == "pre");
    CHECK(rows[1].phase == "post");
    CHECK(rows[0].val_accuracy == rows[1].val_accuracy);  // same seed, same data
    CHECK(rows[0].best_epoch == rows[1].best_epoch);
}

TEST_CASE("report csv header is the documented contract") {
    std::string csv = shift_report_csv({});
    CHECK(csv == "classifier,augment,phase,seed,best_epoch,val_accuracy\n");
}

TEST_CASE("guidance that removes the mean shift lowers the classifier accuracy") {
    // real N(0, I); the biased model is shifted; guided samples use the
    // optimal discriminator so the shift is largely transported away, and
    // the post-guidance classifier should not beat the pre-guidance one
    const size_t d = 4, n = 1500;
    std::vector<double> mu_p(d, 0.0), mu_q(d, 0.0);
    mu_q[0] = 1.0;
    Matrix cov = Matrix::identity(d);
    diffusion::GaussianDenoiser model(mu_q, cov);
    diffusion::GaussianDensity real_density(mu_p, cov);
    guidance::AnalyticDiscriminator disc(real_density, model.density());
    diffusion::NoiseSchedule sch = diffusion::NoiseSchedule::edm(0.002, 10.0, 7.0);

    ImageBatch real(n, Shape3{d, 1, 1});
    Rng rng(71);
    for (auto& v : real.data()) v = rng.normal();
    ImageBatch pre = samplers::sample_heun(model, sch, 12, n, 901).samples;
    ImageBatch post = samplers::sample(samplers::Method::heun, model, disc,
                                       guidance::GuidanceConfig{5.0, 0.0, 2.0}, sch, 12, n, 901)
                          .samples;

    std::vector<double> pre_acc, post_acc;
    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        ShiftStudyConfig cfg;
        cfg.classifier = ClassifierKind::linear;
        cfg.epochs = 20;
        cfg.lr = 1e-3;
        cfg.n_real = cfg.n_gen = n;
        cfg.seed = seed;
        pre_acc.push_back(train_shift_classifier(real, pre, cfg).best_val_accuracy);
        post_acc.push_back(train_shift_classifier(real, post, cfg).best_val_accuracy);
    }
    std::sort(pre_acc.begin(), pre_acc.end());
    std::sort(post_acc.begin(), post_acc.end());
    CHECK(post_acc[2] <= pre_acc[2]);  // medians over the 5-seed panel
}

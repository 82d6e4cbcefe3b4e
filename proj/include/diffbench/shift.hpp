#pragma once

#include <string>
#include <vector>

#include "diffbench/core.hpp"
#include "diffbench/nn.hpp"

namespace diffbench::shift {

// ---------------------------------------------------------------------------
// Real-vs-generated classifier studies (the Table-2 protocol): linear and
// small convnet classifiers, optional augmentation, trained with BCE and
// Adam over a stratified 90/10 split.
// ---------------------------------------------------------------------------

enum class ClassifierKind { linear, convnet };

std::string classifier_name(ClassifierKind k);
ClassifierKind classifier_from(const std::string& name);

struct ShiftStudyConfig {
    ClassifierKind classifier = ClassifierKind::linear;
    bool augment = false;
    int epochs = 50;
    double lr = 1e-4;
    size_t n_real = 10000;  // desk default; the study protocol uses 50,000
    size_t n_gen = 10000;
    double split = 0.9;  // train fraction
    uint64_t seed = 0;
    size_t batch_size = 128;

    void validate() const;
};

struct EpochPoint {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct ShiftTrainResult {
    nn::Network model;  // final-epoch parameters
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    double final_val_accuracy = 0.0;
    std::vector<EpochPoint> log;
};

nn::Network make_classifier(ClassifierKind kind, Shape3 input_shape);

// Stratified train/val partition: per class, a seeded shuffle is cut at the
// validation count; train and validation index sets are disjoint and cover
// each class exactly once.
struct SplitIndices {
    std::vector<size_t> train_real, val_real;
    std::vector<size_t> train_gen, val_gen;
};

SplitIndices stratified_split(size_t n_real, size_t n_gen, double train_fraction, uint64_t seed);

ShiftTrainResult train_shift_classifier(const ImageBatch& real, const ImageBatch& generated,
                                        const ShiftStudyConfig& cfg);

// ---------------------------------------------------------------------------
// Augmentation: random resize-crop (scale in [0.8, 1.0]), horizontal flip
// (p = 0.5), rotation (uniform +-15 degrees, filled with the image minimum).
// Output shape is unchanged.
// ---------------------------------------------------------------------------

struct AugmentDraw {
    double scale = 1.0;
    double crop_x = 0.0;  // fractional window position in [0, 1]
    double crop_y = 0.0;
    bool hflip = false;
    double rotation_deg = 0.0;
};

AugmentDraw draw_augment(Rng& rng);
ImageBatch apply_augment(const ImageBatch& images, const AugmentDraw& draw);
ImageBatch augment(const ImageBatch& images, Rng& rng);  // fresh draw per image

// ---------------------------------------------------------------------------
// Table-2 style report.
// ---------------------------------------------------------------------------

struct ShiftReportRow {
    std::string classifier;
    bool augment = false;
    std::string phase;  // "pre" | "post"
    uint64_t seed = 0;
    int best_epoch = 0;
    double val_accuracy = 0.0;        // best-epoch accuracy (the reported number)
    double final_val_accuracy = 0.0;  // recorded alongside, not part of the CSV
};

std::vector<ShiftReportRow> shift_report(const ImageBatch& real, const ImageBatch& gen_pre_dg,
                                         const ImageBatch& gen_post_dg,
                                         const std::vector<ShiftStudyConfig>& configs);

// CSV with header "classifier,augment,phase,seed,best_epoch,val_accuracy"
std::string shift_report_csv(const std::vector<ShiftReportRow>& rows);

}  // namespace diffbench::shift

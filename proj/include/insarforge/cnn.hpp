#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "insarforge/dataset.hpp"
#include "insarforge/raster.hpp"

namespace insarforge::cnn {

enum class LayerKind { conv, pool, fc };

/// One stage of the network. Sides are square feature-map sizes; for fully
/// connected layers `channels` counts units and sides are 1.
struct LayerSpec {
    LayerKind kind;
    int in_channels, out_channels;
    int kernel;  // conv kernel or pool window
    int in_side, out_side;
    bool relu;
    std::size_t weight_offset, weight_count, bias_offset, bias_count;
};

/// conv1 8@5x5, pool 2, conv2 16@3x3, pool 2, conv3-5 32@3x3, pool 2,
/// fc 256, fc 128, fc n_classes. Throws UsageError for unsupported sizes.
std::vector<LayerSpec> topology(int input_side, int n_classes);
std::size_t parameter_count(int input_side, int n_classes);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0, train_accuracy = 0;
    double val_loss = 0, val_accuracy = 0;
};

struct CnnModel {
    int input_side = 64;
    int n_classes = 2;
    bool zero_centered = true;
    std::string scheme = "two_class";
    std::vector<float> params;
    std::vector<EpochStats> history;
};

/// He-normal weights, zero biases. Input side in {64, 128, 224}, classes in {2, 3, 5, 91}.
CnnModel init_model(int input_side, int n_classes, std::uint64_t seed);

/// Reusable forward pass; one instance per thread.
class Predictor {
public:
    explicit Predictor(const CnnModel& model);
    ~Predictor();
    Predictor(Predictor&&) noexcept;
    Predictor& operator=(Predictor&&) noexcept;

    /// Softmax probabilities for a side x side gray patch (row-major u8 values).
    std::vector<double> operator()(std::span<const std::uint8_t> gray);
    std::vector<double> operator()(const Raster& gray);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::vector<double> predict_proba(const CnnModel& model, const Raster& gray);

struct TrainConfig {
    int max_epochs = 50;
    int batch_size = 100;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int patience = 5;
    std::uint64_t seed = 1;
    double validation_fraction = 0.2;
    /// Random flips and quarter turns of training patches.
    bool augment = true;
    /// Scales the learning rate of the output layer when fine-tuning.
    bool fine_tune = false;
    double final_layer_lr_multiplier = 10.0;
    /// Worker threads for the fixed per-batch chunks; results do not depend on it.
    int jobs = 1;
    std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
    CnnModel model;  // best-validation snapshot, history attached
    int best_epoch = 0;
    EpochStats initial;  // epoch 0: losses of the untrained model
};

/// Mini-batch momentum SGD on mean cross-entropy with early stopping on
/// validation loss. Throws NumericError naming the epoch if the loss diverges.
TrainResult train(const CnnModel& initial, const dataset::LabeledDataset& data, const TrainConfig& cfg);

/// Fraction of `indices` (all patches when empty) classified correctly.
double accuracy(const CnnModel& model, const dataset::LabeledDataset& data, std::span<const std::size_t> indices = {});

/// Cross-entropy loss and its gradient with respect to every parameter, in double precision.
std::pair<double, std::vector<double>> loss_and_gradient(const CnnModel& model, std::span<const std::uint8_t> gray,
                                                         int label);

struct GradientCheckResult {
    double max_relative_error = 0;
    std::vector<std::pair<std::string, double>> per_layer;  // max error per parameter block
    int checked = 0;
    int resampled = 0;  // draws rejected because the step crossed a ReLU or pooling kink
};

/// Central differences (step 1e-4, double precision) against the analytic
/// gradient on at least `samples` parameters drawn evenly from every weight
/// and bias block.
GradientCheckResult gradient_check(const CnnModel& model, std::span<const std::uint8_t> gray, int label,
                                   std::uint64_t seed = 1, int samples = 240);

/// Model file: header, little-endian f32 parameters, training history.
void save_model(const std::filesystem::path& path, const CnnModel& model);
CnnModel load_model(const std::filesystem::path& path);

} // namespace insarforge::cnn

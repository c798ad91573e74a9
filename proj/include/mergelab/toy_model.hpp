#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergelab/checkpoint.hpp"

namespace mergelab {

// Synthetic "speaker/emotion" parameterization the base models are trained
// to encode: pitch_base scales a per-token sinusoid, tilt adds a linear
// ramp across channels, energy a constant offset.
struct AttributeProfile {
    std::string profile_id;
    double pitch_base = 0.0;
    double tilt = 0.0;
    double energy = 0.0;
};

// Largest per-field difference; merge bases must be separated by at least
// a configured minimum in one field.
double profile_separation(const AttributeProfile& a, const AttributeProfile& b);
AttributeProfile midpoint_profile(const AttributeProfile& a, const AttributeProfile& b);

struct ContentSpec {
    std::int64_t vocab_size = 16;
    std::int64_t sentence_length = 24;
    std::int64_t num_sentences = 64;
    std::uint64_t seed = 0;
};

struct ToyModelConfig {
    std::int64_t vocab_size = 16;
    std::int64_t embed_dim = 16;
    std::int64_t hidden_dim = 64;
    std::int64_t feature_dim = 12;
    std::int64_t num_layers = 2;
    std::uint64_t init_seed = 0;
};

// Row-major frame matrix, rows = frame positions, cols = feature channels.
struct FrameMatrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> values;

    double& at(std::int64_t r, std::int64_t c) { return values[r * cols + c]; }
    double at(std::int64_t r, std::int64_t c) const { return values[r * cols + c]; }
};

struct Dataset {
    struct Item {
        std::vector<std::int32_t> tokens;
        FrameMatrix target;
    };
    std::vector<Item> items;
};

// Per-(token, channel) sinusoid table shared by every dataset and decode
// template of the same dimensions; derived from a fixed internal seed so
// content decoding is stable across profiles and merges. Phases are drawn
// per (token, channel) so any two tokens give distinct template frames at
// every position, including frame 0.
struct SynthTable {
    std::vector<double> omega;  // one frequency per token, stratified
    std::vector<double> phase;  // vocab x feature_dim, row-major
};
SynthTable synth_table(std::int64_t vocab_size, std::int64_t feature_dim);

// The target-feature function g: channel c of frame j for token t.
double synth_feature(const SynthTable& table, const AttributeProfile& profile, std::int32_t token,
                     std::int64_t frame, std::int64_t channel, std::int64_t feature_dim);

// Seeded token sequences with g-generated target frames.
Dataset generate_dataset(const AttributeProfile& profile, const ContentSpec& content,
                         std::int64_t feature_dim);

// Seeded uniform init in [-s, s], s = 1/sqrt(fan_in), plus an I64
// "step_count" tensor starting at zero.
Checkpoint init_model(const ToyModelConfig& config);

struct TrainingRun {
    Checkpoint init;
    Dataset dataset;
    std::int64_t epochs = 1;
    double learning_rate = 0.01;
    std::int64_t batch_size = 8;
    std::uint64_t shuffle_seed = 0;
};

struct TrainResult {
    Checkpoint model;
    double final_mse = 0.0;
    std::int64_t steps = 0;
};

// Single-threaded mini-batch gradient descent on frame MSE; bit-reproducible
// for equal runs. Output metadata records train.parent_fingerprint.
TrainResult train(const TrainingRun& run);

// Deterministic synthesis: embed + sinusoidal position encoding, num_layers
// of affine+tanh, affine head to feature_dim.
FrameMatrix forward(const Checkpoint& model, std::span<const std::int32_t> tokens);

double evaluate_mse(const Checkpoint& model, const Dataset& dataset);

// Dense double view of a checkpoint, for callers that run many forward
// passes against one model.
class ToyNet {
  public:
    static ToyNet from_checkpoint(const Checkpoint& cp);

    FrameMatrix forward(std::span<const std::int32_t> tokens) const;

    std::int64_t vocab_size() const { return vocab_; }
    std::int64_t feature_dim() const { return feature_; }

  private:
    friend TrainResult train(const TrainingRun& run);
    friend Checkpoint init_model(const ToyModelConfig& config);

    struct Layer {
        std::vector<double> weight;  // out x in, row-major
        std::vector<double> bias;
    };

    Checkpoint to_checkpoint(std::int64_t step_count) const;
    void forward_frame(std::int32_t token, std::int64_t frame, std::vector<std::vector<double>>& h,
                       std::vector<double>& out) const;

    std::int64_t vocab_ = 0, embed_ = 0, hidden_ = 0, feature_ = 0;
    std::vector<double> embed_weight_;  // vocab x embed
    std::vector<Layer> layers_;
    Layer head_;
};

}  // namespace mergelab

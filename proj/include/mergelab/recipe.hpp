#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mergelab/checkpoint.hpp"
#include "mergelab/toy_model.hpp"

namespace mergelab {

// Everything needed to reproduce the base-model construction: model dims,
// content spec, training schedule and the two attribute profiles. Seeds are
// not part of the recipe; they fan out from one master seed.
struct Recipe {
    ToyModelConfig model;
    std::int64_t sentence_length = 24;
    std::int64_t num_sentences = 64;
    std::int64_t eval_sentences = 10;
    double learning_rate = 0.2;
    std::int64_t batch_size = 8;
    std::int64_t pretrain_epochs = 300;
    std::int64_t finetune_epochs = 200;
    double min_separation = 1.0;
    AttributeProfile profile_a{"A", 1.0, 0.5, 0.0};
    AttributeProfile profile_b{"B", 2.0, -0.5, 1.0};
};

Recipe default_recipe();

// Strict key=value file: unknown keys, bad numbers and duplicate keys are
// ConfigError. Lines starting with '#' and blank lines are skipped.
Recipe load_recipe(const std::filesystem::path& path);

// Fixed seed derivation: one master seed plus a per-role offset, so partial
// reruns agree with full runs.
namespace seed_role {
constexpr std::uint64_t init = 0x1001;
constexpr std::uint64_t data_a = 0x2001;
constexpr std::uint64_t data_b = 0x2002;
constexpr std::uint64_t pretrain_shuffle = 0x3001;
constexpr std::uint64_t finetune_a_shuffle = 0x3002;
constexpr std::uint64_t finetune_b_shuffle = 0x3003;
constexpr std::uint64_t eval_content = 0x4001;
constexpr std::uint64_t rater_noise = 0x5001;
}  // namespace seed_role

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t role) {
    return master + role;
}

struct BasePair {
    Checkpoint pretrained;
    Checkpoint base_a;
    Checkpoint base_b;
    double pretrain_mse = 0.0;
    double mse_a = 0.0;
    double mse_b = 0.0;
};

// Shared-ancestor construction: seeded init, pretrain on the mixed
// two-profile data, then fine-tune per profile. Throws InvalidSpec when the
// profiles are closer than recipe.min_separation.
BasePair build_bases(const Recipe& recipe, std::uint64_t master_seed);

ContentSpec training_content(const Recipe& recipe, std::uint64_t content_seed);

// Held-out sentences for evaluation, with midpoint-profile targets.
Dataset make_eval_dataset(const Recipe& recipe, std::uint64_t master_seed);
std::vector<std::vector<std::int32_t>> sentences_of(const Dataset& dataset);

// Mean of the std half of the embedding: the output-variability statistic
// used by the fine-tune separation gate.
double pitch_statistic(const Checkpoint& model,
                       std::span<const std::vector<std::int32_t>> sentences);

struct SeparationGate {
    double stat_a = 0.0;
    double stat_b = 0.0;
    double required = 0.0;  // half the profile separation
    double embedding_cosine = 0.0;
    bool passed = false;
};

SeparationGate separation_gate(const BasePair& bases, const Recipe& recipe,
                               std::span<const std::vector<std::int32_t>> sentences);

}  // namespace mergelab

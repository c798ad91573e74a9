#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "mergelab/checkpoint.hpp"
#include "mergelab/merge.hpp"
#include "mergelab/toy_model.hpp"

namespace mergelab {

// Statistics-pooling embedding: per-channel mean followed by per-channel
// standard deviation of the output frames pooled over all sentences
// (length 2 * feature_dim).
struct EmbeddingVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

EmbeddingVector extract_embedding(const Checkpoint& model,
                                  std::span<const std::vector<std::int32_t>> sentences);

// dot(x, y) / (|x| |y|), clamped to [-1, 1]. Throws ZeroVector,
// LengthMismatch.
double cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y);

struct CurvePoint {
    double alpha = 0.0;
    double sim_to_a = 0.0;
    double sim_to_b = 0.0;
    double sim_to_a_std = 0.0;  // dispersion of per-sentence similarities
    double sim_to_b_std = 0.0;
};

struct SimilarityCurve {
    std::vector<CurvePoint> points;
};

struct SmoothnessStats {
    double max_violation = 0.0;  // largest increase of sim_to_a between consecutive alphas
    double max_jump = 0.0;       // largest |delta sim_to_a|
};

SmoothnessStats smoothness_metrics(const SimilarityCurve& curve);

struct SecsResult {
    SimilarityCurve curve;
    SmoothnessStats smoothness;
};

// Merge at every alpha of the sweep, embed, and compare against both base
// embeddings. Per-sentence similarities feed the dispersion columns.
SecsResult secs_curve(const Checkpoint& base_a, const Checkpoint& base_b, const SweepSpec& spec,
                      std::span<const std::vector<std::int32_t>> sentences);

// Decode each frame back to a token: argmin over vocab of euclidean
// distance to that token's template frame (g at decode_profile, same frame
// position). Ties break toward the lowest token.
std::vector<std::int32_t> decode_frames(const FrameMatrix& frames, const SynthTable& table,
                                        const AttributeProfile& decode_profile);

// Frame-level decoding error rate: the fraction of frames whose decoded
// token differs from the true one.
double content_error_rate(const Checkpoint& model, const Dataset& dataset,
                          const AttributeProfile& decode_profile);

// Direction through embedding mean-parts from the neutral base to the
// emotive base; intensity is the signed projection onto it.
struct IntensityAxis {
    std::vector<double> neutral_mean;
    std::vector<double> direction;  // unit vector
};

IntensityAxis make_intensity_axis(const EmbeddingVector& neutral, const EmbeddingVector& emotive);
double intensity_from_embedding(const EmbeddingVector& emb, const IntensityAxis& axis);
double intensity_estimate(const Checkpoint& model,
                          std::span<const std::vector<std::int32_t>> sentences,
                          const IntensityAxis& axis);

struct RankRow {
    int level = 0;  // 1-based true intensity level
    double alpha = 0.0;
    double avg_rank = 0.0;
    double rank_std = 0.0;
};

struct RankTable {
    std::vector<RankRow> rows;

    double grand_mean() const;
};

// Simulated-rater rearrangement: per trial each model's intensity estimate
// is perturbed with seeded Gaussian noise and the five models are ranked;
// rows report the average assigned rank per true level. The noise stream
// is partitioned per trial index.
RankTable intensity_rank_eval(std::span<const std::pair<double, Checkpoint>> models,
                              std::span<const std::vector<std::int32_t>> sentences,
                              std::int64_t trials, double noise_sigma, std::uint64_t noise_seed);

// CSV emitters; every real is printed with 6 decimal places.
void write_curve_csv(const std::filesystem::path& path, const SimilarityCurve& curve);
void write_rank_csv(const std::filesystem::path& path, const RankTable& table);
void write_error_rate_csv(const std::filesystem::path& path,
                          std::span<const std::pair<double, double>> rates);

}  // namespace mergelab

#include "mergelab/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "mergelab/errors.hpp"

namespace mergelab {

namespace {

// Mean/std pooling over a set of already-computed frame matrices.
EmbeddingVector pool_embedding(std::span<const FrameMatrix> outputs, std::int64_t feature_dim) {
    std::int64_t frames = 0;
    std::vector<double> mean(feature_dim, 0.0), sd(feature_dim, 0.0);
    for (const auto& m : outputs) {
        frames += m.rows;
        for (std::int64_t j = 0; j < m.rows; ++j)
            for (std::int64_t c = 0; c < feature_dim; ++c) mean[c] += m.at(j, c);
    }
    if (frames == 0) throw EmptySentenceSet("sentences contain no frames");
    for (auto& v : mean) v /= double(frames);
    for (const auto& m : outputs)
        for (std::int64_t j = 0; j < m.rows; ++j)
            for (std::int64_t c = 0; c < feature_dim; ++c) {
                const double d = m.at(j, c) - mean[c];
                sd[c] += d * d;
            }
    EmbeddingVector emb;
    emb.values.reserve(2 * feature_dim);
    emb.values.insert(emb.values.end(), mean.begin(), mean.end());
    for (double v : sd) emb.values.push_back(std::sqrt(v / double(frames)));
    return emb;
}

std::vector<FrameMatrix> forward_all(const ToyNet& net,
                                     std::span<const std::vector<std::int32_t>> sentences) {
    std::vector<FrameMatrix> outputs;
    outputs.reserve(sentences.size());
    for (const auto& s : sentences) outputs.push_back(net.forward(s));
    return outputs;
}

double population_std(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / double(xs.size()));
}

// Seeded standard normal via Box-Muller, independent of the standard
// library's distribution internals.
class GaussianRng {
  public:
    explicit GaussianRng(std::uint64_t seed) : engine_(seed) {}

    double next() {
        const double u1 = (double(engine_() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = double(engine_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi_v<double> * u2);
    }

  private:
    std::mt19937_64 engine_;
};

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path.string() + "\" for writing");
    return out;
}

}  // namespace

EmbeddingVector extract_embedding(const Checkpoint& model,
                                  std::span<const std::vector<std::int32_t>> sentences) {
    if (sentences.empty()) throw EmptySentenceSet("embedding needs at least one sentence");
    const ToyNet net = ToyNet::from_checkpoint(model);
    return pool_embedding(forward_all(net, sentences), net.feature_dim());
}

double cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y) {
    if (x.size() != y.size())
        throw LengthMismatch("embedding lengths differ: " + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()));
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x.values[i] * y.values[i];
        nx += x.values[i] * x.values[i];
        ny += y.values[i] * y.values[i];
    }
    if (nx == 0.0 || ny == 0.0) throw ZeroVector("cosine similarity of a zero vector");
    return std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

SmoothnessStats smoothness_metrics(const SimilarityCurve& curve) {
    if (curve.points.size() < 2)
        throw TooFewPoints("smoothness needs at least two curve points");
    SmoothnessStats s;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const double delta = curve.points[i].sim_to_a - curve.points[i - 1].sim_to_a;
        s.max_violation = std::max(s.max_violation, delta);
        s.max_jump = std::max(s.max_jump, std::abs(delta));
    }
    return s;
}

SecsResult secs_curve(const Checkpoint& base_a, const Checkpoint& base_b, const SweepSpec& spec,
                      std::span<const std::vector<std::int32_t>> sentences) {
    if (sentences.empty()) throw EmptySentenceSet("secs_curve needs at least one sentence");
    const ToyNet net_a = ToyNet::from_checkpoint(base_a);
    const ToyNet net_b = ToyNet::from_checkpoint(base_b);
    const std::vector<FrameMatrix> out_a = forward_all(net_a, sentences);
    const std::vector<FrameMatrix> out_b = forward_all(net_b, sentences);
    const std::int64_t fdim = net_a.feature_dim();
    const EmbeddingVector emb_a = pool_embedding(out_a, fdim);
    const EmbeddingVector emb_b = pool_embedding(out_b, fdim);

    // Per-sentence base embeddings for the dispersion columns.
    auto per_sentence = [&](const std::vector<FrameMatrix>& outs) {
        std::vector<EmbeddingVector> embs;
        embs.reserve(outs.size());
        for (const auto& m : outs) embs.push_back(pool_embedding({&m, 1}, fdim));
        return embs;
    };
    const std::vector<EmbeddingVector> sent_a = per_sentence(out_a);
    const std::vector<EmbeddingVector> sent_b = per_sentence(out_b);

    SecsResult result;
    MergePolicy policy;
    sweep(base_a, base_b, spec, policy, [&](double alpha, Checkpoint merged) {
        const ToyNet net = ToyNet::from_checkpoint(merged);
        const std::vector<FrameMatrix> outs = forward_all(net, sentences);
        CurvePoint p;
        p.alpha = alpha;
        const EmbeddingVector emb = pool_embedding(outs, fdim);
        p.sim_to_a = cosine_similarity(emb, emb_a);
        p.sim_to_b = cosine_similarity(emb, emb_b);
        std::vector<double> sims_a, sims_b;
        sims_a.reserve(outs.size());
        sims_b.reserve(outs.size());
        for (std::size_t s = 0; s < outs.size(); ++s) {
            const EmbeddingVector es = pool_embedding({&outs[s], 1}, fdim);
            sims_a.push_back(cosine_similarity(es, sent_a[s]));
            sims_b.push_back(cosine_similarity(es, sent_b[s]));
        }
        p.sim_to_a_std = population_std(sims_a);
        p.sim_to_b_std = population_std(sims_b);
        result.curve.points.push_back(p);
    });
    result.smoothness = smoothness_metrics(result.curve);
    return result;
}

std::vector<std::int32_t> decode_frames(const FrameMatrix& frames, const SynthTable& table,
                                        const AttributeProfile& decode_profile) {
    const std::int64_t fdim = frames.cols;
    const auto vocab = std::int64_t(table.omega.size());
    if (std::int64_t(table.phase.size()) != vocab * fdim)
        throw ShapeMismatch("synth table does not match the frame channel count");
    std::vector<std::int32_t> decoded(frames.rows);
    std::vector<double> tmpl(fdim);
    for (std::int64_t j = 0; j < frames.rows; ++j) {
        std::int32_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::int32_t t = 0; t < vocab; ++t) {
            double dist = 0.0;
            for (std::int64_t c = 0; c < fdim; ++c) {
                const double d =
                    frames.at(j, c) - synth_feature(table, decode_profile, t, j, c, fdim);
                dist += d * d;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = t;
            }
        }
        decoded[j] = best;
    }
    return decoded;
}

double content_error_rate(const Checkpoint& model, const Dataset& dataset,
                          const AttributeProfile& decode_profile) {
    const ToyNet net = ToyNet::from_checkpoint(model);
    const SynthTable table = synth_table(net.vocab_size(), net.feature_dim());

    std::int64_t frames = 0, errors = 0;
    for (const auto& item : dataset.items) {
        const FrameMatrix out = net.forward(item.tokens);
        if (out.rows != std::int64_t(item.tokens.size()))
            throw ShapeMismatch("dataset does not match model output shape");
        const std::vector<std::int32_t> decoded = decode_frames(out, table, decode_profile);
        for (std::int64_t j = 0; j < out.rows; ++j) {
            if (decoded[j] != item.tokens[j]) ++errors;
            ++frames;
        }
    }
    return frames == 0 ? 0.0 : double(errors) / double(frames);
}

IntensityAxis make_intensity_axis(const EmbeddingVector& neutral, const EmbeddingVector& emotive) {
    if (neutral.size() != emotive.size())
        throw LengthMismatch("embedding lengths differ between bases");
    const std::size_t fdim = neutral.size() / 2;
    IntensityAxis axis;
    axis.neutral_mean.assign(neutral.values.begin(), neutral.values.begin() + fdim);
    axis.direction.resize(fdim);
    double norm = 0.0;
    for (std::size_t c = 0; c < fdim; ++c) {
        axis.direction[c] = emotive.values[c] - neutral.values[c];
        norm += axis.direction[c] * axis.direction[c];
    }
    if (norm == 0.0)
        throw ZeroVector("neutral and emotive bases have identical embedding mean-parts");
    norm = std::sqrt(norm);
    for (auto& v : axis.direction) v /= norm;
    return axis;
}

double intensity_from_embedding(const EmbeddingVector& emb, const IntensityAxis& axis) {
    if (emb.size() != 2 * axis.direction.size())
        throw LengthMismatch("embedding length does not match the intensity axis");
    double proj = 0.0;
    for (std::size_t c = 0; c < axis.direction.size(); ++c)
        proj += (emb.values[c] - axis.neutral_mean[c]) * axis.direction[c];
    return proj;
}

double intensity_estimate(const Checkpoint& model,
                          std::span<const std::vector<std::int32_t>> sentences,
                          const IntensityAxis& axis) {
    return intensity_from_embedding(extract_embedding(model, sentences), axis);
}

double RankTable::grand_mean() const {
    double sum = 0.0;
    for (const auto& row : rows) sum += row.avg_rank;
    return rows.empty() ? 0.0 : sum / double(rows.size());
}

RankTable intensity_rank_eval(std::span<const std::pair<double, Checkpoint>> models,
                              std::span<const std::vector<std::int32_t>> sentences,
                              std::int64_t trials, double noise_sigma, std::uint64_t noise_seed) {
    if (models.size() != 5)
        throw WrongModelCount("intensity ranking takes exactly 5 models, got " +
                              std::to_string(models.size()));
    if (trials < 1) throw InvalidSpec("trials must be positive");

    std::vector<EmbeddingVector> embs;
    embs.reserve(5);
    for (const auto& [_, cp] : models) embs.push_back(extract_embedding(cp, sentences));
    const IntensityAxis axis = make_intensity_axis(embs.front(), embs.back());
    std::vector<double> estimates(5);
    for (std::size_t i = 0; i < 5; ++i) estimates[i] = intensity_from_embedding(embs[i], axis);

    // rank_sums[level] accumulates the rank assigned to that true level.
    std::vector<std::vector<double>> ranks_per_level(5);
    for (auto& v : ranks_per_level) v.reserve(trials);

    for (std::int64_t trial = 0; trial < trials; ++trial) {
        GaussianRng rng(noise_seed + 0x9e3779b97f4a7c15ull * std::uint64_t(trial + 1));
        std::array<double, 5> noisy;
        for (std::size_t i = 0; i < 5; ++i) noisy[i] = estimates[i] + noise_sigma * rng.next();

        std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return noisy[a] < noisy[b] || (noisy[a] == noisy[b] && a < b);
        });
        for (std::size_t pos = 0; pos < 5; ++pos)
            ranks_per_level[order[pos]].push_back(double(pos + 1));
    }

    RankTable table;
    for (std::size_t level = 0; level < 5; ++level) {
        RankRow row;
        row.level = int(level + 1);
        row.alpha = models[level].first;
        row.avg_rank =
            std::accumulate(ranks_per_level[level].begin(), ranks_per_level[level].end(), 0.0) /
            double(trials);
        row.rank_std = population_std(ranks_per_level[level]);
        table.rows.push_back(row);
    }
    return table;
}

void write_curve_csv(const std::filesystem::path& path, const SimilarityCurve& curve) {
    std::ofstream out = open_csv(path);
    out << "alpha,sim_to_a,sim_to_b,sim_to_a_std,sim_to_b_std\n";
    for (const auto& p : curve.points)
        out << fmt6(p.alpha) << ',' << fmt6(p.sim_to_a) << ',' << fmt6(p.sim_to_b) << ','
            << fmt6(p.sim_to_a_std) << ',' << fmt6(p.sim_to_b_std) << '\n';
    if (!out) throw IoError("write failure on \"" + path.string() + "\"");
}

void write_rank_csv(const std::filesystem::path& path, const RankTable& table) {
    std::ofstream out = open_csv(path);
    out << "level,alpha,avg_rank,rank_std\n";
    for (const auto& row : table.rows)
        out << row.level << ',' << fmt6(row.alpha) << ',' << fmt6(row.avg_rank) << ','
            << fmt6(row.rank_std) << '\n';
    if (!out) throw IoError("write failure on \"" + path.string() + "\"");
}

void write_error_rate_csv(const std::filesystem::path& path,
                          std::span<const std::pair<double, double>> rates) {
    std::ofstream out = open_csv(path);
    out << "alpha,content_error_rate\n";
    for (const auto& [alpha, rate] : rates) out << fmt6(alpha) << ',' << fmt6(rate) << '\n';
    if (!out) throw IoError("write failure on \"" + path.string() + "\"");
}

}  // namespace mergelab

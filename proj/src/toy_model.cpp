#include "mergelab/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mergelab/errors.hpp"

namespace mergelab {

namespace {

constexpr std::uint64_t kSynthTableSeed = 0x6d657267656c6162ull;

// Deterministic generator; distributions are hand-rolled so the output
// stream never depends on the standard library's distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform01() { return double(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

  private:
    std::mt19937_64 engine_;
};

void check_content(const ContentSpec& content, std::int64_t feature_dim) {
    if (content.vocab_size < 2)
        throw InvalidSpec("vocab_size must be at least 2, got " +
                          std::to_string(content.vocab_size));
    if (content.sentence_length < 1)
        throw InvalidSpec("sentence_length must be positive, got " +
                          std::to_string(content.sentence_length));
    if (content.num_sentences < 1)
        throw InvalidSpec("num_sentences must be positive, got " +
                          std::to_string(content.num_sentences));
    if (feature_dim < 1)
        throw InvalidSpec("feature_dim must be positive, got " + std::to_string(feature_dim));
}

std::vector<double> position_encoding(std::int64_t frame, std::int64_t dim) {
    std::vector<double> pe(dim);
    for (std::int64_t d = 0; d < dim; ++d) {
        const double w = std::exp(-std::log(10000.0) * double(d - d % 2) / double(dim));
        pe[d] = d % 2 == 0 ? std::sin(double(frame) * w) : std::cos(double(frame) * w);
    }
    return pe;
}

struct Grads {
    std::vector<double> embed;
    std::vector<std::vector<double>> weights, biases;
    std::vector<double> head_weight, head_bias;
};

}  // namespace

double profile_separation(const AttributeProfile& a, const AttributeProfile& b) {
    return std::max({std::abs(a.pitch_base - b.pitch_base), std::abs(a.tilt - b.tilt),
                     std::abs(a.energy - b.energy)});
}

AttributeProfile midpoint_profile(const AttributeProfile& a, const AttributeProfile& b) {
    AttributeProfile m;
    m.profile_id = "mid(" + a.profile_id + "," + b.profile_id + ")";
    m.pitch_base = 0.5 * (a.pitch_base + b.pitch_base);
    m.tilt = 0.5 * (a.tilt + b.tilt);
    m.energy = 0.5 * (a.energy + b.energy);
    return m;
}

SynthTable synth_table(std::int64_t vocab_size, std::int64_t feature_dim) {
    Rng rng(kSynthTableSeed);
    SynthTable table;
    table.omega.resize(vocab_size);
    // Stratified frequencies in [0.25, 1.25] rad/frame: slow enough for the
    // position encoding to resolve, jittered within each token's own slot so
    // any two tokens stay at least 0.4/vocab apart.
    for (std::int64_t t = 0; t < vocab_size; ++t)
        table.omega[t] = 0.25 + (double(t) + 0.2 + 0.6 * rng.uniform01()) / double(vocab_size);
    table.phase.resize(vocab_size * feature_dim);
    for (auto& p : table.phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi_v<double>);
    return table;
}

double synth_feature(const SynthTable& table, const AttributeProfile& profile, std::int32_t token,
                     std::int64_t frame, std::int64_t channel, std::int64_t feature_dim) {
    const double phase = table.phase[std::size_t(token) * feature_dim + channel];
    return profile.pitch_base * std::sin(table.omega[token] * double(frame) + phase) +
           profile.tilt * (double(channel) / double(feature_dim)) + profile.energy;
}

Dataset generate_dataset(const AttributeProfile& profile, const ContentSpec& content,
                         std::int64_t feature_dim) {
    check_content(content, feature_dim);
    const SynthTable table = synth_table(content.vocab_size, feature_dim);
    Rng rng(content.seed);
    Dataset ds;
    ds.items.resize(content.num_sentences);
    for (auto& item : ds.items) {
        item.tokens.resize(content.sentence_length);
        for (auto& t : item.tokens)
            t = static_cast<std::int32_t>(rng.below(std::uint64_t(content.vocab_size)));
        item.target.rows = content.sentence_length;
        item.target.cols = feature_dim;
        item.target.values.resize(content.sentence_length * feature_dim);
        for (std::int64_t j = 0; j < content.sentence_length; ++j)
            for (std::int64_t c = 0; c < feature_dim; ++c)
                item.target.at(j, c) =
                    synth_feature(table, profile, item.tokens[j], j, c, feature_dim);
    }
    return ds;
}

Checkpoint init_model(const ToyModelConfig& config) {
    if (config.vocab_size < 2 || config.embed_dim < 1 || config.hidden_dim < 1 ||
        config.feature_dim < 1 || config.num_layers < 1)
        throw InvalidConfig("model dims must be positive (vocab_size at least 2)");

    Rng rng(config.init_seed);
    auto fill = [&](std::vector<double>& v, std::int64_t count, std::int64_t fan_in) {
        const double s = 1.0 / std::sqrt(double(fan_in));
        v.resize(count);
        for (auto& x : v) x = rng.uniform(-s, s);
    };

    ToyNet net;
    net.vocab_ = config.vocab_size;
    net.embed_ = config.embed_dim;
    net.hidden_ = config.hidden_dim;
    net.feature_ = config.feature_dim;
    fill(net.embed_weight_, config.vocab_size * config.embed_dim, config.embed_dim);
    net.layers_.resize(config.num_layers);
    for (std::int64_t l = 0; l < config.num_layers; ++l) {
        const std::int64_t fan_in = l == 0 ? config.embed_dim : config.hidden_dim;
        fill(net.layers_[l].weight, config.hidden_dim * fan_in, fan_in);
        fill(net.layers_[l].bias, config.hidden_dim, fan_in);
    }
    fill(net.head_.weight, config.feature_dim * config.hidden_dim, config.hidden_dim);
    fill(net.head_.bias, config.feature_dim, config.hidden_dim);
    return net.to_checkpoint(0);
}

ToyNet ToyNet::from_checkpoint(const Checkpoint& cp) {
    auto need = [&](const std::string& name) -> const TensorData& {
        if (!cp.has(name)) throw ShapeMismatch("model is missing tensor \"" + name + "\"");
        const TensorData& t = cp.at(name);
        if (t.dtype != DType::F64)
            throw ShapeMismatch("model tensor \"" + name + "\" must be F64");
        return t;
    };

    ToyNet net;
    const TensorData& embed = need("embed.weight");
    if (embed.shape.size() != 2 || embed.shape[0] < 2 || embed.shape[1] < 1)
        throw ShapeMismatch("embed.weight must be [vocab, embed_dim]");
    net.vocab_ = embed.shape[0];
    net.embed_ = embed.shape[1];
    net.embed_weight_ = tensor_values(cp, "embed.weight");

    for (std::int64_t l = 0; cp.has("layers." + std::to_string(l) + ".weight"); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        const TensorData& w = need(prefix + "weight");
        const TensorData& b = need(prefix + "bias");
        const std::int64_t in = l == 0 ? net.embed_ : net.hidden_;
        if (w.shape.size() != 2 || w.shape[1] != in)
            throw ShapeMismatch("\"" + prefix + "weight\" has unexpected input dim");
        if (l == 0)
            net.hidden_ = w.shape[0];
        else if (w.shape[0] != net.hidden_)
            throw ShapeMismatch("\"" + prefix + "weight\" has unexpected output dim");
        if (b.shape != std::vector<std::int64_t>{net.hidden_})
            throw ShapeMismatch("\"" + prefix + "bias\" shape does not match hidden_dim");
        net.layers_.push_back({tensor_values(cp, prefix + "weight"),
                               tensor_values(cp, prefix + "bias")});
    }
    if (net.layers_.empty()) throw ShapeMismatch("model has no layers.N.weight tensors");

    const TensorData& hw = need("head.weight");
    const TensorData& hb = need("head.bias");
    if (hw.shape.size() != 2 || hw.shape[1] != net.hidden_ || hw.shape[0] < 1)
        throw ShapeMismatch("head.weight must be [feature_dim, hidden_dim]");
    net.feature_ = hw.shape[0];
    if (hb.shape != std::vector<std::int64_t>{net.feature_})
        throw ShapeMismatch("head.bias shape does not match feature_dim");
    net.head_ = {tensor_values(cp, "head.weight"), tensor_values(cp, "head.bias")};
    return net;
}

Checkpoint ToyNet::to_checkpoint(std::int64_t step_count) const {
    Checkpoint cp;
    cp.tensors.emplace("embed.weight",
                       make_tensor_f64({vocab_, embed_}, embed_weight_));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        const std::int64_t in = l == 0 ? embed_ : hidden_;
        cp.tensors.emplace(prefix + "weight", make_tensor_f64({hidden_, in}, layers_[l].weight));
        cp.tensors.emplace(prefix + "bias", make_tensor_f64({hidden_}, layers_[l].bias));
    }
    cp.tensors.emplace("head.weight", make_tensor_f64({feature_, hidden_}, head_.weight));
    cp.tensors.emplace("head.bias", make_tensor_f64({feature_}, head_.bias));
    const std::int64_t steps[1] = {step_count};
    cp.tensors.emplace("step_count", make_tensor_i64({1}, steps));
    cp.refresh_fingerprint();
    return cp;
}

void ToyNet::forward_frame(std::int32_t token, std::int64_t frame,
                           std::vector<std::vector<double>>& h, std::vector<double>& out) const {
    // h[0] holds the input activation, h[l + 1] the output of layer l.
    h.resize(layers_.size() + 1);
    std::vector<double>& x = h[0];
    x = position_encoding(frame, embed_);
    const double* erow = embed_weight_.data() + std::size_t(token) * embed_;
    for (std::int64_t i = 0; i < embed_; ++i) x[i] += erow[i];

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::vector<double>& in = h[l];
        std::vector<double>& act = h[l + 1];
        act.assign(hidden_, 0.0);
        const double* w = layers_[l].weight.data();
        for (std::int64_t j = 0; j < hidden_; ++j) {
            double z = layers_[l].bias[j];
            const double* row = w + std::size_t(j) * in.size();
            for (std::size_t i = 0; i < in.size(); ++i) z += row[i] * in[i];
            act[j] = std::tanh(z);
        }
    }

    const std::vector<double>& top = h.back();
    out.assign(feature_, 0.0);
    for (std::int64_t f = 0; f < feature_; ++f) {
        double z = head_.bias[f];
        const double* row = head_.weight.data() + std::size_t(f) * hidden_;
        for (std::int64_t i = 0; i < hidden_; ++i) z += row[i] * top[i];
        out[f] = z;
    }
}

FrameMatrix ToyNet::forward(std::span<const std::int32_t> tokens) const {
    FrameMatrix m;
    m.rows = std::int64_t(tokens.size());
    m.cols = feature_;
    m.values.resize(m.rows * m.cols);
    std::vector<std::vector<double>> h;
    std::vector<double> out;
    for (std::int64_t j = 0; j < m.rows; ++j) {
        const std::int32_t t = tokens[j];
        if (t < 0 || t >= vocab_)
            throw TokenOutOfRange("token " + std::to_string(t) + " at frame " + std::to_string(j) +
                                  " outside vocab of " + std::to_string(vocab_));
        forward_frame(t, j, h, out);
        std::copy(out.begin(), out.end(), m.values.begin() + j * m.cols);
    }
    return m;
}

FrameMatrix forward(const Checkpoint& model, std::span<const std::int32_t> tokens) {
    return ToyNet::from_checkpoint(model).forward(tokens);
}

double evaluate_mse(const Checkpoint& model, const Dataset& dataset) {
    const ToyNet net = ToyNet::from_checkpoint(model);
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& item : dataset.items) {
        const FrameMatrix pred = net.forward(item.tokens);
        if (pred.rows != item.target.rows || pred.cols != item.target.cols)
            throw ShapeMismatch("dataset target shape does not match model output");
        for (std::size_t i = 0; i < pred.values.size(); ++i) {
            const double d = pred.values[i] - item.target.values[i];
            sum += d * d;
        }
        count += pred.rows * pred.cols;
    }
    return count == 0 ? 0.0 : sum / double(count);
}

TrainResult train(const TrainingRun& run) {
    if (run.epochs < 0) throw InvalidConfig("epochs must be non-negative");
    if (run.batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (!std::isfinite(run.learning_rate)) throw InvalidConfig("learning_rate must be finite");
    if (run.dataset.items.empty()) throw InvalidSpec("training dataset is empty");

    ToyNet net = ToyNet::from_checkpoint(run.init);
    for (const auto& item : run.dataset.items) {
        if (item.target.cols != net.feature_ ||
            item.target.rows != std::int64_t(item.tokens.size()))
            throw ShapeMismatch("dataset target shape does not match model dims");
        for (std::int32_t t : item.tokens)
            if (t < 0 || t >= net.vocab_)
                throw TokenOutOfRange("dataset token " + std::to_string(t) +
                                      " outside vocab of " + std::to_string(net.vocab_));
    }

    const std::int64_t n = std::int64_t(run.dataset.items.size());
    const std::size_t num_layers = net.layers_.size();

    Grads g;
    g.embed.assign(net.embed_weight_.size(), 0.0);
    g.weights.resize(num_layers);
    g.biases.resize(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
        g.weights[l].assign(net.layers_[l].weight.size(), 0.0);
        g.biases[l].assign(net.layers_[l].bias.size(), 0.0);
    }
    g.head_weight.assign(net.head_.weight.size(), 0.0);
    g.head_bias.assign(net.head_.bias.size(), 0.0);

    Rng rng(run.shuffle_seed);
    std::vector<std::int64_t> order(n);
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;

    std::vector<std::vector<double>> h;
    std::vector<double> out, dy, dh, dz;
    std::int64_t steps = 0;

    for (std::int64_t epoch = 0; epoch < run.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::int64_t start = 0; start < n; start += run.batch_size) {
            const std::int64_t stop = std::min(n, start + run.batch_size);

            std::int64_t batch_frames = 0;
            for (std::int64_t bi = start; bi < stop; ++bi)
                batch_frames += std::int64_t(run.dataset.items[order[bi]].tokens.size());
            const double norm = double(batch_frames) * double(net.feature_);

            for (auto& v : g.weights) std::fill(v.begin(), v.end(), 0.0);
            for (auto& v : g.biases) std::fill(v.begin(), v.end(), 0.0);
            std::fill(g.embed.begin(), g.embed.end(), 0.0);
            std::fill(g.head_weight.begin(), g.head_weight.end(), 0.0);
            std::fill(g.head_bias.begin(), g.head_bias.end(), 0.0);

            double batch_loss = 0.0;
            for (std::int64_t bi = start; bi < stop; ++bi) {
                const auto& item = run.dataset.items[order[bi]];
                for (std::int64_t j = 0; j < std::int64_t(item.tokens.size()); ++j) {
                    const std::int32_t token = item.tokens[j];
                    net.forward_frame(token, j, h, out);

                    dy.assign(net.feature_, 0.0);
                    for (std::int64_t f = 0; f < net.feature_; ++f) {
                        const double diff = out[f] - item.target.at(j, f);
                        batch_loss += diff * diff / norm;
                        dy[f] = 2.0 * diff / norm;
                    }

                    const std::vector<double>& top = h[num_layers];
                    dh.assign(net.hidden_, 0.0);
                    for (std::int64_t f = 0; f < net.feature_; ++f) {
                        double* grow = g.head_weight.data() + std::size_t(f) * net.hidden_;
                        const double* wrow = net.head_.weight.data() + std::size_t(f) * net.hidden_;
                        for (std::int64_t i = 0; i < net.hidden_; ++i) {
                            grow[i] += dy[f] * top[i];
                            dh[i] += wrow[i] * dy[f];
                        }
                        g.head_bias[f] += dy[f];
                    }

                    for (std::size_t l = num_layers; l-- > 0;) {
                        const std::vector<double>& in = h[l];
                        const std::vector<double>& act = h[l + 1];
                        dz.assign(net.hidden_, 0.0);
                        for (std::int64_t jj = 0; jj < net.hidden_; ++jj)
                            dz[jj] = dh[jj] * (1.0 - act[jj] * act[jj]);
                        dh.assign(in.size(), 0.0);
                        for (std::int64_t jj = 0; jj < net.hidden_; ++jj) {
                            double* grow = g.weights[l].data() + std::size_t(jj) * in.size();
                            const double* wrow =
                                net.layers_[l].weight.data() + std::size_t(jj) * in.size();
                            for (std::size_t i = 0; i < in.size(); ++i) {
                                grow[i] += dz[jj] * in[i];
                                dh[i] += wrow[i] * dz[jj];
                            }
                            g.biases[l][jj] += dz[jj];
                        }
                    }

                    double* erow = g.embed.data() + std::size_t(token) * net.embed_;
                    for (std::int64_t i = 0; i < net.embed_; ++i) erow[i] += dh[i];
                }
            }

            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("training loss diverged at step " + std::to_string(steps) +
                                    "; lower the learning rate");

            const double lr = run.learning_rate;
            for (std::size_t i = 0; i < net.embed_weight_.size(); ++i)
                net.embed_weight_[i] -= lr * g.embed[i];
            for (std::size_t l = 0; l < num_layers; ++l) {
                for (std::size_t i = 0; i < net.layers_[l].weight.size(); ++i)
                    net.layers_[l].weight[i] -= lr * g.weights[l][i];
                for (std::size_t i = 0; i < net.layers_[l].bias.size(); ++i)
                    net.layers_[l].bias[i] -= lr * g.biases[l][i];
            }
            for (std::size_t i = 0; i < net.head_.weight.size(); ++i)
                net.head_.weight[i] -= lr * g.head_weight[i];
            for (std::size_t i = 0; i < net.head_.bias.size(); ++i)
                net.head_.bias[i] -= lr * g.head_bias[i];
            ++steps;
        }
    }

    std::int64_t step0 = 0;
    if (run.init.has("step_count")) step0 = tensor_values_i64(run.init, "step_count").at(0);

    TrainResult result;
    result.model = net.to_checkpoint(step0 + steps);
    result.model.metadata["train.parent_fingerprint"] = arch_fingerprint(run.init);
    result.model.refresh_fingerprint();
    result.steps = steps;
    result.final_mse = evaluate_mse(result.model, run.dataset);
    return result;
}

}  // namespace mergelab

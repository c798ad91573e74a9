#include "mergelab/recipe.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "mergelab/errors.hpp"
#include "mergelab/eval.hpp"

namespace mergelab {

Recipe default_recipe() { return Recipe{}; }

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("key \"" + std::string(key) + "\": \"" + std::string(value) +
                          "\" is not an integer");
    return out;
}

double parse_double(std::string_view key, std::string_view value) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("key \"" + std::string(key) + "\": \"" + std::string(value) +
                          "\" is not a number");
    return out;
}

}  // namespace

Recipe load_recipe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open \"" + path.string() + "\" for reading");

    Recipe r = default_recipe();
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key=value");
        const std::string key(trim(stripped.substr(0, eq)));
        const std::string value(trim(stripped.substr(eq + 1)));
        if (!seen.insert(key).second)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": duplicate key \"" +
                              key + "\"");

        if (key == "vocab_size") r.model.vocab_size = parse_int(key, value);
        else if (key == "embed_dim") r.model.embed_dim = parse_int(key, value);
        else if (key == "hidden_dim") r.model.hidden_dim = parse_int(key, value);
        else if (key == "feature_dim") r.model.feature_dim = parse_int(key, value);
        else if (key == "num_layers") r.model.num_layers = parse_int(key, value);
        else if (key == "sentence_length") r.sentence_length = parse_int(key, value);
        else if (key == "num_sentences") r.num_sentences = parse_int(key, value);
        else if (key == "eval_sentences") r.eval_sentences = parse_int(key, value);
        else if (key == "learning_rate") r.learning_rate = parse_double(key, value);
        else if (key == "batch_size") r.batch_size = parse_int(key, value);
        else if (key == "pretrain_epochs") r.pretrain_epochs = parse_int(key, value);
        else if (key == "finetune_epochs") r.finetune_epochs = parse_int(key, value);
        else if (key == "min_separation") r.min_separation = parse_double(key, value);
        else if (key == "profile_a.id") r.profile_a.profile_id = value;
        else if (key == "profile_a.pitch_base") r.profile_a.pitch_base = parse_double(key, value);
        else if (key == "profile_a.tilt") r.profile_a.tilt = parse_double(key, value);
        else if (key == "profile_a.energy") r.profile_a.energy = parse_double(key, value);
        else if (key == "profile_b.id") r.profile_b.profile_id = value;
        else if (key == "profile_b.pitch_base") r.profile_b.pitch_base = parse_double(key, value);
        else if (key == "profile_b.tilt") r.profile_b.tilt = parse_double(key, value);
        else if (key == "profile_b.energy") r.profile_b.energy = parse_double(key, value);
        else
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown key \"" +
                              key + "\"");
    }
    return r;
}

ContentSpec training_content(const Recipe& recipe, std::uint64_t content_seed) {
    ContentSpec c;
    c.vocab_size = recipe.model.vocab_size;
    c.sentence_length = recipe.sentence_length;
    c.num_sentences = recipe.num_sentences;
    c.seed = content_seed;
    return c;
}

BasePair build_bases(const Recipe& recipe, std::uint64_t master_seed) {
    const double sep = profile_separation(recipe.profile_a, recipe.profile_b);
    if (sep < recipe.min_separation)
        throw InvalidSpec("profiles \"" + recipe.profile_a.profile_id + "\" and \"" +
                          recipe.profile_b.profile_id + "\" are separated by " +
                          std::to_string(sep) + ", below the minimum " +
                          std::to_string(recipe.min_separation));

    const Dataset ds_a = generate_dataset(
        recipe.profile_a, training_content(recipe, derive_seed(master_seed, seed_role::data_a)),
        recipe.model.feature_dim);
    const Dataset ds_b = generate_dataset(
        recipe.profile_b, training_content(recipe, derive_seed(master_seed, seed_role::data_b)),
        recipe.model.feature_dim);
    Dataset mixed;
    mixed.items.reserve(ds_a.items.size() + ds_b.items.size());
    mixed.items.insert(mixed.items.end(), ds_a.items.begin(), ds_a.items.end());
    mixed.items.insert(mixed.items.end(), ds_b.items.begin(), ds_b.items.end());

    ToyModelConfig config = recipe.model;
    config.init_seed = derive_seed(master_seed, seed_role::init);
    const Checkpoint init = init_model(config);

    BasePair out;
    TrainingRun pretrain{init, std::move(mixed), recipe.pretrain_epochs, recipe.learning_rate,
                         recipe.batch_size, derive_seed(master_seed, seed_role::pretrain_shuffle)};
    TrainResult pre = train(pretrain);
    out.pretrain_mse = pre.final_mse;
    pre.model.metadata["train.profile_id"] =
        recipe.profile_a.profile_id + "+" + recipe.profile_b.profile_id;

    TrainingRun ft_a{pre.model, ds_a, recipe.finetune_epochs, recipe.learning_rate,
                     recipe.batch_size, derive_seed(master_seed, seed_role::finetune_a_shuffle)};
    TrainResult res_a = train(ft_a);
    out.mse_a = res_a.final_mse;
    res_a.model.metadata["train.profile_id"] = recipe.profile_a.profile_id;

    TrainingRun ft_b{pre.model, ds_b, recipe.finetune_epochs, recipe.learning_rate,
                     recipe.batch_size, derive_seed(master_seed, seed_role::finetune_b_shuffle)};
    TrainResult res_b = train(ft_b);
    out.mse_b = res_b.final_mse;
    res_b.model.metadata["train.profile_id"] = recipe.profile_b.profile_id;

    out.pretrained = std::move(pre.model);
    out.base_a = std::move(res_a.model);
    out.base_b = std::move(res_b.model);
    return out;
}

Dataset make_eval_dataset(const Recipe& recipe, std::uint64_t master_seed) {
    ContentSpec c;
    c.vocab_size = recipe.model.vocab_size;
    c.sentence_length = recipe.sentence_length;
    c.num_sentences = recipe.eval_sentences;
    c.seed = derive_seed(master_seed, seed_role::eval_content);
    return generate_dataset(midpoint_profile(recipe.profile_a, recipe.profile_b), c,
                            recipe.model.feature_dim);
}

std::vector<std::vector<std::int32_t>> sentences_of(const Dataset& dataset) {
    std::vector<std::vector<std::int32_t>> out;
    out.reserve(dataset.items.size());
    for (const auto& item : dataset.items) out.push_back(item.tokens);
    return out;
}

double pitch_statistic(const Checkpoint& model,
                       std::span<const std::vector<std::int32_t>> sentences) {
    const EmbeddingVector emb = extract_embedding(model, sentences);
    const std::size_t fdim = emb.size() / 2;
    double sum = 0.0;
    for (std::size_t c = fdim; c < emb.size(); ++c) sum += emb.values[c];
    return sum / double(fdim);
}

SeparationGate separation_gate(const BasePair& bases, const Recipe& recipe,
                               std::span<const std::vector<std::int32_t>> sentences) {
    SeparationGate gate;
    gate.stat_a = pitch_statistic(bases.base_a, sentences);
    gate.stat_b = pitch_statistic(bases.base_b, sentences);
    gate.required = 0.5 * profile_separation(recipe.profile_a, recipe.profile_b);
    gate.embedding_cosine = cosine_similarity(extract_embedding(bases.base_a, sentences),
                                              extract_embedding(bases.base_b, sentences));
    gate.passed = std::abs(gate.stat_a - gate.stat_b) >= gate.required;
    return gate;
}

}  // namespace mergelab

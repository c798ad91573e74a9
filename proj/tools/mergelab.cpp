#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mergelab/errors.hpp"
#include "mergelab/eval.hpp"
#include "mergelab/merge.hpp"
#include "mergelab/parallel.hpp"
#include "mergelab/recipe.hpp"
#include "mergelab/tensor_store.hpp"
#include "mergelab/toy_model.hpp"

namespace fs = std::filesystem;
using namespace mergelab;

namespace {

struct MergeFlags {
    double alpha = 0.5;
    bool extrapolate = false;
    std::string policy = "strict";
    std::string int_tensor = "require-equal";
};

MergePolicy to_policy(const MergeFlags& f) {
    MergePolicy p;
    p.alpha = f.alpha;
    p.extrapolate = f.extrapolate;
    p.key_mismatch = f.policy == "intersect" ? KeyMismatch::Intersect : KeyMismatch::Strict;
    p.int_tensor =
        f.int_tensor == "take-first" ? IntTensorPolicy::TakeFirst : IntTensorPolicy::RequireEqual;
    return p;
}

void add_policy_flags(CLI::App* cmd, MergeFlags& f, bool with_alpha) {
    if (with_alpha) cmd->add_option("--alpha", f.alpha, "merging coefficient")->required();
    cmd->add_flag("--extrapolate", f.extrapolate, "allow alpha outside [0, 1]");
    cmd->add_option("--policy", f.policy, "key mismatch handling")
        ->check(CLI::IsMember({"strict", "intersect"}))
        ->default_str("strict");
    cmd->add_option("--int-tensor", f.int_tensor, "integer tensor handling")
        ->check(CLI::IsMember({"require-equal", "take-first"}))
        ->default_str("require-equal");
}

SweepSpec make_sweep_spec(double steps, const std::vector<double>& alphas) {
    if (!alphas.empty()) return SweepSpec::from_list(alphas);
    return SweepSpec::by_step(steps);
}

Recipe recipe_from(const std::string& config_path) {
    return config_path.empty() ? default_recipe() : load_recipe(config_path);
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

void run_inspect(const std::string& path) {
    const Checkpoint cp = load_checkpoint(path);
    std::uint64_t data_bytes = 0;
    for (const auto& [_, t] : cp.tensors) data_bytes += t.data.size();
    std::printf("file: %s\n", path.c_str());
    std::printf("tensors: %zu, data region: %llu bytes\n", cp.tensors.size(),
                static_cast<unsigned long long>(data_bytes));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : cp.tensors) {
        std::printf("  %-24s %s %-12s [%llu, %llu)\n", name.c_str(),
                    std::string(dtype_name(t.dtype)).c_str(), shape_str(t.shape).c_str(),
                    static_cast<unsigned long long>(offset),
                    static_cast<unsigned long long>(offset + t.data.size()));
        offset += t.data.size();
    }
    std::printf("metadata:\n");
    for (const auto& [k, v] : cp.metadata) std::printf("  %s = %s\n", k.c_str(), v.c_str());
}

void run_merge(const std::string& a_path, const std::string& b_path, const MergeFlags& flags,
               const std::string& out_path) {
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    const Checkpoint merged = merge_pair(a, b, to_policy(flags));
    save_checkpoint(merged, out_path);
    std::printf("merged %s + %s at alpha=%s -> %s (%zu tensors)\n", a_path.c_str(), b_path.c_str(),
                merged.metadata.at("merge.alpha").c_str(), out_path.c_str(),
                merged.tensors.size());
}

void run_soup(const std::vector<std::string>& paths, const MergeFlags& flags,
              const std::string& out_path) {
    std::vector<Checkpoint> models;
    models.reserve(paths.size());
    for (const auto& p : paths) models.push_back(load_checkpoint(p));
    const Checkpoint merged = merge_soup(models, to_policy(flags).int_tensor);
    save_checkpoint(merged, out_path);
    std::printf("soup of %zu models -> %s\n", models.size(), out_path.c_str());
}

void run_sweep(const std::string& a_path, const std::string& b_path, const SweepSpec& spec,
               const MergeFlags& flags, const std::string& out_dir) {
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    fs::create_directories(out_dir);
    const auto& alphas = spec.alphas();

    // Merge points in parallel, write files in deterministic order.
    std::vector<std::vector<std::uint8_t>> blobs(alphas.size());
    parallel_for(alphas.size(), [&](std::size_t i) {
        MergePolicy p = to_policy(flags);
        p.alpha = alphas[i];
        blobs[i] = write_checkpoint(merge_pair(a, b, p));
    });
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "alpha_%.6f.ckpt", alphas[i]);
        const fs::path out = fs::path(out_dir) / name;
        std::ofstream f(out, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open \"" + out.string() + "\" for writing");
        f.write(reinterpret_cast<const char*>(blobs[i].data()),
                static_cast<std::streamsize>(blobs[i].size()));
        if (!f) throw IoError("write failure on \"" + out.string() + "\"");
    }
    std::printf("wrote %zu merged checkpoints to %s\n", alphas.size(), out_dir.c_str());
}

void run_train_toy(const Recipe& recipe, const std::string& profile_sel,
                   const std::string& init_path, std::int64_t epochs_override,
                   std::uint64_t seed, const std::string& out_path) {
    Dataset dataset;
    std::string profile_id;
    std::uint64_t shuffle_seed = 0;
    if (profile_sel == "a") {
        dataset = generate_dataset(recipe.profile_a,
                                   training_content(recipe, derive_seed(seed, seed_role::data_a)),
                                   recipe.model.feature_dim);
        profile_id = recipe.profile_a.profile_id;
        shuffle_seed = derive_seed(seed, seed_role::finetune_a_shuffle);
    } else if (profile_sel == "b") {
        dataset = generate_dataset(recipe.profile_b,
                                   training_content(recipe, derive_seed(seed, seed_role::data_b)),
                                   recipe.model.feature_dim);
        profile_id = recipe.profile_b.profile_id;
        shuffle_seed = derive_seed(seed, seed_role::finetune_b_shuffle);
    } else {  // mix
        dataset = generate_dataset(recipe.profile_a,
                                   training_content(recipe, derive_seed(seed, seed_role::data_a)),
                                   recipe.model.feature_dim);
        const Dataset ds_b =
            generate_dataset(recipe.profile_b,
                             training_content(recipe, derive_seed(seed, seed_role::data_b)),
                             recipe.model.feature_dim);
        dataset.items.insert(dataset.items.end(), ds_b.items.begin(), ds_b.items.end());
        profile_id = recipe.profile_a.profile_id + "+" + recipe.profile_b.profile_id;
        shuffle_seed = derive_seed(seed, seed_role::pretrain_shuffle);
    }

    Checkpoint init;
    if (init_path.empty()) {
        ToyModelConfig config = recipe.model;
        config.init_seed = derive_seed(seed, seed_role::init);
        init = init_model(config);
    } else {
        init = load_checkpoint(init_path);
    }

    TrainingRun run;
    run.init = std::move(init);
    run.dataset = std::move(dataset);
    run.epochs = epochs_override >= 0 ? epochs_override
                 : init_path.empty() ? recipe.pretrain_epochs
                                     : recipe.finetune_epochs;
    run.learning_rate = recipe.learning_rate;
    run.batch_size = recipe.batch_size;
    run.shuffle_seed = shuffle_seed;

    TrainResult result = train(run);
    result.model.metadata["train.profile_id"] = profile_id;
    save_checkpoint(result.model, out_path);
    std::printf("trained profile %s for %lld epochs (%lld steps), final mse %.6g -> %s\n",
                profile_id.c_str(), static_cast<long long>(run.epochs),
                static_cast<long long>(result.steps), result.final_mse, out_path.c_str());
}

void run_eval_secs(const std::string& a_path, const std::string& b_path, const Recipe& recipe,
                   const SweepSpec& spec, std::uint64_t seed, const std::string& csv_path) {
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    const auto sentences = sentences_of(make_eval_dataset(recipe, seed));
    const SecsResult result = secs_curve(a, b, spec, sentences);
    write_curve_csv(csv_path, result.curve);
    std::printf("secs curve: %zu points, max_violation %.6f, max_jump %.6f -> %s\n",
                result.curve.points.size(), result.smoothness.max_violation,
                result.smoothness.max_jump, csv_path.c_str());
}

std::vector<std::pair<double, double>> error_rate_sweep(const Checkpoint& a, const Checkpoint& b,
                                                        const SweepSpec& spec,
                                                        const Dataset& eval_ds,
                                                        const AttributeProfile& decode_profile) {
    const auto& alphas = spec.alphas();
    std::vector<std::pair<double, double>> rates(alphas.size());
    parallel_for(alphas.size(), [&](std::size_t i) {
        MergePolicy p;
        p.alpha = alphas[i];
        rates[i] = {alphas[i], content_error_rate(merge_pair(a, b, p), eval_ds, decode_profile)};
    });
    return rates;
}

void run_eval_wer(const std::string& a_path, const std::string& b_path, const Recipe& recipe,
                  const SweepSpec& spec, std::uint64_t seed, const std::string& csv_path) {
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    const Dataset eval_ds = make_eval_dataset(recipe, seed);
    const auto rates = error_rate_sweep(a, b, spec, eval_ds,
                                        midpoint_profile(recipe.profile_a, recipe.profile_b));
    write_error_rate_csv(csv_path, rates);
    double worst = 0.0;
    for (const auto& [_, r] : rates) worst = std::max(worst, r);
    std::printf("content error rates: base_a %.6f, base_b %.6f, worst %.6f -> %s\n",
                rates.front().second, rates.back().second, worst, csv_path.c_str());
}

void run_eval_intensity(const std::string& a_path, const std::string& b_path, const Recipe& recipe,
                        const SweepSpec& spec, std::int64_t trials, double sigma_frac,
                        std::uint64_t seed, const std::string& csv_path) {
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    const auto sentences = sentences_of(make_eval_dataset(recipe, seed));
    const auto models = sweep_all(a, b, spec, MergePolicy{});

    const EmbeddingVector emb_neutral = extract_embedding(models.front().second, sentences);
    const EmbeddingVector emb_emotive = extract_embedding(models.back().second, sentences);
    const IntensityAxis axis = make_intensity_axis(emb_neutral, emb_emotive);
    std::printf("intensity estimates:");
    double first = 0.0, last = 0.0;
    for (const auto& [alpha, cp] : models) {
        const double est = intensity_estimate(cp, sentences, axis);
        if (alpha == spec.alphas().front()) first = est;
        if (alpha == spec.alphas().back()) last = est;
        std::printf(" %.6f", est);
    }
    std::printf("\n");

    const double sigma = sigma_frac * (last - first);
    const RankTable table = intensity_rank_eval(models, sentences, trials, sigma,
                                                derive_seed(seed, seed_role::rater_noise));
    write_rank_csv(csv_path, table);
    std::printf("rank table (sigma %.6f, %lld trials):", sigma, static_cast<long long>(trials));
    for (const auto& row : table.rows) std::printf(" %.6f", row.avg_rank);
    std::printf(" -> %s\n", csv_path.c_str());
}

void run_demo(const Recipe& recipe, std::uint64_t seed, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    std::printf("building bases (seed %llu)...\n", static_cast<unsigned long long>(seed));
    const BasePair bases = build_bases(recipe, seed);
    save_checkpoint(bases.pretrained, dir / "pretrained.ckpt");
    save_checkpoint(bases.base_a, dir / "base_a.ckpt");
    save_checkpoint(bases.base_b, dir / "base_b.ckpt");
    std::printf("  pretrain mse %.6g, base_a mse %.6g, base_b mse %.6g\n", bases.pretrain_mse,
                bases.mse_a, bases.mse_b);

    const Dataset eval_ds = make_eval_dataset(recipe, seed);
    const auto sentences = sentences_of(eval_ds);
    const SeparationGate gate = separation_gate(bases, recipe, sentences);
    std::printf("separation gate: |%.4f - %.4f| vs required %.4f, embedding cosine %.4f -> %s\n",
                gate.stat_a, gate.stat_b, gate.required, gate.embedding_cosine,
                gate.passed ? "ok" : "FAILED");

    const SecsResult secs = secs_curve(bases.base_a, bases.base_b, SweepSpec::by_step(0.1),
                                       sentences);
    write_curve_csv(dir / "secs_curve.csv", secs.curve);
    std::printf("secs curve: max_violation %.6f, max_jump %.6f\n", secs.smoothness.max_violation,
                secs.smoothness.max_jump);

    const auto rates = error_rate_sweep(bases.base_a, bases.base_b, SweepSpec::by_step(0.1),
                                        eval_ds,
                                        midpoint_profile(recipe.profile_a, recipe.profile_b));
    write_error_rate_csv(dir / "content_error.csv", rates);
    double worst = 0.0;
    for (const auto& [_, r] : rates) worst = std::max(worst, r);
    std::printf("content error: base_a %.6f, base_b %.6f, worst over sweep %.6f\n",
                rates.front().second, rates.back().second, worst);

    const auto models = sweep_all(bases.base_a, bases.base_b, SweepSpec::by_step(0.25),
                                  MergePolicy{});
    const IntensityAxis axis =
        make_intensity_axis(extract_embedding(models.front().second, sentences),
                            extract_embedding(models.back().second, sentences));
    std::vector<double> estimates;
    for (const auto& [_, cp] : models) estimates.push_back(intensity_estimate(cp, sentences, axis));
    const double sigma = 0.25 * (estimates.back() - estimates.front());
    const RankTable table = intensity_rank_eval(models, sentences, 50, sigma,
                                                derive_seed(seed, seed_role::rater_noise));
    write_rank_csv(dir / "intensity_ranks.csv", table);
    std::printf("intensity estimates:");
    for (double e : estimates) std::printf(" %.6f", e);
    std::printf("\naverage ranks:");
    for (const auto& row : table.rows) std::printf(" %.6f", row.avg_rank);
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    std::printf("\ndemo complete in %.1f s, outputs in %s\n", double(elapsed.count()) / 1000.0,
                out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"checkpoint merging and attribute interpolation toolkit"};
    app.require_subcommand(1);

    // inspect
    auto* cmd_inspect = app.add_subcommand("inspect", "print tensors and metadata of a checkpoint");
    std::string inspect_path;
    cmd_inspect->add_option("file", inspect_path, "checkpoint file")->required();

    // merge
    auto* cmd_merge = app.add_subcommand("merge", "interpolate two checkpoints");
    std::string merge_a, merge_b, merge_out;
    MergeFlags merge_flags;
    cmd_merge->add_option("a", merge_a, "base checkpoint A")->required();
    cmd_merge->add_option("b", merge_b, "base checkpoint B")->required();
    add_policy_flags(cmd_merge, merge_flags, true);
    cmd_merge->add_option("-o,--output", merge_out, "output checkpoint")->required();

    // soup
    auto* cmd_soup = app.add_subcommand("soup", "uniform average of k checkpoints");
    std::vector<std::string> soup_paths;
    std::string soup_out;
    MergeFlags soup_flags;
    cmd_soup->add_option("models", soup_paths, "checkpoint files")->required()->expected(-1);
    cmd_soup->add_option("--int-tensor", soup_flags.int_tensor, "integer tensor handling")
        ->check(CLI::IsMember({"require-equal", "take-first"}));
    cmd_soup->add_option("-o,--output", soup_out, "output checkpoint")->required();

    // sweep
    auto* cmd_sweep = app.add_subcommand("sweep", "merge across a grid of coefficients");
    std::string sweep_a, sweep_b, sweep_out;
    double sweep_steps = 0.1;
    std::vector<double> sweep_alphas;
    MergeFlags sweep_flags;
    cmd_sweep->add_option("a", sweep_a, "base checkpoint A")->required();
    cmd_sweep->add_option("b", sweep_b, "base checkpoint B")->required();
    auto* sweep_steps_opt = cmd_sweep->add_option("--steps", sweep_steps, "alpha step size");
    cmd_sweep->add_option("--alphas", sweep_alphas, "explicit alpha list")
        ->delimiter(',')
        ->excludes(sweep_steps_opt);
    add_policy_flags(cmd_sweep, sweep_flags, false);
    cmd_sweep->add_option("-o,--output", sweep_out, "output directory")->required();

    // train-toy
    auto* cmd_train = app.add_subcommand("train-toy", "train a toy synthesizer model");
    std::string train_config, train_profile, train_init, train_out;
    std::int64_t train_epochs = -1;
    std::uint64_t train_seed = 0;
    cmd_train->add_option("--config", train_config, "recipe file (key=value lines)");
    cmd_train->add_option("--profile", train_profile, "dataset profile")
        ->check(CLI::IsMember({"a", "b", "mix"}))
        ->required();
    cmd_train->add_option("--init", train_init, "initial checkpoint (fine-tune)");
    cmd_train->add_option("--epochs", train_epochs, "override epoch count");
    cmd_train->add_option("--seed", train_seed, "master seed");
    cmd_train->add_option("-o,--output", train_out, "output checkpoint")->required();

    // eval-secs
    auto* cmd_secs = app.add_subcommand("eval-secs", "similarity curve across a merge sweep");
    std::string secs_a, secs_b, secs_config, secs_csv;
    double secs_steps = 0.1;
    std::vector<double> secs_alphas;
    std::uint64_t secs_seed = 0;
    cmd_secs->add_option("--base-a", secs_a, "base checkpoint A")->required();
    cmd_secs->add_option("--base-b", secs_b, "base checkpoint B")->required();
    auto* secs_steps_opt = cmd_secs->add_option("--steps", secs_steps, "alpha step size");
    cmd_secs->add_option("--alphas", secs_alphas, "explicit alpha list")
        ->delimiter(',')
        ->excludes(secs_steps_opt);
    cmd_secs->add_option("--config", secs_config, "recipe file");
    cmd_secs->add_option("--seed", secs_seed, "master seed");
    cmd_secs->add_option("--csv", secs_csv, "output CSV path")->required();

    // eval-wer
    auto* cmd_wer = app.add_subcommand("eval-wer", "content error rate across a merge sweep");
    std::string wer_a, wer_b, wer_config, wer_csv;
    double wer_steps = 0.1;
    std::uint64_t wer_seed = 0;
    cmd_wer->add_option("--base-a", wer_a, "base checkpoint A")->required();
    cmd_wer->add_option("--base-b", wer_b, "base checkpoint B")->required();
    cmd_wer->add_option("--steps", wer_steps, "alpha step size");
    cmd_wer->add_option("--config", wer_config, "recipe file");
    cmd_wer->add_option("--seed", wer_seed, "master seed");
    cmd_wer->add_option("--csv", wer_csv, "output CSV path")->required();

    // eval-intensity
    auto* cmd_int = app.add_subcommand("eval-intensity", "simulated-rater intensity ranking");
    std::string int_a, int_b, int_config, int_csv;
    double int_steps = 0.25, int_sigma_frac = 0.25;
    std::int64_t int_trials = 50;
    std::uint64_t int_seed = 0;
    cmd_int->add_option("--base-a", int_a, "neutral base checkpoint")->required();
    cmd_int->add_option("--base-b", int_b, "emotive base checkpoint")->required();
    cmd_int->add_option("--steps", int_steps, "alpha step size");
    cmd_int->add_option("--trials", int_trials, "simulated rater trials");
    cmd_int->add_option("--sigma-frac", int_sigma_frac, "rater noise as a fraction of the endpoint gap");
    cmd_int->add_option("--config", int_config, "recipe file");
    cmd_int->add_option("--seed", int_seed, "master seed");
    cmd_int->add_option("--csv", int_csv, "output CSV path")->required();

    // demo
    auto* cmd_demo = app.add_subcommand("demo", "full pipeline: train bases, sweep, evaluate");
    std::string demo_config, demo_out = "demo_out";
    std::uint64_t demo_seed = 0;
    cmd_demo->add_option("--config", demo_config, "recipe file");
    cmd_demo->add_option("--seed", demo_seed, "master seed");
    cmd_demo->add_option("-o,--output", demo_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*cmd_inspect) {
            run_inspect(inspect_path);
        } else if (*cmd_merge) {
            run_merge(merge_a, merge_b, merge_flags, merge_out);
        } else if (*cmd_soup) {
            run_soup(soup_paths, soup_flags, soup_out);
        } else if (*cmd_sweep) {
            run_sweep(sweep_a, sweep_b, make_sweep_spec(sweep_steps, sweep_alphas), sweep_flags,
                      sweep_out);
        } else if (*cmd_train) {
            run_train_toy(recipe_from(train_config), train_profile, train_init, train_epochs,
                          train_seed, train_out);
        } else if (*cmd_secs) {
            run_eval_secs(secs_a, secs_b, recipe_from(secs_config),
                          make_sweep_spec(secs_steps, secs_alphas), secs_seed, secs_csv);
        } else if (*cmd_wer) {
            run_eval_wer(wer_a, wer_b, recipe_from(wer_config), SweepSpec::by_step(wer_steps),
                         wer_seed, wer_csv);
        } else if (*cmd_int) {
            run_eval_intensity(int_a, int_b, recipe_from(int_config),
                               SweepSpec::by_step(int_steps), int_trials, int_sigma_frac, int_seed,
                               int_csv);
        } else if (*cmd_demo) {
            run_demo(recipe_from(demo_config), demo_seed, demo_out);
        }
    } catch (const AlphaOutOfRange& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InvalidSweepSpec& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

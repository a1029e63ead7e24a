#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "crowddiff/commands.hpp"

namespace {

using crowddiff::RunConfig;

// Mirrors RunConfig fields as kebab-case flags; every flag also reads a
// CROWDDIFF_* environment variable. --config loads a saved JSON config first
// and explicit flags override it.
void add_config_flags(CLI::App* cmd, RunConfig& cfg) {
    const auto opt = [&](const char* flag, auto& field, const char* help) {
        std::string env = "CROWDDIFF_";
        for (const char* c = flag + 2; *c; ++c)
            env += *c == '-' ? '_' : static_cast<char>(std::toupper(*c));
        cmd->add_option(flag, field, help)->envname(env);
    };
    opt("--num-steps", cfg.num_steps, "diffusion timesteps T");
    opt("--beta-start", cfg.beta_start, "linear schedule start");
    opt("--beta-end", cfg.beta_end, "linear schedule end");
    opt("--k", cfg.k, "SNR weighting offset k");
    opt("--gamma", cfg.gamma, "SNR weighting exponent");
    opt("--lambda-vlb", cfg.lambda_vlb, "variational bound weight");
    opt("--lambda-count", cfg.lambda_count, "count loss weight");
    cmd->add_flag("--count-branch,!--no-count-branch", cfg.count_branch,
                  "train with the count-regression branch");
    opt("--lr", cfg.lr, "base learning rate");
    opt("--warmup-steps", cfg.warmup_steps, "linear warmup steps");
    opt("--iterations", cfg.iterations, "training iterations");
    opt("--batch-size", cfg.batch_size, "training batch size");
    opt("--crop", cfg.crop, "training crop size");
    opt("--weight-decay", cfg.weight_decay, "AdamW weight decay");
    opt("--checkpoint-every", cfg.checkpoint_every, "checkpoint interval");
    opt("--log-every", cfg.log_every, "log interval");
    opt("--realizations", cfg.realizations, "density realizations per image");
    opt("--ddim-steps", cfg.ddim_steps, "DDIM sampling steps");
    opt("--patch-size", cfg.patch_size, "inference tile size");
    opt("--count-threshold", cfg.count_threshold,
        "contour threshold (negative = kernel-derived default)");
    opt("--beta", cfg.fusion_beta, "fusion rejection-radius scale");
    opt("--max-neighbors", cfg.max_neighbors, "fusion neighbor cap");
    opt("--search-frac", cfg.search_frac, "fusion search radius fraction");
    opt("--order", cfg.fusion_order, "fusion order: ascend|descend|random");
    opt("--base-channels", cfg.denoiser.base_channels, "U-Net base width");
    cmd->add_option("--channel-multipliers", cfg.denoiser.channel_multipliers,
                    "per-depth channel multipliers")
        ->delimiter(',');
    cmd->add_option("--attention-depths", cfg.denoiser.attention_depths,
                    "depths with attention")
        ->delimiter(',');
    opt("--res-blocks", cfg.denoiser.num_res_blocks_per_depth, "res blocks per depth");
    opt("--time-embed-dim", cfg.denoiser.time_embed_dim, "timestep embedding width");
    opt("--seed", cfg.seed, "master seed");
    opt("--run-dir", cfg.run_dir, "output directory");
    opt("--manifest", cfg.manifest, "dataset manifest path");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crowddiff: diffusion-based crowd density generation and counting"};
    app.require_subcommand(1);

    std::string config_path;

    // import
    auto* cmd_import = app.add_subcommand("import", "convert images + point tables to a manifest");
    std::string import_src, import_dst;
    cmd_import->add_option("src", import_src, "source directory")->required();
    cmd_import->add_option("dst", import_dst, "destination manifest path")->required();

    // synth
    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    crowddiff::SynthParams synth;
    cmd_synth->add_option("--out-dir", synth.out_dir, "output directory")->required();
    cmd_synth->add_option("--train", synth.num_train, "train scenes");
    cmd_synth->add_option("--val", synth.num_val, "val scenes");
    cmd_synth->add_option("--test", synth.num_test, "test scenes");
    cmd_synth->add_option("--height", synth.height, "scene height");
    cmd_synth->add_option("--width", synth.width, "scene width");
    cmd_synth->add_option("--min-points", synth.min_points, "min dots per scene");
    cmd_synth->add_option("--max-points", synth.max_points, "max dots per scene");
    cmd_synth->add_option("--min-separation", synth.min_separation, "min pairwise distance");
    cmd_synth->add_option("--seed", synth.seed, "generator seed");

    // shared run config
    RunConfig cfg;

    auto* cmd_train = app.add_subcommand("train", "train the denoiser");
    cmd_train->add_option("--config", config_path, "start from a saved config JSON");
    add_config_flags(cmd_train, cfg);

    auto* cmd_sample = app.add_subcommand("sample", "sample density maps for one image");
    std::string checkpoint, image_path;
    uint64_t sample_seed = 7;
    cmd_sample->add_option("--config", config_path, "start from a saved config JSON");
    cmd_sample->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_sample->add_option("--image", image_path, "input image (PPM/PGM)")->required();
    cmd_sample->add_option("--sample-seed", sample_seed, "realization seed");
    add_config_flags(cmd_sample, cfg);

    auto* cmd_eval = app.add_subcommand("evaluate", "compute MAE/MSE over a manifest split");
    std::string eval_manifest, split = "test";
    cmd_eval->add_option("--config", config_path, "start from a saved config JSON");
    cmd_eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_eval->add_option("--eval-manifest", eval_manifest, "manifest to evaluate")->required();
    cmd_eval->add_option("--split", split, "split to evaluate");
    add_config_flags(cmd_eval, cfg);

    auto* cmd_ablate = app.add_subcommand("ablate", "run an ablation axis");
    std::string axis = "fusion-order";
    cmd_ablate->add_option("--config", config_path, "start from a saved config JSON");
    cmd_ablate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_ablate->add_option("--eval-manifest", eval_manifest, "manifest to evaluate")->required();
    cmd_ablate->add_option("--axis", axis, "fusion-order|counting-op|realizations");
    cmd_ablate->add_option("--split", split, "split to evaluate");
    add_config_flags(cmd_ablate, cfg);

    try {
        // Pre-scan for --config so flag parsing overrides the file values.
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config") cfg = RunConfig::load(argv[i + 1]);
        app.parse(argc, argv);

        if (*cmd_import) {
            const int n = crowddiff::cmd_import(import_src, import_dst);
            std::printf("imported %d records -> %s\n", n, import_dst.c_str());
        } else if (*cmd_synth) {
            crowddiff::cmd_synth(synth);
            std::printf("synthetic dataset written to %s\n", synth.out_dir.c_str());
        } else if (*cmd_train) {
            const auto r = crowddiff::cmd_train(cfg);
            std::printf("training done: initial loss %.4f -> final loss %.4f, checkpoint %s\n",
                        r.initial_loss_ma, r.final_loss_ma, r.checkpoint_path.c_str());
        } else if (*cmd_sample) {
            const auto r = crowddiff::cmd_sample(cfg, checkpoint, image_path, sample_seed);
            std::printf("%s\n", r.summary_json.c_str());
        } else if (*cmd_eval) {
            const auto r = crowddiff::cmd_evaluate(cfg, checkpoint, eval_manifest, split);
            std::printf("MAE %.4f  MSE %.4f over %zu samples\n", r.mae, r.mse,
                        r.per_sample.size());
        } else if (*cmd_ablate) {
            const auto t = crowddiff::cmd_ablate(cfg, checkpoint, eval_manifest, axis, split);
            std::printf("%s", t.to_pretty().c_str());
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include "crowddiff/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace crowddiff {

namespace fs = std::filesystem;
using nlohmann::json;

int cmd_import(const std::string& src_dir, const std::string& dst_manifest) {
    std::vector<ManifestEntry> entries;
    std::vector<fs::path> images;
    for (const auto& de : fs::directory_iterator(src_dir)) {
        const std::string ext = de.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm") images.push_back(de.path());
    }
    std::sort(images.begin(), images.end());
    for (const fs::path& img : images) {
        fs::path table = img;
        table.replace_extension(".txt");
        ManifestEntry e;
        e.image_path = img.filename().string();
        e.split = "train";
        if (fs::exists(table)) {
            std::ifstream f(table);
            double x, y;
            while (f >> x >> y) e.points.push_back({x, y});
        }
        entries.push_back(std::move(e));
    }
    fs::create_directories(fs::path(dst_manifest).parent_path());
    // Copy images next to the manifest so relative paths resolve.
    const fs::path dst_dir = fs::path(dst_manifest).parent_path();
    for (const fs::path& img : images)
        if (!fs::equivalent(img.parent_path(), dst_dir))
            fs::copy_file(img, dst_dir / img.filename(), fs::copy_options::overwrite_existing);
    save_manifest(dst_manifest, entries);
    load_manifest(dst_manifest);  // validate what we just wrote
    return static_cast<int>(entries.size());
}

void cmd_synth(const SynthParams& params) {
    if (params.min_points < 0 || params.max_points < params.min_points)
        throw std::invalid_argument("synth: bad point-count range");
    fs::create_directories(params.out_dir);
    Rng rng = make_rng(params.seed, fnv1a("synth"));
    std::uniform_int_distribution<int> npts(params.min_points, params.max_points);
    std::vector<ManifestEntry> entries;
    const auto emit = [&](int n, const std::string& split) {
        for (int i = 0; i < n; ++i) {
            const CrowdSample s = synth_scene(npts(rng), params.height, params.width,
                                              params.min_separation, rng);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%04d.ppm", split.c_str(), i);
            write_ppm((fs::path(params.out_dir) / name).string(), s.image);
            entries.push_back({name, s.points, split});
        }
    };
    emit(params.num_train, "train");
    emit(params.num_val, "val");
    emit(params.num_test, "test");
    save_manifest((fs::path(params.out_dir) / "manifest.jsonl").string(), entries);
}

TrainResult cmd_train(const RunConfig& config) {
    config.validate();
    fs::create_directories(config.run_dir);
    fs::create_directories(fs::path(config.run_dir) / "checkpoints");
    fs::create_directories(fs::path(config.run_dir) / "reports");
    config.save((fs::path(config.run_dir) / "config.json").string());

    const DatasetManifest manifest = load_manifest(config.manifest);
    const NoiseSchedule schedule = config.make_schedule();
    Denoiser model(config.denoiser, config.seed, config.count_branch);
    nn::AdamW opt;
    opt.weight_decay = config.weight_decay;
    const std::vector<nn::Param*> params = model.parameters();

    Rng data_rng = make_rng(config.seed, fnv1a("train-data"));
    Rng noise_rng = make_rng(config.seed, fnv1a("train-noise"));
    Rng t_rng = make_rng(config.seed, fnv1a("train-t"));
    std::uniform_int_distribution<int> t_dist(1, schedule.num_steps);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    const double density_scale = default_density_scale();

    std::ofstream log((fs::path(config.run_dir) / "reports" / "train_log.jsonl").string());
    TrainResult result;
    for (int step = 1; step <= config.iterations; ++step) {
        TrainingBatch tb =
            training_batch(manifest, config.batch_size, config.crop, data_rng, density_scale);
        DiffusionBatch batch;
        batch.x0 = std::move(tb.density);
        batch.y = std::move(tb.images);
        batch.t.resize(static_cast<size_t>(config.batch_size));
        for (int& ti : batch.t) ti = t_dist(t_rng);
        batch.eps = Tensor(batch.x0.shape);
        for (auto& v : batch.eps.data) v = gauss(noise_rng);
        batch.xt = forward_corrupt(batch.x0, batch.eps, batch.t, schedule);

        PredictOutput out = model.predict(batch.y, batch.xt, batch.t, /*train=*/true);
        Tensor d_eps, d_var;
        LossBreakdown loss = hybrid_loss(out.eps, out.var_interp, batch, schedule,
                                         config.lambda_vlb, &d_eps, &d_var);
        std::vector<double> d_count;
        double closs = 0.0;
        if (config.count_branch) {
            const std::vector<double> pred =
                model.regress_count(out.features.pooled, /*train=*/true);
            closs = count_loss(pred, tb.counts, batch.t, schedule, &d_count);
            for (double& g : d_count) g *= config.lambda_count;
        }
        loss = overall_loss(loss, closs, config.lambda_count);

        model.zero_grad();
        model.backward(d_eps, d_var, d_count);
        const double warm =
            config.warmup_steps > 0
                ? std::min(1.0, static_cast<double>(step) / config.warmup_steps)
                : 1.0;
        opt.step(params, config.lr * warm);

        result.losses.push_back(loss.total);
        if (step % config.log_every == 0 || step == 1) {
            json rec{{"step", step},
                     {"total", loss.total},
                     {"weighted_eps_mse", loss.weighted_eps_mse},
                     {"vlb", loss.vlb},
                     {"count_l1", loss.count_l1},
                     {"lr", config.lr * warm}};
            log << rec.dump() << "\n";
            log.flush();
        }
        if (step % config.checkpoint_every == 0 || step == config.iterations) {
            const std::string path =
                (fs::path(config.run_dir) / "checkpoints" / "ckpt_latest.bin").string();
            model.save_checkpoint(path, schedule);
            result.checkpoint_path = path;
        }
    }

    const size_t window = std::min<size_t>(100, result.losses.size());
    result.initial_loss_ma =
        std::accumulate(result.losses.begin(), result.losses.begin() + static_cast<long>(window),
                        0.0) /
        static_cast<double>(window);
    result.final_loss_ma =
        std::accumulate(result.losses.end() - static_cast<long>(window), result.losses.end(),
                        0.0) /
        static_cast<double>(window);
    return result;
}

namespace {

Denoiser load_model(const RunConfig& config, const std::string& checkpoint,
                    const NoiseSchedule& schedule) {
    Denoiser model(config.denoiser, config.seed, config.count_branch);
    model.load_checkpoint(checkpoint, schedule);
    return model;
}

InferenceParams inference_params(const RunConfig& config) {
    InferenceParams p;
    p.num_realizations = config.realizations;
    p.ddim_steps = config.ddim_steps;
    p.patch_size = config.patch_size;
    p.count_threshold = config.count_threshold;
    p.fusion = config.make_fusion();
    return p;
}

std::vector<uint64_t> realization_seeds(uint64_t base, int n) {
    std::vector<uint64_t> seeds(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r)
        seeds[static_cast<size_t>(r)] = mix_seed(base, 0x5eed0000ULL + static_cast<uint64_t>(r));
    return seeds;
}

}  // namespace

namespace {

void freeze_config(const RunConfig& config, const std::string& command) {
    fs::create_directories(config.run_dir);
    config.save((fs::path(config.run_dir) / ("config_" + command + ".json")).string());
}

}  // namespace

SampleResult cmd_sample(const RunConfig& config, const std::string& checkpoint,
                        const std::string& image_path, uint64_t sample_seed) {
    config.validate();
    freeze_config(config, "sample");
    const NoiseSchedule schedule = config.make_schedule();
    Denoiser model = load_model(config, checkpoint, schedule);
    const Image image = to_rgb(read_image(image_path));

    const InferenceParams params = inference_params(config);
    SampleResult res;
    res.prediction = predict_full(model, image, schedule, params,
                                  realization_seeds(sample_seed, config.realizations));

    const std::string stem = fs::path(image_path).stem().string();
    const fs::path run(config.run_dir);
    fs::create_directories(run / "maps");
    fs::create_directories(run / "crowdmaps");
    fs::create_directories(run / "figures");
    fs::create_directories(run / "reports");

    for (size_t r = 0; r < res.prediction.densities.size(); ++r) {
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "_r%zu", r);
        write_dmap((run / "maps" / (stem + suffix + ".dmap")).string(),
                   res.prediction.densities[r]);
        std::ofstream cm((run / "crowdmaps" / (stem + suffix + ".jsonl")).string());
        cm << annotation_line(stem, res.prediction.crowd_maps[r].points) << "\n";
    }
    std::ofstream fusedf((run / "crowdmaps" / (stem + "_fused.jsonl")).string());
    fusedf << annotation_line(stem, res.prediction.fused.points) << "\n";

    write_ppm((run / "figures" / (stem + "_density.ppm")).string(),
              density_overlay(image, res.prediction.densities[0]));
    write_ppm((run / "figures" / (stem + "_dots.ppm")).string(),
              dots_overlay(image, res.prediction.fused.points));

    json summary{{"image", image_path},
                 {"realization_counts", res.prediction.realization_counts},
                 {"fused_count", res.prediction.count},
                 {"seed", sample_seed}};
    res.summary_json = summary.dump();
    std::ofstream sf((run / "reports" / "summary.jsonl").string(), std::ios::app);
    sf << res.summary_json << "\n";
    return res;
}

EvalReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint,
                        const std::string& manifest_path, const std::string& split) {
    config.validate();
    freeze_config(config, "evaluate");
    const NoiseSchedule schedule = config.make_schedule();
    Denoiser model = load_model(config, checkpoint, schedule);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const std::vector<size_t> idx = manifest.indices_of(split);
    if (idx.empty()) throw std::runtime_error("evaluate: split '" + split + "' is empty");

    const InferenceParams params = inference_params(config);
    std::vector<SampleError> samples;
    for (size_t i : idx) {
        const PredictionResult pred =
            predict_full(model, manifest.image(i), schedule, params,
                         realization_seeds(mix_seed(config.seed, i), config.realizations));
        samples.push_back({manifest.samples[i].image_path,
                           static_cast<double>(manifest.samples[i].points.size()),
                           static_cast<double>(pred.count), 0.0});
    }
    const EvalReport report = evaluate_ids(samples);

    const fs::path run(config.run_dir);
    fs::create_directories(run / "reports");
    std::ofstream csv((run / "reports" / ("eval_" + split + ".csv")).string());
    csv << "id,truth,prediction,abs_error\n";
    std::ofstream jl((run / "reports" / ("eval_" + split + ".jsonl")).string());
    for (const SampleError& s : report.per_sample) {
        csv << s.id << "," << s.truth << "," << s.prediction << "," << s.abs_error << "\n";
        jl << json{{"id", s.id}, {"truth", s.truth}, {"prediction", s.prediction}}.dump() << "\n";
    }
    std::ofstream top((run / "reports" / ("eval_" + split + "_metrics.csv")).string());
    top << "mae,mse,n\n" << report.mae << "," << report.mse << "," << report.per_sample.size()
        << "\n";
    return report;
}

AblationTable cmd_ablate(const RunConfig& config, const std::string& checkpoint,
                         const std::string& manifest_path, const std::string& axis,
                         const std::string& split) {
    config.validate();
    freeze_config(config, "ablate");
    const NoiseSchedule schedule = config.make_schedule();
    Denoiser model = load_model(config, checkpoint, schedule);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const std::vector<size_t> idx = manifest.indices_of(split);
    if (idx.empty()) throw std::runtime_error("ablate: split '" + split + "' is empty");

    // Sample every image once; all axes reuse the same realizations.
    InferenceParams params = inference_params(config);
    params.fusion.order = FusionOrder::random;
    std::vector<PredictionResult> preds;
    std::vector<double> truths;
    for (size_t i : idx) {
        preds.push_back(predict_full(model, manifest.image(i), schedule, params,
                                     realization_seeds(mix_seed(config.seed, i),
                                                       config.realizations)));
        truths.push_back(static_cast<double>(manifest.samples[i].points.size()));
    }

    std::vector<std::pair<std::string, EvalReport>> rows;
    if (axis == "fusion-order") {
        for (const char* name : {"random", "ascend", "descend"}) {
            FusionConfig fc = config.make_fusion();
            fc.order = fusion_order_from_string(name);
            std::vector<std::pair<double, double>> pairs;
            for (size_t s = 0; s < preds.size(); ++s) {
                const CrowdMap fused = fuse(preds[s].crowd_maps, fc);
                pairs.push_back({truths[s], static_cast<double>(fused.points.size())});
            }
            rows.push_back({name, evaluate(pairs)});
        }
    } else if (axis == "counting-op") {
        std::vector<std::pair<double, double>> contour, summation;
        for (size_t s = 0; s < preds.size(); ++s) {
            contour.push_back(
                {truths[s], static_cast<double>(preds[s].crowd_maps[0].points.size())});
            summation.push_back({truths[s], sum_count(preds[s].densities[0])});
        }
        rows.push_back({"contour-detection", evaluate(contour)});
        rows.push_back({"density-summation", evaluate(summation)});
    } else if (axis == "realizations") {
        for (int r = 1; r <= config.realizations; ++r) {
            FusionConfig fc = config.make_fusion();
            std::vector<std::pair<double, double>> pairs;
            for (size_t s = 0; s < preds.size(); ++s) {
                const std::vector<CrowdMap> subset(preds[s].crowd_maps.begin(),
                                                   preds[s].crowd_maps.begin() + r);
                const CrowdMap fused = fuse(subset, fc);
                pairs.push_back({truths[s], static_cast<double>(fused.points.size())});
            }
            rows.push_back({"realizations-" + std::to_string(r), evaluate(pairs)});
        }
    } else {
        throw std::invalid_argument(
            "ablate: unknown axis '" + axis + "' (fusion-order|counting-op|realizations)");
    }

    const AblationTable table = ablation_table(rows);
    const fs::path run(config.run_dir);
    fs::create_directories(run / "reports");
    std::ofstream csv((run / "reports" / ("ablate_" + axis + ".csv")).string());
    csv << table.to_csv();
    std::ofstream txt((run / "reports" / ("ablate_" + axis + ".txt")).string());
    txt << table.to_pretty();
    return table;
}

}  // namespace crowddiff

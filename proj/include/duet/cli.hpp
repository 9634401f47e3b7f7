#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "duet/config.hpp"
#include "duet/editing.hpp"
#include "duet/metrics.hpp"
#include "duet/synth.hpp"
#include "duet/trainer.hpp"

// Command-line surface: gen-data, train, sample, edit, eval, convert,
// gradcheck, drift-demo. Every run is deterministic given its seed flag;
// diagnostics go to the error stream; exit status is 0 on success, 1 for
// usage errors, and 2 for runtime failures.

namespace duet {
namespace cli {

namespace fs = std::filesystem;

inline Skeleton resolve_skeleton(const std::string& ref, const fs::path& search_dir) {
    if (ref == "body22" || ref.empty()) return Skeleton::body22();
    if (ref == "chain5") return Skeleton::chain5();
    if (fs::exists(ref)) return load_skeleton(ref);
    const fs::path near = search_dir / ref;
    if (fs::exists(near)) return load_skeleton(near.string());
    fail_runtime("cannot resolve skeleton '" + ref + "'");
}

// config file + key=value overrides, logged in full
inline ConfigMap resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
    ConfigMap map = config_path.empty() ? ConfigMap{} : ConfigMap::from_file(config_path);
    for (const auto& kv : overrides) map.set_override(kv);
    return map;
}

inline void log_config(const TrainConfig& cfg) {
    std::cerr << "# resolved configuration\n" << train_config_to_text(cfg);
}

// ----------------------------- gen-data -----------------------------

inline int cmd_gen_data(const std::string& out_dir, int sources, int length, uint64_t seed,
                        const std::string& skeleton_name) {
    const Skeleton skel =
        skeleton_name == "chain5" ? Skeleton::chain5() : Skeleton::body22();
    const Corpus corpus = build_corpus(skel, sources, length, seed);
    fs::create_directories(fs::path(out_dir) / "clips");
    const std::string skel_file = "skeleton.txt";
    save_skeleton(skel, (fs::path(out_dir) / skel_file).string());
    Manifest manifest;
    manifest.skeleton_file = skel_file;
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        const std::string rel = "clips/clip" + std::to_string(i) + ".ihc";
        InteractionClip clip = corpus.clips[i];
        clip.skeleton_ref = skel.name;
        save_clip(clip, (fs::path(out_dir) / rel).string());
        manifest.entries.push_back(
            {rel, clip.label, split_name(corpus.split[i]), clip.text});
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.tsv").string());
    std::cerr << "wrote " << corpus.clips.size() << " clips under " << out_dir << "\n";
    return 0;
}

// ----------------------------- dataset loading -----------------------------

struct LoadedDataset {
    Corpus corpus;

    std::vector<const InteractionClip*> split(int which) const {
        std::vector<const InteractionClip*> out;
        for (size_t i = 0; i < corpus.clips.size(); ++i)
            if (corpus.split[i] == which) out.push_back(&corpus.clips[i]);
        return out;
    }
};

inline LoadedDataset load_dataset(const std::string& data_dir) {
    const fs::path root(data_dir);
    const Manifest manifest = load_manifest((root / "manifest.tsv").string());
    LoadedDataset ds;
    ds.corpus.skeleton = resolve_skeleton(manifest.skeleton_file, root);
    int source = 0;
    for (const auto& e : manifest.entries) {
        InteractionClip clip = load_clip((root / e.file).string());
        check(clip.label == e.label, "dataset: label mismatch for " + e.file);
        ds.corpus.clips.push_back(std::move(clip));
        const int split = e.split == "train" ? 0 : e.split == "val" ? 1 : 2;
        ds.corpus.split.push_back(split);
        ds.corpus.source_id.push_back(source++);
    }
    check(!ds.corpus.clips.empty(), "dataset: empty manifest in " + data_dir);
    return ds;
}

// ----------------------------- train -----------------------------

inline int cmd_train(const std::string& data_dir, const std::string& out_dir,
                     const std::string& config_path, const std::vector<std::string>& overrides,
                     const std::string& resume_path) {
    ConfigMap map = resolve_config(config_path, overrides);
    TrainConfig defaults;
    defaults.model.n_joints = 22;
    TrainConfig cfg = train_config_from(map, defaults);
    map.reject_unknown();

    const LoadedDataset ds = load_dataset(data_dir);
    cfg.model.n_joints = ds.corpus.skeleton.n_joints;
    log_config(cfg);

    fs::create_directories(out_dir);
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path);
    const FitResult result = fit(ds.corpus, cfg, (fs::path(out_dir) / "train_log.tsv").string(),
                                 1, resume ? &*resume : nullptr);
    save_checkpoint(result.best, (fs::path(out_dir) / "best.dck").string());
    save_checkpoint(result.final, (fs::path(out_dir) / "final.dck").string());
    std::cerr << "baseline val " << result.baseline_val << ", best val " << result.best_val
              << ", final val " << result.final_val << "\n";
    std::cout << "best.dck final.dck written to " << out_dir << "\n";
    return 0;
}

// ----------------------------- sample -----------------------------

inline int cmd_sample(const std::string& weights_path, const std::string& label,
                      const std::string& out_path, int steps, float guidance, uint64_t seed,
                      int length) {
    const Checkpoint ck = load_checkpoint(weights_path);
    const Denoiser den(weights_from_checkpoint(ck));
    const NoiseSchedule sched = cosine_schedule(ck.config.T);
    SamplerConfig cfg;
    cfg.num_steps = steps;
    cfg.guidance_scale = guidance;
    std::optional<int> label_id;
    std::string text = "unconditional";
    if (!label.empty() && label != "none") {
        label_id = family_id(label);
        text = condition_text(*label_id, GenParams{});
    }
    const InteractionClip clip =
        sample_clip(den.as_denoise_fn(), label_id, label.empty() ? "none" : label, text,
                    length, seed, cfg, sched, ck.stats, ck.config.n_joints,
                    ck.config.n_joints == 5 ? "chain5" : "body22");
    save_clip(clip, out_path);
    std::cerr << "sampled " << length << " frames -> " << out_path << "\n";
    return 0;
}

// ----------------------------- edit -----------------------------

inline int cmd_edit(const std::string& weights_path, const std::string& mask_path,
                    const std::string& out_path, const std::string& label, int steps,
                    float guidance, uint64_t seed) {
    const Checkpoint ck = load_checkpoint(weights_path);
    const Denoiser den(weights_from_checkpoint(ck));
    const NoiseSchedule sched = cosine_schedule(ck.config.T);
    SamplerConfig cfg;
    cfg.num_steps = steps;
    cfg.guidance_scale = guidance;

    const MaskSpec spec = parse_mask_spec(read_text_file(mask_path));
    const fs::path base = fs::path(mask_path).parent_path();
    auto resolve = [&](const std::string& p) {
        return fs::exists(p) ? p : (base / p).string();
    };
    const InteractionClip reference = load_clip(resolve(spec.reference));
    std::optional<Trajectory> ta, tb;
    if (spec.traj_a) ta = parse_trajectory(read_text_file(resolve(*spec.traj_a)));
    if (spec.traj_b) tb = parse_trajectory(read_text_file(resolve(*spec.traj_b)));
    const auto [mask, known] = build_mask(spec, reference, ta, tb);

    std::optional<int> label_id;
    if (!label.empty() && label != "none") label_id = family_id(label);
    const InteractionClip out =
        masked_sample(den.as_denoise_fn(), label_id, mask, known, cfg, sched, ck.stats, seed);
    save_clip(out, out_path);
    std::cerr << "edited clip (" << mask.count() << " frozen entries) -> " << out_path << "\n";
    return 0;
}

// ----------------------------- eval -----------------------------

inline int cmd_eval(const std::string& weights_path, const std::string& data_dir,
                    const std::string& out_path, uint64_t seed, int n_samples,
                    int emb_epochs, int steps, float guidance) {
    const Checkpoint ck = load_checkpoint(weights_path);
    const Denoiser den(weights_from_checkpoint(ck));
    const NoiseSchedule sched = cosine_schedule(ck.config.T);
    SamplerConfig scfg;
    scfg.num_steps = steps;
    scfg.guidance_scale = guidance;

    const LoadedDataset ds = load_dataset(data_dir);
    const auto train_clips = ds.split(0);
    const auto test_clips = ds.split(2);
    check(!test_clips.empty(), "eval: empty test split");

    std::cerr << "training embedders on " << train_clips.size() << " clips...\n";
    EmbedderConfig ecfg;
    ecfg.n_joints = ds.corpus.skeleton.n_joints;
    EmbedderTrainConfig etc;
    etc.epochs = emb_epochs;
    etc.lr = 2e-3f;
    etc.seed = seed ^ 0xE3Bull;
    const EmbedderPair emb = train_embedders(train_clips, ck.stats, ecfg, etc);
    std::cerr << "label retrieval on the test split: "
              << label_retrieval_accuracy(emb, test_clips) << "\n";

    const int n_gen = std::min<int>(n_samples, int(test_clips.size()));
    std::cerr << "sampling " << n_gen << " conditioned clips...\n";
    std::vector<InteractionClip> generated;
    for (int i = 0; i < n_gen; ++i) {
        const InteractionClip* ref = test_clips[size_t(i)];
        generated.push_back(sample_clip(den.as_denoise_fn(), family_id(ref->label),
                                        ref->label, ref->text, ref->length, seed + uint64_t(i),
                                        scfg, sched, ck.stats, ck.config.n_joints,
                                        ref->skeleton_ref));
    }
    std::vector<const InteractionClip*> gen_ptrs;
    for (const auto& c : generated) gen_ptrs.push_back(&c);

    std::cerr << "sampling for the per-condition spread...\n";
    auto sampler = [&](int label, uint64_t s) {
        return sample_clip(den.as_denoise_fn(), label, family_name(label), "", 32, s, scfg,
                           sched, ck.stats, ck.config.n_joints, "body22");
    };
    std::vector<int> conditions;
    for (int f = 0; f < ck.config.n_labels; ++f) conditions.push_back(f);
    const double mm = mmodality(sampler, emb, conditions, 20, seed ^ 0x33Dull);

    const MetricsReport report =
        evaluate_generation(emb, test_clips, gen_ptrs, mm, 20, 32, seed);
    const std::string text = report_to_text(report);
    std::cout << text;
    if (!out_path.empty()) write_text_file(out_path, text);
    return 0;
}

// ----------------------------- convert -----------------------------

inline int cmd_convert(const std::string& in_path, const std::string& out_path,
                       const std::string& to, const std::string& skeleton_override) {
    if (to == "canonical") {
        const InteractionClip clip = load_clip(in_path);
        const Skeleton skel = resolve_skeleton(
            skeleton_override.empty() ? clip.skeleton_ref : skeleton_override,
            fs::path(in_path).parent_path());
        CanonicalClipFile out;
        out.fps = clip.fps;
        out.label = clip.label;
        out.text = clip.text;
        out.skeleton_ref = clip.skeleton_ref;
        out.person_a = encode_canonical_stream(clip, 0, skel);
        out.person_b = encode_canonical_stream(clip, 1, skel);
        out.init_a = initial_pose(clip, 0, skel);
        out.init_b = initial_pose(clip, 1, skel);
        save_canonical_clip(out, out_path);
    } else if (to == "noncanonical") {
        const CanonicalClipFile in = load_canonical_clip(in_path);
        InteractionClip clip;
        clip.n_joints = in.person_a.n_joints;
        clip.fps = in.fps;
        clip.length = in.person_a.length;
        clip.label = in.label;
        clip.text = in.text;
        clip.skeleton_ref = in.skeleton_ref;
        clip.person_a = canonical_to_noncanonical(in.person_a, in.init_a);
        clip.person_b = canonical_to_noncanonical(in.person_b, in.init_b);
        save_clip(clip, out_path);
    } else {
        fail("convert: --to must be canonical or noncanonical, got '" + to + "'");
    }
    std::cerr << "converted " << in_path << " -> " << out_path << " (" << to << ")\n";
    return 0;
}

// ----------------------------- gradcheck -----------------------------

inline int cmd_gradcheck(uint64_t seed, double tolerance) {
    const Skeleton skel = Skeleton::chain5();
    const InteractionClip tc = generate(kFamilyPushPull, GenParams{}, seed, 32, skel);
    const int L = 8;
    const NonCanonicalLayout lay{skel.n_joints};
    auto window = [&](const std::vector<float>& stream) {
        std::vector<float> w(stream.begin(), stream.begin() + size_t(L) * lay.dim());
        return Tensor::from({L, lay.dim()}, w);
    };
    const StatePair target{window(tc.person_a), window(tc.person_b)};
    Rng rng(seed);
    const StatePair pred{add(target.a, Tensor::randn(target.a.shape(), rng, 0.05f)),
                         add(target.b, Tensor::randn(target.b.shape(), rng, 0.05f))};
    NormStats stats;
    stats.mean.assign(size_t(lay.dim()), 0.0f);
    stats.std.assign(size_t(lay.dim()), 1.0f);

    const Tensor stacked = concat_rows({pred.a, pred.b});
    auto split = [&](const Tensor& x) {
        return StatePair{slice_rows(x, 0, L), slice_rows(x, L, L)};
    };
    struct Row {
        std::string name;
        double err;
    };
    std::vector<Row> rows;
    auto run = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& fn) {
        rows.push_back({name, finite_difference_check(fn, stacked, 1e-3)});
    };
    run("simple", [&](const Tensor& x) { return loss_simple(split(x), target); });
    run("velocity", [&](const Tensor& x) { return loss_geometric(split(x), target, skel).vel; });
    run("foot_contact",
        [&](const Tensor& x) { return loss_geometric(split(x), target, skel).foot; });
    run("bone_length", [&](const Tensor& x) { return loss_bone_length(split(x), target, skel); });
    run("distance_map",
        [&](const Tensor& x) { return loss_distance_map(split(x), target, skel, 1.0f); });
    run("relative_orientation",
        [&](const Tensor& x) { return loss_relative_orientation(split(x), target, skel); });
    run("total_gated", [&](const Tensor& x) {
        return loss_total(split(x), target, 100, LossWeights{}, 1000, stats, skel).total;
    });

    // end-to-end denoiser, gradient with respect to its input
    DenoiserConfig dcfg;
    dcfg.n_joints = skel.n_joints;
    dcfg.d_model = 16;
    dcfg.n_blocks = 1;
    dcfg.n_heads = 2;
    const Denoiser den = Denoiser::init(dcfg, seed + 1);
    const Tensor other = Tensor::randn({L, lay.dim()}, rng);
    run("denoiser_input", [&](const Tensor& x) {
        const auto [a, b] = den.denoise(slice_rows(x, 0, L), other, 350, 1);
        return add(mean_all(square(a)), mean_all(square(b)));
    });

    bool ok = true;
    std::cout << "check\tmax_rel_error\tstatus\n";
    for (const auto& r : rows) {
        const bool pass = r.err < tolerance;
        ok = ok && pass;
        std::cout << r.name << "\t" << r.err << "\t" << (pass ? "ok" : "FAIL") << "\n";
    }
    if (!ok) fail_runtime("gradcheck: at least one check exceeded the tolerance");
    return 0;
}

// ----------------------------- drift-demo -----------------------------

inline int cmd_drift_demo(float noise, int trials, uint64_t seed) {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = straight_walk_clip(skel, 300, 0.04f);
    const std::vector<int> horizons = {30, 100, 300};
    const DriftResult res = measure_drift(clip, skel, noise, horizons, trials, seed);
    std::cout << "horizon\tcanonical_rms\tworld_frame_rms\n";
    for (size_t h = 0; h < horizons.size(); ++h)
        std::cout << horizons[h] << "\t" << res.canonical_rms[h] << "\t"
                  << res.noncanonical_rms[h] << "\n";
    std::cout << "canonical_growth_fraction\t" << res.canonical_growth_fraction << "\n";
    return 0;
}

// ----------------------------- dispatch -----------------------------

inline int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"two-person interaction motion diffusion toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    std::string gen_out = "data";
    int gen_sources = 125, gen_length = 32;
    uint64_t gen_seed = 0;
    std::string gen_skel = "body22";
    gen->add_option("--out", gen_out, "output dataset directory");
    gen->add_option("--sources", gen_sources, "source clips before augmentation");
    gen->add_option("--length", gen_length, "frames per clip");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--skeleton", gen_skel, "body22 or chain5");

    // train
    auto* train = app.add_subcommand("train", "train the denoiser");
    std::string train_data = "data", train_out = "runs/run0", train_config, train_resume;
    std::vector<std::string> train_overrides;
    train->add_option("--data", train_data, "dataset directory (manifest.tsv)");
    train->add_option("--out", train_out, "output directory for checkpoints and logs");
    train->add_option("--config", train_config, "key = value configuration file");
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    train->add_option("overrides", train_overrides, "key=value configuration overrides");

    // sample
    auto* sample = app.add_subcommand("sample", "sample a clip from a trained model");
    std::string s_weights, s_label = "circle", s_out = "sample.ihc";
    int s_steps = 50, s_length = 32;
    float s_guidance = 3.5f;
    uint64_t s_seed = 0;
    sample->add_option("--weights", s_weights, "checkpoint file")->required();
    sample->add_option("--label", s_label, "condition label (or 'none')");
    sample->add_option("--out", s_out, "output clip path");
    sample->add_option("--steps", s_steps, "reverse steps");
    sample->add_option("--guidance", s_guidance, "guidance scale");
    sample->add_option("--seed", s_seed, "sampling seed");
    sample->add_option("--length", s_length, "frames to generate");

    // edit
    auto* edit = app.add_subcommand("edit", "masked sampling against a reference clip");
    std::string e_weights, e_mask, e_out = "edited.ihc", e_label = "none";
    int e_steps = 50;
    float e_guidance = 3.5f;
    uint64_t e_seed = 0;
    edit->add_option("--weights", e_weights, "checkpoint file")->required();
    edit->add_option("--mask", e_mask, "mask specification file")->required();
    edit->add_option("--out", e_out, "output clip path");
    edit->add_option("--label", e_label, "condition label (or 'none')");
    edit->add_option("--steps", e_steps, "reverse steps");
    edit->add_option("--guidance", e_guidance, "guidance scale");
    edit->add_option("--seed", e_seed, "sampling seed");

    // eval
    auto* eval = app.add_subcommand("eval", "generation metrics against the test split");
    std::string v_weights, v_data = "data", v_out;
    uint64_t v_seed = 0;
    int v_samples = 64, v_emb_epochs = 60, v_steps = 50;
    float v_guidance = 3.5f;
    eval->add_option("--weights", v_weights, "checkpoint file")->required();
    eval->add_option("--data", v_data, "dataset directory");
    eval->add_option("--out", v_out, "report output path");
    eval->add_option("--seed", v_seed, "evaluation seed");
    eval->add_option("--samples", v_samples, "generated clips for the metrics");
    eval->add_option("--emb-epochs", v_emb_epochs, "embedder training epochs");
    eval->add_option("--steps", v_steps, "reverse steps");
    eval->add_option("--guidance", v_guidance, "guidance scale");

    // convert
    auto* convert = app.add_subcommand("convert", "convert between the two representations");
    std::string c_in, c_out, c_to = "canonical", c_skel;
    convert->add_option("--in", c_in, "input clip")->required();
    convert->add_option("--out", c_out, "output clip")->required();
    convert->add_option("--to", c_to, "canonical or noncanonical");
    convert->add_option("--skeleton", c_skel, "skeleton override (name or file)");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference checks for every loss");
    uint64_t g_seed = 7;
    double g_tol = 1e-3;
    grad->add_option("--seed", g_seed, "data seed");
    grad->add_option("--tolerance", g_tol, "max relative error");

    // drift-demo
    auto* drift = app.add_subcommand("drift-demo", "velocity-integration drift comparison");
    float d_noise = 0.001f;
    int d_trials = 1000;
    uint64_t d_seed = 9;
    drift->add_option("--noise", d_noise, "velocity noise level");
    drift->add_option("--trials", d_trials, "Monte Carlo trials");
    drift->add_option("--seed", d_seed, "noise seed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_sources, gen_length, gen_seed, gen_skel);
        if (train->parsed())
            return cmd_train(train_data, train_out, train_config, train_overrides,
                             train_resume);
        if (sample->parsed())
            return cmd_sample(s_weights, s_label, s_out, s_steps, s_guidance, s_seed, s_length);
        if (edit->parsed())
            return cmd_edit(e_weights, e_mask, e_out, e_label, e_steps, e_guidance, e_seed);
        if (eval->parsed())
            return cmd_eval(v_weights, v_data, v_out, v_seed, v_samples, v_emb_epochs, v_steps,
                            v_guidance);
        if (convert->parsed()) return cmd_convert(c_in, c_out, c_to, c_skel);
        if (grad->parsed()) return cmd_gradcheck(g_seed, g_tol);
        if (drift->parsed()) return cmd_drift_demo(d_noise, d_trials, d_seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << "usage error: no subcommand\n";
    return 1;
}

}  // namespace cli
}  // namespace duet

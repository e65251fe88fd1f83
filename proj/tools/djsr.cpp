// Command-line front end: dataset construction, training, evaluation, and
// single-image inference. Every run prints its fully resolved configuration
// to stderr; on failure, files newly created by the run are removed.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "djsr/baseline.hpp"
#include "djsr/dataset.hpp"
#include "djsr/image_io.hpp"
#include "djsr/inference.hpp"
#include "djsr/metrics.hpp"
#include "djsr/synthetic.hpp"
#include "djsr/training.hpp"

namespace fs = std::filesystem;
using namespace djsr;

namespace {

std::set<fs::path> snapshot(const fs::path& dir) {
    std::set<fs::path> files;
    if (fs::is_directory(dir))
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files.insert(e.path());
    return files;
}

void remove_new_files(const fs::path& dir, const std::set<fs::path>& before) {
    if (!fs::is_directory(dir)) return;
    for (const auto& e : snapshot(dir))
        if (!before.count(e)) fs::remove(e);
}

void log_config(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cerr << "config: command=" << cmd;
    for (const auto& [k, v] : kv) std::cerr << " " << k << "=" << v;
    std::cerr << "\n";
}

ModelConfig preset_by_name(const std::string& name) {
    if (name == "desk") return ModelConfig::desk_preset();
    if (name == "paper") return ModelConfig::paper_preset();
    throw ArgumentError("unknown preset '" + name + "' (expected desk or paper)");
}

// Runs fn; on any failure removes files the run created under cleanup_dir.
int guarded(const fs::path& cleanup_dir, const std::function<void()>& fn) {
    std::set<fs::path> before = snapshot(cleanup_dir);
    try {
        fn();
        return 0;
    } catch (const TrainingAborted& e) {
        std::cerr << "error: training aborted at step " << e.step() << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    }
    remove_new_files(cleanup_dir, before);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint demosaicing and super-resolution toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key = value config file; flags override");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // ---- dataset ----
    CLI::App* dataset_cmd = app.add_subcommand("dataset", "dataset construction");
    dataset_cmd->require_subcommand(1);

    std::string in_dir, out_dir, cfa_name = "rggb";
    double step = 1.25;
    int r_factor = 2;
    CLI::App* build_cmd =
        dataset_cmd->add_subcommand("build", "build GT/Bayer pairs from a directory of images");
    build_cmd->add_option("--input-dir", in_dir, "directory of source PNG images")->required();
    build_cmd->add_option("--output-dir", out_dir, "output directory")->required();
    build_cmd->add_option("--step", step, "progressive downsizing factor")
        ->capture_default_str();
    build_cmd->add_option("--cfa", cfa_name, "CFA preset: rggb | xtrans")->capture_default_str();
    build_cmd->add_option("--r", r_factor, "super-resolution factor")->capture_default_str();

    int synth_count = 200;
    int64_t synth_size = 512;
    uint64_t synth_seed = 1;
    std::string synth_dir;
    CLI::App* synth_cmd =
        dataset_cmd->add_subcommand("synth", "generate a synthetic source-image corpus");
    synth_cmd->add_option("--output-dir", synth_dir, "output directory")->required();
    synth_cmd->add_option("--count", synth_count, "number of images")->capture_default_str();
    synth_cmd->add_option("--size", synth_size, "square image side")->capture_default_str();
    synth_cmd->add_option("--seed", synth_seed, "generator seed")->capture_default_str();

    // ---- train ----
    std::string manifest_path, train_out, preset = "desk", resume_path;
    TrainConfig tcfg;
    CLI::App* train_cmd = app.add_subcommand("train", "train the joint model");
    train_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--preset", preset, "model preset: desk | paper")
        ->capture_default_str();
    train_cmd->add_option("--steps", tcfg.max_steps, "mini-batch updates")->capture_default_str();
    train_cmd->add_option("--seed", tcfg.seed, "training seed")->capture_default_str();
    train_cmd->add_option("--batch", tcfg.batch, "mini-batch size")->capture_default_str();
    train_cmd->add_option("--lr0", tcfg.lr0, "initial learning rate")->capture_default_str();
    train_cmd->add_option("--patch", tcfg.patch, "Bayer patch side")->capture_default_str();
    train_cmd->add_option("--val-every", tcfg.val_every, "validation cadence")
        ->capture_default_str();
    train_cmd->add_option("--checkpoint-every", tcfg.checkpoint_every, "checkpoint cadence")
        ->capture_default_str();
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    // ---- eval ----
    std::string eval_ckpt, eval_manifest, eval_out, baseline_name;
    int tile = 128;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (PSNR/SSIM)");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--baseline", baseline_name,
                         "also score a sequential pipeline: bilinear-bicubic");
    eval_cmd->add_option("--out", eval_out, "CSV path (default: stdout)");
    eval_cmd->add_option("--tile", tile, "inference tile size in Bayer pixels")
        ->capture_default_str();

    // ---- infer ----
    std::string infer_ckpt, infer_in, infer_out;
    int infer_tile = 128, bits = 8;
    CLI::App* infer_cmd = app.add_subcommand("infer", "super-resolve one Bayer frame");
    infer_cmd->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer_cmd->add_option("--input", infer_in, "input Bayer PGM")->required();
    infer_cmd->add_option("--output", infer_out, "output PNG")->required();
    infer_cmd->add_option("--tile", infer_tile, "tile size in Bayer pixels")
        ->capture_default_str();
    infer_cmd->add_option("--bits", bits, "output bit depth: 8 | 16")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    if (build_cmd->parsed()) {
        log_config("dataset build", {{"input-dir", in_dir},
                                     {"output-dir", out_dir},
                                     {"step", std::to_string(step)},
                                     {"cfa", cfa_name},
                                     {"r", std::to_string(r_factor)}});
        return guarded(out_dir, [&] {
            BuildResult res = build_dataset(in_dir, out_dir, step, r_factor,
                                            cfa_by_name(cfa_name), cfa_name);
            for (const std::string& f : res.failed) std::cerr << "skipped: " << f << "\n";
            std::cout << "built " << res.built << " pairs; manifest at "
                      << res.manifest_path.string() << "\n";
        });
    }

    if (synth_cmd->parsed()) {
        log_config("dataset synth", {{"output-dir", synth_dir},
                                     {"count", std::to_string(synth_count)},
                                     {"size", std::to_string(synth_size)},
                                     {"seed", std::to_string(synth_seed)}});
        return guarded(synth_dir, [&] {
            fs::create_directories(synth_dir);
            for (int i = 0; i < synth_count; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "synth_%04d.png", i);
                write_png((fs::path(synth_dir) / name).string(),
                          synthetic_corpus_image(i, synth_size, synth_size, synth_seed), 16);
            }
            std::cout << "wrote " << synth_count << " images to " << synth_dir << "\n";
        });
    }

    if (train_cmd->parsed()) {
        log_config("train", {{"manifest", manifest_path},
                             {"out", train_out},
                             {"preset", preset},
                             {"steps", std::to_string(tcfg.max_steps)},
                             {"seed", std::to_string(tcfg.seed)},
                             {"batch", std::to_string(tcfg.batch)},
                             {"lr0", std::to_string(tcfg.lr0)},
                             {"patch", std::to_string(tcfg.patch)},
                             {"resume", resume_path.empty() ? "-" : resume_path}});
        return guarded(train_out, [&] {
            ModelConfig mcfg = preset_by_name(preset);
            auto pairs = load_pairs(manifest_path);
            std::optional<Checkpoint> resume;
            if (!resume_path.empty()) resume = load_checkpoint(resume_path);
            TrainResult res = train(mcfg, tcfg, pairs, train_out,
                                    resume ? &*resume : nullptr);
            std::cout << "trained to step " << res.checkpoint.step << "; checkpoint at "
                      << res.checkpoint_path.string() << "\n";
        });
    }

    if (eval_cmd->parsed()) {
        log_config("eval", {{"checkpoint", eval_ckpt},
                            {"manifest", eval_manifest},
                            {"baseline", baseline_name.empty() ? "-" : baseline_name},
                            {"out", eval_out.empty() ? "-" : eval_out},
                            {"tile", std::to_string(tile)}});
        fs::path cleanup = eval_out.empty() ? fs::path() : fs::path(eval_out).parent_path();
        return guarded(cleanup, [&] {
            if (!baseline_name.empty() && baseline_name != "bilinear-bicubic")
                throw ArgumentError("unknown baseline '" + baseline_name + "'");
            Checkpoint ckpt = load_checkpoint(eval_ckpt);
            auto pairs = load_pairs(eval_manifest);
            MetricReport report = evaluate(ckpt.params, ckpt.model, pairs, tile);
            std::optional<MetricReport> base;
            if (!baseline_name.empty()) {
                SequentialPipeline pipe;
                pipe.scale = ckpt.model.upscale;
                base = evaluate_with(
                    [&](const Image& bayer) { return run_sequential(bayer, pipe); }, pairs);
            }
            if (eval_out.empty()) {
                write_report_csv(std::cout, report, base ? &*base : nullptr);
            } else {
                std::ofstream out(eval_out);
                if (!out) throw IoError("cannot write " + eval_out);
                write_report_csv(out, report, base ? &*base : nullptr);
            }
        });
    }

    if (infer_cmd->parsed()) {
        log_config("infer", {{"checkpoint", infer_ckpt},
                             {"input", infer_in},
                             {"output", infer_out},
                             {"tile", std::to_string(infer_tile)},
                             {"bits", std::to_string(bits)}});
        return guarded(fs::path(infer_out).parent_path(), [&] {
            Checkpoint ckpt = load_checkpoint(infer_ckpt);
            Image bayer = read_pgm(infer_in);
            Image sr = infer_image(ckpt.params, ckpt.model, bayer, infer_tile);
            write_png(infer_out, sr, bits);
            std::cout << "wrote " << infer_out << " (" << sr.width << "x" << sr.height << ")\n";
        });
    }

    return 0;
}

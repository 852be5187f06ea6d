// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

// Batch command-line interface: one subcommand per pipeline stage.

#include "perfield/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace perfield;
using perfield::cli::JobConfig;

void add_common(CLI::App *sub, JobConfig &job, bool needs_manifest) {
    auto *m = sub->add_option("--manifest", job.manifest, "Scene manifest (JSON)");
    if (needs_manifest) m->required();
    sub->add_option("--out", job.out, "Output directory")->required();
    sub->add_option("--seed", job.seed, "Random seed");
    sub->add_option("--workers", job.workers, "Worker threads");
}

int run(int argc, char **argv) {
    CLI::App app{"PerField: sparse-voxel radiance fields and dataset pipeline"};
    app.require_subcommand(1);
    JobConfig job;

    auto *ingest = app.add_subcommand("ingest", "Blur filter, frame selection and test split");
    add_common(ingest, job, true);
    ingest->add_option("--blur-threshold", job.blur_threshold, "Variance-of-Laplacian cutoff");
    ingest->add_option("--max-frames", job.max_frames, "Frames kept at most");

    auto *train = app.add_subcommand("train", "Train a scene and write scene.prfx plus metrics.csv");
    add_common(train, job, true);
    train->add_option("--profile", job.profile, "object | indoor | synthetic")
        ->check(CLI::IsMember({"object", "indoor", "synthetic"}));
    train->add_option("--steps", job.steps, "Total optimisation steps (schedule scales with it)");
    train->add_option("--resolution", job.resolution, "Initial grid resolution per axis");
    train->add_option("--prune-threshold", job.prune_threshold, "Density below which voxels are pruned");

    std::filesystem::path scene_path;
    auto *render = app.add_subcommand("render", "Render a stored scene at the manifest's test views");
    add_common(render, job, true);
    render->add_option("--scene", scene_path, "Scene file (.prfx)")->required()->check(CLI::ExistingFile);

    std::vector<std::filesystem::path> pred, gt, metric_files;
    auto *eval = app.add_subcommand("eval", "PSNR/SSIM of image pairs and the PSNR threshold histogram");
    eval->add_option("--pred", pred, "Predicted image (repeatable)");
    eval->add_option("--gt", gt, "Ground-truth image (repeatable, paired with --pred)");
    eval->add_option("--metrics", metric_files, "metrics.csv files to include in the histogram");
    eval->add_option("--out", job.out, "Output directory for eval.csv");

    std::size_t n_poses = 50;
    auto *poses = app.add_subcommand("pose-sample", "Sample interpolated poses between close training cameras");
    add_common(poses, job, true);
    poses->add_option("--n", n_poses, "Number of poses");

    std::filesystem::path scene_b;
    auto *augbg = app.add_subcommand("augment-bg", "Render scene A with scene B's background substituted");
    add_common(augbg, job, true);
    augbg->add_option("--scene", scene_path, "Scene A (.prfx)")->required()->check(CLI::ExistingFile);
    augbg->add_option("--other", scene_b, "Scene B (.prfx)")->required()->check(CLI::ExistingFile);
    augbg->add_option("--bg-prob", job.bg_prob, "Substitution probability");

    auto *info = app.add_subcommand("info", "Storage summary of a scene file");
    info->add_option("--scene", scene_path, "Scene file (.prfx)")->required();

    int synth_size = 64;
    auto *synth = app.add_subcommand("synth", "Write the analytic colored-cube scene");
    synth->add_option("--out", job.out, "Output directory")->required();
    synth->add_option("--size", synth_size, "Image size in pixels")->check(CLI::Range(8, 4096));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? cli::kExitOk : cli::kExitUsage;
    }

    if (*ingest) {
        const SceneManifest m = cli::cmd_ingest(job);
        std::cout << m.scene_id << ": " << m.frames.size() << " frames, " << m.count(Split::kTest) << " test\n";
    } else if (*train) {
        const auto r = cli::cmd_train(job);
        std::cout << metrics_csv({r.metrics});
    } else if (*render) {
        for (const auto &p : cli::cmd_render(scene_path, job)) std::cout << p.string() << '\n';
    } else if (*eval) {
        const auto [rows, h] = cli::cmd_eval(pred, gt, metric_files, job.out);
        for (const auto &r : rows)
            std::cout << r.name << " psnr " << format_metric(r.psnr) << " ssim " << format_metric(r.ssim) << '\n';
        std::cout << "scenes " << h.total << "  psnr>15 " << h.above15 << "  psnr>20 " << h.above20 << "  psnr>25 "
                  << h.above25 << '\n';
    } else if (*poses) {
        cli::cmd_pose_sample(job, n_poses);
        std::cout << n_poses << " poses written to " << (job.out / cli::kPosesOut).string() << '\n';
    } else if (*augbg) {
        const std::size_t swaps = cli::cmd_augment_bg(scene_path, scene_b, job);
        std::cout << swaps << " views substituted\n";
    } else if (*info) {
        std::cout << cli::cmd_info(scene_path);
    } else if (*synth) {
        const SceneManifest m = cli::cmd_synth(job, synth_size);
        std::cout << (job.out / cli::kManifestOut).string() << ": " << m.frames.size() << " frames\n";
    }
    return cli::kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    try {
        return run(argc, argv);
    } catch (const perfield::InvalidArgument &e) {
        std::cerr << "error: " << e.what() << '\n';
        return perfield::cli::kExitUsage;
    } catch (const perfield::DefectiveScene &e) {
        std::cerr << "defective scene: " << e.what() << '\n';
        return perfield::cli::kExitDefective;
    } catch (const perfield::IoError &e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return perfield::cli::kExitIo;
    } catch (const perfield::FormatError &e) {
        std::cerr << "bad scene file: " << e.what() << '\n';
        return perfield::cli::kExitIo;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return perfield::cli::kExitRuntime;
    }
}

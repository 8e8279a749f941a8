#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crownseg/binary_io.hpp"
#include "crownseg/distance_targets.hpp"
#include "crownseg/error.hpp"
#include "crownseg/inference.hpp"
#include "crownseg/metrics.hpp"
#include "crownseg/network.hpp"
#include "crownseg/raster_io.hpp"
#include "crownseg/render.hpp"
#include "crownseg/run_config.hpp"
#include "crownseg/synthdata.hpp"
#include "crownseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace crownseg;

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "key = value configuration file");
    cmd->add_option("--set", o.overrides, "override one key, e.g. --set train.epochs=4");
    cmd->add_option("--seed", o.seed, "seed for every random decision");
}

RunConfig load_config(const CommonOptions& o) {
    RunConfig cfg;
    if (!o.config.empty()) cfg.merge_file(o.config);
    for (const auto& a : o.overrides) cfg.merge_assignment(a);
    if (!o.seed.empty()) cfg.set("seed", o.seed);
    return cfg;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::vector<char>(text.begin(), text.end()));
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string crowns_csv(const Scene& s) {
    std::string out = "id,class,cx,cy,semi_a,semi_b,angle,labeled\n";
    for (const auto& c : s.crowns)
        out += std::to_string(c.id) + "," + std::to_string(c.cls) + "," + format_real(c.cx) + "," +
               format_real(c.cy) + "," + format_real(c.semi_a) + "," + format_real(c.semi_b) + "," +
               format_real(c.angle) + "," + (c.labeled ? "1" : "0") + "\n";
    return out;
}

int cmd_synth(const CommonOptions& common, const std::string& out) {
    const auto cfg = load_config(common);
    const auto scene_cfg = cfg.scene();
    const auto scene = generate_scene(scene_cfg);
    ensure_dir(out);
    const auto train_itc = scene.itc_for(scene.train_itcs);
    write_hsc(join(out, "image.hsc"), scene.raster);
    write_lbl(join(out, "truth.lbl"), scene.full_truth);
    write_lbl(join(out, "labels.lbl"), scene.sparse_labels);
    write_lbl(join(out, "test_labels.lbl"), scene.labels_for(scene.test_itcs));
    write_itc(join(out, "itc.itc"), scene.itc);
    write_itc(join(out, "train_itc.itc"), train_itc);
    write_dst(join(out, "distance.dst"), make_distance_target(train_itc, cfg.targets()));
    write_text(join(out, "crowns.csv"), crowns_csv(scene));
    write_text(join(out, "config.txt"), cfg.echo());
    std::printf("scene %zux%zux%zu, %zu crowns (%zu labeled, %zu test) -> %s\n", scene.raster.width,
                scene.raster.height, scene.raster.bands, scene.crowns.size(), scene.train_itcs.size(),
                scene.test_itcs.size(), out.c_str());
    return 0;
}

int cmd_targets(const std::string& itc_path, double sigma, int radius, const std::string& out) {
    const auto itc = read_itc(itc_path);
    write_dst(out, make_distance_target(itc, {sigma, radius}));
    std::printf("distance target %zux%zu -> %s\n", itc.width, itc.height, out.c_str());
    return 0;
}

int cmd_train(const CommonOptions& common, const std::string& scene_dir, const std::string& mode,
              const std::string& distance_path, const std::string& out) {
    auto cfg = load_config(common);
    if (!mode.empty()) cfg.set("model.mode", mode);
    const auto model_cfg = cfg.model();
    const auto train_cfg = cfg.train();
    const auto sampler_cfg = cfg.sampler();

    TrainingRasters data;
    data.image = read_hsc(join(scene_dir, "image.hsc"));
    data.labels = read_lbl(join(scene_dir, "labels.lbl"));
    data.itc = read_itc(join(scene_dir, "train_itc.itc"));
    data.distance = distance_path.empty() ? make_distance_target(data.itc, cfg.targets()) : read_dst(distance_path);
    data.classes = model_cfg.classes;

    auto result = train_realization(model_cfg, train_cfg, sampler_cfg, data, train_cfg.seed,
                                    [](const EpochRecord& e) {
                                        std::fprintf(stderr, "epoch %zu lr=%.6g loss=%.6g val_macro_f1=%.6g\n",
                                                     e.epoch, e.lr, e.train_loss, e.val_macro_f1);
                                    });
    result.report.config_echo = cfg.echo();
    const auto test_path = join(scene_dir, "test_labels.lbl");
    if (fs::exists(test_path)) {
        EvaluationSet eval{data.image, read_lbl(test_path), cfg.predict_tile(), cfg.predict_overlaps()};
        result.report.final_metrics = evaluate(result.model, eval);
    }
    ensure_dir(out);
    save_checkpoint(result.model, join(out, "model.ckp"));
    write_text(join(out, "report.txt"), result.report.serialize());
    std::printf("trained %s model: %zu epochs (%s), best validation macro-F1 %.4f", to_string(model_cfg.mode).c_str(),
                result.report.stop_epoch, result.report.stop_reason.c_str(), result.report.best_val_macro_f1);
    if (result.report.final_metrics) std::printf(", test OA %.4f", result.report.final_metrics->oa);
    std::printf(" -> %s\n", out.c_str());
    return 0;
}

int cmd_predict(const CommonOptions& common, const std::string& checkpoint, const std::string& scene,
                std::size_t tile, const std::vector<double>& overlaps, const std::string& out) {
    auto cfg = load_config(common);
    const auto model = load_checkpoint(checkpoint);
    const auto image_path = fs::is_directory(scene) ? join(scene, "image.hsc") : scene;
    const auto raster = read_hsc(image_path);
    const auto t = tile ? tile : cfg.predict_tile();
    const auto ov = overlaps.empty() ? cfg.predict_overlaps() : overlaps;
    const auto pred = fused_predict(model, raster, t, ov);
    ensure_dir(out);
    write_prb(join(out, "probs.prb"), pred.probs);
    write_lbl(join(out, "classes.lbl"), argmax_map(pred.probs));
    if (pred.distance) write_dst(join(out, "distance.dst"), *pred.distance);
    std::printf("prediction %zux%zu, %zu classes%s -> %s\n", raster.width, raster.height, pred.probs.classes,
                pred.distance ? " + distance" : "", out.c_str());
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& labels_path, const std::string& out) {
    const auto ref = read_lbl(labels_path);
    const auto magic = peek_magic(pred_path);
    LabelMask pred;
    std::optional<ProbabilityVolume> probs;
    std::size_t classes = 0;
    if (magic == "PRB1") {
        probs = read_prb(pred_path);
        pred = argmax_map(*probs);
        classes = probs->classes;
    } else if (magic == "LBL1") {
        pred = read_lbl(pred_path);
        for (auto v : pred.data) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(std::max(v, 0)) + 1);
        for (auto v : ref.data) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(std::max(v, 0)) + 1);
    } else {
        throw FormatError("bad magic at offset 0 of '" + pred_path + "': expected PRB1 or LBL1");
    }
    const auto cm = confusion(pred, ref, classes);
    const auto m = summary_metrics(cm);
    auto report = format_metrics_report(m);
    if (probs) report += "\n[entropy]\nmean_entropy=" + format_real(entropy_stats(*probs, ref).mean_entropy) + "\n";
    ensure_dir(out);
    write_text(join(out, "metrics.txt"), report);
    write_text(join(out, "confusion.csv"), format_confusion_csv(cm));
    std::printf("OA %.4f  Kappa %.4f  macro UA %.4f  macro PA %.4f  macro F1 %.4f -> %s\n", m.oa, m.kappa, m.macro_ua,
                m.macro_pa, m.macro_f1, out.c_str());
    for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return 0;
}

int cmd_render(const std::string& in, std::string palette, const std::string& out) {
    const auto magic = peek_magic(in);
    std::vector<char> image;
    std::string legend;
    if (magic == "DST1") {
        if (palette.empty()) palette = "gray";
        image = render_distance_map(read_dst(in), palette_by_name(palette));
        legend = "0=#000000 distance 0\n255=#ffffff distance 1\n";
    } else if (magic == "LBL1" || magic == "PRB1") {
        if (palette.empty()) palette = "classes";
        const auto pal = palette_by_name(palette);
        const auto classes = magic == "LBL1" ? read_lbl(in) : argmax_map(read_prb(in));
        image = render_class_map(classes, pal);
        std::int32_t max_class = -1;
        for (auto c : classes.data) max_class = std::max(max_class, c);
        const bool unlabeled = std::any_of(classes.data.begin(), classes.data.end(), [](auto c) { return c < 0; });
        legend = legend_text(pal, static_cast<std::size_t>(max_class + 1), unlabeled);
    } else {
        throw FormatError("bad magic at offset 0 of '" + in + "': expected LBL1, PRB1 or DST1");
    }
    write_file_bytes(out, image);
    write_text(out + ".legend.txt", legend);
    std::printf("rendered %s -> %s\n", in.c_str(), out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tree species segmentation from sparse crown annotations"};
    app.require_subcommand(1);

    CommonOptions synth_opts, train_opts, predict_opts;
    std::string synth_out, scene_dir, mode, distance_path, train_out;
    std::string itc_path, targets_out;
    double sigma = 1.0;
    int radius = 2;
    std::string checkpoint, predict_scene, predict_out;
    std::size_t tile = 0;
    std::vector<double> overlaps;
    std::string pred_path, labels_path, eval_out;
    std::string render_in, palette, render_out;

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
    add_common(synth, synth_opts);
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* targets = app.add_subcommand("targets", "distance target from an ITC raster");
    targets->add_option("--itc", itc_path, "ITC1 input")->required();
    targets->add_option("--sigma", sigma, "Gaussian sigma")->capture_default_str();
    targets->add_option("--radius", radius, "Gaussian radius")->capture_default_str();
    targets->add_option("--out", targets_out, "DST1 output")->required();

    auto* train = app.add_subcommand("train", "train one model");
    add_common(train, train_opts);
    train->add_option("--scene", scene_dir, "scene directory written by synth")->required();
    train->add_option("--mode", mode, "single or multi");
    train->add_option("--distance", distance_path, "DST1 target instead of computing one from train_itc.itc");
    train->add_option("--out", train_out, "output directory for model.ckp and report.txt")->required();

    auto* predict = app.add_subcommand("predict", "predict a full scene");
    add_common(predict, predict_opts);
    predict->add_option("--checkpoint", checkpoint, "CKP1 model")->required();
    predict->add_option("--scene", predict_scene, "HSC1 file or scene directory")->required();
    predict->add_option("--tile", tile, "tile size (default predict.tile)");
    predict->add_option("--overlaps", overlaps, "overlap ratios (default predict.overlaps)")->delimiter(',');
    predict->add_option("--out", predict_out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "metrics against reference labels");
    eval->add_option("--pred", pred_path, "PRB1 or LBL1 prediction")->required();
    eval->add_option("--labels", labels_path, "LBL1 reference")->required();
    eval->add_option("--out", eval_out, "output directory")->required();

    auto* render = app.add_subcommand("render", "render a map as an 8-bit BMP");
    render->add_option("--in", render_in, "LBL1, PRB1 or DST1 input")->required();
    render->add_option("--palette", palette, "classes or gray");
    render->add_option("--out", render_out, "BMP output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::fprintf(stderr, "error: USAGE_ERROR: %s\n", msg.c_str());
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_opts, synth_out);
        if (targets->parsed()) return cmd_targets(itc_path, sigma, radius, targets_out);
        if (train->parsed()) return cmd_train(train_opts, scene_dir, mode, distance_path, train_out);
        if (predict->parsed()) return cmd_predict(predict_opts, checkpoint, predict_scene, tile, overlaps, predict_out);
        if (eval->parsed()) return cmd_eval(pred_path, labels_path, eval_out);
        if (render->parsed()) return cmd_render(render_in, palette, render_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: INTERNAL_ERROR: %s\n", e.what());
        return 1;
    }
    return 1;
}

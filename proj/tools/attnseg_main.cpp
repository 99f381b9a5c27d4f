// attnseg command line: prepare / optimize / segment / evaluate / ablate.
// Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
// 4 checkpoint/backbone compatibility error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "attnseg/data.hpp"
#include "attnseg/eval.hpp"
#include "attnseg/inference.hpp"
#include "attnseg/optimizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attnseg;

namespace {

struct RunConfig {
    std::string backbone_name = "toy";
    std::string backbone_weights;
    OptimizationConfig opt;
    InferenceConfig inf;
    int patch = 0;  // 0 disables patched inference
    json raw = json::object();
};

AugmentationSpec parse_aug(const json& a, bool& enabled) {
    AugmentationSpec s = AugmentationSpec::disabled();
    enabled = a.value("enabled", false);
    s.horizontal_flip = a.value("horizontal_flip", true);
    s.gaussian_blur = a.value("gaussian_blur", true);
    if (a.contains("crop")) {
        s.crop_lo = a["crop"][0];
        s.crop_hi = a["crop"][1];
    }
    s.rotation_deg = a.value("rotation_deg", 30.0);
    if (s.crop_lo <= 0 || s.crop_lo > s.crop_hi || s.crop_hi > 1.0 || s.rotation_deg < 0)
        throw ConfigError("invalid augmentation spec");
    return s;
}

RunConfig load_config(const std::string& path) {
    RunConfig c;
    if (path.empty()) return c;
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    c.raw = j;
    if (j.value("version", 1) != 1) throw ConfigError("unsupported config version");
    if (j.contains("backbone")) {
        c.backbone_name = j["backbone"].value("name", "toy");
        c.backbone_weights = j["backbone"].value("weights", "");
    }
    if (j.contains("optimize")) {
        const json& o = j["optimize"];
        c.opt.epochs = o.value("epochs", c.opt.epochs);
        c.opt.lr = o.value("lr", c.opt.lr);
        c.opt.alpha = o.value("alpha", c.opt.alpha);
        c.opt.beta = o.value("beta", c.opt.beta);
        if (o.contains("t_opt")) {
            c.opt.t_opt_min = o["t_opt"][0];
            c.opt.t_opt_max = o["t_opt"][1];
        }
        if (o.contains("target")) {
            c.opt.target_h = o["target"][0];
            c.opt.target_w = o["target"][1];
        }
        c.opt.gate = o.value("gate", c.opt.gate);
        c.opt.seed = o.value("seed", c.opt.seed);
        c.opt.use_was = o.value("use_was", c.opt.use_was);
        c.opt.prompt_word = o.value("prompt_word", c.opt.prompt_word);
        if (o.contains("mse_reduction"))
            c.opt.mse_mean_reduction = o["mse_reduction"] == "mean";
        if (o.contains("ldm_reduction"))
            c.opt.ldm_mean_reduction = o["ldm_reduction"] == "mean";
        if (o.contains("augment"))
            c.opt.augment_spec = parse_aug(o["augment"], c.opt.augment_enabled);
        if (c.opt.epochs < 0 || c.opt.lr < 0) throw ConfigError("negative epochs or lr");
    }
    if (j.contains("inference")) {
        const json& i = j["inference"];
        c.inf.t_test = i.value("t_test", c.inf.t_test);
        c.inf.gate = i.value("gate", c.inf.gate);
        c.inf.use_was = i.value("use_was", c.inf.use_was);
        c.inf.seed = i.value("seed", c.inf.seed);
        c.patch = i.value("patch", 0);
    }
    c.opt.t_test = c.inf.t_test;
    c.inf.target_h = c.opt.target_h;
    c.inf.target_w = c.opt.target_w;
    return c;
}

uint64_t dir_digest(const std::string& dir) {
    std::vector<std::string> entries;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            entries.push_back(e.path().filename().string() + ":" +
                              std::to_string(e.file_size()));
    std::sort(entries.begin(), entries.end());
    uint64_t h = 1469598103934665603ULL;
    for (const auto& s : entries) h = fnv1a64(s.data(), s.size(), h);
    return h;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path);
    f << text;
}

int cmd_prepare(const std::string& dataset, const std::string& raw, const std::string& outdir,
                const std::string& mapping) {
    std::vector<AnnotatedSample> samples;
    json manifest;
    manifest["dataset"] = dataset;
    manifest["raw"] = raw;
    if (dataset == "pascal-car" || dataset == "pascal-horse") {
        const std::string category = dataset == "pascal-car" ? "car" : "horse";
        if (mapping.empty()) throw ConfigError("--mapping is required for pascal datasets");
        PrepStats st;
        samples = prepare_pascal_part(raw, category, mapping, &st);
        manifest["filter_stats"] = {{"total", st.total},
                                    {"removed_overlap", st.removed_overlap},
                                    {"removed_size", st.removed_size},
                                    {"kept", st.kept}};
    } else if (dataset == "celeba") {
        samples = prepare_celeba(raw);
        manifest["filter_stats"] = {{"kept", samples.size()}};
    } else {
        throw ConfigError("unknown dataset: " + dataset);
    }
    save_samples(samples, outdir, manifest.dump());
    std::cout << "prepared " << samples.size() << " samples into " << outdir << "\n";
    return 0;
}

int cmd_optimize(const std::string& config_path, const std::string& train_dir,
                 const std::string& val_dir, const std::string& out_ckpt) {
    RunConfig cfg = load_config(config_path);
    auto backbone = make_backbone(cfg.backbone_name, cfg.backbone_weights);
    std::vector<AnnotatedSample> train = load_samples(train_dir);
    if (train.empty()) throw ConfigError("no training samples in " + train_dir);
    std::vector<AnnotatedSample> val;
    if (!val_dir.empty()) val = load_samples(val_dir);

    OptimizeResult res =
        optimize(train, val.empty() ? nullptr : &val.front(), *backbone, cfg.opt);
    save_embeddings(res.embeddings, backbone->descriptor(), cfg.opt.hash(), out_ckpt);

    std::ostringstream csv;
    csv << "step,l_ce,l_mse,l_ldm,total\n";
    csv.precision(17);
    for (size_t i = 0; i < res.history.size(); ++i) {
        const auto& h = res.history[i];
        csv << i << "," << h.l_ce << "," << h.l_mse << "," << h.l_ldm << "," << h.total << "\n";
    }
    write_text(fs::path(out_ckpt).string() + ".loss.csv", csv.str());

    json man = json::parse(res.manifest_json);
    man["train_dir_digest"] = dir_digest(train_dir);
    man["command"] = "optimize";
    write_text(fs::path(out_ckpt).string() + ".manifest.json", man.dump(2) + "\n");
    std::cout << "checkpoint written to " << out_ckpt << "\n";
    return 0;
}

int cmd_segment(const std::string& config_path, const std::string& ckpt,
                const std::string& images_dir, const std::string& out_dir, bool overlay) {
    RunConfig cfg = load_config(config_path);
    auto backbone = make_backbone(cfg.backbone_name, cfg.backbone_weights);
    PromptEmbeddings emb = load_embeddings(ckpt, backbone.get());
    fs::create_directories(out_dir);

    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(images_dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 9 && name.substr(name.size() - 9) == ".mask.png") continue;
        if (e.path().extension() == ".png" || e.path().extension() == ".jpg")
            inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw ConfigError("no images found in " + images_dir);

    for (const auto& p : inputs) {
        ImageU8 image = read_image(p.string());
        SegmentationResult r = cfg.patch > 0
                                   ? segment_patched(image, emb, *backbone, cfg.inf, cfg.patch)
                                   : segment(image, emb, *backbone, cfg.inf);
        const std::string stem = p.stem().string();
        write_mask(r.labels, (fs::path(out_dir) / (stem + ".png")).string());
        write_text(fs::path(out_dir) / (stem + ".json"), r.provenance_json + "\n");
        if (overlay)
            write_image(render_overlay(image, r, default_palette(emb.num_classes)),
                        (fs::path(out_dir) / (stem + ".overlay.png")).string());
    }
    json man;
    man["command"] = "segment";
    man["ckpt"] = ckpt;
    man["images_digest"] = dir_digest(images_dir);
    man["inference"] = {{"t_test", cfg.inf.t_test}, {"gate", cfg.inf.gate},
                        {"use_was", cfg.inf.use_was}, {"seed", cfg.inf.seed},
                        {"patch", cfg.patch}};
    write_text(fs::path(out_dir) / "manifest.json", man.dump(2) + "\n");
    std::cout << "segmented " << inputs.size() << " images into " << out_dir << "\n";
    return 0;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    if (seeds.empty()) throw ConfigError("no seeds given");
    return seeds;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt,
                 const std::string& test_dir, const std::string& seeds_str,
                 const std::string& out_dir, bool per_image) {
    RunConfig cfg = load_config(config_path);
    auto backbone = make_backbone(cfg.backbone_name, cfg.backbone_weights);
    PromptEmbeddings emb = load_embeddings(ckpt, backbone.get());
    std::vector<AnnotatedSample> test = load_samples(test_dir);
    if (test.empty()) throw ConfigError("empty test dir: " + test_dir);

    EvalReport rep = evaluate(emb, test, *backbone, cfg.inf, parse_seeds(seeds_str),
                              per_image, cfg.patch);
    rep.label = fs::path(ckpt).stem().string();

    fs::create_directories(fs::path(out_dir) / "reports");
    json rj;
    rj["label"] = rep.label;
    rj["class_names"] = rep.class_names;
    rj["seeds"] = rep.seeds;
    rj["per_seed_average"] = rep.per_seed_average;
    rj["per_class_mean"] = rep.per_class_mean;
    rj["per_class_std"] = rep.per_class_std;
    rj["average_mean"] = rep.average_mean;
    rj["average_std"] = rep.average_std;
    rj["manifest"] = json::parse(rep.manifest_json);
    rj["test_digest"] = dir_digest(test_dir);
    write_text(fs::path(out_dir) / "reports" / "report.json", rj.dump(2) + "\n");
    write_text(fs::path(out_dir) / "reports" / "table.csv", emit_table({rep}, "csv"));
    write_text(fs::path(out_dir) / "reports" / "table.md", emit_table({rep}, "markdown"));
    std::cout << emit_table({rep}, "markdown");
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& grid_path,
               const std::string& train_dir, const std::string& test_dir,
               const std::string& out_dir) {
    std::ifstream gf(grid_path);
    if (!gf) throw ConfigError("cannot open grid: " + grid_path);
    json grid;
    try {
        grid = json::parse(gf);
    } catch (const json::exception& e) {
        throw ConfigError("grid parse error: " + std::string(e.what()));
    }
    if (!grid.is_object()) throw ConfigError("grid must be a JSON object of axis -> values");

    std::vector<AnnotatedSample> train = load_samples(train_dir);
    std::vector<AnnotatedSample> test = load_samples(test_dir);
    if (train.empty() || test.empty()) throw ConfigError("empty train or test dir");

    // one run per grid point, single-axis overrides over the baseline config
    struct Point {
        std::string label;
        std::string axis;
        json value;
    };
    std::vector<Point> points;
    points.push_back({"baseline", "", nullptr});
    for (auto& [axis, values] : grid.items()) {
        if (!values.is_array()) throw ConfigError("grid axis '" + axis + "' must list values");
        for (const auto& v : values) points.push_back({axis + "=" + v.dump(), axis, v});
    }

    std::vector<EvalReport> reports;
    for (const auto& pt : points) {
        RunConfig cfg = load_config(config_path);
        if (pt.axis == "use_was") {
            cfg.opt.use_was = pt.value.get<bool>();
            cfg.inf.use_was = cfg.opt.use_was;
        } else if (pt.axis == "t_test") {
            cfg.inf.t_test = pt.value.get<int>();
            cfg.opt.t_test = cfg.inf.t_test;
        } else if (pt.axis == "lr") {
            cfg.opt.lr = pt.value.get<double>();
        } else if (pt.axis == "alpha") {
            cfg.opt.alpha = pt.value.get<double>();
        } else if (pt.axis == "beta") {
            cfg.opt.beta = pt.value.get<double>();
        } else if (pt.axis == "prompt_word") {
            cfg.opt.prompt_word = pt.value.get<std::string>();
        } else if (pt.axis == "t_opt") {
            cfg.opt.t_opt_min = pt.value[0];
            cfg.opt.t_opt_max = pt.value[1];
        } else if (!pt.axis.empty()) {
            throw ConfigError("unknown ablation axis: " + pt.axis);
        }
        auto backbone = make_backbone(cfg.backbone_name, cfg.backbone_weights);
        OptimizeResult res = optimize(train, nullptr, *backbone, cfg.opt);
        EvalReport rep =
            evaluate(res.embeddings, test, *backbone, cfg.inf, {cfg.inf.seed}, false, cfg.patch);
        rep.label = pt.label;
        reports.push_back(rep);

        fs::path run_dir = fs::path(out_dir) / pt.label;
        fs::create_directories(run_dir);
        write_text(run_dir / "manifest.json", res.manifest_json + "\n");
        save_embeddings(res.embeddings, backbone->descriptor(), cfg.opt.hash(),
                        (run_dir / "embeddings.ckpt").string());
    }
    fs::create_directories(fs::path(out_dir) / "reports");
    write_text(fs::path(out_dir) / "reports" / "comparison.csv", emit_table(reports, "csv"));
    write_text(fs::path(out_dir) / "reports" / "comparison.md", emit_table(reports, "markdown"));
    std::cout << emit_table(reports, "markdown");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-probe one-shot part segmentation"};
    app.require_subcommand(1);

    std::string dataset, raw, outdir, mapping;
    auto* prep = app.add_subcommand("prepare", "prepare a dataset directory");
    prep->add_option("--dataset", dataset, "pascal-car | pascal-horse | celeba")->required();
    prep->add_option("--raw", raw, "raw dataset root")->required();
    prep->add_option("--out", outdir, "output directory")->required();
    prep->add_option("--mapping", mapping, "part-label mapping JSON (pascal)");

    std::string config_path, train_dir, val_dir, out_ckpt;
    auto* opt = app.add_subcommand("optimize", "optimize per-class text embeddings");
    opt->add_option("--config", config_path, "run config JSON");
    opt->add_option("--train", train_dir, "prepared training samples dir")->required();
    opt->add_option("--val", val_dir, "validation samples dir (model selection)");
    opt->add_option("--out", out_ckpt, "output checkpoint path")->required();

    std::string seg_config, ckpt, images_dir, seg_out;
    bool overlay = false;
    auto* seg = app.add_subcommand("segment", "segment images with a checkpoint");
    seg->add_option("--config", seg_config, "run config JSON");
    seg->add_option("--ckpt", ckpt, "checkpoint path")->required();
    seg->add_option("--images", images_dir, "input images dir")->required();
    seg->add_option("--out", seg_out, "output dir")->required();
    seg->add_flag("--overlay", overlay, "also write blended overlays");

    std::string eval_config, eval_ckpt, test_dir, seeds_str = "0", eval_out;
    bool per_image = false;
    auto* ev = app.add_subcommand("evaluate", "mIoU report over a test set");
    ev->add_option("--config", eval_config, "run config JSON");
    ev->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    ev->add_option("--test", test_dir, "prepared test samples dir")->required();
    ev->add_option("--seeds", seeds_str, "comma-separated inference seeds");
    ev->add_option("--out", eval_out, "output dir")->required();
    ev->add_flag("--per-image", per_image, "per-image IoU averaging instead of dataset-level");

    std::string ab_config, grid_path, ab_train, ab_test, ab_out;
    auto* ab = app.add_subcommand("ablate", "grid of single-axis config overrides");
    ab->add_option("--config", ab_config, "run config JSON");
    ab->add_option("--grid", grid_path, "grid JSON: axis -> list of values")->required();
    ab->add_option("--train", ab_train, "prepared training samples dir")->required();
    ab->add_option("--test", ab_test, "prepared test samples dir")->required();
    ab->add_option("--out", ab_out, "output dir")->required();

    try {
        app.parse(argc, argv);
        if (prep->parsed()) return cmd_prepare(dataset, raw, outdir, mapping);
        if (opt->parsed()) return cmd_optimize(config_path, train_dir, val_dir, out_ckpt);
        if (seg->parsed()) return cmd_segment(seg_config, ckpt, images_dir, seg_out, overlay);
        if (ev->parsed())
            return cmd_evaluate(eval_config, eval_ckpt, test_dir, seeds_str, eval_out, per_image);
        if (ab->parsed()) return cmd_ablate(ab_config, grid_path, ab_train, ab_test, ab_out);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const DivergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const CompatibilityError& e) {
        std::cerr << "compatibility error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

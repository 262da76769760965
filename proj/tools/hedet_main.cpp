#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hedet/checkpoint.hpp"
#include "hedet/evaluator.hpp"
#include "hedet/experiments.hpp"
#include "hedet/run_config.hpp"
#include "hedet/synthbench.hpp"
#include "hedet/train_control.hpp"

namespace fs = std::filesystem;
using namespace hedet;
using nlohmann::json;

namespace {

// Binds flags to RunConfig fields and remembers which were supplied, so
// explicit flags override a --config file regardless of argv order.
struct config_binder {
    std::vector<std::function<void(RunConfig&)>> apply;

    template <class T>
    void option(CLI::App& cmd, const std::string& flags, T RunConfig::*field,
                const std::string& help) {
        auto hold = std::make_shared<T>(RunConfig{}.*field);
        CLI::Option* o = cmd.add_option(flags, *hold, help)->capture_default_str();
        apply.push_back([o, hold, field](RunConfig& rc) {
            if (o->count() > 0) rc.*field = *hold;
        });
    }

    void add_model(CLI::App& cmd) {
        option(cmd, "--image-size", &RunConfig::image_size, "square image side in pixels");
        option(cmd, "--patch-size", &RunConfig::patch_size, "patch embedding stride");
        option(cmd, "--encoder-layers", &RunConfig::encoder_layers, "encoder depth");
        option(cmd, "--categories", &RunConfig::num_categories, "category count");
        option(cmd, "--d-model", &RunConfig::d_model, "token width");
        option(cmd, "--heads", &RunConfig::n_heads, "attention heads");
        option(cmd, "--ffn-dim", &RunConfig::ffn_dim, "feed-forward width");
        option(cmd, "--queries", &RunConfig::n_q, "object queries");
        option(cmd, "--structure", &RunConfig::structure,
               "decoder split K+P: K stacked then P parallel layers");
        option(cmd, "--tau", &RunConfig::tau, "denoising-query re-init probability");
        option(cmd, "--dn-groups", &RunConfig::dn_groups, "denoising groups");
        option(cmd, "--dn-epsilon", &RunConfig::dn_epsilon, "denoising box noise scale");
    }

    void add_optim(CLI::App& cmd) {
        option(cmd, "--lr", &RunConfig::lr_main, "main learning rate");
        option(cmd, "--lr-encoder", &RunConfig::lr_encoder, "encoder learning rate");
        option(cmd, "--min-lr", &RunConfig::min_lr, "learning-rate floor");
        option(cmd, "--weight-decay", &RunConfig::weight_decay, "AdamW weight decay");
        option(cmd, "--batch-size", &RunConfig::batch_size, "images per step");
        option(cmd, "--epochs", &RunConfig::epochs, "training epochs");
        option(cmd, "--scheduler", &RunConfig::scheduler, "plateau or cosine");
        option(cmd, "--parallel-init", &RunConfig::parallel_init,
               "parallel-layer weights on conversion: pretrained or random");
        auto hold = std::make_shared<bool>(true);
        CLI::Option* o = cmd.add_flag("--progressive,!--no-progressive", *hold,
                                      "two-stage fine-tuning (encoder frozen in stage 1)");
        apply.push_back([o, hold](RunConfig& rc) {
            if (o->count() > 0) rc.progressive = *hold;
        });
    }

    RunConfig resolve(const std::string& config_path) const {
        RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        for (const auto& f : apply) f(rc);
        return rc;
    }
};

struct generate_args {
    std::string root;
    int image_size = 96;
    std::uint64_t seed = 0;
    GenerateCounts counts;
};

int run_generate(const generate_args& a) {
    BenchmarkManifest m;
    m.image_size = a.image_size;
    m.seed = a.seed;
    m.counts = a.counts;
    m.domains = default_domains(a.image_size);
    m.base = base_domain(a.image_size);
    generate_benchmark(a.root, m);
    int per_domain = a.counts.n_train + a.counts.n_val + a.counts.n_test;
    std::printf("wrote %zu domains + base, %d images each, to %s\n", m.domains.size(), per_domain,
                a.root.c_str());
    return 0;
}

struct train_args {
    std::string config_path;
    std::string init_from;
    std::string out_dir = "run";
    bool dump_config = false;
    bool full_train = false;
};

int run_train(const config_binder& binder, const train_args& a) {
    RunConfig rc = binder.resolve(a.config_path);
    rc.validate();
    if (a.dump_config) {
        std::cout << run_config_to_json(rc) << "\n";
        return 0;
    }
    if (rc.data_root.empty()) throw std::invalid_argument("train: --data is required");
    if (rc.domain.empty()) throw std::invalid_argument("train: --domain is required");

    BenchmarkManifest manifest = load_manifest(rc.data_root);
    const DomainSpec& domain = find_domain(manifest, rc.domain);
    std::map<int, int> local = domain.global_to_local();

    Checkpoint start;
    if (!a.init_from.empty()) {
        Checkpoint pre = load_checkpoint(a.init_from);
        auto [k, l] = parse_structure(rc.structure);
        if (l != pre.config.decoder.L)
            throw std::invalid_argument("train: structure depth " + std::to_string(l) +
                                        " does not match checkpoint depth " +
                                        std::to_string(pre.config.decoder.L));
        start = convert_to_hed(pre, k, rc.tau, rc.parallel_init == "random",
                               RandomStream(rc.seed).child("parallel-init").seed());
    } else {
        start.config = rc.model_config();
        register_model_params(start.params, start.config);
        init_params(start.params, RandomStream(rc.seed));
    }

    DatasetSplit train_full = load_split(rc.data_root, domain.name, "train");
    DatasetSplit picked = a.full_train ? train_full : sample_kshot(train_full, rc.shots, rc.seed);
    std::vector<TrainExample> train =
        load_examples(rc.data_root, to_local_categories(picked, local));
    std::vector<TrainExample> val = load_examples(
        rc.data_root, to_local_categories(load_split(rc.data_root, domain.name, "val"), local));

    std::printf("training on %zu images (%zu val), structure %s, seed %llu\n", train.size(),
                val.size(), rc.structure.c_str(), static_cast<unsigned long long>(rc.seed));
    FitResult r = fit(start, train, val, rc.fit_config());
    for (const EpochRecord& e : r.log)
        std::printf("epoch %3d  loss %9.4f  val mAP %6.2f  lr %.2e  stage %d%s\n", e.epoch,
                    e.train_loss, e.val_map, e.lr_main, e.stage, e.decayed ? "  [decay]" : "");
    std::printf("best epoch %d, val mAP %.2f\n", r.best_epoch, r.best_val_map);

    fs::create_directories(a.out_dir);
    save_checkpoint((fs::path(a.out_dir) / "best.ckpt").string(), r.best.config, r.best.params);
    save_log((fs::path(a.out_dir) / "log.jsonl").string(), r.log);
    save_run_config((fs::path(a.out_dir) / "config.json").string(), rc);
    std::printf("saved best.ckpt, log.jsonl, config.json under %s\n", a.out_dir.c_str());
    return 0;
}

struct eval_args {
    std::string ckpt;
    std::string data;
    std::string domain;
    std::string split = "test";
    int top_k = 100;
    double score_threshold = 0.0;
    std::string detections_out;
    std::string report_out;
};

int run_eval(const eval_args& a) {
    Checkpoint ckpt = load_checkpoint(a.ckpt);
    BenchmarkManifest manifest = load_manifest(a.data);
    const DomainSpec& domain = find_domain(manifest, a.domain);
    DatasetSplit split =
        to_local_categories(load_split(a.data, domain.name, a.split), domain.global_to_local());
    std::vector<ImageDetections> dets =
        run_detector(ckpt.params, ckpt.config, a.data, split, a.top_k, a.score_threshold);
    EvalResult res = compute_map(dets, split);
    std::cout << eval_report_table(res, split);
    if (!a.detections_out.empty()) save_detections(a.detections_out, dets);
    if (!a.report_out.empty()) std::ofstream(a.report_out) << eval_report_json(res) << "\n";
    return 0;
}

struct mixed_args {
    std::string ckpt;
    std::string data;
    std::string domain;
    int top_k = 100;
    double score_threshold = 0.0;
    std::string report_out;
};

int run_mixed_eval(const mixed_args& a) {
    Checkpoint ckpt = load_checkpoint(a.ckpt);
    BenchmarkManifest manifest = load_manifest(a.data);
    const DomainSpec& domain = find_domain(manifest, a.domain);
    std::map<int, int> local = domain.global_to_local();
    DatasetSplit test = load_split(a.data, domain.name, "test");
    std::vector<DatasetSplit> others;
    for (const DomainSpec& d : manifest.domains)
        if (d.name != domain.name) others.push_back(load_split(a.data, d.name, "test"));
    DatasetSplit clean = to_local_categories(test, local);
    DatasetSplit mixed = to_local_categories(build_cd_mixed(test, others), local);
    RobustnessReport rep = robustness_eval(ckpt.params, ckpt.config, a.data, clean, mixed, a.top_k,
                                           a.score_threshold);
    std::printf("clean mAP  %6.2f\n", rep.map_clean);
    std::printf("mixed mAP  %6.2f\n", rep.map_mixed);
    if (rep.reduction_defined)
        std::printf("reduction  %+.2f%%\n", rep.reduction_rate);
    else
        std::printf("reduction  undefined\n");
    if (!a.report_out.empty()) {
        json j{{"map_clean", rep.map_clean},
               {"map_mixed", rep.map_mixed},
               {"reduction_rate", rep.reduction_defined ? json(rep.reduction_rate) : json(nullptr)}};
        std::ofstream(a.report_out) << j.dump(1) << "\n";
    }
    return 0;
}

struct convert_args {
    std::string in;
    std::string out;
    std::string structure = "1+5";
    double tau = 0.5;
    std::string parallel_init = "pretrained";
    std::uint64_t seed = 0;
};

int run_convert(const convert_args& a) {
    if (a.parallel_init != "pretrained" && a.parallel_init != "random")
        throw std::invalid_argument("convert: --parallel-init must be pretrained or random");
    Checkpoint pre = load_checkpoint(a.in);
    auto [k, l] = parse_structure(a.structure);
    if (l != pre.config.decoder.L)
        throw std::invalid_argument("convert: structure depth " + std::to_string(l) +
                                    " does not match checkpoint depth " +
                                    std::to_string(pre.config.decoder.L));
    Checkpoint hed = convert_to_hed(pre, k, a.tau, a.parallel_init == "random",
                                    RandomStream(a.seed).child("parallel-init").seed());
    save_checkpoint(a.out, hed.config, hed.params);
    std::printf("wrote %s: structure %s, tau %.2f, %s parallel init\n", a.out.c_str(),
                a.structure.c_str(), a.tau, a.parallel_init.c_str());
    return 0;
}

struct experiment_args {
    std::string config_path;
    std::string grid;
    std::vector<int> shots;
    std::vector<int> seeds = {0, 1, 2};
    std::string cache_dir;
    int pretrain_epochs = 12;
    std::uint64_t pretrain_seed = 9000;
    std::string out_path;
    std::string svg_path;
};

int run_experiment(const config_binder& binder, const experiment_args& a, bool shots_given) {
    RunConfig rc = binder.resolve(a.config_path);
    if (rc.data_root.empty()) throw std::invalid_argument("experiment: --data is required");
    if (a.grid != "ablation" && shots_given) {
        if (a.shots.size() != 1)
            throw std::invalid_argument("experiment: this grid takes a single --shots value");
        rc.shots = a.shots[0];
    }
    rc.validate();

    ExperimentContext ctx;
    ctx.bench_root = rc.data_root;
    ctx.cache_dir = a.cache_dir.empty() ? (fs::path(rc.data_root) / "cache").string() : a.cache_dir;
    ctx.base = rc;
    ctx.pretrain_epochs = a.pretrain_epochs;
    ctx.pretrain_seed = a.pretrain_seed;

    std::vector<CellResult> cells;
    if (a.grid == "ablation") {
        if (rc.domain.empty()) throw std::invalid_argument("experiment: ablation needs --domain");
        cells = run_component_ablation(ctx, shots_given ? a.shots : std::vector<int>{1, 5, 10},
                                       a.seeds);
    } else if (a.grid == "structure") {
        if (rc.domain.empty()) throw std::invalid_argument("experiment: structure needs --domain");
        cells = run_structure_sweep(ctx, a.seeds);
    } else if (a.grid == "robustness") {
        cells = run_robustness_study(ctx, a.seeds);
    } else {
        throw std::invalid_argument("experiment: unknown grid '" + a.grid +
                                    "' (ablation, structure, robustness)");
    }

    std::cout << results_table(cells) << "\n" << summary_table(cells);
    if (!a.out_path.empty()) save_results(a.out_path, cells);
    if (!a.svg_path.empty()) std::ofstream(a.svg_path) << reduction_svg(cells);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot shape detection workbench"};
    app.require_subcommand(1);

    generate_args g;
    CLI::App* gen = app.add_subcommand("generate", "write the synthetic multi-domain benchmark");
    gen->add_option("--root", g.root, "output directory")->required();
    gen->add_option("--image-size", g.image_size, "square image side")->capture_default_str();
    gen->add_option("--seed", g.seed, "generator seed")->capture_default_str();
    gen->add_option("--train", g.counts.n_train, "train images per domain")->capture_default_str();
    gen->add_option("--val", g.counts.n_val, "val images per domain")->capture_default_str();
    gen->add_option("--test", g.counts.n_test, "test images per domain")->capture_default_str();
    gen->add_option("--singles", g.counts.singles_per_category,
                    "leading single-object train images per category")
        ->capture_default_str();

    train_args t;
    config_binder tb;
    CLI::App* tr = app.add_subcommand("train", "fine-tune (or pretrain) a detector on one domain");
    tb.option(*tr, "--data", &RunConfig::data_root, "benchmark root");
    tb.option(*tr, "--domain", &RunConfig::domain, "target domain");
    tb.option(*tr, "--shots", &RunConfig::shots, "object instances per category");
    tb.option(*tr, "--seed", &RunConfig::seed, "run seed");
    tb.add_model(*tr);
    tb.add_optim(*tr);
    tr->add_option("--config", t.config_path, "run-config json; explicit flags override it");
    tr->add_option("--init-from", t.init_from,
                   "checkpoint to convert to --structure/--tau and fine-tune "
                   "(model shape comes from the checkpoint)");
    tr->add_option("--out", t.out_dir, "output directory")->capture_default_str();
    tr->add_flag("--dump-config", t.dump_config, "print the resolved config and exit");
    tr->add_flag("--full-train", t.full_train,
                 "train on the whole split instead of a K-shot sample");

    eval_args e;
    CLI::App* ev = app.add_subcommand("eval", "COCO-style mAP of a checkpoint on one split");
    ev->add_option("--ckpt", e.ckpt, "checkpoint file")->required();
    ev->add_option("--data", e.data, "benchmark root")->required();
    ev->add_option("--domain", e.domain, "domain name")->required();
    ev->add_option("--split", e.split, "train, val, or test")->capture_default_str();
    ev->add_option("--top-k", e.top_k, "detections kept per image")->capture_default_str();
    ev->add_option("--score-threshold", e.score_threshold, "minimum detection score")
        ->capture_default_str();
    ev->add_option("--detections", e.detections_out, "write per-image detections json");
    ev->add_option("--report", e.report_out, "write the metric report json");

    mixed_args m;
    CLI::App* mx = app.add_subcommand("mixed-eval",
                                      "clean vs cross-domain-mixed test evaluation");
    mx->add_option("--ckpt", m.ckpt, "checkpoint file")->required();
    mx->add_option("--data", m.data, "benchmark root")->required();
    mx->add_option("--domain", m.domain, "target domain")->required();
    mx->add_option("--top-k", m.top_k, "detections kept per image")->capture_default_str();
    mx->add_option("--score-threshold", m.score_threshold, "minimum detection score")
        ->capture_default_str();
    mx->add_option("--report", m.report_out, "write the robustness report json");

    convert_args c;
    CLI::App* cv = app.add_subcommand("convert", "re-label a checkpoint's decoder as K+P hybrid");
    cv->add_option("--in", c.in, "input checkpoint")->required();
    cv->add_option("--out", c.out, "output checkpoint")->required();
    cv->add_option("--structure", c.structure, "decoder split K+P")->capture_default_str();
    cv->add_option("--tau", c.tau, "denoising-query re-init probability")->capture_default_str();
    cv->add_option("--parallel-init", c.parallel_init, "pretrained or random")
        ->capture_default_str();
    cv->add_option("--seed", c.seed, "init stream seed for --parallel-init random")
        ->capture_default_str();

    experiment_args x;
    config_binder xb;
    CLI::App* ex = app.add_subcommand("experiment",
                                      "scripted grids: ablation, structure, robustness");
    ex->add_option("--grid", x.grid, "ablation, structure, or robustness")->required();
    xb.option(*ex, "--data", &RunConfig::data_root, "benchmark root");
    xb.option(*ex, "--domain", &RunConfig::domain, "target domain (ablation and structure grids)");
    CLI::Option* shots_opt =
        ex->add_option("--shots", x.shots,
                       "K-shot columns for the ablation grid; a single value elsewhere")
            ->delimiter(',');
    ex->add_option("--seeds", x.seeds, "fine-tuning seeds")->delimiter(',')->capture_default_str();
    xb.add_model(*ex);
    xb.add_optim(*ex);
    ex->add_option("--config", x.config_path, "base run-config json; explicit flags override it");
    ex->add_option("--cache", x.cache_dir, "result cache directory (default <data>/cache)");
    ex->add_option("--pretrain-epochs", x.pretrain_epochs, "shared pretraining epochs")
        ->capture_default_str();
    ex->add_option("--pretrain-seed", x.pretrain_seed, "shared pretraining seed")
        ->capture_default_str();
    ex->add_option("--out", x.out_path, "write all cells as jsonl");
    ex->add_option("--svg", x.svg_path, "write a reduction-rate bar chart");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_generate(g);
        if (tr->parsed()) return run_train(tb, t);
        if (ev->parsed()) return run_eval(e);
        if (mx->parsed()) return run_mixed_eval(m);
        if (cv->parsed()) return run_convert(c);
        if (ex->parsed()) return run_experiment(xb, x, shots_opt->count() > 0);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}

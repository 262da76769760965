#include "hedet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hedet/evaluator.hpp"

namespace hedet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig pretrain_config(const ExperimentContext& ctx) {
    RunConfig rc = ctx.base;
    auto [k, l] = parse_structure(ctx.base.structure);
    (void)k;
    rc.structure = std::to_string(l) + "+0";
    rc.tau = 0.0;
    rc.progressive = false;
    rc.parallel_init = "pretrained";
    rc.epochs = ctx.pretrain_epochs;
    rc.seed = ctx.pretrain_seed;
    rc.data_root = ctx.bench_root;
    rc.domain = "";
    rc.shots = 1; // unused: pretraining sees the full base train split
    return rc;
}

json cell_to_json(const CellResult& c) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return json{{"label", c.label},       {"domain", c.domain},
                {"shots", c.shots},       {"seed", c.seed},
                {"hash", hash_hex(c.hash)}, {"val_map", num(c.val_map)},
                {"test_map", num(c.test_map)}, {"mixed_map", num(c.mixed_map)},
                {"reduction", num(c.reduction)}, {"reduction_defined", c.reduction_defined}};
}

CellResult cell_from_json(const json& j) {
    auto num = [&](const char* key) {
        return j.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN()
                                   : j.at(key).get<double>();
    };
    CellResult c;
    c.label = j.at("label").get<std::string>();
    c.domain = j.at("domain").get<std::string>();
    c.shots = j.at("shots").get<int>();
    c.seed = j.at("seed").get<int>();
    c.hash = std::stoull(j.at("hash").get<std::string>(), nullptr, 16);
    c.val_map = num("val_map");
    c.test_map = num("test_map");
    c.mixed_map = num("mixed_map");
    c.reduction = num("reduction");
    c.reduction_defined = j.at("reduction_defined").get<bool>();
    return c;
}

} // namespace

const DomainSpec& find_domain(const BenchmarkManifest& manifest, const std::string& name) {
    for (const DomainSpec& d : manifest.domains)
        if (d.name == name) return d;
    if (manifest.base.name == name) return manifest.base;
    throw std::invalid_argument("experiments: unknown domain '" + name + "'");
}

Checkpoint pretrain_base(const ExperimentContext& ctx) {
    RunConfig rc = pretrain_config(ctx);
    fs::create_directories(ctx.cache_dir);
    fs::path path = fs::path(ctx.cache_dir) / ("pretrain_" + hash_hex(config_hash(rc)) + ".ckpt");
    if (fs::exists(path)) return load_checkpoint(path.string());

    BenchmarkManifest manifest = load_manifest(ctx.bench_root);
    std::map<int, int> local = manifest.base.global_to_local();
    std::vector<TrainExample> train = load_examples(
        ctx.bench_root,
        to_local_categories(load_split(ctx.bench_root, manifest.base.name, "train"), local));
    std::vector<TrainExample> val = load_examples(
        ctx.bench_root,
        to_local_categories(load_split(ctx.bench_root, manifest.base.name, "val"), local));

    Checkpoint init;
    init.config = rc.model_config();
    register_model_params(init.params, init.config);
    init_params(init.params, RandomStream(rc.seed));

    FitResult r = fit(init, train, val, rc.fit_config());
    save_checkpoint(path.string(), r.best.config, r.best.params);
    return r.best;
}

CellResult run_cell(const ExperimentContext& ctx, const RunConfig& rc, const std::string& label,
                    bool mixed_eval) {
    rc.validate();
    if (rc.domain.empty()) throw std::invalid_argument("run_cell: config names no domain");
    std::uint64_t hash = config_hash(rc);
    fs::create_directories(ctx.cache_dir);
    // the evaluation mode is part of the cache identity: a clean-only cell
    // must not satisfy a mixed-eval request
    fs::path cache = fs::path(ctx.cache_dir) /
                     ("cell_" + hash_hex(hash) + (mixed_eval ? "_mixed" : "") + ".json");
    if (fs::exists(cache)) {
        std::ifstream f(cache);
        CellResult cached = cell_from_json(json::parse(f));
        cached.label = label;
        return cached;
    }

    BenchmarkManifest manifest = load_manifest(ctx.bench_root);
    const DomainSpec& domain = find_domain(manifest, rc.domain);
    std::map<int, int> local = domain.global_to_local();

    Checkpoint pre = pretrain_base(ctx);
    auto [k, l] = parse_structure(rc.structure);
    (void)l;
    Checkpoint start = convert_to_hed(pre, k, rc.tau, rc.parallel_init == "random",
                                      RandomStream(rc.seed).child("parallel-init").seed());

    DatasetSplit train_full = load_split(ctx.bench_root, domain.name, "train");
    DatasetSplit kshot = sample_kshot(train_full, rc.shots, rc.seed);
    std::vector<TrainExample> train =
        load_examples(ctx.bench_root, to_local_categories(kshot, local));
    std::vector<TrainExample> val = load_examples(
        ctx.bench_root, to_local_categories(load_split(ctx.bench_root, domain.name, "val"), local));

    FitResult r = fit(start, train, val, rc.fit_config());

    CellResult out;
    out.label = label;
    out.domain = rc.domain;
    out.shots = rc.shots;
    out.seed = static_cast<int>(rc.seed);
    out.hash = hash;
    out.val_map = r.best_val_map;
    out.mixed_map = std::numeric_limits<double>::quiet_NaN();
    out.reduction = std::numeric_limits<double>::quiet_NaN();

    DatasetSplit clean =
        to_local_categories(load_split(ctx.bench_root, domain.name, "test"), local);
    ModelConfig cfg = r.best.config;
    out.test_map =
        compute_map(run_detector(r.best.params, cfg, ctx.bench_root, clean, cfg.decoder.n_q, 0.0),
                    clean)
            .map;

    if (mixed_eval) {
        std::vector<DatasetSplit> others;
        for (const DomainSpec& d : manifest.domains)
            if (d.name != domain.name)
                others.push_back(load_split(ctx.bench_root, d.name, "test"));
        DatasetSplit mixed = to_local_categories(
            build_cd_mixed(load_split(ctx.bench_root, domain.name, "test"), others), local);
        RobustnessReport rep = robustness_eval(r.best.params, cfg, ctx.bench_root, clean, mixed,
                                               cfg.decoder.n_q, 0.0);
        out.mixed_map = rep.map_mixed;
        out.reduction = rep.reduction_rate;
        out.reduction_defined = rep.reduction_defined;
    }

    std::ofstream f(cache);
    f << cell_to_json(out).dump(1) << "\n";
    return out;
}

namespace {

struct Variant {
    std::string label;
    bool hed;
    double tau;
    bool progressive;
};

RunConfig variant_config(const ExperimentContext& ctx, const Variant& v) {
    RunConfig rc = ctx.base;
    rc.data_root = ctx.bench_root;
    if (!v.hed) {
        auto [k, l] = parse_structure(ctx.base.structure);
        (void)k;
        rc.structure = std::to_string(l) + "+0";
        rc.tau = 0.0;
    } else {
        rc.tau = v.tau;
    }
    rc.progressive = v.progressive;
    return rc;
}

} // namespace

std::vector<CellResult> run_component_ablation(const ExperimentContext& ctx,
                                               const std::vector<int>& shots,
                                               const std::vector<int>& seeds) {
    const std::vector<Variant> variants = {{"baseline", false, 0.0, false},
                                           {"+progressive", false, 0.0, true},
                                           {"+hed", true, ctx.base.tau, false},
                                           {"+hed+progressive", true, ctx.base.tau, true}};
    std::vector<CellResult> out;
    for (const Variant& v : variants)
        for (int s : shots)
            for (int seed : seeds) {
                RunConfig rc = variant_config(ctx, v);
                rc.shots = s;
                rc.seed = static_cast<std::uint64_t>(seed);
                out.push_back(run_cell(ctx, rc, v.label, false));
            }
    return out;
}

std::vector<CellResult> run_structure_sweep(const ExperimentContext& ctx,
                                            const std::vector<int>& seeds) {
    auto [bk, l] = parse_structure(ctx.base.structure);
    (void)bk;
    std::vector<std::string> structures = {std::to_string(l) + "+0", "0+" + std::to_string(l)};
    for (int k = l - 1; k >= 1; --k)
        structures.push_back(std::to_string(k) + "+" + std::to_string(l - k));
    const std::vector<double> taus = {0.0, 0.25, 0.5, 0.75, 1.0};

    std::vector<CellResult> out;
    for (const std::string& st : structures) {
        bool parallel_free = st.size() > 2 && st.substr(st.size() - 2) == "+0";
        for (double tau : taus) {
            if (parallel_free && tau != 0.0) continue; // tau has nothing to act on
            for (int seed : seeds) {
                RunConfig rc = ctx.base;
                rc.data_root = ctx.bench_root;
                rc.structure = st;
                rc.tau = tau;
                rc.seed = static_cast<std::uint64_t>(seed);
                std::ostringstream label;
                label << st << " tau=" << tau;
                out.push_back(run_cell(ctx, rc, label.str(), false));
            }
        }
    }
    return out;
}

std::vector<CellResult> run_robustness_study(const ExperimentContext& ctx,
                                             const std::vector<int>& seeds) {
    const std::vector<Variant> variants = {{"baseline", false, 0.0, false},
                                           {"+progressive", false, 0.0, true},
                                           {"+hed", true, 0.0, false},
                                           {"+hed+reinit", true, 0.5, false},
                                           {"+hed+reinit+progressive", true, 0.5, true}};
    BenchmarkManifest manifest = load_manifest(ctx.bench_root);
    std::vector<CellResult> out;
    for (const Variant& v : variants)
        for (const DomainSpec& d : manifest.domains)
            for (int seed : seeds) {
                RunConfig rc = variant_config(ctx, v);
                rc.domain = d.name;
                rc.seed = static_cast<std::uint64_t>(seed);
                out.push_back(run_cell(ctx, rc, v.label, true));
            }
    return out;
}

std::string results_table(const std::vector<CellResult>& cells) {
    std::ostringstream out;
    char row[160];
    std::snprintf(row, sizeof(row), "%-28s %-10s %5s %5s %8s %8s %8s %10s\n", "label", "domain",
                  "shots", "seed", "val", "test", "mixed", "reduction");
    out << row;
    for (const CellResult& c : cells) {
        auto cell = [](double v) {
            if (!std::isfinite(v)) return std::string("-");
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", v);
            return std::string(buf);
        };
        std::snprintf(row, sizeof(row), "%-28s %-10s %5d %5d %8s %8s %8s %10s\n", c.label.c_str(),
                      c.domain.c_str(), c.shots, c.seed, cell(c.val_map).c_str(),
                      cell(c.test_map).c_str(), cell(c.mixed_map).c_str(),
                      cell(c.reduction).c_str());
        out << row;
    }
    return out.str();
}

std::string summary_table(const std::vector<CellResult>& cells) {
    struct Acc {
        double test = 0.0, mixed = 0.0, reduction = 0.0;
        int n = 0, n_mixed = 0, n_red = 0;
    };
    std::map<std::pair<std::string, int>, Acc> rows;
    for (const CellResult& c : cells) {
        Acc& a = rows[{c.label, c.shots}];
        a.test += c.test_map;
        ++a.n;
        if (std::isfinite(c.mixed_map)) {
            a.mixed += c.mixed_map;
            ++a.n_mixed;
        }
        if (c.reduction_defined && std::isfinite(c.reduction)) {
            a.reduction += c.reduction;
            ++a.n_red;
        }
    }
    std::ostringstream out;
    char row[160];
    std::snprintf(row, sizeof(row), "%-28s %5s %4s %10s %10s %12s\n", "label", "shots", "n",
                  "mean test", "mean mixed", "mean red. %");
    out << row;
    for (const auto& [key, a] : rows) {
        auto mean = [](double sum, int n) {
            if (n == 0) return std::string("-");
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", sum / n);
            return std::string(buf);
        };
        std::snprintf(row, sizeof(row), "%-28s %5d %4d %10s %10s %12s\n", key.first.c_str(),
                      key.second, a.n, mean(a.test, a.n).c_str(), mean(a.mixed, a.n_mixed).c_str(),
                      mean(a.reduction, a.n_red).c_str());
        out << row;
    }
    return out.str();
}

std::string reduction_svg(const std::vector<CellResult>& cells) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const CellResult& c : cells)
        if (c.reduction_defined && std::isfinite(c.reduction)) {
            sums[c.label].first += c.reduction;
            sums[c.label].second += 1;
        }
    const int bar_w = 64, gap = 24, height = 260, base_y = 40;
    const double scale = 4.0; // px per percentage point
    int width = 60 + static_cast<int>(sums.size()) * (bar_w + gap);
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "  <line x1=\"20\" y1=\"" << base_y << "\" x2=\"" << (width - 10) << "\" y2=\"" << base_y
        << "\" stroke=\"#444\"/>\n";
    int x = 40;
    for (const auto& [label, acc] : sums) {
        double mean = acc.first / acc.second;
        double h = std::min(std::abs(mean) * scale, static_cast<double>(height - base_y - 30));
        out << "  <rect x=\"" << x << "\" y=\"" << (mean <= 0.0 ? base_y : base_y - h)
            << "\" width=\"" << bar_w << "\" height=\"" << h << "\" fill=\"#4878a8\"/>\n";
        char val[32];
        std::snprintf(val, sizeof(val), "%.2f%%", mean);
        out << "  <text x=\"" << (x + bar_w / 2) << "\" y=\"" << (base_y + h + 16)
            << "\" text-anchor=\"middle\" font-size=\"12\">" << val << "</text>\n";
        out << "  <text x=\"" << (x + bar_w / 2) << "\" y=\"" << (height - 8)
            << "\" text-anchor=\"middle\" font-size=\"11\">" << label << "</text>\n";
        x += bar_w + gap;
    }
    out << "</svg>\n";
    return out.str();
}

void save_results(const std::string& path, const std::vector<CellResult>& cells) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_results: cannot open " + path);
    for (const CellResult& c : cells) f << cell_to_json(c).dump() << "\n";
}

std::vector<CellResult> load_results(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_results: cannot open " + path);
    std::vector<CellResult> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(cell_from_json(json::parse(line)));
    }
    return out;
}

} // namespace hedet

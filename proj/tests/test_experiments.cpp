#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "hedet/experiments.hpp"

using namespace hedet;
namespace fs = std::filesystem;

namespace {

// One benchmark + cache shared by every case in this file; tiny model and
// 1-epoch runs keep each cell around a second.
struct Fixture {
    fs::path root = "/tmp/hedet_experiments";
    ExperimentContext ctx;

    Fixture() {
        if (!fs::exists(root / "manifest.json")) {
            fs::remove_all(root);
            BenchmarkManifest m;
            m.image_size = 48;
            m.seed = 5;
            m.counts.n_train = 8;
            m.counts.n_val = 2;
            m.counts.n_test = 3;
            m.counts.singles_per_category = 1;
            std::vector<DomainSpec> all = default_domains(48);
            m.domains = {all[0], all[1]};
            m.base = base_domain(48);
            generate_benchmark(root.string(), m);
        }
        ctx.bench_root = root.string();
        ctx.cache_dir = (root / "cache").string();
        ctx.pretrain_epochs = 1;
        RunConfig& rc = ctx.base;
        rc.image_size = 48;
        rc.patch_size = 8;
        rc.encoder_layers = 1;
        rc.d_model = 16;
        rc.n_heads = 2;
        rc.ffn_dim = 24;
        rc.n_q = 4;
        rc.structure = "1+1";
        rc.dn_groups = 1;
        rc.epochs = 1;
        rc.batch_size = 4;
        rc.shots = 1;
        rc.data_root = ctx.bench_root;
        rc.domain = default_domains(48)[0].name;
    }
};

} // namespace

TEST_CASE("pretraining is cached and sequential") {
    Fixture fx;
    Checkpoint pre = pretrain_base(fx.ctx);
    CHECK(pre.config.decoder.K == pre.config.decoder.L);
    CHECK(pre.config.decoder.tau == 0.0);
    CHECK(pre.config.decoder.L == 2);

    int ckpts = 0;
    for (const auto& e : fs::directory_iterator(fx.ctx.cache_dir))
        ckpts += e.path().filename().string().rfind("pretrain_", 0) == 0 ? 1 : 0;
    CHECK(ckpts == 1);

    Checkpoint again = pretrain_base(fx.ctx);
    for (const auto& [name, m] : pre.params.all())
        CHECK((m - again.params.at(name)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a cell runs end to end and caches its result") {
    Fixture fx;
    RunConfig rc = fx.ctx.base;
    rc.seed = 31;
    CellResult r = run_cell(fx.ctx, rc, "probe", false);
    CHECK(r.label == "probe");
    CHECK(r.domain == rc.domain);
    CHECK(r.shots == 1);
    CHECK(r.seed == 31);
    CHECK(std::isfinite(r.val_map));
    CHECK(std::isfinite(r.test_map));
    CHECK(r.test_map >= 0.0);
    CHECK(r.test_map <= 100.0);
    CHECK(std::isnan(r.mixed_map)); // clean-only evaluation
    CHECK(!r.reduction_defined);

    // prove the second call reads the cache: poison the cached value and
    // watch it come back
    fs::path cache;
    char name[64];
    std::snprintf(name, sizeof(name), "cell_%016llx.json",
                  static_cast<unsigned long long>(r.hash));
    cache = fs::path(fx.ctx.cache_dir) / name;
    REQUIRE(fs::exists(cache));
    std::ifstream in(cache);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    char val[32], poison[32];
    std::snprintf(val, sizeof(val), "\"test_map\": %.1f", r.test_map);
    std::size_t pos = text.find("\"test_map\"");
    REQUIRE(pos != std::string::npos);
    std::size_t comma = text.find(',', pos);
    std::snprintf(poison, sizeof(poison), "\"test_map\": 77.5");
    text = text.substr(0, pos) + poison + text.substr(comma);
    std::ofstream(cache) << text;
    (void)val;
    CellResult cached = run_cell(fx.ctx, rc, "probe", false);
    CHECK(cached.test_map == 77.5);
    fs::remove(cache);
    CellResult fresh = run_cell(fx.ctx, rc, "probe", false);
    CHECK(fresh.test_map == r.test_map); // deterministic re-run
    CHECK(fresh.val_map == r.val_map);
}

TEST_CASE("mixed-eval cells report a reduction against the clean map") {
    Fixture fx;
    RunConfig rc = fx.ctx.base;
    rc.seed = 32;
    CellResult r = run_cell(fx.ctx, rc, "robust", true);
    CHECK(std::isfinite(r.mixed_map));
    if (r.reduction_defined)
        CHECK(r.reduction ==
              doctest::Approx((r.mixed_map - r.test_map) / r.test_map * 100.0).epsilon(1e-9));
    else
        CHECK(std::isnan(r.reduction));
}

TEST_CASE("component ablation covers the four strategies") {
    Fixture fx;
    std::vector<CellResult> cells = run_component_ablation(fx.ctx, {1}, {31, 33});
    CHECK(cells.size() == 4 * 1 * 2);
    std::set<std::string> labels;
    for (const CellResult& c : cells) {
        labels.insert(c.label);
        CHECK(std::isfinite(c.test_map));
    }
    CHECK(labels == std::set<std::string>{"baseline", "+progressive", "+hed", "+hed+progressive"});

    std::string table = results_table(cells);
    CHECK(table.find("baseline") != std::string::npos);
    std::string summary = summary_table(cells);
    CHECK(summary.find("+hed+progressive") != std::string::npos);
    CHECK(summary.find("mean test") != std::string::npos);
}

TEST_CASE("structure sweep enumerates splits and tau columns") {
    Fixture fx;
    std::vector<CellResult> cells = run_structure_sweep(fx.ctx, {31});
    // L=2: 2+0 at tau 0 only, 0+2 and 1+1 across five tau values
    CHECK(cells.size() == 1 + 5 + 5);
    std::set<std::string> labels;
    for (const CellResult& c : cells) labels.insert(c.label);
    CHECK(labels.count("2+0 tau=0"));
    CHECK(labels.count("0+2 tau=0.5"));
    CHECK(labels.count("1+1 tau=1"));
    CHECK(labels.count("1+1 tau=0.25"));
    CHECK(!labels.count("2+0 tau=0.5"));
}

TEST_CASE("robustness study rotates every domain through the target role") {
    Fixture fx;
    std::vector<CellResult> cells = run_robustness_study(fx.ctx, {31});
    CHECK(cells.size() == 5 * 2); // five variants, two benchmark domains
    std::set<std::string> labels, domains;
    for (const CellResult& c : cells) {
        labels.insert(c.label);
        domains.insert(c.domain);
        CHECK(std::isfinite(c.mixed_map));
    }
    CHECK(labels.size() == 5);
    CHECK(labels.count("+hed+reinit+progressive"));
    CHECK(domains.size() == 2);

    std::string svg = reduction_svg(cells);
    CHECK(svg.find("<svg") != std::string::npos);

    std::string path = (fx.root / "results.jsonl").string();
    save_results(path, cells);
    std::vector<CellResult> back = load_results(path);
    REQUIRE(back.size() == cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        CHECK(back[i].label == cells[i].label);
        CHECK(back[i].hash == cells[i].hash);
        bool same_reduction = (std::isnan(back[i].reduction) && std::isnan(cells[i].reduction)) ||
                              back[i].reduction == cells[i].reduction;
        CHECK(same_reduction);
    }
}

TEST_CASE("cells without a domain are rejected") {
    Fixture fx;
    RunConfig rc = fx.ctx.base;
    rc.domain = "";
    CHECK_THROWS_AS(run_cell(fx.ctx, rc, "x", false), std::invalid_argument);
    rc.domain = "missing";
    CHECK_THROWS_AS(run_cell(fx.ctx, rc, "x", false), std::invalid_argument);
}

#pragma once

#include <string>
#include <vector>

#include "hedet/run_config.hpp"
#include "hedet/synthbench.hpp"

namespace hedet {

/// Shared setup for a grid of runs: where the benchmark lives, where cached
/// results and the pretrained checkpoint go, and the template config every
/// cell derives from (cells override structure/tau/progressive/domain/shots/
/// seed).
struct ExperimentContext {
    std::string bench_root;
    std::string cache_dir;
    RunConfig base;
    int pretrain_epochs = 12;
    std::uint64_t pretrain_seed = 9000;
};

struct CellResult {
    std::string label;
    std::string domain;
    int shots = 0;
    int seed = 0;
    std::uint64_t hash = 0;
    double val_map = 0.0;
    double test_map = 0.0;
    double mixed_map = 0.0; // NaN unless mixed evaluation ran
    double reduction = 0.0; // NaN unless defined
    bool reduction_defined = false;
};

/// Looks up an evaluation domain (or the base domain) by name.
const DomainSpec& find_domain(const BenchmarkManifest& manifest, const std::string& name);

/// The sequential-decoder checkpoint every cell fine-tunes from, trained on
/// the benchmark's base domain and cached on disk. One pretrained model is
/// shared by all seeds; seeds vary only the fine-tuning.
Checkpoint pretrain_base(const ExperimentContext& ctx);

/// One grid cell end to end: cached pretrain -> structure conversion ->
/// K-shot sampling -> fine-tune -> clean (and optionally CD-Mixed) test
/// evaluation. Results are cached by config hash; a cached cell is returned
/// without retraining.
CellResult run_cell(const ExperimentContext& ctx, const RunConfig& rc, const std::string& label,
                    bool mixed_eval);

/// {baseline, +progressive, +hed, +hed+progressive} x shots x seeds on the
/// template's target domain, clean evaluation.
std::vector<CellResult> run_component_ablation(const ExperimentContext& ctx,
                                               const std::vector<int>& shots,
                                               const std::vector<int>& seeds);

/// Decoder structures L+0, 0+L, and every K+(L-K) split, crossed with tau in
/// {0, .25, .5, .75, 1}; purely stacked rows carry tau 0 only.
std::vector<CellResult> run_structure_sweep(const ExperimentContext& ctx,
                                            const std::vector<int>& seeds);

/// Five training-strategy variants, each evaluated clean + CD-Mixed with
/// every benchmark domain taking one round as the target.
std::vector<CellResult> run_robustness_study(const ExperimentContext& ctx,
                                             const std::vector<int>& seeds);

std::string results_table(const std::vector<CellResult>& cells);

/// Per-(label, shots) means over seeds and domains.
std::string summary_table(const std::vector<CellResult>& cells);

/// Bar chart of mean reduction rates per label.
std::string reduction_svg(const std::vector<CellResult>& cells);

void save_results(const std::string& path, const std::vector<CellResult>& cells);
std::vector<CellResult> load_results(const std::string& path);

} // namespace hedet

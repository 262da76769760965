#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "hedet/train_control.hpp"

namespace hedet {

/// Complete description of one training run: model shape, decoder structure,
/// optimization schedule, augmentation, and data selection. Serializes to a
/// flat JSON object; loading rejects unknown keys.
struct RunConfig {
    // model
    int image_size = 96;
    int patch_size = 8;
    int encoder_layers = 2;
    int num_categories = 6;
    int d_model = 64;
    int n_heads = 4;
    int ffn_dim = 128;
    int n_q = 30;
    std::string structure = "1+5"; // stacked+parallel decoder layers
    double tau = 0.5;
    double dn_epsilon = 0.1;
    int dn_groups = 2;
    double lambda_dn = 1.0;
    double lambda_cls = 1.0;
    double lambda_box_l1 = 5.0;
    double lambda_box_giou = 2.0;
    // optimization
    double lr_main = 1e-4;
    double lr_encoder = 2e-5;
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    int batch_size = 4;
    int epochs = 100;
    int patience_no_progressive = 5;
    int patience_stage1 = 3;
    int patience_stage2 = 8;
    double plateau_factor = 0.5;
    double flip_prob = 0.5;
    double jitter_prob = 0.5;
    double mixup_prob = 0.3;
    bool progressive = true;
    std::string scheduler = "plateau";
    std::string parallel_init = "pretrained"; // or "random"
    // run
    std::string data_root;
    std::string domain;
    int shots = 5;
    std::uint64_t seed = 0;
    std::string device = "cpu";

    void validate() const;
    ModelConfig model_config() const;
    FitConfig fit_config() const;
};

/// "K+P" -> (K, L = K+P). Throws on malformed strings.
std::pair<int, int> parse_structure(const std::string& s);

std::string run_config_to_json(const RunConfig& rc);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);

/// FNV-1a over the canonical JSON form; keys result-cache entries.
std::uint64_t config_hash(const RunConfig& rc);

} // namespace hedet

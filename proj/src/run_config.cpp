#include "hedet/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hedet {

using nlohmann::json;

std::pair<int, int> parse_structure(const std::string& s) {
    std::size_t plus = s.find('+');
    if (plus == std::string::npos || plus == 0 || plus + 1 == s.size())
        throw std::invalid_argument("structure: expected K+P, got '" + s + "'");
    int k = 0, p = 0;
    std::size_t used = 0;
    try {
        k = std::stoi(s.substr(0, plus), &used);
        if (used != plus) throw std::invalid_argument("");
        p = std::stoi(s.substr(plus + 1), &used);
        if (used != s.size() - plus - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw std::invalid_argument("structure: expected K+P, got '" + s + "'");
    }
    if (k < 0 || p < 0 || k + p < 1)
        throw std::invalid_argument("structure: need K >= 0, P >= 0, K+P >= 1");
    return {k, k + p};
}

void RunConfig::validate() const {
    model_config().validate();
    fit_config().validate();
    if (shots < 1) throw std::invalid_argument("config: shots must be >= 1");
    if (parallel_init != "pretrained" && parallel_init != "random")
        throw std::invalid_argument("config: parallel_init must be pretrained or random");
    if (device != "cpu") throw std::invalid_argument("config: only the cpu device exists");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig cfg;
    cfg.image_size = image_size;
    cfg.patch_size = patch_size;
    cfg.encoder_layers = encoder_layers;
    cfg.num_categories = num_categories;
    auto [k, l] = parse_structure(structure);
    cfg.decoder.K = k;
    cfg.decoder.L = l;
    cfg.decoder.tau = tau;
    cfg.decoder.n_q = n_q;
    cfg.decoder.d_model = d_model;
    cfg.decoder.n_heads = n_heads;
    cfg.decoder.ffn_dim = ffn_dim;
    cfg.decoder.dn.epsilon = dn_epsilon;
    cfg.decoder.dn.groups = dn_groups;
    cfg.decoder.dn.lambda_dn = lambda_dn;
    return cfg;
}

FitConfig RunConfig::fit_config() const {
    FitConfig fc;
    fc.epochs = epochs;
    fc.batch_size = batch_size;
    fc.lr_main = lr_main;
    fc.lr_encoder = lr_encoder;
    fc.min_lr = min_lr;
    fc.weight_decay = weight_decay;
    fc.plateau_factor = plateau_factor;
    fc.patience_no_progressive = patience_no_progressive;
    fc.patience_stage1 = patience_stage1;
    fc.patience_stage2 = patience_stage2;
    fc.progressive = progressive;
    fc.scheduler = scheduler;
    fc.augment.flip_prob = flip_prob;
    fc.augment.color_jitter_prob = jitter_prob;
    fc.augment.mixup_prob = mixup_prob;
    fc.loss.lambda_cls = lambda_cls;
    fc.loss.lambda_box_l1 = lambda_box_l1;
    fc.loss.lambda_box_giou = lambda_box_giou;
    fc.loss.lambda_dn = lambda_dn;
    fc.seed = seed;
    return fc;
}

namespace {

json to_json_object(const RunConfig& rc) {
    return json{{"image_size", rc.image_size},
                {"patch_size", rc.patch_size},
                {"encoder_layers", rc.encoder_layers},
                {"num_categories", rc.num_categories},
                {"d_model", rc.d_model},
                {"n_heads", rc.n_heads},
                {"ffn_dim", rc.ffn_dim},
                {"n_q", rc.n_q},
                {"structure", rc.structure},
                {"tau", rc.tau},
                {"dn_epsilon", rc.dn_epsilon},
                {"dn_groups", rc.dn_groups},
                {"lambda_dn", rc.lambda_dn},
                {"lambda_cls", rc.lambda_cls},
                {"lambda_box_l1", rc.lambda_box_l1},
                {"lambda_box_giou", rc.lambda_box_giou},
                {"lr_main", rc.lr_main},
                {"lr_encoder", rc.lr_encoder},
                {"min_lr", rc.min_lr},
                {"weight_decay", rc.weight_decay},
                {"batch_size", rc.batch_size},
                {"epochs", rc.epochs},
                {"patience_no_progressive", rc.patience_no_progressive},
                {"patience_stage1", rc.patience_stage1},
                {"patience_stage2", rc.patience_stage2},
                {"plateau_factor", rc.plateau_factor},
                {"flip_prob", rc.flip_prob},
                {"jitter_prob", rc.jitter_prob},
                {"mixup_prob", rc.mixup_prob},
                {"progressive", rc.progressive},
                {"scheduler", rc.scheduler},
                {"parallel_init", rc.parallel_init},
                {"data_root", rc.data_root},
                {"domain", rc.domain},
                {"shots", rc.shots},
                {"seed", rc.seed},
                {"device", rc.device}};
}

} // namespace

std::string run_config_to_json(const RunConfig& rc) { return to_json_object(rc).dump(1); }

RunConfig run_config_from_json(const std::string& text) {
    json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    RunConfig rc;
    json known = to_json_object(rc);
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "'");

    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("image_size", rc.image_size);
    get("patch_size", rc.patch_size);
    get("encoder_layers", rc.encoder_layers);
    get("num_categories", rc.num_categories);
    get("d_model", rc.d_model);
    get("n_heads", rc.n_heads);
    get("ffn_dim", rc.ffn_dim);
    get("n_q", rc.n_q);
    get("structure", rc.structure);
    get("tau", rc.tau);
    get("dn_epsilon", rc.dn_epsilon);
    get("dn_groups", rc.dn_groups);
    get("lambda_dn", rc.lambda_dn);
    get("lambda_cls", rc.lambda_cls);
    get("lambda_box_l1", rc.lambda_box_l1);
    get("lambda_box_giou", rc.lambda_box_giou);
    get("lr_main", rc.lr_main);
    get("lr_encoder", rc.lr_encoder);
    get("min_lr", rc.min_lr);
    get("weight_decay", rc.weight_decay);
    get("batch_size", rc.batch_size);
    get("epochs", rc.epochs);
    get("patience_no_progressive", rc.patience_no_progressive);
    get("patience_stage1", rc.patience_stage1);
    get("patience_stage2", rc.patience_stage2);
    get("plateau_factor", rc.plateau_factor);
    get("flip_prob", rc.flip_prob);
    get("jitter_prob", rc.jitter_prob);
    get("mixup_prob", rc.mixup_prob);
    get("progressive", rc.progressive);
    get("scheduler", rc.scheduler);
    get("parallel_init", rc.parallel_init);
    get("data_root", rc.data_root);
    get("domain", rc.domain);
    get("shots", rc.shots);
    get("seed", rc.seed);
    get("device", rc.device);
    rc.validate();
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_run_config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return run_config_from_json(buf.str());
}

void save_run_config(const std::string& path, const RunConfig& rc) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_run_config: cannot open " + path);
    f << run_config_to_json(rc) << "\n";
}

std::uint64_t config_hash(const RunConfig& rc) {
    return RandomStream::fnv1a(to_json_object(rc).dump());
}

} // namespace hedet

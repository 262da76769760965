#include "hedet/train_control.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hedet/evaluator.hpp"

namespace hedet {

using nlohmann::json;

void PlateauConfig::validate() const {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau: factor in (0,1)");
    if (patience < 0) throw std::invalid_argument("plateau: negative patience");
    if (!(min_lr > 0.0)) throw std::invalid_argument("plateau: min_lr must be positive");
    if (!(eps >= 0.0)) throw std::invalid_argument("plateau: negative eps");
}

PlateauState make_plateau(const PlateauConfig& cfg, const std::vector<double>& init_lrs) {
    cfg.validate();
    PlateauState s;
    s.config = cfg;
    s.best_metric = -std::numeric_limits<double>::infinity();
    s.current_lr = init_lrs;
    for (double& lr : s.current_lr) lr = std::max(lr, cfg.min_lr);
    return s;
}

bool plateau_step(PlateauState& s, double val_metric) {
    if (!std::isfinite(val_metric)) throw std::invalid_argument("plateau_step: non-finite metric");
    if (val_metric > s.best_metric + s.config.eps) {
        s.best_metric = val_metric;
        s.epochs_since_improve = 0;
        return false;
    }
    ++s.epochs_since_improve;
    if (s.epochs_since_improve <= s.config.patience) return false;
    for (double& lr : s.current_lr) lr = std::max(lr * s.config.factor, s.config.min_lr);
    s.epochs_since_improve = 0;
    return true;
}

bool progressive_step(ProgressiveState& p, PlateauState& s, const ProgressiveConfig& cfg,
                      bool decayed) {
    if (!cfg.enabled || !decayed || p.stage != 1) return false;
    p.stage = 2;
    p.encoder_frozen = false;
    s.config.patience = cfg.stage2_patience;
    return true;
}

std::vector<ParamGroup> make_param_groups(const ParamStore& store, double lr_main,
                                          double lr_encoder) {
    std::vector<ParamGroup> groups(2);
    groups[0].name = "decoder";
    groups[0].init_lr = lr_main;
    groups[1].name = "encoder";
    groups[1].init_lr = lr_encoder;
    for (const auto& [name, m] : store.all())
        groups[name.rfind("enc.", 0) == 0 ? 1 : 0].params.push_back(name);
    std::size_t covered = 0;
    for (const ParamGroup& g : groups)
        for (const std::string& name : g.params) {
            if (!store.has(name)) throw std::logic_error("param group names a missing parameter");
            ++covered;
        }
    if (covered != store.all().size())
        throw std::logic_error("param groups do not partition the store");
    return groups;
}

void AdamWConfig::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("adamw: betas in [0,1)");
    if (!(eps > 0.0)) throw std::invalid_argument("adamw: eps must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("adamw: negative weight decay");
}

AdamW::AdamW(const AdamWConfig& cfg) : cfg_(cfg) { cfg.validate(); }

void AdamW::step(ParamStore& params, const std::vector<ParamGroup>& groups,
                 const std::vector<double>& lrs, const std::vector<bool>& active,
                 std::map<std::string, ad::Mat>& grads) {
    if (lrs.size() != groups.size() || active.size() != groups.size())
        throw std::invalid_argument("adamw: group/lr/mask size mismatch");

    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            if (!active[gi]) continue;
            for (const std::string& name : groups[gi].params) {
                auto it = grads.find(name);
                if (it != grads.end()) sq += it->second.squaredNorm();
            }
        }
        double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) {
            double scale = cfg_.clip_norm / norm;
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                if (!active[gi]) continue;
                for (const std::string& name : groups[gi].params) {
                    auto it = grads.find(name);
                    if (it != grads.end()) it->second *= scale;
                }
            }
        }
    }

    ++steps_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        if (!active[gi]) continue;
        for (const std::string& name : groups[gi].params) {
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            ad::Mat& p = params.at(name);
            const ad::Mat& g = it->second;
            auto [mit, fresh] = moments_.try_emplace(
                name, std::make_pair(ad::Mat::Zero(p.rows(), p.cols()),
                                     ad::Mat::Zero(p.rows(), p.cols())));
            (void)fresh;
            ad::Mat& m = mit->second.first;
            ad::Mat& v = mit->second.second;
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            ad::Mat mhat = m / bc1;
            ad::Mat denom = (v / bc2).cwiseSqrt() + ad::Mat::Constant(p.rows(), p.cols(), cfg_.eps);
            p -= lrs[gi] * (mhat.cwiseQuotient(denom) + cfg_.weight_decay * p);
        }
    }
}

void AugmentPolicy::validate() const {
    for (double pr : {flip_prob, color_jitter_prob, mixup_prob})
        if (!(pr >= 0.0 && pr <= 1.0)) throw std::invalid_argument("augment: probability in [0,1]");
    if (!(jitter_range >= 0.0 && jitter_range < 1.0))
        throw std::invalid_argument("augment: jitter range in [0,1)");
}

TrainExample augment(const TrainExample& sample, const TrainExample& partner,
                     const AugmentPolicy& policy, RandomStream& rng) {
    policy.validate();
    TrainExample out = sample;

    if (rng.bernoulli(policy.flip_prob)) {
        for (int y = 0; y < out.image.height; ++y)
            for (int x = 0; x < out.image.width / 2; ++x)
                for (int c = 0; c < 3; ++c)
                    std::swap(out.image.at(x, y, c), out.image.at(out.image.width - 1 - x, y, c));
        for (GtObject& o : out.objects)
            o.box = Box::center_size(1.0 - o.box.cx, o.box.cy, o.box.w, o.box.h);
    }

    if (rng.bernoulli(policy.color_jitter_prob)) {
        double scale[3], shift[3];
        for (int c = 0; c < 3; ++c) {
            scale[c] = rng.uniform(1.0 - policy.jitter_range, 1.0 + policy.jitter_range);
            shift[c] = rng.uniform(-policy.jitter_range, policy.jitter_range);
        }
        for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
            int c = static_cast<int>(i % 3);
            out.image.pixels[i] = std::clamp(out.image.pixels[i] * scale[c] + shift[c], 0.0, 1.0);
        }
    }

    if (rng.bernoulli(policy.mixup_prob)) {
        if (partner.image.width != out.image.width || partner.image.height != out.image.height)
            throw std::invalid_argument("augment: mixup partner size mismatch");
        double lambda = rng.uniform(0.3, 0.7);
        for (std::size_t i = 0; i < out.image.pixels.size(); ++i)
            out.image.pixels[i] =
                lambda * out.image.pixels[i] + (1.0 - lambda) * partner.image.pixels[i];
        out.objects.insert(out.objects.end(), partner.objects.begin(), partner.objects.end());
    }

    return out;
}

double cosine_lr(double init_lr, double min_lr, int epoch, int total_epochs) {
    if (epoch < 1 || epoch > total_epochs) throw std::invalid_argument("cosine_lr: epoch range");
    if (total_epochs == 1) return init_lr;
    double t = static_cast<double>(epoch - 1) / static_cast<double>(total_epochs - 1);
    return min_lr + (init_lr - min_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void FitConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("fit: epochs must be positive");
    if (batch_size < 1) throw std::invalid_argument("fit: batch size must be positive");
    if (!(lr_main > 0.0) || !(lr_encoder > 0.0))
        throw std::invalid_argument("fit: learning rates must be positive");
    if (!(min_lr > 0.0) || min_lr > lr_main || min_lr > lr_encoder)
        throw std::invalid_argument("fit: min_lr must be positive and below the init LRs");
    if (weight_decay < 0.0) throw std::invalid_argument("fit: negative weight decay");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
        throw std::invalid_argument("fit: plateau factor in (0,1)");
    if (patience_no_progressive < 0 || patience_stage1 < 0 || patience_stage2 < 0)
        throw std::invalid_argument("fit: negative patience");
    if (scheduler != "plateau" && scheduler != "cosine")
        throw std::invalid_argument("fit: scheduler must be plateau or cosine");
    augment.validate();
    loss.validate();
}

double evaluate_map(ParamStore& params, const ModelConfig& cfg,
                    const std::vector<TrainExample>& examples) {
    DatasetSplit gt;
    for (int c = 0; c < cfg.num_categories; ++c) gt.categories[c] = "c" + std::to_string(c);
    std::vector<ImageDetections> dets;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        int id = static_cast<int>(i);
        gt.images.push_back({id, "", cfg.image_size, cfg.image_size, examples[i].objects});
        dets.push_back({id, predict(params, examples[i].image, cfg, cfg.decoder.n_q, 0.0)});
    }
    return compute_map(dets, gt).map;
}

FitResult fit(const Checkpoint& init, const std::vector<TrainExample>& train,
              const std::vector<TrainExample>& val, const FitConfig& fc) {
    fc.validate();
    init.config.validate();
    if (train.empty()) throw std::invalid_argument("fit: empty train set");
    if (val.empty()) throw std::invalid_argument("fit: empty validation set");

    const ModelConfig& cfg = init.config;
    ParamStore params = init.params;
    std::vector<ParamGroup> groups = make_param_groups(params, fc.lr_main, fc.lr_encoder);

    PlateauConfig pc;
    pc.factor = fc.plateau_factor;
    pc.min_lr = fc.min_lr;
    pc.eps = fc.plateau_eps;
    pc.patience = fc.progressive ? fc.patience_stage1 : fc.patience_no_progressive;
    PlateauState plat = make_plateau(pc, {groups[0].init_lr, groups[1].init_lr});

    ProgressiveConfig prog_cfg;
    prog_cfg.enabled = fc.progressive;
    prog_cfg.stage1_patience = fc.patience_stage1;
    prog_cfg.stage2_patience = fc.patience_stage2;
    prog_cfg.no_progressive_patience = fc.patience_no_progressive;
    ProgressiveState prog;
    if (!fc.progressive) {
        prog.stage = 2;
        prog.encoder_frozen = false;
    }

    AdamWConfig oc;
    oc.weight_decay = fc.weight_decay;
    oc.clip_norm = fc.clip_norm;
    AdamW opt(oc);

    RandomStream root(fc.seed);
    FitResult out;
    out.best_val_map = -std::numeric_limits<double>::infinity();

    int n = static_cast<int>(train.size());
    for (int epoch = 1; epoch <= fc.epochs; ++epoch) {
        if (fc.scheduler == "cosine") {
            for (std::size_t gi = 0; gi < groups.size(); ++gi)
                plat.current_lr[gi] = cosine_lr(groups[gi].init_lr, fc.min_lr, epoch, fc.epochs);
            if (fc.progressive && prog.stage == 1 && epoch > fc.epochs / 2) {
                prog.stage = 2;
                prog.encoder_frozen = false;
            }
        }

        RandomStream epoch_rng = root.child("epoch").child(static_cast<std::uint64_t>(epoch));
        std::vector<int> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        epoch_rng.shuffle(order);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr_main = plat.current_lr[0];
        rec.lr_encoder = plat.current_lr[1];
        rec.stage = prog.stage;

        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += fc.batch_size) {
            std::vector<TrainExample> batch;
            for (int pos = start; pos < std::min(start + fc.batch_size, n); ++pos) {
                RandomStream aug_rng =
                    epoch_rng.child("aug").child(static_cast<std::uint64_t>(pos));
                int idx = order[static_cast<std::size_t>(pos)];
                int partner = n > 1 ? (idx + 1 + aug_rng.uniform_int(n - 1)) % n : idx;
                batch.push_back(augment(train[static_cast<std::size_t>(idx)],
                                        train[static_cast<std::size_t>(partner)], fc.augment,
                                        aug_rng));
            }
            ad::Tape t;
            ParamBinding p(t, params);
            RandomStream dn_rng = epoch_rng.child("dn").child(static_cast<std::uint64_t>(batches));
            RandomStream ri_rng =
                epoch_rng.child("reinit").child(static_cast<std::uint64_t>(batches));
            TapeLoss loss = forward_train(t, p, batch, cfg, fc.loss, &dn_rng, &ri_rng);
            if (!std::isfinite(loss.values.total)) {
                std::ostringstream msg;
                msg << "fit: non-finite loss " << loss.values.total << " at epoch " << epoch
                    << " batch " << batches;
                throw std::runtime_error(msg.str());
            }
            t.backward(loss.total);
            std::map<std::string, ad::Mat> grads = p.collect_grads();
            opt.step(params, groups, plat.current_lr, {true, !prog.encoder_frozen}, grads);
            loss_sum += loss.values.total;
            ++batches;
        }
        rec.train_loss = loss_sum / batches;
        rec.val_map = evaluate_map(params, cfg, val);

        if (fc.scheduler == "plateau") {
            rec.decayed = plateau_step(plat, rec.val_map);
            bool transitioned = progressive_step(prog, plat, prog_cfg, rec.decayed);
            if (transitioned && fc.encoder_resume_raw) plat.current_lr[1] = fc.lr_encoder;
        }
        out.log.push_back(rec);

        if (rec.val_map > out.best_val_map) {
            out.best_val_map = rec.val_map;
            out.best_epoch = epoch;
            out.best.config = cfg;
            out.best.params = params;
        }
    }
    return out;
}

std::string log_to_jsonl(const std::vector<EpochRecord>& log) {
    std::ostringstream out;
    for (const EpochRecord& r : log) {
        json row = {{"epoch", r.epoch},     {"train_loss", r.train_loss},
                    {"val_map", r.val_map}, {"lr_main", r.lr_main},
                    {"lr_encoder", r.lr_encoder}, {"stage", r.stage},
                    {"decayed", r.decayed}};
        out << row.dump() << "\n";
    }
    return out.str();
}

void save_log(const std::string& path, const std::vector<EpochRecord>& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_log: cannot open " + path);
    f << log_to_jsonl(log);
}

std::vector<EpochRecord> load_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_log: cannot open " + path);
    std::vector<EpochRecord> log;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json row = json::parse(line);
        EpochRecord r;
        r.epoch = row.at("epoch").get<int>();
        r.train_loss = row.at("train_loss").get<double>();
        r.val_map = row.at("val_map").get<double>();
        r.lr_main = row.at("lr_main").get<double>();
        r.lr_encoder = row.at("lr_encoder").get<double>();
        r.stage = row.at("stage").get<int>();
        r.decayed = row.at("decayed").get<bool>();
        log.push_back(r);
    }
    return log;
}

} // namespace hedet

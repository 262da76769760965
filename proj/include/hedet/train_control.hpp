#pragma once

#include <map>
#include <string>
#include <vector>

#include "hedet/checkpoint.hpp"
#include "hedet/detector.hpp"

namespace hedet {

struct PlateauConfig {
    double factor = 0.5;
    int patience = 3;
    double min_lr = 1e-6;
    double eps = 1e-8; // absolute improvement threshold, mode max

    void validate() const;
};

/// Validation-metric plateau tracker (mode max) over per-group LRs.
struct PlateauState {
    PlateauConfig config;
    double best_metric = 0.0; // set to -inf by make_plateau
    int epochs_since_improve = 0;
    std::vector<double> current_lr;
};

PlateauState make_plateau(const PlateauConfig& cfg, const std::vector<double>& init_lrs);

/// Feeds one epoch's validation metric. Improvement (metric > best + eps)
/// resets the counter; once the counter exceeds the patience, every group LR
/// is multiplied by the factor (floored at min_lr) and the step reports a
/// decay event. Throws on non-finite metrics.
bool plateau_step(PlateauState& s, double val_metric);

struct ProgressiveConfig {
    bool enabled = true;
    int stage1_patience = 3;
    int stage2_patience = 8;
    int no_progressive_patience = 5;
};

struct ProgressiveState {
    int stage = 1;
    bool encoder_frozen = true;
};

/// Stage 1 -> 2 on the first decay event: unfreezes the encoder group and
/// switches the plateau patience to the stage-2 value. Later decays are
/// no-ops; the transition never reverses. Returns true when it fires.
bool progressive_step(ProgressiveState& p, PlateauState& s, const ProgressiveConfig& cfg,
                      bool decayed);

struct ParamGroup {
    std::string name; // "decoder" or "encoder"
    std::vector<std::string> params;
    double init_lr = 0.0;
};

/// Two-way partition of the store: "enc.*" at the encoder LR, everything
/// else (decoder, heads, query embeddings) at the main LR. Throws unless the
/// groups form an exact partition of the store.
std::vector<ParamGroup> make_param_groups(const ParamStore& store, double lr_main = 1e-4,
                                          double lr_encoder = 2e-5);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double clip_norm = 1.0; // global-norm clip over active grads; <= 0 disables

    void validate() const;
};

/// Decoupled-weight-decay adaptive optimizer with per-group LRs and
/// frozen-group masking. Inactive groups receive no update of any kind.
class AdamW {
public:
    explicit AdamW(const AdamWConfig& cfg);

    /// One update. lrs[i]/active[i] describe groups[i]; grads are clipped in
    /// place to the global norm bound first. Parameters without a gradient
    /// entry are skipped.
    void step(ParamStore& params, const std::vector<ParamGroup>& groups,
              const std::vector<double>& lrs, const std::vector<bool>& active,
              std::map<std::string, ad::Mat>& grads);

    long steps() const { return steps_; }

private:
    AdamWConfig cfg_;
    std::map<std::string, std::pair<ad::Mat, ad::Mat>> moments_;
    long steps_ = 0;
};

struct AugmentPolicy {
    double flip_prob = 0.5;
    double color_jitter_prob = 0.5;
    double mixup_prob = 0.3;
    double jitter_range = 0.2; // per-channel scale/shift bound

    void validate() const;
};

/// Draw order per sample: flip coin (mirror pixels, cx -> 1-cx), jitter coin
/// (per-channel scale in [1-r,1+r] and shift in [-r,r], clamped), mixup coin
/// (convex pixel blend with the partner, annotation union). Boxes are only
/// touched by the flip.
TrainExample augment(const TrainExample& sample, const TrainExample& partner,
                     const AugmentPolicy& policy, RandomStream& rng);

/// Cosine annealing value for a 1-based epoch: init at epoch 1, min_lr at
/// the final epoch.
double cosine_lr(double init_lr, double min_lr, int epoch, int total_epochs);

struct FitConfig {
    int epochs = 100;
    int batch_size = 4;
    double lr_main = 1e-4;
    double lr_encoder = 2e-5;
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    double clip_norm = 1.0;
    double plateau_factor = 0.5;
    double plateau_eps = 1e-8;
    int patience_no_progressive = 5;
    int patience_stage1 = 3;
    int patience_stage2 = 8;
    bool progressive = true;
    std::string scheduler = "plateau"; // or "cosine" (stage switch at epochs/2)
    bool encoder_resume_raw = false;   // unfreeze resumes at the raw init LR
    AugmentPolicy augment;
    LossWeights loss;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_map = 0.0;
    double lr_main = 0.0;
    double lr_encoder = 0.0;
    int stage = 1;
    bool decayed = false;
};

struct FitResult {
    Checkpoint best;
    int best_epoch = 0;
    double best_val_map = 0.0;
    std::vector<EpochRecord> log;
};

/// mAP@[.5:.95] of the current weights over in-memory examples (all n_q
/// predictions kept, no score floor).
double evaluate_map(ParamStore& params, const ModelConfig& cfg,
                    const std::vector<TrainExample>& examples);

/// Full fine-tuning loop: augmented mini-batch steps, per-epoch validation
/// mAP, plateau + progressive scheduling, best-checkpoint selection. The log
/// records the LR/stage in effect during each epoch; a decay marked on epoch
/// e takes effect from epoch e+1. Aborts on non-finite loss.
FitResult fit(const Checkpoint& init, const std::vector<TrainExample>& train,
              const std::vector<TrainExample>& val, const FitConfig& fc);

/// Line-delimited JSON, one epoch record per line.
std::string log_to_jsonl(const std::vector<EpochRecord>& log);
void save_log(const std::string& path, const std::vector<EpochRecord>& log);
std::vector<EpochRecord> load_log(const std::string& path);

} // namespace hedet

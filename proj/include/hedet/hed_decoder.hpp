#pragma once

#include <vector>

#include "hedet/losses.hpp"
#include "hedet/nn.hpp"

namespace hedet {

/// Structural configuration of the hybrid ensemble decoder: layers 1..K run
/// sequentially, layers K+1..L run in parallel on the K-th layer's output.
struct DecoderConfig {
    int L = 6;
    int K = 1;
    double tau = 0.5; // denoising-query re-init probability per parallel branch
    int n_q = 30;
    int d_model = 64;
    int n_heads = 4;
    int ffn_dim = 128;
    DenoisingConfig dn;
    bool dn_identity_match = false; // force identity pairing in the dn loss
    bool aggregate_logits = false;  // average logits instead of probabilities

    void validate() const;
};

/// Object queries plus denoising groups, stored as one (n_obj + sum(groups))
/// x d matrix with object queries first.
struct QueryBundle {
    ad::Var queries;
    int n_obj = 0;
    std::vector<int> group_sizes;
    std::vector<char> provenance; // per group: 1 = reinitialized, 0 = inherited

    int total_rows() const {
        int n = n_obj;
        for (int g : group_sizes) n += g;
        return n;
    }
};

/// One decoder layer's predictions after the shared heads.
struct LayerOutput {
    int layer_index = 0;
    ad::Var cls_logits;             // n_obj x C
    ad::Var boxes;                  // n_obj x 4 post-sigmoid center-size
    std::vector<ad::Var> dn_logits; // per denoising group
    std::vector<ad::Var> dn_boxes;
};

/// Test hook: per-parallel-branch re-init decisions and dn input snapshots.
struct HybridTrace {
    std::vector<char> branch_reinit;
    std::vector<ad::Mat> branch_dn_inputs;
};

struct AggregateResult {
    Eigen::MatrixXd probs; // n_obj x C
    Eigen::MatrixXd boxes; // n_obj x 4 center-size
};

/// Registers every decoder parameter: query embeddings, dn embedding tables,
/// L decoder layers, output norm, shared prediction heads. The parameter set
/// depends only on L (never on K or tau).
void register_decoder_params(ParamStore& s, const DecoderConfig& cfg, int num_categories);

/// Additive self-attention mask for the bundle layout: object queries attend
/// only to object queries; each dn group attends only within itself.
ad::Mat dn_attention_mask(int n_obj, const std::vector<int>& group_sizes);

/// Embeds one noisy group: category embedding + linear projection of the
/// perturbed box. Consumes four uniforms per object in GT order.
ad::Var embed_dn_group(ad::Tape& t, ParamBinding& p, const std::vector<GtObject>& gts,
                       const DenoisingConfig& cfg, int num_categories, RandomStream& rng);

/// Value-level single-query embedding (spec surface for tests).
Eigen::VectorXd embed_dn_query(ParamStore& s, const GtObject& gt, const DenoisingConfig& cfg,
                               int num_categories, RandomStream& rng);

/// Initial bundle: learned object queries, plus cfg.dn.groups noisy copies of
/// the GT set when training with nonempty GT.
QueryBundle initial_bundle(ad::Tape& t, ParamBinding& p, const DecoderConfig& cfg,
                           int num_categories, bool train, const std::vector<GtObject>* gts,
                           RandomStream* dn_rng);

/// One decoder layer over the bundle (mask applied when dn groups exist).
QueryBundle apply_decoder_layer(ad::Tape& t, ParamBinding& p, int layer_index,
                                const QueryBundle& q, ad::Var memory, const DecoderConfig& cfg);

/// Shared heads on the layer's output queries.
LayerOutput apply_heads(ad::Tape& t, ParamBinding& p, int layer_index, const QueryBundle& q);

/// Eq. 7 for one parallel branch: with probability tau, replace the inherited
/// dn queries with freshly embedded ones (new noise, same GT set).
QueryBundle reinit_dn(ad::Tape& t, ParamBinding& p, const QueryBundle& q_k,
                      const DecoderConfig& cfg, int num_categories,
                      const std::vector<GtObject>& gts, RandomStream& reinit_rng,
                      RandomStream& dn_rng);

/// Full hybrid forward: K sequential layers, then L-K parallel branches each
/// consuming the K-th output. Returns exactly L LayerOutputs. In infer mode
/// no dn queries exist and no rng is consumed.
std::vector<LayerOutput> forward_hybrid(ad::Tape& t, ParamBinding& p, ad::Var memory,
                                        const DecoderConfig& cfg, int num_categories, bool train,
                                        const std::vector<GtObject>* gts, RandomStream* dn_rng,
                                        RandomStream* reinit_rng, HybridTrace* trace = nullptr);

/// Eq. 6: uniform mean over layers of post-sigmoid probabilities and
/// center-size boxes (or of logits when cfg.aggregate_logits).
AggregateResult aggregate(const ad::Tape& t, const std::vector<LayerOutput>& outputs,
                          bool logit_space = false);

} // namespace hedet

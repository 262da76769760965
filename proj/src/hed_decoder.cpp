#include "hedet/hed_decoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hedet {

void DecoderConfig::validate() const {
    if (L < 1) throw std::invalid_argument("decoder: L must be >= 1");
    if (K < 0 || K > L) throw std::invalid_argument("decoder: need 0 <= K <= L");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("decoder: tau must be in [0,1]");
    if (n_q < 1) throw std::invalid_argument("decoder: N_q must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw std::invalid_argument("decoder: d_model must be divisible by n_heads");
    if (ffn_dim < 1) throw std::invalid_argument("decoder: ffn_dim must be >= 1");
    dn.validate();
}

void register_decoder_params(ParamStore& s, const DecoderConfig& cfg, int num_categories) {
    cfg.validate();
    if (num_categories < 1) throw std::invalid_argument("decoder: need >= 1 category");
    s.add("query.embed", cfg.n_q, cfg.d_model);
    s.add("dn.cat", num_categories, cfg.d_model);
    register_linear(s, "dn.box", 4, cfg.d_model);
    for (int l = 0; l < cfg.L; ++l)
        register_decoder_layer(s, "dec.l" + std::to_string(l), cfg.d_model, cfg.ffn_dim);
    register_layer_norm(s, "dec.out", cfg.d_model);
    register_linear(s, "head.cls", cfg.d_model, num_categories);
    register_linear(s, "head.box", cfg.d_model, 4);
}

ad::Mat dn_attention_mask(int n_obj, const std::vector<int>& group_sizes) {
    int total = n_obj;
    for (int g : group_sizes) total += g;
    const double ninf = -std::numeric_limits<double>::infinity();
    ad::Mat mask = ad::Mat::Constant(total, total, ninf);
    mask.topLeftCorner(n_obj, n_obj).setZero();
    int at = n_obj;
    for (int g : group_sizes) {
        mask.block(at, at, g, g).setZero();
        at += g;
    }
    return mask;
}

ad::Var embed_dn_group(ad::Tape& t, ParamBinding& p, const std::vector<GtObject>& gts,
                       const DenoisingConfig& cfg, int num_categories, RandomStream& rng) {
    if (gts.empty()) throw std::invalid_argument("dn embed: empty GT set");
    const int m = static_cast<int>(gts.size());
    std::vector<int> cats;
    cats.reserve(gts.size());
    ad::Mat noisy(m, 4);
    for (int i = 0; i < m; ++i) {
        const GtObject& gt = gts[static_cast<std::size_t>(i)];
        if (gt.category < 0 || gt.category >= num_categories)
            throw std::out_of_range("dn embed: unknown category");
        cats.push_back(gt.category);
        Box b = perturb_box(gt.box, cfg, rng);
        noisy.row(i) << b.cx, b.cy, b.w, b.h;
    }
    ad::Var cat_part = ad::gather_rows(t, p["dn.cat"], cats);
    ad::Var box_part = ad::add_rowvec(t, ad::matmul(t, t.leaf(noisy), p["dn.box.w"]), p["dn.box.b"]);
    return ad::add(t, cat_part, box_part);
}

Eigen::VectorXd embed_dn_query(ParamStore& s, const GtObject& gt, const DenoisingConfig& cfg,
                               int num_categories, RandomStream& rng) {
    ad::Tape t;
    ParamBinding p(t, s);
    ad::Var v = embed_dn_group(t, p, {gt}, cfg, num_categories, rng);
    return t.value(v).row(0).transpose();
}

QueryBundle initial_bundle(ad::Tape& t, ParamBinding& p, const DecoderConfig& cfg,
                           int num_categories, bool train, const std::vector<GtObject>* gts,
                           RandomStream* dn_rng) {
    QueryBundle q;
    q.n_obj = cfg.n_q;
    ad::Var obj = p["query.embed"];
    if (!train || gts == nullptr || gts->empty()) {
        q.queries = obj;
        return q;
    }
    if (dn_rng == nullptr) throw std::invalid_argument("initial_bundle: training needs a dn rng");
    std::vector<ad::Var> parts{obj};
    for (int g = 0; g < cfg.dn.groups; ++g) {
        parts.push_back(embed_dn_group(t, p, *gts, cfg.dn, num_categories, *dn_rng));
        q.group_sizes.push_back(static_cast<int>(gts->size()));
        q.provenance.push_back(0);
    }
    q.queries = ad::concat_rows(t, parts);
    return q;
}

QueryBundle apply_decoder_layer(ad::Tape& t, ParamBinding& p, int layer_index,
                                const QueryBundle& q, ad::Var memory, const DecoderConfig& cfg) {
    if (layer_index < 0 || layer_index >= cfg.L)
        throw std::out_of_range("decoder layer index out of range");
    QueryBundle out = q;
    const std::string prefix = "dec.l" + std::to_string(layer_index);
    if (q.group_sizes.empty()) {
        out.queries = decoder_layer(t, p, prefix, q.queries, memory, cfg.n_heads);
    } else {
        const ad::Mat mask = dn_attention_mask(q.n_obj, q.group_sizes);
        out.queries = decoder_layer(t, p, prefix, q.queries, memory, cfg.n_heads, &mask);
    }
    return out;
}

LayerOutput apply_heads(ad::Tape& t, ParamBinding& p, int layer_index, const QueryBundle& q) {
    LayerOutput out;
    out.layer_index = layer_index;
    ad::Var normed = layer_norm_block(t, p, "dec.out", q.queries);
    ad::Var logits = linear(t, p, "head.cls", normed);
    ad::Var boxes = ad::sigmoid(t, linear(t, p, "head.box", normed));
    out.cls_logits = ad::slice_rows(t, logits, 0, q.n_obj);
    out.boxes = ad::slice_rows(t, boxes, 0, q.n_obj);
    int at = q.n_obj;
    for (int g : q.group_sizes) {
        out.dn_logits.push_back(ad::slice_rows(t, logits, at, g));
        out.dn_boxes.push_back(ad::slice_rows(t, boxes, at, g));
        at += g;
    }
    return out;
}

QueryBundle reinit_dn(ad::Tape& t, ParamBinding& p, const QueryBundle& q_k,
                      const DecoderConfig& cfg, int num_categories,
                      const std::vector<GtObject>& gts, RandomStream& reinit_rng,
                      RandomStream& dn_rng) {
    const bool redo = reinit_rng.bernoulli(cfg.tau);
    if (!redo || q_k.group_sizes.empty()) {
        QueryBundle out = q_k;
        std::fill(out.provenance.begin(), out.provenance.end(), char(0));
        return out;
    }
    QueryBundle out;
    out.n_obj = q_k.n_obj;
    std::vector<ad::Var> parts{ad::slice_rows(t, q_k.queries, 0, q_k.n_obj)};
    for (std::size_t g = 0; g < q_k.group_sizes.size(); ++g) {
        parts.push_back(embed_dn_group(t, p, gts, cfg.dn, num_categories, dn_rng));
        out.group_sizes.push_back(static_cast<int>(gts.size()));
        out.provenance.push_back(1);
    }
    out.queries = ad::concat_rows(t, parts);
    return out;
}

std::vector<LayerOutput> forward_hybrid(ad::Tape& t, ParamBinding& p, ad::Var memory,
                                        const DecoderConfig& cfg, int num_categories, bool train,
                                        const std::vector<GtObject>* gts, RandomStream* dn_rng,
                                        RandomStream* reinit_rng, HybridTrace* trace) {
    cfg.validate();
    QueryBundle bundle = initial_bundle(t, p, cfg, num_categories, train, gts, dn_rng);
    std::vector<LayerOutput> outputs;
    outputs.reserve(static_cast<std::size_t>(cfg.L));

    for (int l = 0; l < cfg.K; ++l) {
        bundle = apply_decoder_layer(t, p, l, bundle, memory, cfg);
        outputs.push_back(apply_heads(t, p, l, bundle));
    }

    const QueryBundle q_k = bundle; // Q^K feeding every parallel branch
    for (int l = cfg.K; l < cfg.L; ++l) {
        QueryBundle branch = q_k;
        if (train && reinit_rng != nullptr && gts != nullptr && !gts->empty())
            branch = reinit_dn(t, p, q_k, cfg, num_categories, *gts, *reinit_rng, *dn_rng);
        if (trace) {
            trace->branch_reinit.push_back(branch.provenance.empty() ? char(0)
                                                                     : branch.provenance[0]);
            const int dn_rows = branch.total_rows() - branch.n_obj;
            trace->branch_dn_inputs.push_back(
                t.value(branch.queries).bottomRows(dn_rows));
        }
        QueryBundle refined = apply_decoder_layer(t, p, l, branch, memory, cfg);
        outputs.push_back(apply_heads(t, p, l, refined));
    }
    return outputs;
}

AggregateResult aggregate(const ad::Tape& t, const std::vector<LayerOutput>& outputs,
                          bool logit_space) {
    if (outputs.empty()) throw std::invalid_argument("aggregate: empty output list");
    const ad::Mat& first_logits = t.value(outputs[0].cls_logits);
    AggregateResult out;
    out.probs = ad::Mat::Zero(first_logits.rows(), first_logits.cols());
    out.boxes = ad::Mat::Zero(first_logits.rows(), 4);
    for (const LayerOutput& lo : outputs) {
        const ad::Mat& z = t.value(lo.cls_logits);
        if (z.rows() != out.probs.rows() || z.cols() != out.probs.cols())
            throw std::invalid_argument("aggregate: inconsistent shapes");
        if (logit_space)
            out.probs += z;
        else
            out.probs += z.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        out.boxes += t.value(lo.boxes);
    }
    const double inv = 1.0 / static_cast<double>(outputs.size());
    out.probs *= inv;
    out.boxes *= inv;
    if (logit_space)
        out.probs = out.probs.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return out;
}

} // namespace hedet

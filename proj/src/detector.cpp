#include "hedet/detector.hpp"

#include <algorithm>
#include <stdexcept>

namespace hedet {

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0)
        throw std::invalid_argument("image_size and patch_size must be positive");
    if (image_size % patch_size != 0)
        throw std::invalid_argument("image_size must be divisible by patch_size");
    if (encoder_layers < 0) throw std::invalid_argument("encoder_layers must be >= 0");
    if (num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
    decoder.validate();
}

void register_model_params(ParamStore& s, const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.decoder.d_model;
    register_linear(s, "enc.patch", cfg.patch_dim(), d);
    s.add("enc.pos", cfg.num_tokens(), d);
    for (int i = 0; i < cfg.encoder_layers; ++i)
        register_encoder_layer(s, "enc.l" + std::to_string(i), d, cfg.decoder.ffn_dim);
    register_layer_norm(s, "enc.final", d);
    register_decoder_params(s, cfg.decoder, cfg.num_categories);
}

Eigen::MatrixXd patch_matrix(const Image& img, const ModelConfig& cfg) {
    if (img.width != cfg.image_size || img.height != cfg.image_size ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("image does not match the configured size");
    const int side = cfg.tokens_per_side();
    const int ps = cfg.patch_size;
    Eigen::MatrixXd patches(cfg.num_tokens(), cfg.patch_dim());
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            int row = py * side + px;
            int col = 0;
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x)
                    for (int c = 0; c < 3; ++c)
                        patches(row, col++) = img.at(px * ps + x, py * ps + y, c);
        }
    return patches;
}

ad::Var extract_tokens(ad::Tape& t, ParamBinding& p, const Image& img, const ModelConfig& cfg) {
    ad::Var patches = t.leaf(patch_matrix(img, cfg));
    ad::Var x = ad::add(t, linear(t, p, "enc.patch", patches), p["enc.pos"]);
    for (int i = 0; i < cfg.encoder_layers; ++i)
        x = encoder_layer(t, p, "enc.l" + std::to_string(i), x, cfg.decoder.n_heads);
    return layer_norm_block(t, p, "enc.final", x);
}

AggregateResult forward_infer(ParamStore& s, const Image& img, const ModelConfig& cfg) {
    ad::Tape t;
    ParamBinding p(t, s);
    ad::Var memory = extract_tokens(t, p, img, cfg);
    std::vector<LayerOutput> outputs = forward_hybrid(t, p, memory, cfg.decoder,
                                                      cfg.num_categories, /*train=*/false,
                                                      nullptr, nullptr, nullptr);
    return aggregate(t, outputs, cfg.decoder.aggregate_logits);
}

std::vector<Detection> predict(ParamStore& s, const Image& img, const ModelConfig& cfg,
                               int top_k, double score_threshold) {
    std::vector<Detection> out;
    if (top_k <= 0) return out;
    AggregateResult agg = forward_infer(s, img, cfg);
    for (int q = 0; q < agg.probs.rows(); ++q) {
        int best = 0;
        for (int c = 1; c < agg.probs.cols(); ++c)
            if (agg.probs(q, c) > agg.probs(q, best)) best = c;
        double score = agg.probs(q, best);
        if (score < score_threshold) continue;
        // aggregated sigmoids can fall below the Box validity floor
        double w = std::max(agg.boxes(q, 2), 1e-5);
        double h = std::max(agg.boxes(q, 3), 1e-5);
        out.push_back({Box::center_size(agg.boxes(q, 0), agg.boxes(q, 1), w, h), best, score});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (static_cast<int>(out.size()) > top_k) out.resize(static_cast<std::size_t>(top_k));
    return out;
}

namespace {

// Hungarian match of one layer's object predictions against gts, computed on
// values; the assignment is a constant during backprop.
MatchResult layer_match(const ad::Tape& t, const LayerOutput& lo,
                        const std::vector<GtObject>& gts) {
    const ad::Mat& logits = t.value(lo.cls_logits);
    Eigen::MatrixXd probs = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    return hungarian(match_cost_matrix(probs, t.value(lo.boxes), gts));
}

} // namespace

TapeLoss forward_train_image(ad::Tape& t, ParamBinding& p, const Image& img,
                             const std::vector<GtObject>& gts, const ModelConfig& cfg,
                             const LossWeights& w, RandomStream* dn_rng, RandomStream* reinit_rng,
                             HybridTrace* trace) {
    cfg.validate();
    w.validate();
    for (const GtObject& gt : gts)
        if (gt.category < 0 || gt.category >= cfg.num_categories)
            throw std::invalid_argument("annotation references unknown category");

    ad::Var memory = extract_tokens(t, p, img, cfg);
    std::vector<LayerOutput> outputs = forward_hybrid(t, p, memory, cfg.decoder,
                                                      cfg.num_categories, /*train=*/true, &gts,
                                                      dn_rng, reinit_rng, trace);
    const int L = cfg.decoder.L;
    const int K = cfg.decoder.K;

    TapeLoss out;
    ad::Var total;
    ad::Var dn_parallel; // summed across branches, averaged at the end
    double dn_stacked_value = 0.0;
    double dn_parallel_value = 0.0;
    for (int l = 0; l < L; ++l) {
        const LayerOutput& lo = outputs[static_cast<std::size_t>(l)];
        TapeLoss match = match_loss_tape(t, lo.cls_logits, lo.boxes, gts, layer_match(t, lo, gts), w);
        total = total.valid() ? ad::add(t, total, match.total) : match.total;
        out.values.cls += match.values.cls;
        out.values.box_l1 += match.values.box_l1;
        out.values.box_giou += match.values.box_giou;

        ad::Var dn_layer;
        double dn_layer_value = 0.0;
        for (std::size_t g = 0; g < lo.dn_logits.size(); ++g) {
            TapeLoss dn = dn_group_loss_tape(t, lo.dn_logits[g], lo.dn_boxes[g], gts,
                                             cfg.decoder.dn_identity_match, w);
            dn_layer = dn_layer.valid() ? ad::add(t, dn_layer, dn.total) : dn.total;
            dn_layer_value += dn.values.total;
        }
        if (!dn_layer.valid()) continue;
        if (l < K) {
            total = ad::add(t, total, ad::scale(t, dn_layer, w.lambda_dn));
            dn_stacked_value += dn_layer_value;
        } else {
            dn_parallel = dn_parallel.valid() ? ad::add(t, dn_parallel, dn_layer) : dn_layer;
            dn_parallel_value += dn_layer_value;
        }
    }
    if (dn_parallel.valid()) {
        double inv = 1.0 / static_cast<double>(L - K);
        total = ad::add(t, total, ad::scale(t, dn_parallel, w.lambda_dn * inv));
        dn_parallel_value *= inv;
    }
    out.total = total;
    out.values.dn = dn_stacked_value + dn_parallel_value;
    out.values.total = t.value(total)(0, 0);
    return out;
}

TapeLoss forward_train(ad::Tape& t, ParamBinding& p, const std::vector<TrainExample>& batch,
                       const ModelConfig& cfg, const LossWeights& w, RandomStream* dn_rng,
                       RandomStream* reinit_rng) {
    if (batch.empty()) throw std::invalid_argument("forward_train: empty batch");
    TapeLoss out;
    ad::Var total;
    for (const TrainExample& ex : batch) {
        TapeLoss one = forward_train_image(t, p, ex.image, ex.objects, cfg, w, dn_rng, reinit_rng);
        total = total.valid() ? ad::add(t, total, one.total) : one.total;
        out.values.cls += one.values.cls;
        out.values.box_l1 += one.values.box_l1;
        out.values.box_giou += one.values.box_giou;
        out.values.dn += one.values.dn;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    out.total = ad::scale(t, total, inv);
    out.values.cls *= inv;
    out.values.box_l1 *= inv;
    out.values.box_giou *= inv;
    out.values.dn *= inv;
    out.values.total = t.value(out.total)(0, 0);
    return out;
}

} // namespace hedet

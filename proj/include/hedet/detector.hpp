#pragma once

#include <vector>

#include "hedet/hed_decoder.hpp"
#include "hedet/image.hpp"

namespace hedet {

struct ModelConfig {
    int image_size = 96;
    int patch_size = 8;
    int encoder_layers = 2;
    int num_categories = 6;
    DecoderConfig decoder;

    void validate() const;
    int tokens_per_side() const { return image_size / patch_size; }
    int num_tokens() const { return tokens_per_side() * tokens_per_side(); }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

struct Detection {
    Box box;
    int category = 0;
    double score = 0.0; // aggregated probability of the reported category
};

/// One training sample; batches own their (possibly augmented) images.
struct TrainExample {
    Image image;
    std::vector<GtObject> objects;
};

/// Registers the full model: "enc.*" backbone parameters plus the decoder
/// set from register_decoder_params. The encoder prefix is what the
/// progressive-freezing param groups key on.
void register_model_params(ParamStore& s, const ModelConfig& cfg);

/// Row-major patch scan; each row is one patch's rgb values, pixel-major.
Eigen::MatrixXd patch_matrix(const Image& img, const ModelConfig& cfg);

/// Patch embedding + positional embedding + encoder stack + final norm.
/// Errors when the image does not match the configured size.
ad::Var extract_tokens(ad::Tape& t, ParamBinding& p, const Image& img, const ModelConfig& cfg);

/// Infer-mode forward with Eq. 6 aggregation over all L layer outputs.
AggregateResult forward_infer(ParamStore& s, const Image& img, const ModelConfig& cfg);

/// Per-query argmax category, threshold + top_k filtering, sorted by
/// descending score (stable in query order). NMS-free.
std::vector<Detection> predict(ParamStore& s, const Image& img, const ModelConfig& cfg,
                               int top_k, double score_threshold);

/// Eq. 4 for one image on an open tape. Breakdown fields: cls/box_l1/box_giou
/// are the matching losses summed over all L layers (unweighted); dn is the
/// denoising aggregate before lambda_dn (stacked layers summed, parallel
/// branches averaged); total applies all weights.
TapeLoss forward_train_image(ad::Tape& t, ParamBinding& p, const Image& img,
                             const std::vector<GtObject>& gts, const ModelConfig& cfg,
                             const LossWeights& w, RandomStream* dn_rng, RandomStream* reinit_rng,
                             HybridTrace* trace = nullptr);

/// Batch loss: mean of per-image totals (breakdown fields averaged too).
TapeLoss forward_train(ad::Tape& t, ParamBinding& p, const std::vector<TrainExample>& batch,
                       const ModelConfig& cfg, const LossWeights& w, RandomStream* dn_rng,
                       RandomStream* reinit_rng);

} // namespace hedet

#pragma once

#include <map>
#include <string>
#include <vector>

#include "hedet/autodiff.hpp"
#include "hedet/rng.hpp"

namespace hedet {

/// Named trainable arrays. Map order makes every iteration deterministic.
class ParamStore {
public:
    /// Registers a zero-initialized parameter; name must be fresh.
    ad::Mat& add(const std::string& name, int rows, int cols);

    ad::Mat& at(const std::string& name);
    const ad::Mat& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, ad::Mat>& all() { return params_; }
    const std::map<std::string, ad::Mat>& all() const { return params_; }

    std::size_t count_scalars() const;

private:
    std::map<std::string, ad::Mat> params_;
};

/// Binds parameters to tape leaves for one forward/backward pass; each
/// parameter becomes a single leaf, created on first use.
class ParamBinding {
public:
    ParamBinding(ad::Tape& t, ParamStore& store) : tape_(&t), store_(&store) {}

    ad::Var operator[](const std::string& name);

    /// Gradients of every touched parameter after backward(); untouched
    /// parameters are absent.
    std::map<std::string, ad::Mat> collect_grads() const;

private:
    ad::Tape* tape_;
    ParamStore* store_;
    std::map<std::string, ad::Var> bound_;
};

/// Xavier-uniform weights, zero biases, unit layer-norm gains. Each
/// parameter draws from its own name-derived substream, so initialization is
/// independent of creation order.
void init_params(ParamStore& store, const RandomStream& init_stream);

/// Same rules for a single named parameter.
void init_param(const std::string& name, ad::Mat& m, const RandomStream& init_stream);

// Parameter registration. Shapes are created zero-filled; run init_params
// once the full model is registered.

void register_linear(ParamStore& s, const std::string& prefix, int in, int out);
void register_mha(ParamStore& s, const std::string& prefix, int d_model);
void register_layer_norm(ParamStore& s, const std::string& prefix, int d_model);
void register_encoder_layer(ParamStore& s, const std::string& prefix, int d_model, int ffn_dim);
void register_decoder_layer(ParamStore& s, const std::string& prefix, int d_model, int ffn_dim);

// Layer builders. Parameter names hang off the given prefix.

/// x @ W + b with W named prefix+".w" (in x out) and b prefix+".b" (1 x out).
ad::Var linear(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x);

/// Multi-head attention of q_in (N x d) over kv_in (M x d); attn_mask, if
/// given, is an N x M additive mask applied to every head's scores.
ad::Var mha(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var q_in, ad::Var kv_in,
            int n_heads, const ad::Mat* attn_mask = nullptr);

/// Pre-LN residual attention: x + mha(ln(x), kv). Self-attention when
/// kv_in is invalid (uses ln(x) as keys/values).
ad::Var attention_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x,
                        ad::Var kv_in, int n_heads, const ad::Mat* attn_mask = nullptr);

/// Pre-LN residual feed-forward: x + w2 @ relu(w1 @ ln(x) + b1) + b2.
ad::Var ffn_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x);

/// Row-wise layer norm with parameters prefix+".g" / prefix+".b".
ad::Var layer_norm_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x);

/// Transformer encoder layer: self-attention + feed-forward.
ad::Var encoder_layer(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x,
                      int n_heads);

/// Transformer decoder layer: masked self-attention over the query bundle,
/// cross-attention to memory, feed-forward.
ad::Var decoder_layer(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var queries,
                      ad::Var memory, int n_heads, const ad::Mat* self_attn_mask = nullptr);

} // namespace hedet

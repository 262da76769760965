#include "hedet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace hedet {

ad::Mat& ParamStore::add(const std::string& name, int rows, int cols) {
    if (params_.count(name)) throw std::invalid_argument("param already exists: " + name);
    return params_[name] = ad::Mat::Zero(rows, cols);
}

ad::Mat& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown param: " + name);
    return it->second;
}

const ad::Mat& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown param: " + name);
    return it->second;
}

std::size_t ParamStore::count_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, m] : params_) n += static_cast<std::size_t>(m.size());
    return n;
}

ad::Var ParamBinding::operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ad::Var v = tape_->leaf(store_->at(name));
    bound_.emplace(name, v);
    return v;
}

std::map<std::string, ad::Mat> ParamBinding::collect_grads() const {
    std::map<std::string, ad::Mat> out;
    for (const auto& [name, var] : bound_) out[name] = tape_->grad(var);
    return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

void init_param(const std::string& name, ad::Mat& m, const RandomStream& init_stream) {
    RandomStream rng = init_stream.child(name);
    if (ends_with(name, ".g")) {
        m.setOnes(); // layer-norm gain
    } else if (ends_with(name, ".embed") || ends_with(name, ".pos") || ends_with(name, ".cat")) {
        for (int i = 0; i < m.size(); ++i) m(i) = 0.02 * rng.normal();
    } else if (ends_with(name, ".w") || ends_with(name, ".w1") || ends_with(name, ".w2") ||
               ends_with(name, ".wq") || ends_with(name, ".wk") || ends_with(name, ".wv") ||
               ends_with(name, ".wo")) {
        const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (int i = 0; i < m.size(); ++i) m(i) = rng.uniform(-bound, bound);
    } else {
        m.setZero(); // biases and layer-norm shifts
    }
}

void init_params(ParamStore& store, const RandomStream& init_stream) {
    for (auto& [name, m] : store.all()) init_param(name, m, init_stream);
}

void register_linear(ParamStore& s, const std::string& prefix, int in, int out) {
    s.add(prefix + ".w", in, out);
    s.add(prefix + ".b", 1, out);
}

void register_mha(ParamStore& s, const std::string& prefix, int d_model) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) s.add(prefix + w, d_model, d_model);
    for (const char* b : {".bq", ".bk", ".bv", ".bo"}) s.add(prefix + b, 1, d_model);
}

void register_layer_norm(ParamStore& s, const std::string& prefix, int d_model) {
    s.add(prefix + ".g", 1, d_model);
    s.add(prefix + ".b", 1, d_model);
}

namespace {

void register_attention_block(ParamStore& s, const std::string& prefix, int d_model) {
    register_layer_norm(s, prefix + ".ln", d_model);
    register_mha(s, prefix, d_model);
}

void register_ffn_block(ParamStore& s, const std::string& prefix, int d_model, int ffn_dim) {
    register_layer_norm(s, prefix + ".ln", d_model);
    s.add(prefix + ".w1", d_model, ffn_dim);
    s.add(prefix + ".b1", 1, ffn_dim);
    s.add(prefix + ".w2", ffn_dim, d_model);
    s.add(prefix + ".b2", 1, d_model);
}

} // namespace

void register_encoder_layer(ParamStore& s, const std::string& prefix, int d_model, int ffn_dim) {
    register_attention_block(s, prefix + ".sa", d_model);
    register_ffn_block(s, prefix + ".ffn", d_model, ffn_dim);
}

void register_decoder_layer(ParamStore& s, const std::string& prefix, int d_model, int ffn_dim) {
    register_attention_block(s, prefix + ".sa", d_model);
    register_attention_block(s, prefix + ".ca", d_model);
    register_ffn_block(s, prefix + ".ffn", d_model, ffn_dim);
}

ad::Var linear(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x) {
    return ad::add_rowvec(t, ad::matmul(t, x, p[prefix + ".w"]), p[prefix + ".b"]);
}

ad::Var mha(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var q_in, ad::Var kv_in,
            int n_heads, const ad::Mat* attn_mask) {
    const int d = static_cast<int>(t.value(q_in).cols());
    if (d % n_heads != 0) throw std::invalid_argument("mha: d_model not divisible by heads");
    if (t.value(kv_in).cols() != d) throw std::invalid_argument("mha: query/kv width mismatch");
    const int dh = d / n_heads;

    ad::Var q = ad::add_rowvec(t, ad::matmul(t, q_in, p[prefix + ".wq"]), p[prefix + ".bq"]);
    ad::Var k = ad::add_rowvec(t, ad::matmul(t, kv_in, p[prefix + ".wk"]), p[prefix + ".bk"]);
    ad::Var v = ad::add_rowvec(t, ad::matmul(t, kv_in, p[prefix + ".wv"]), p[prefix + ".bv"]);

    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < n_heads; ++h) {
        ad::Var qh = ad::slice_cols(t, q, h * dh, dh);
        ad::Var kh = ad::slice_cols(t, k, h * dh, dh);
        ad::Var vh = ad::slice_cols(t, v, h * dh, dh);
        ad::Var scores = ad::scale(t, ad::matmul(t, qh, ad::transpose(t, kh)), inv_sqrt);
        ad::Var attn = ad::softmax_rows(t, scores, attn_mask);
        heads.push_back(ad::matmul(t, attn, vh));
    }
    ad::Var cat = n_heads == 1 ? heads[0] : ad::concat_cols(t, heads);
    return ad::add_rowvec(t, ad::matmul(t, cat, p[prefix + ".wo"]), p[prefix + ".bo"]);
}

ad::Var layer_norm_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x) {
    return ad::layer_norm(t, x, p[prefix + ".g"], p[prefix + ".b"]);
}

ad::Var attention_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x,
                        ad::Var kv_in, int n_heads, const ad::Mat* attn_mask) {
    ad::Var h = layer_norm_block(t, p, prefix + ".ln", x);
    ad::Var kv = kv_in.valid() ? kv_in : h;
    return ad::add(t, x, mha(t, p, prefix, h, kv, n_heads, attn_mask));
}

ad::Var ffn_block(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x) {
    ad::Var h = layer_norm_block(t, p, prefix + ".ln", x);
    ad::Var inner = ad::relu(t, ad::add_rowvec(t, ad::matmul(t, h, p[prefix + ".w1"]),
                                               p[prefix + ".b1"]));
    ad::Var out = ad::add_rowvec(t, ad::matmul(t, inner, p[prefix + ".w2"]), p[prefix + ".b2"]);
    return ad::add(t, x, out);
}

ad::Var encoder_layer(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var x,
                      int n_heads) {
    ad::Var a = attention_block(t, p, prefix + ".sa", x, ad::Var{}, n_heads);
    return ffn_block(t, p, prefix + ".ffn", a);
}

ad::Var decoder_layer(ad::Tape& t, ParamBinding& p, const std::string& prefix, ad::Var queries,
                      ad::Var memory, int n_heads, const ad::Mat* self_attn_mask) {
    ad::Var a = attention_block(t, p, prefix + ".sa", queries, ad::Var{}, n_heads, self_attn_mask);
    ad::Var c = attention_block(t, p, prefix + ".ca", a, memory, n_heads);
    return ffn_block(t, p, prefix + ".ffn", c);
}

} // namespace hedet

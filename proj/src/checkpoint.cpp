#include "hedet/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hedet {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'H', 'E', 'D', 'E', 'T', 'C', 'K', '1'};

json decoder_to_json(const DecoderConfig& d) {
    return json{{"L", d.L},
                {"K", d.K},
                {"tau", d.tau},
                {"n_q", d.n_q},
                {"d_model", d.d_model},
                {"n_heads", d.n_heads},
                {"ffn_dim", d.ffn_dim},
                {"dn_epsilon", d.dn.epsilon},
                {"dn_groups", d.dn.groups},
                {"dn_lambda", d.dn.lambda_dn},
                {"dn_identity_match", d.dn_identity_match},
                {"aggregate_logits", d.aggregate_logits}};
}

DecoderConfig decoder_from_json(const json& j) {
    DecoderConfig d;
    d.L = j.at("L").get<int>();
    d.K = j.at("K").get<int>();
    d.tau = j.at("tau").get<double>();
    d.n_q = j.at("n_q").get<int>();
    d.d_model = j.at("d_model").get<int>();
    d.n_heads = j.at("n_heads").get<int>();
    d.ffn_dim = j.at("ffn_dim").get<int>();
    d.dn.epsilon = j.at("dn_epsilon").get<double>();
    d.dn.groups = j.at("dn_groups").get<int>();
    d.dn.lambda_dn = j.at("dn_lambda").get<double>();
    d.dn_identity_match = j.at("dn_identity_match").get<bool>();
    d.aggregate_logits = j.at("aggregate_logits").get<bool>();
    return d;
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated archive");
    return v;
}

} // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
    json j{{"image_size", cfg.image_size},
           {"patch_size", cfg.patch_size},
           {"encoder_layers", cfg.encoder_layers},
           {"num_categories", cfg.num_categories},
           {"decoder", decoder_to_json(cfg.decoder)}};
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig cfg;
    cfg.image_size = j.at("image_size").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.encoder_layers = j.at("encoder_layers").get<int>();
    cfg.num_categories = j.at("num_categories").get<int>();
    cfg.decoder = decoder_from_json(j.at("decoder"));
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    std::string header = model_config_to_json(cfg);
    write_raw<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_raw<std::uint64_t>(out, params.all().size());
    for (const auto& [name, m] : params.all()) {
        write_raw<std::uint64_t>(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw<std::int64_t>(out, m.rows());
        write_raw<std::int64_t>(out, m.cols());
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    }
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(kMagic)))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    auto header_len = read_raw<std::uint64_t>(in);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header);
    auto count = read_raw<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name_len = read_raw<std::uint64_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        auto rows = read_raw<std::int64_t>(in);
        auto cols = read_raw<std::int64_t>(in);
        if (rows < 0 || cols < 0) throw std::runtime_error("checkpoint: bad shape for " + name);
        ad::Mat& m = ckpt.params.add(name, static_cast<int>(rows), static_cast<int>(cols));
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
        if (!in) throw std::runtime_error("checkpoint: truncated data for " + name);
    }
    return ckpt;
}

void load_into(ParamStore& target, const Checkpoint& ckpt) {
    for (const auto& [name, m] : target.all())
        if (!ckpt.params.has(name))
            throw std::runtime_error("checkpoint: missing weight " + name);
    for (const auto& [name, m] : ckpt.params.all()) {
        if (!target.has(name)) throw std::runtime_error("checkpoint: unmatched weight " + name);
        ad::Mat& dst = target.at(name);
        if (dst.rows() != m.rows() || dst.cols() != m.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        dst = m;
    }
}

Checkpoint convert_to_hed(const Checkpoint& seq, int K, double tau, bool random_parallel_init,
                          std::uint64_t init_seed) {
    Checkpoint out;
    out.config = seq.config;
    out.config.decoder.K = K;
    out.config.decoder.tau = tau;
    out.config.validate();
    for (const auto& [name, m] : seq.params.all()) out.params.add(name, 0, 0) = m;
    if (random_parallel_init) {
        RandomStream init(init_seed);
        for (auto& [name, m] : out.params.all())
            for (int l = K; l < out.config.decoder.L; ++l)
                if (name.rfind("dec.l" + std::to_string(l) + ".", 0) == 0) {
                    init_param(name, m, init);
                    break;
                }
    }
    return out;
}

} // namespace hedet

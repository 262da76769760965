#pragma once

#include <cstdint>
#include <string>

#include "hedet/detector.hpp"

namespace hedet {

/// Serialized model state: config plus every named weight array.
struct Checkpoint {
    ModelConfig config;
    ParamStore params;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Single-file archive: json config header + named double arrays.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

/// Copies the archive's weights into a store registered from a (possibly
/// different-K) config. Every name must match in both directions and every
/// shape must agree; throws otherwise.
void load_into(ParamStore& target, const Checkpoint& ckpt);

/// Pure checkpoint transformation: re-labels the decoder structure as K
/// stacked + L-K parallel with re-init probability tau. Parallel layers keep
/// their depth position's trained weights unless random_parallel_init, which
/// redraws dec.l{K..L-1} from a fresh init stream.
Checkpoint convert_to_hed(const Checkpoint& seq, int K, double tau, bool random_parallel_init,
                          std::uint64_t init_seed);

} // namespace hedet

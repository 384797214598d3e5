#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "structlm/adam.hpp"
#include "structlm/io.hpp"
#include "structlm/model.hpp"

namespace structlm {

class checkpoint_error : public data_error {
  public:
    using data_error::data_error;
};
// Bad magic or an unreadable header.
class checkpoint_format_error : public checkpoint_error {
  public:
    using checkpoint_error::checkpoint_error;
};
class checkpoint_version_error : public checkpoint_error {
  public:
    using checkpoint_error::checkpoint_error;
};
class checkpoint_truncated_error : public checkpoint_error {
  public:
    using checkpoint_error::checkpoint_error;
};
// Manifest disagrees with the stored model config.
class checkpoint_shape_error : public checkpoint_error {
  public:
    using checkpoint_error::checkpoint_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;  // "pretrain" or "finetune"
    ModelConfig model;
    Vocab vocab;
    Parameters params;
    std::optional<AdamState> adam;
    std::uint64_t step = 0;
    std::string rng_state;
    std::string config;  // resolved key = value text of the producing run
};

// "STRUCTLM" magic, u32 version, u64 header length, JSON header (configs,
// vocabulary, array manifest with names, shapes and byte offsets), then the
// raw little-endian arrays: parameters first, then Adam moments.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes, std::string_view where = "checkpoint");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_json(const ModelConfig& config);

}  // namespace structlm

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affsam/model.hpp"
#include "affsam/trainer.hpp"

namespace affsam {

struct TensorBlob {
  Shape shape;
  std::vector<double> values;

  bool operator==(const TensorBlob&) const = default;
};

/// Versioned binary container:
///   "AFSAMCKP" u32 version, config hash (u32 length + bytes), model config
///   JSON (u32 length + bytes), u32 stage, u32 epoch, u64 step,
///   u32 tensor count, per tensor: name, u32 rank, u64 dims, f64 values,
///   u64 optimizer step, u32 moment count, per moment: name, u64 n, f64 m, f64 v.
/// All integers and floats are little-endian; entries are in name order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_hash;
  nlohmann::json model_config = nlohmann::json::object();
  std::uint32_t stage = 0;
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
  std::map<std::string, TensorBlob> tensors;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, AdamMoments> moments;

  bool has_adaption() const;

  bool operator==(const Checkpoint&) const = default;
};

Checkpoint capture_checkpoint(const AffordanceModel& model, const std::string& config_hash, std::uint32_t stage = 0,
                              std::uint32_t epoch = 0, const AdamW* optimizer = nullptr);

/// Rebuilds a model from the stored configuration and overwrites every
/// parameter. The parameter name sets must match exactly.
AffordanceModel restore_model(const Checkpoint& checkpoint);
/// Overwrites the parameters of an existing model of the same structure.
void load_parameters(AffordanceModel& model, const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace affsam

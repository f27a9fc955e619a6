#pragma once

// Self-describing binary checkpoint (little-endian):
//
//   "LCTL" u32 version
//   u32 n, n bytes of "key = value" text (model, training and lineage fields), u32 crc
//   vocabulary section, u32 crc
//   merge section, u32 crc
//   u32 tensor count, then per tensor: name, rank, u64 dims, f32 values, u32 crc
//   "END."

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "lenctl/model/transformer.hpp"
#include "lenctl/nnet/optim.hpp"
#include "lenctl/textproc.hpp"

namespace lenctl::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  ModelConfig config;
  nnet::TrainHyper hyper;
  textproc::MergeTable merges;
  textproc::Vocabulary vocab;
  nnet::ParameterSet<float> params;
  std::int64_t step = 0;
  double dev_loss = 0.0;
  std::uint64_t seed = 0;
  std::string lineage;      // hash of the base checkpoint, empty for a fresh model
  std::string config_hash;  // hash of the experiment config that produced it

  // Header record as key/value text.
  KeyValueConfig header() const;
};

// Content hash over the serialized bytes.
std::string checkpoint_hash(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds the model a checkpoint describes.
template <typename Real>
Transformer<Real> instantiate(const Checkpoint& ckpt);

}  // namespace lenctl::model

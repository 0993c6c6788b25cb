#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "guilt/model/mlm.hpp"
#include "guilt/model/model.hpp"

namespace guilt::model {

/// A tensor decoded to doubles in row-major order.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

/// Reads F64, F32, F16 and BF16 tensors from a safetensors file.
std::map<std::string, Tensor> read_safetensors(const std::filesystem::path& path,
                                               std::map<std::string, std::string>* metadata = nullptr);

/// Writes every parameter as an F64 tensor with its stored shape.
void write_safetensors(const std::filesystem::path& path, const ParamStore& store,
                       const std::map<std::string, std::string>& metadata = {});

/// Checkpoint directory: params.safetensors, config.json, vocab.txt. The
/// caller's run metadata is stored under "run" in config.json.
void save_checkpoint(const GuiltModel& model, const std::filesystem::path& dir, const Json& run_metadata = Json::object());
GuiltModel load_checkpoint(const std::filesystem::path& dir);
Json load_checkpoint_config(const std::filesystem::path& dir);

/// An encoder without task heads: the output of genre pretraining or an
/// imported published checkpoint.
struct EncoderBundle {
  EncoderConfig config;
  WordPieceTokenizer tokenizer;
  ParamStore params;
};

void save_encoder(const MaskedLm& model, const WordPieceTokenizer& tokenizer, const std::filesystem::path& dir,
                  const Json& run_metadata = Json::object());
EncoderBundle load_encoder(const std::filesystem::path& dir);

/// Reads a published BERT directory (config.json, vocab.txt, model.safetensors).
/// Dense weights are transposed to this library's in x out layout and a
/// leading "bert." prefix is dropped.
EncoderBundle load_hf_bert(const std::filesystem::path& dir);

struct MaskedLmBundle {
  MaskedLm model;
  WordPieceTokenizer tokenizer;
};

/// Encoder plus MLM head from either a published BERT directory or a
/// directory written by save_encoder. A missing MLM head keeps its fresh
/// initialization.
MaskedLmBundle load_masked_lm(const std::filesystem::path& dir, std::uint64_t seed = 0);

/// Builds a task model whose encoder (and MLM-free parameters) come from the bundle.
GuiltModel model_from_encoder(const EncoderBundle& bundle, const ModelOptions& options, std::uint64_t seed);

EncoderConfig encoder_config_from_hf(const Json& j);

}  // namespace guilt::model

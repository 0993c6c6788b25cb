#include "guilt/model/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "guilt/common/error.hpp"
#include "guilt/common/io.hpp"

namespace guilt::model {
namespace {

namespace fs = std::filesystem;

constexpr const char* kParamsFile = "params.safetensors";
constexpr const char* kConfigFile = "config.json";
constexpr const char* kVocabFile = "vocab.txt";

std::uint64_t read_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1f;
  const int frac = h & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(frac, -24);
  } else if (exp == 31) {
    v = frac ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(frac + 1024, exp - 25);
  }
  return sign ? -v : v;
}

// Parameters stored in x out here but out x in in published checkpoints.
bool is_dense_weight(const std::string& name) {
  static const char* suffixes[] = {"attention.self.query.weight", "attention.self.key.weight",
                                   "attention.self.value.weight", "attention.output.dense.weight",
                                   "intermediate.dense.weight",   "output.dense.weight",
                                   "transform.dense.weight",      "pooler.dense.weight"};
  for (const char* s : suffixes) {
    if (name.ends_with(s)) return true;
  }
  return false;
}

Matrix to_matrix(const Tensor& t) {
  Eigen::Index rows = 1, cols = 1;
  if (t.shape.size() == 1) {
    cols = t.shape[0];
  } else if (t.shape.size() == 2) {
    rows = t.shape[0];
    cols = t.shape[1];
  } else {
    throw SchemaError("only 1-D and 2-D tensors are supported");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), rows,
                                                                                                  cols);
}

// Fills parameters present in `tensors`. Missing task or MLM-head parameters
// keep their initialization unless `require_all`; encoder parameters must exist.
void fill_from_tensors(ParamStore& store, const std::map<std::string, Tensor>& tensors, bool transpose_dense,
                       bool require_all) {
  for (auto& p : store) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) {
      const bool encoder_param = p.name.starts_with("embeddings.") || p.name.starts_with("encoder.");
      if (require_all || encoder_param) throw SchemaError("checkpoint lacks parameter " + p.name);
      continue;
    }
    Matrix m = to_matrix(it->second);
    if (transpose_dense && is_dense_weight(p.name)) m.transposeInPlace();
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      // 1-D tensors decode as a row; our biases are rows too, head weights are columns.
      if (m.size() == p.value.size() && (m.rows() == 1 || m.cols() == 1)) {
        m = Eigen::Map<const Matrix>(m.data(), p.value.rows(), p.value.cols());
      } else {
        throw SchemaError("shape mismatch for parameter " + p.name);
      }
    }
    p.value = std::move(m);
  }
}

Json options_to_json(const ModelOptions& o) {
  return Json{{"pooling", to_string(o.pooling)}, {"token_mode", to_string(o.token_mode)}, {"max_length", o.max_length}};
}

ModelOptions options_from_json(const Json& j) {
  ModelOptions o;
  o.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  o.token_mode = token_mode_from_string(j.at("token_mode").get<std::string>());
  o.max_length = j.at("max_length").get<std::size_t>();
  return o;
}

void write_dir(const fs::path& dir, const ParamStore& store, const WordPieceTokenizer& tokenizer, const Json& config) {
  fs::create_directories(dir);
  write_safetensors(dir / kParamsFile, store, {{"format", "guilt"}});
  tokenizer.save(dir / kVocabFile);
  write_file_atomic(dir / kConfigFile, config.dump(2) + "\n");
}

}  // namespace

std::map<std::string, Tensor> read_safetensors(const fs::path& path, std::map<std::string, std::string>* metadata) {
  const std::string blob = read_file(path);
  if (blob.size() < 8) throw SchemaError("truncated safetensors file " + path.string());
  const std::uint64_t header_len = read_u64_le(blob.data());
  if (8 + header_len > blob.size()) throw SchemaError("bad safetensors header length in " + path.string());
  const Json header = Json::parse(blob.substr(8, header_len));
  const char* base = blob.data() + 8 + header_len;
  const std::size_t data_len = blob.size() - 8 - header_len;

  std::map<std::string, Tensor> out;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") {
      if (metadata) {
        for (const auto& [k, v] : info.items()) (*metadata)[k] = v.get<std::string>();
      }
      continue;
    }
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_len) {
      throw SchemaError("bad data offsets for tensor " + name);
    }
    std::size_t count = 1;
    for (auto d : t.shape) count *= static_cast<std::size_t>(d);
    const std::string dtype = info.at("dtype").get<std::string>();
    const char* p = base + offsets[0];
    const std::size_t bytes = offsets[1] - offsets[0];
    t.data.resize(count);
    auto expect = [&](std::size_t width) {
      if (bytes != count * width) throw SchemaError("tensor " + name + " has inconsistent size");
    };
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    if (dtype == "F64") {
      expect(8);
      std::memcpy(t.data.data(), p, bytes);
    } else if (dtype == "F32") {
      expect(4);
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, p + 4 * i, 4);
        t.data[i] = f;
      }
    } else if (dtype == "F16" || dtype == "BF16") {
      expect(2);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, p + 2 * i, 2);
        if (dtype == "F16") {
          t.data[i] = half_to_double(h);
        } else {
          const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
          float f;
          std::memcpy(&f, &bits, 4);
          t.data[i] = f;
        }
      }
    } else {
      throw SchemaError("unsupported tensor dtype " + dtype);
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void write_safetensors(const fs::path& path, const ParamStore& store,
                       const std::map<std::string, std::string>& metadata) {
  Json header = Json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::size_t offset = 0;
  for (const auto& p : store) {
    const std::size_t bytes = static_cast<std::size_t>(p.value.size()) * 8;
    header[p.name] = Json{{"dtype", "F64"},
                          {"shape", {p.value.rows(), p.value.cols()}},
                          {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string head = header.dump();
  while ((8 + head.size()) % 8 != 0) head.push_back(' ');
  std::string blob(8, '\0');
  for (int i = 0; i < 8; ++i) blob[static_cast<std::size_t>(i)] = static_cast<char>((head.size() >> (8 * i)) & 0xff);
  blob += head;
  // Header keys come out sorted; the data section follows store order and the
  // offsets above say where each tensor lives.
  std::string data(offset, '\0');
  std::size_t cursor = 0;
  for (const auto& p : store) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = p.value;
    const std::size_t bytes = static_cast<std::size_t>(rm.size()) * 8;
    std::memcpy(data.data() + cursor, rm.data(), bytes);
    cursor += bytes;
  }
  blob += data;
  write_file_atomic(path, blob);
}

void save_checkpoint(const GuiltModel& model, const fs::path& dir, const Json& run_metadata) {
  const Json config{{"kind", "guilt-model"},
                    {"encoder", to_json(model.encoder().config())},
                    {"options", options_to_json(model.options())},
                    {"run", run_metadata}};
  write_dir(dir, model.params(), model.tokenizer(), config);
}

Json load_checkpoint_config(const fs::path& dir) {
  if (!fs::exists(dir / kConfigFile)) throw InvalidInput("no checkpoint at " + dir.string());
  return Json::parse(read_file(dir / kConfigFile));
}

GuiltModel load_checkpoint(const fs::path& dir) {
  const Json config = load_checkpoint_config(dir);
  if (config.value("kind", "") != "guilt-model") throw SchemaError(dir.string() + " is not a task-model checkpoint");
  GuiltModel model(encoder_config_from_json(config.at("encoder")), WordPieceTokenizer::load(dir / kVocabFile),
                   options_from_json(config.at("options")), 0);
  fill_from_tensors(model.params(), read_safetensors(dir / kParamsFile), false, true);
  return model;
}

namespace {
bool is_hf_dir(const fs::path& dir);
}  // namespace

void save_encoder(const MaskedLm& model, const WordPieceTokenizer& tokenizer, const fs::path& dir,
                  const Json& run_metadata) {
  const Json config{{"kind", "guilt-encoder"}, {"encoder", to_json(model.encoder().config())}, {"run", run_metadata}};
  write_dir(dir, model.params(), tokenizer, config);
}

EncoderBundle load_encoder(const fs::path& dir) {
  if (is_hf_dir(dir)) return load_hf_bert(dir);
  const Json config = load_checkpoint_config(dir);
  const std::string kind = config.value("kind", "");
  if (kind != "guilt-encoder" && kind != "guilt-model") throw SchemaError(dir.string() + " holds no encoder");
  EncoderBundle bundle{encoder_config_from_json(config.at("encoder")), WordPieceTokenizer::load(dir / kVocabFile), {}};
  Rng rng(0);
  Encoder encoder(bundle.config, bundle.params, rng);
  fill_from_tensors(bundle.params, read_safetensors(dir / kParamsFile), false, false);
  return bundle;
}

EncoderConfig encoder_config_from_hf(const Json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.hidden = j.at("hidden_size").get<std::size_t>();
  c.layers = j.at("num_hidden_layers").get<std::size_t>();
  c.heads = j.at("num_attention_heads").get<std::size_t>();
  c.intermediate = j.at("intermediate_size").get<std::size_t>();
  c.max_positions = j.value("max_position_embeddings", c.max_positions);
  c.type_vocab = j.value("type_vocab_size", c.type_vocab);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.hidden_dropout = j.value("hidden_dropout_prob", 0.1);
  c.attention_dropout = j.value("attention_probs_dropout_prob", 0.1);
  c.init_std = j.value("initializer_range", c.init_std);
  c.pad_id = j.value("pad_token_id", c.pad_id);
  if (j.value("hidden_act", std::string("gelu")) != "gelu") throw SchemaError("only exact GELU encoders are supported");
  return c;
}

namespace {

std::map<std::string, Tensor> read_hf_tensors(const fs::path& dir) {
  std::map<std::string, Tensor> tensors;
  for (auto& [name, t] : read_safetensors(dir / "model.safetensors")) {
    std::string key = name.starts_with("bert.") ? name.substr(5) : name;
    // Older exports name LayerNorm parameters gamma/beta.
    if (key.ends_with("LayerNorm.gamma")) key = key.substr(0, key.size() - 5) + "weight";
    if (key.ends_with("LayerNorm.beta")) key = key.substr(0, key.size() - 4) + "bias";
    tensors.emplace(std::move(key), std::move(t));
  }
  return tensors;
}

bool is_hf_dir(const fs::path& dir) {
  return fs::exists(dir / "model.safetensors") && !fs::exists(dir / kParamsFile);
}

}  // namespace

EncoderBundle load_hf_bert(const fs::path& dir) {
  const Json hf = Json::parse(read_file(dir / "config.json"));
  EncoderBundle bundle{encoder_config_from_hf(hf), WordPieceTokenizer::load(dir / kVocabFile), {}};
  if (bundle.tokenizer.size() != bundle.config.vocab_size) throw SchemaError("vocab.txt size differs from config");
  Rng rng(0);
  Encoder encoder(bundle.config, bundle.params, rng);
  fill_from_tensors(bundle.params, read_hf_tensors(dir), true, false);
  return bundle;
}

MaskedLmBundle load_masked_lm(const fs::path& dir, std::uint64_t seed) {
  if (is_hf_dir(dir)) {
    const Json hf = Json::parse(read_file(dir / "config.json"));
    MaskedLmBundle bundle{MaskedLm(encoder_config_from_hf(hf), seed), WordPieceTokenizer::load(dir / kVocabFile)};
    fill_from_tensors(bundle.model.params(), read_hf_tensors(dir), true, false);
    return bundle;
  }
  const Json config = load_checkpoint_config(dir);
  MaskedLmBundle bundle{MaskedLm(encoder_config_from_json(config.at("encoder")), seed),
                        WordPieceTokenizer::load(dir / kVocabFile)};
  fill_from_tensors(bundle.model.params(), read_safetensors(dir / kParamsFile), false, false);
  return bundle;
}

GuiltModel model_from_encoder(const EncoderBundle& bundle, const ModelOptions& options, std::uint64_t seed) {
  GuiltModel model(bundle.config, bundle.tokenizer, options, seed);
  model.load_matching(bundle.params);
  return model;
}

}  // namespace guilt::model

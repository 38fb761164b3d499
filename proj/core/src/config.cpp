#include "sfmim/config.hpp"

#include <fstream>

#include <json.hpp>

#include "sfmim/error.hpp"

namespace sfmim {

namespace {

using nlohmann::json;

template <class T>
T get_as(const json& j, const std::string& key, const std::string& origin) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(origin + ": bad value type for '" + key + "'");
  }
}

}  // namespace

size_t preset_finetune_epochs(const std::string& preset) {
  if (preset == "indian_pines") return 35;
  if (preset == "pavia") return 25;
  if (preset == "houston") return 20;
  throw ConfigError("unknown preset '" + preset +
                    "' (expected indian_pines, pavia or houston)");
}

void RunConfig::validate() const {
  if (patch_size % 2 == 0 || patch_size < 1)
    throw ConfigError("patch_size must be odd and >= 1, got " + std::to_string(patch_size));
  if (dim == 0 || heads == 0 || dim % heads != 0)
    throw ConfigError("dim (" + std::to_string(dim) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (pos_embedding != "learned" && pos_embedding != "sinusoidal")
    throw ConfigError("pos_embedding must be learned or sinusoidal, got '" + pos_embedding + "'");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
  parse_mask_mode(mask);  // throws on bad mode
  if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("ratio must be in [0,1)");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0,1)");
  if (epochs < -1) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr != -1.0 && lr <= 0.0) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!preset.empty()) preset_finetune_epochs(preset);
  if (split != "test" && split != "train")
    throw ConfigError("split must be test or train, got '" + split + "'");
}

size_t RunConfig::resolved_epochs(bool pretrain_mode) const {
  if (epochs >= 0) return static_cast<size_t>(epochs);
  if (pretrain_mode) return 200;
  if (!preset.empty()) return preset_finetune_epochs(preset);
  return 30;
}

double RunConfig::resolved_lr(bool pretrain_mode) const {
  if (lr > 0.0) return lr;
  return pretrain_mode ? 1e-3 : 5e-4;
}

ModelConfig RunConfig::model_config(size_t bands, size_t classes) const {
  ModelConfig m;
  m.patch_size = patch_size;
  m.bands = bands;
  m.dim = dim;
  m.layers = layers;
  m.heads = heads;
  m.classes = classes;
  m.dropout = dropout;
  m.pos_embedding =
      pos_embedding == "learned" ? PosEmbedding::learned : PosEmbedding::sinusoidal;
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config(bool pretrain_mode) const {
  TrainConfig t;
  t.mask_mode = parse_mask_mode(mask);
  t.ratio = ratio;
  t.gamma = gamma;
  t.epochs = resolved_epochs(pretrain_mode);
  t.batch_size = batch_size;
  t.lr = resolved_lr(pretrain_mode);
  t.weight_decay = weight_decay;
  t.seed = seed;
  t.freq_per_token = freq_per_token;
  t.spatial_loss_all_tokens = spatial_loss_all_tokens;
  t.alternate_channels = alternate_channels;
  t.out_dir = out;
  return t;
}

void apply_json_config_text(RunConfig& cfg, const std::string& text,
                            const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");

  for (const auto& [key, value] : j.items()) {
    if (key == "data") cfg.data = get_as<std::string>(j, key, origin);
    else if (key == "out") cfg.out = get_as<std::string>(j, key, origin);
    else if (key == "patch_size") cfg.patch_size = get_as<size_t>(j, key, origin);
    else if (key == "dim") cfg.dim = get_as<size_t>(j, key, origin);
    else if (key == "layers") cfg.layers = get_as<size_t>(j, key, origin);
    else if (key == "heads") cfg.heads = get_as<size_t>(j, key, origin);
    else if (key == "dropout") cfg.dropout = get_as<double>(j, key, origin);
    else if (key == "pos_embedding") cfg.pos_embedding = get_as<std::string>(j, key, origin);
    else if (key == "precision") cfg.precision = get_as<std::string>(j, key, origin);
    else if (key == "mask") cfg.mask = get_as<std::string>(j, key, origin);
    else if (key == "ratio") cfg.ratio = get_as<double>(j, key, origin);
    else if (key == "gamma") cfg.gamma = get_as<double>(j, key, origin);
    else if (key == "epochs") cfg.epochs = get_as<int64_t>(j, key, origin);
    else if (key == "batch_size") cfg.batch_size = get_as<size_t>(j, key, origin);
    else if (key == "lr") cfg.lr = get_as<double>(j, key, origin);
    else if (key == "weight_decay") cfg.weight_decay = get_as<double>(j, key, origin);
    else if (key == "seed") cfg.seed = get_as<uint64_t>(j, key, origin);
    else if (key == "freq_per_token") cfg.freq_per_token = get_as<bool>(j, key, origin);
    else if (key == "spatial_loss_all_tokens")
      cfg.spatial_loss_all_tokens = get_as<bool>(j, key, origin);
    else if (key == "alternate_channels")
      cfg.alternate_channels = get_as<bool>(j, key, origin);
    else if (key == "preset") cfg.preset = get_as<std::string>(j, key, origin);
    else if (key == "init") cfg.init = get_as<std::string>(j, key, origin);
    else if (key == "split") cfg.split = get_as<std::string>(j, key, origin);
    else throw ConfigError(origin + ": unknown key '" + key + "'");
    (void)value;
  }
}

void apply_json_config(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_json_config_text(cfg, text, "config " + path);
}

}  // namespace sfmim

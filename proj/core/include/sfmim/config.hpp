#pragma once

#include <cstdint>
#include <string>

#include "sfmim/masking.hpp"
#include "sfmim/model.hpp"
#include "sfmim/train.hpp"

namespace sfmim {

// Merged run settings: dataset pointer, model hyperparameters and training
// schedule. Resolution order is CLI flag > config file > built-in default;
// the file layer is applied by apply_json_config and the flag layer by the
// CLI (only for flags actually given).
struct RunConfig {
  std::string data;  // dataset sidecar JSON
  std::string out = "run";

  size_t patch_size = 7;
  size_t dim = 64;
  size_t layers = 5;
  size_t heads = 4;
  double dropout = 0.1;
  std::string pos_embedding = "learned";  // learned | sinusoidal
  std::string precision = "f32";          // f32 | f64

  std::string mask = "dual";
  double ratio = 0.7;
  double gamma = 0.3;
  int64_t epochs = -1;  // -1 = mode default (200 pretrain; preset or 30 finetune)
  size_t batch_size = 64;
  double lr = -1.0;  // -1 = mode default (1e-3 pretrain, 5e-4 finetune)
  double weight_decay = 0.0;
  uint64_t seed = 1;
  bool freq_per_token = true;
  bool spatial_loss_all_tokens = false;
  bool alternate_channels = false;

  std::string preset;  // "", indian_pines, pavia, houston
  std::string init;    // checkpoint to fine-tune from
  std::string split = "test";  // evaluation split

  void validate() const;

  // Fully resolved values for one mode.
  size_t resolved_epochs(bool pretrain_mode) const;
  double resolved_lr(bool pretrain_mode) const;

  ModelConfig model_config(size_t bands, size_t classes) const;
  TrainConfig train_config(bool pretrain_mode) const;
};

// Applies a JSON config file layer onto cfg. Unknown keys and wrongly typed
// values are rejected.
void apply_json_config(RunConfig& cfg, const std::string& path);
void apply_json_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

size_t preset_finetune_epochs(const std::string& preset);

}  // namespace sfmim

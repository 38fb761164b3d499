#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sfmim/checkpoint.hpp"
#include "sfmim/error.hpp"
#include "sfmim/hsi.hpp"
#include "sfmim/masking.hpp"
#include "sfmim/metrics.hpp"
#include "sfmim/model.hpp"
#include "sfmim/rng.hpp"
#include "sfmim/tensor.hpp"

namespace sfmim {

// Worker count from SFMIM_THREADS (>= 1). Only embarrassingly parallel,
// slot-disjoint work (evaluation forwards) fans out; the training step
// itself is single-threaded.
size_t worker_threads();

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  MaskMode mask_mode = MaskMode::dual;
  double ratio = 0.7;
  double gamma = 0.3;
  size_t epochs = 200;
  size_t batch_size = 64;
  double lr = 1e-3;
  AdamConfig adam;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  bool freq_per_token = true;          // one filter coin per token vs per sample
  bool spatial_loss_all_tokens = false;  // reconstruct all tokens, not just masked
  bool alternate_channels = false;     // coin-flip one channel per step instead of summing
  bool head_only = false;              // freeze everything but the classifier head
  std::string out_dir;                 // empty = keep results in memory only
};

template <class S>
struct AdamState {
  struct Slot {
    std::vector<S> m;
    std::vector<S> v;
  };
  std::vector<Slot> slots;  // parallel to ModelParams::named_tensors order
  int64_t step = 0;

  static AdamState init(ModelParams<S>& params) {
    AdamState st;
    for (auto& [name, t] : params.named_tensors())
      st.slots.push_back({std::vector<S>(t.size(), S(0)), std::vector<S>(t.size(), S(0))});
    return st;
  }
};

// Decoupled weight decay followed by the bias-corrected Adam step. Tensors
// with requires_grad off are skipped entirely.
template <class S>
void adam_update(ModelParams<S>& params, AdamState<S>& state, double lr,
                 const AdamConfig& cfg, double weight_decay) {
  auto named = params.named_tensors();
  if (named.size() != state.slots.size())
    throw ContractError("adam: state has " + std::to_string(state.slots.size()) +
                        " slots for " + std::to_string(named.size()) + " tensors");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < named.size(); ++i) {
    Tensor<S>& t = named[i].second;
    if (!t.requires_grad()) continue;
    auto& theta = t.values();
    const auto& g = t.grad();
    auto& m = state.slots[i].m;
    auto& v = state.slots[i].v;
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    for (size_t j = 0; j < theta.size(); ++j) {
      if (weight_decay != 0.0)
        theta[j] -= static_cast<S>(lr * weight_decay) * theta[j];
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      theta[j] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Pretraining

// Per-step loss breakdown. Inactive channels stay at 0; total is the sum of
// the active channel means.
struct StepLoss {
  double total = 0.0;
  double spatial = 0.0;
  double frequency = 0.0;
  double spectral = 0.0;
};

namespace detail_train {

constexpr uint64_t kDropSpatial = 21;
constexpr uint64_t kDropFrequency = 22;
constexpr uint64_t kDropBand = 23;
constexpr uint64_t kAlternate = 29;
constexpr uint64_t kShuffleStream = 31;
constexpr uint64_t kStepStream = 32;
constexpr uint64_t kFinetuneShuffle = 33;
constexpr uint64_t kFinetuneStep = 34;

struct ActiveChannels {
  bool spatial = false;
  bool frequency = false;
  bool band = false;
};

inline ActiveChannels channels_for(MaskMode mode) {
  ActiveChannels a;
  a.spatial = mode == MaskMode::spatial || mode == MaskMode::spatial_spectral ||
              mode == MaskMode::dual;
  a.frequency = mode == MaskMode::frequency || mode == MaskMode::dual;
  a.band = mode == MaskMode::spectral || mode == MaskMode::spatial_spectral;
  return a;
}

template <class S>
Tensor<S> reconstruct(const Tensor<S>& input_tokens, const ModelParams<S>& params,
                      ForwardCtx ctx, const SpatialMask* substitution) {
  Tensor<S> x = embed_tokens(input_tokens, params);
  if (substitution) x = substitute_masked(x, *substitution, params);
  return decode(encode(x, params, ctx), params);
}

// Mean squared error over the masked-band columns only.
template <class S>
Tensor<S> band_masked_mse(const Tensor<S>& rec, const Tensor<S>& target,
                          const std::vector<uint8_t>& band_mask) {
  std::vector<size_t> cols;
  for (size_t b = 0; b < band_mask.size(); ++b)
    if (band_mask[b]) cols.push_back(b);
  return mse(gather_rows(transpose(rec), cols), gather_rows(transpose(target), cols));
}

}  // namespace detail_train

// Builds the reconstruction losses for one batch (graph per sample) and, if
// requested, accumulates d(mean loss)/d(params) into the parameter grads.
// Each sample's channel draws depend only on (step_rng, sample index,
// channel), so a channel's realization is identical whether or not the
// other channels are active.
template <class S>
StepLoss pretrain_batch(std::span<const PatchSequence* const> batch, ModelParams<S>& params,
                        const TrainConfig& cfg, Rng step_rng, bool do_backward,
                        double dropout_rate) {
  auto active = detail_train::channels_for(cfg.mask_mode);
  if (cfg.alternate_channels) {
    const bool two = (active.spatial && active.frequency) || (active.spatial && active.band);
    if (two) {
      const bool keep_spatial = step_rng.split(detail_train::kAlternate).uniform() < 0.5;
      if (keep_spatial) {
        active.frequency = false;
        active.band = false;
      } else {
        active.spatial = false;
      }
    }
  }

  const size_t n = params.cfg.tokens();
  const size_t bands = params.cfg.bands;
  MaskPlanOptions opt{cfg.ratio, cfg.gamma, cfg.freq_per_token};

  StepLoss out;
  const double inv_batch = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const PatchSequence& seq = *batch[i];
    if (seq.n != n || seq.bands != bands)
      throw ContractError("pretrain: sample shape " + std::to_string(seq.n) + "x" +
                          std::to_string(seq.bands) + " does not match model " +
                          std::to_string(n) + "x" + std::to_string(bands));
    Rng sample_rng = step_rng.split(i);
    const MaskPlan plan = build_mask_plan(cfg.mask_mode, n, bands, opt, sample_rng);
    const Tensor<S> target = Tensor<S>::from_double({n, bands}, seq.tokens);

    std::vector<Tensor<S>> losses;
    double* slots[3] = {nullptr, nullptr, nullptr};
    size_t slot_count = 0;

    if (active.spatial) {
      Rng drop = sample_rng.split(detail_train::kDropSpatial);
      ForwardCtx ctx{dropout_rate > 0.0 ? &drop : nullptr, dropout_rate};
      Tensor<S> rec = detail_train::reconstruct(target, params, ctx, &*plan.spatial);
      Tensor<S> loss;
      if (cfg.spatial_loss_all_tokens) {
        loss = mse(rec, target);
      } else {
        const auto idx = plan.spatial->masked_indices();
        loss = mse(gather_rows(rec, idx), gather_rows(target, idx));
      }
      losses.push_back(loss);
      slots[slot_count++] = &out.spatial;
    }
    if (active.frequency) {
      const auto corrupted = apply_frequency_channel(seq.tokens, n, bands, plan);
      const Tensor<S> input = Tensor<S>::from_double({n, bands}, corrupted);
      Rng drop = sample_rng.split(detail_train::kDropFrequency);
      ForwardCtx ctx{dropout_rate > 0.0 ? &drop : nullptr, dropout_rate};
      Tensor<S> rec = detail_train::reconstruct(input, params, ctx, nullptr);
      losses.push_back(mse(rec, target));
      slots[slot_count++] = &out.frequency;
    }
    if (active.band) {
      const auto corrupted = apply_band_channel(seq.tokens, n, bands, plan);
      const Tensor<S> input = Tensor<S>::from_double({n, bands}, corrupted);
      Rng drop = sample_rng.split(detail_train::kDropBand);
      ForwardCtx ctx{dropout_rate > 0.0 ? &drop : nullptr, dropout_rate};
      Tensor<S> rec = detail_train::reconstruct(input, params, ctx, nullptr);
      losses.push_back(detail_train::band_masked_mse(rec, target, *plan.band));
      slots[slot_count++] = &out.spectral;
    }

    Tensor<S> sample_total;
    for (size_t c = 0; c < losses.size(); ++c) {
      *slots[c] += static_cast<double>(losses[c].item()) * inv_batch;
      sample_total = c == 0 ? losses[c] : add(sample_total, losses[c]);
    }
    if (do_backward && sample_total.defined())
      backward(scale(sample_total, inv_batch));
  }
  out.total = out.spatial + out.frequency + out.spectral;
  return out;
}

// One optimization step: loss, backward, Adam update, grad reset.
template <class S>
StepLoss pretrain_step(std::span<const PatchSequence* const> batch, ModelParams<S>& params,
                       AdamState<S>& state, const TrainConfig& cfg, Rng step_rng,
                       size_t step_index, double dropout_rate) {
  StepLoss loss = pretrain_batch(batch, params, cfg, step_rng, /*do_backward=*/true,
                                 dropout_rate);
  if (!std::isfinite(loss.total))
    throw TrainError("pretrain step " + std::to_string(step_index) + ": non-finite loss");
  adam_update(params, state, cfg.lr, cfg.adam, cfg.weight_decay);
  params.zero_grad();
  return loss;
}

// ---------------------------------------------------------------------------
// Dataset plumbing and evaluation

// Borrowing view over a loaded dataset; the cube is expected to be
// standardized already.
struct TrainDataset {
  const HyperspectralCube* cube = nullptr;
  const LabelMap* labels = nullptr;  // optional for pretraining
  SplitSpec split;
  size_t patch_size = 7;

  PatchSequence patch_at(Coord c) const {
    const int32_t label = labels ? labels->at(c.row, c.col) : 0;
    return extract_patch(*cube, c, patch_size, label);
  }
};

// Line-buffered "epoch,split,loss,oa,aa,kappa" log; metric cells stay empty
// when absent (pretraining rows).
class TrainLogger {
 public:
  TrainLogger() = default;
  explicit TrainLogger(const std::string& path);
  void row(size_t epoch, const std::string& split, double loss,
           const MetricsReport* metrics = nullptr);
  bool active() const { return out_ != nullptr; }

 private:
  std::shared_ptr<std::ofstream> out_;
};

template <class S>
int32_t predict_label(const PatchSequence& seq, const ModelParams<S>& params) {
  const Tensor<S> tokens = Tensor<S>::from_double({seq.n, seq.bands}, seq.tokens);
  const Tensor<S> logits = classify(encode(embed_tokens(tokens, params), params), params);
  const auto& v = logits.values();
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int32_t>(best + 1);
}

struct EvalResult {
  MetricsReport report;
  double mean_ce = 0.0;
};

// Inference over a coordinate list. Sample forwards fan out over
// worker_threads(); results land in per-sample slots, so the outcome does
// not depend on the worker count.
template <class S>
EvalResult evaluate_coords(const TrainDataset& data, const ModelParams<S>& params,
                           const std::vector<Coord>& coords) {
  if (!data.labels) throw DataError("evaluate: dataset has no labels");
  const int32_t k = data.labels->num_classes();
  EvalResult out;
  if (coords.empty()) {
    out.report.confusion.assign(static_cast<size_t>(k),
                                std::vector<int64_t>(static_cast<size_t>(k), 0));
    out.report.per_class_recall.assign(static_cast<size_t>(k), 0.0);
    return out;
  }

  std::vector<int32_t> truth(coords.size());
  std::vector<int32_t> preds(coords.size());
  std::vector<double> ce(coords.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const PatchSequence seq = data.patch_at(coords[i]);
      truth[i] = seq.label;
      const Tensor<S> tokens = Tensor<S>::from_double({seq.n, seq.bands}, seq.tokens);
      const Tensor<S> logits = classify(encode(embed_tokens(tokens, params), params), params);
      const auto& v = logits.values();
      size_t best = 0;
      for (size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best]) best = j;
      preds[i] = static_cast<int32_t>(best + 1);
      ce[i] = seq.label >= 1
                  ? static_cast<double>(
                        cross_entropy(logits, static_cast<size_t>(seq.label - 1)).item())
                  : 0.0;
    }
  };

  const size_t threads = std::min(worker_threads(), coords.size());
  if (threads <= 1) {
    work(0, coords.size());
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (coords.size() + threads - 1) / threads;
    for (size_t t = 0; t < threads; ++t) {
      const size_t begin = t * chunk;
      const size_t end = std::min(coords.size(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  out.report = compute_metrics(truth, preds, k);
  double ce_sum = 0.0;
  for (double v : ce) ce_sum += v;
  out.mean_ce = ce_sum / static_cast<double>(coords.size());
  return out;
}

// ---------------------------------------------------------------------------
// Epoch loops

template <class S>
struct PretrainRun {
  ModelParams<S> final_params;
  ModelParams<S> best_params;
  std::vector<double> epoch_loss;
  size_t best_epoch = 0;
};

namespace detail_train {

template <class T>
void seeded_shuffle(std::vector<T>& items, Rng rng) {
  for (size_t i = 0; i + 1 < items.size(); ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace detail_train

// Self-supervised pretraining over the unlabeled pool. Writes
// pretrain_log.csv plus best/final checkpoints when cfg.out_dir is set.
template <class S>
PretrainRun<S> pretrain(const TrainDataset& data, const ModelConfig& model_cfg,
                        const TrainConfig& cfg) {
  if (data.split.unlabeled.empty())
    throw DataError("pretrain: the unlabeled pool is empty");
  ModelParams<S> params = ModelParams<S>::init(model_cfg, cfg.seed);
  AdamState<S> state = AdamState<S>::init(params);
  TrainLogger log(cfg.out_dir.empty() ? "" : cfg.out_dir + "/pretrain_log.csv");

  PretrainRun<S> run;
  run.best_params = params.clone();
  double best_loss = std::numeric_limits<double>::infinity();

  std::vector<Coord> order = data.split.unlabeled;
  const Rng base(cfg.seed);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail_train::seeded_shuffle(order, base.split(detail_train::kShuffleStream).split(epoch));
    double epoch_sum = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<PatchSequence> patches;
      patches.reserve(count);
      std::vector<const PatchSequence*> ptrs;
      for (size_t i = 0; i < count; ++i) {
        patches.push_back(data.patch_at(order[start + i]));
        ptrs.push_back(&patches.back());
      }
      const Rng step_rng =
          base.split(detail_train::kStepStream).split(epoch).split(start / cfg.batch_size);
      const StepLoss loss = pretrain_step<S>(ptrs, params, state, cfg, step_rng,
                                             epoch * order.size() + start, model_cfg.dropout);
      epoch_sum += loss.total;
      ++steps;
    }
    const double epoch_mean = steps ? epoch_sum / static_cast<double>(steps) : 0.0;
    run.epoch_loss.push_back(epoch_mean);
    log.row(epoch, "pretrain", epoch_mean);
    if (epoch_mean < best_loss) {
      best_loss = epoch_mean;
      run.best_epoch = epoch;
      run.best_params = params.clone();
    }
  }
  run.final_params = std::move(params);
  if (!cfg.out_dir.empty()) {
    save_params(cfg.out_dir + "/pretrain_best.sfmc", run.best_params);
    save_params(cfg.out_dir + "/pretrain_final.sfmc", run.final_params);
  }
  return run;
}

struct FinetuneEpoch {
  double train_loss = 0.0;
  MetricsReport test;
};

template <class S>
struct FinetuneRun {
  ModelParams<S> best_params;
  ModelParams<S> final_params;
  MetricsReport best_report;
  size_t best_epoch = 0;
  std::vector<FinetuneEpoch> history;
};

// Supervised fine-tuning with cross-entropy over the train split and a full
// test-split evaluation per epoch; the best run state is the one with the
// highest test overall accuracy.
template <class S>
FinetuneRun<S> finetune(const TrainDataset& data, const ModelConfig& model_cfg,
                        const TrainConfig& cfg,
                        const ModelParams<S>* init_params = nullptr) {
  if (!data.labels) throw DataError("finetune: dataset has no labels");
  if (data.split.train.empty()) throw DataError("finetune: train split is empty");
  const int32_t k = data.labels->num_classes();
  if (k < 2) throw DataError("finetune: need at least 2 classes, got " + std::to_string(k));
  if (model_cfg.classes != static_cast<size_t>(k))
    throw ContractError("finetune: model configured for " + std::to_string(model_cfg.classes) +
                        " classes, labels have " + std::to_string(k));

  ModelParams<S> params =
      init_params ? init_params->clone() : ModelParams<S>::init(model_cfg, cfg.seed);
  if (cfg.head_only) {
    for (auto& [name, t] : params.named_tensors())
      if (name.rfind("head.", 0) != 0) t.set_requires_grad(false);
  }
  AdamState<S> state = AdamState<S>::init(params);
  TrainLogger log(cfg.out_dir.empty() ? "" : cfg.out_dir + "/finetune_log.csv");

  FinetuneRun<S> run;
  run.best_params = params.clone();
  double best_oa = -1.0;

  std::vector<Coord> order = data.split.train;
  const Rng base(cfg.seed);
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail_train::seeded_shuffle(order,
                                 base.split(detail_train::kFinetuneShuffle).split(epoch));
    double epoch_sum = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t count = std::min(cfg.batch_size, order.size() - start);
      Rng step_rng = base.split(detail_train::kFinetuneStep)
                         .split(epoch)
                         .split(start / cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(count);
      double batch_loss = 0.0;
      for (size_t i = 0; i < count; ++i) {
        const PatchSequence seq = data.patch_at(order[start + i]);
        const Tensor<S> tokens = Tensor<S>::from_double({seq.n, seq.bands}, seq.tokens);
        Rng drop = step_rng.split(i);
        ForwardCtx ctx{model_cfg.dropout > 0.0 ? &drop : nullptr, model_cfg.dropout};
        const Tensor<S> logits =
            classify(encode(embed_tokens(tokens, params), params, ctx), params);
        const Tensor<S> loss = cross_entropy(logits, static_cast<size_t>(seq.label - 1));
        batch_loss += static_cast<double>(loss.item());
        backward(scale(loss, inv));
      }
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw TrainError("finetune epoch " + std::to_string(epoch) + ": non-finite loss");
      adam_update(params, state, cfg.lr, cfg.adam, cfg.weight_decay);
      params.zero_grad();
      epoch_sum += batch_loss * static_cast<double>(count);
      seen += count;
    }
    const double train_loss = seen ? epoch_sum / static_cast<double>(seen) : 0.0;

    EvalResult eval = evaluate_coords(data, params, data.split.test);
    log.row(epoch, "train", train_loss);
    log.row(epoch, "test", eval.mean_ce, &eval.report);
    run.history.push_back({train_loss, eval.report});
    if (eval.report.oa > best_oa) {
      best_oa = eval.report.oa;
      run.best_epoch = epoch;
      run.best_params = params.clone();
      run.best_report = eval.report;
    }
  }
  if (cfg.epochs == 0) {
    // Still report the untouched initialization so callers get a defined
    // result.
    EvalResult eval = evaluate_coords(data, params, data.split.test);
    run.best_report = eval.report;
  }
  run.final_params = std::move(params);
  if (!cfg.out_dir.empty()) {
    save_params(cfg.out_dir + "/finetune_best.sfmc", run.best_params);
    save_params(cfg.out_dir + "/finetune_final.sfmc", run.final_params);
  }
  return run;
}

}  // namespace sfmim

#pragma once

#include "mlcc/cache.hpp"
#include "mlcc/encoder.hpp"
#include "mlcc/episodes.hpp"
#include "mlcc/losses.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mlcc {

struct LossToggles {
  bool use_inter = true;
  bool use_intra = true;
  bool use_forget = true;

  bool operator==(const LossToggles&) const = default;
};

/// Ablation settings: I = {inter, intra}, II = {inter, forget},
/// III = {intra, forget}, IV = {forget}, full = all three. `ce-only` is the
/// plain prototype baseline with every extra term off.
enum class Ablation { kI, kII, kIII, kIV, kFull, kCeOnly };

const char* to_string(Ablation a);
Ablation parse_ablation(const std::string& text);
LossToggles toggles_for(Ablation a);

struct TrainConfig {
  EpisodeShape shape{5, 1, 15};
  int episodes_per_epoch = 100;
  int epochs = 20;
  SgdConfig optimizer{};
  LossConfig loss{};
  CacheConfig cache{};
  LossToggles toggles{};
  /// Mixing weight of the hybrid prototypes.
  Real alpha = 0.5;
  AugPolicy augmentation = AugPolicy::vector_default();
  /// Validation episodes per epoch; 0 disables validation.
  int val_episodes = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepMetrics {
  std::uint64_t step = 0;
  EpisodeId episode_id = 0;
  Real ce = 0;
  Real inter = 0;
  Real intra = 0;
  Real forget = 0;
  Real total = 0;
  Real accuracy = 0;
  std::size_t cache_size = 0;
  bool replayed = false;
};

/// One line of the metrics log.
std::string to_log_line(const StepMetrics& m);

struct TrainRngs {
  Rng sampling;
  Rng augmentation;
  Rng replay;

  static TrainRngs from_seed(std::uint64_t seed);
};

/// Loss terms and parameter gradient for one fixed multi-view episode and an
/// optional replayed cache entry. Disabled terms are not evaluated and read 0.
struct Objective {
  Real ce = 0;
  Real inter = 0;
  Real intra = 0;
  Real forget = 0;
  Real total = 0;
  Real accuracy = 0;
  /// View-1 prediction matrix of the current episode (stored as its H).
  Matrix current_prediction;
  /// A of the replayed entry under the current parameters.
  Matrix replay_prediction;
  ParamSet grad;
};

Objective evaluate_objective(const EncoderState& state, const MultiViewEpisode& mv, const CacheEntry* replay,
                             const TrainConfig& cfg, bool want_grad = true);

/// Augment, encode both views, compute every enabled loss term, replay one
/// cached episode for the forget term, take one optimizer step and push the
/// current episode into the cache. Throws kDivergence naming the offending
/// term if any loss is non-finite.
StepMetrics meta_train_step(EncoderState& state, SgdMomentum& optimizer, const Episode& episode, EpisodeCache& cache,
                            const TrainConfig& cfg, TrainRngs& rngs);

struct ValRecord {
  int epoch = 0;
  Real accuracy = 0;
  Real ci95 = 0;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainProgress {
  EncoderState state;
  ParamSet velocity;
  EpisodeCache cache;
  TrainRngs rngs;
  EpisodeId next_episode_id = 0;
  int epochs_done = 0;
  EncoderState best_state;
  Real best_val_accuracy = -1;

  void save(const std::filesystem::path& dir) const;
  static TrainProgress load(const std::filesystem::path& dir);
};

struct MetaTrainOptions {
  const DatasetSplit* val = nullptr;
  const TrainProgress* resume = nullptr;
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const TrainProgress&, const ValRecord*)> on_epoch;
};

struct MetaTrainResult {
  EncoderState final_state;
  /// Highest validation accuracy seen at an epoch boundary (the final state
  /// when validation is off).
  EncoderState best_state;
  Real best_val_accuracy = -1;
  std::vector<StepMetrics> log;
  std::vector<ValRecord> validation;
};

MetaTrainResult meta_train(const TrainConfig& cfg, const DatasetSplit& split, const EncoderState& init,
                           const MetaTrainOptions& options = {});

struct GradCheckReport {
  Real max_rel_error = 0;
  Index num_checked = 0;
  /// Probes dropped because the +-eps step crossed a ReLU or max-pool switch.
  Index num_skipped = 0;
};

/// Relative error is |a - n| / max(|a|, |n|, floor).
inline constexpr Real kGradCheckFloor = 1e-4;

/// Compares the analytic parameter gradient of the total loss against central
/// differences with step `eps` on a random subset of at least 200 parameters
/// (all of them when fewer exist). Probes that cross a kink are replaced.
/// All toggled terms are exercised; the forget term uses a replay entry whose
/// H comes from perturbed parameters.
GradCheckReport grad_check(const EncoderState& state, const Episode& episode, const TrainConfig& cfg, Real eps,
                           std::uint64_t seed = 0, Index min_params = 200);

}  // namespace mlcc

#pragma once

#include "mlcc/encoder.hpp"
#include "mlcc/episodes.hpp"
#include "mlcc/trainer.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mlcc {

struct EvalReport {
  Real mean_accuracy = 0;
  Real ci95 = 0;
  int num_episodes = 0;
  std::vector<Real> accuracies;
  EpisodeShape shape;
  std::string dataset_id;
};

/// 1.96 * sample stddev / sqrt(n); zero for fewer than two values.
Real confidence95(std::span<const Real> values);
Real mean(std::span<const Real> values);

/// Nearest-prototype labels for the queries, on un-augmented inputs.
std::vector<int> classify_episode(const EncoderState& state, const Episode& episode);

/// Mean accuracy and 95% interval over `num_episodes` freshly sampled episodes.
EvalReport evaluate(const EncoderState& state, const DatasetSplit& split, const EpisodeShape& shape, int num_episodes,
                    Rng& rng, const std::string& dataset_id = "");

struct AblationRow {
  Ablation setting = Ablation::kFull;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalReport> reports;  // one per completed seed
  /// Seeds whose meta-training diverged, with the error text. They are left
  /// out of the mean and spread.
  std::vector<std::pair<std::uint64_t, std::string>> diverged;
  Real mean_accuracy = 0;           // across completed seeds, NaN if none
  Real spread = 0;                  // sample stddev across completed seeds
};

struct AblationSpec {
  TrainConfig train;
  PretrainConfig pretrain;
  EncoderConfig encoder;
  EpisodeShape eval_shape{5, 1, 15};
  int eval_episodes = 2000;
  std::vector<Ablation> settings{Ablation::kI, Ablation::kII, Ablation::kIII, Ablation::kIV, Ablation::kFull};
};

/// Per seed: pre-train once, meta-train every setting from that shared
/// initialization and evaluate all of them on the same novel episodes.
std::vector<AblationRow> ablation_table(const AblationSpec& spec, const SplitSet& splits,
                                        std::span<const std::uint64_t> seeds);

std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_markdown(const std::vector<AblationRow>& rows);

/// Projects novel-class embeddings onto their two leading principal axes.
/// Returns the 2-D points and their labels.
struct Projection {
  Matrix points;  // M x 2
  std::vector<int> labels;
};
Projection project_embeddings(const EncoderState& state, const DatasetSplit& split, int num_classes,
                              int samples_per_class);

/// Writes `projection` as an SVG scatter plot colored by class.
void write_scatter_svg(const Projection& projection, const std::filesystem::path& out_path);

void embed_plot(const EncoderState& state, const DatasetSplit& split, int num_classes, int samples_per_class,
                const std::filesystem::path& out_path);

}  // namespace mlcc

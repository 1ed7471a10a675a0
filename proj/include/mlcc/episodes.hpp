#pragma once

#include "mlcc/random.hpp"
#include "mlcc/types.hpp"

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace mlcc {

enum class SplitRole { kBase, kVal, kNovel };

const char* to_string(SplitRole role);
SplitRole parse_split_role(const std::string& text);

/// Labeled samples of one role. Each row of `samples` is one flattened input
/// of shape `input_shape` (a vector has shape {dim}, an image {C, H, W}).
struct DatasetSplit {
  Matrix samples;
  std::vector<int> labels;
  SplitRole role = SplitRole::kBase;
  int num_classes = 0;
  std::vector<int> input_shape;
  /// Globally unique class identity (folder name or synthetic id), indexed by
  /// the split-local class id.
  std::vector<std::string> class_names;

  Index size() const { return samples.rows(); }
  Index sample_dim() const { return samples.cols(); }
};

struct SplitSet {
  DatasetSplit base;
  DatasetSplit val;
  DatasetSplit novel;

  const DatasetSplit& get(SplitRole role) const;
};

/// Throws `kOverlappingSplits` if any class name appears in two splits and
/// `kInvalidArgument` if a split has a label outside [0, num_classes).
void validate_splits(const SplitSet& splits);
void validate_split(const DatasetSplit& split);

struct SyntheticSpec {
  int dim = 64;
  int per_class = 50;
  Real class_sep = 5.0;
  Real intra_std = 1.0;
  std::uint64_t seed = 0;
};

/// Gaussian clusters: class means lie on the sphere of radius `class_sep`,
/// each sample is its mean plus isotropic noise of std `intra_std`.
DatasetSplit make_synthetic_dataset(int num_classes, int dim, int per_class, Real class_sep,
                                    Real intra_std, std::uint64_t seed);

struct SplitCounts {
  int base = 30;
  int val = 5;
  int novel = 10;
};

/// Generates base + val + novel classes in one draw and partitions them into
/// disjoint splits with split-local class ids.
SplitSet make_synthetic_splits(const SyntheticSpec& spec, const SplitCounts& counts);

/// Class-name lists per role, as read from a split specification file.
struct SplitSpec {
  std::vector<std::string> base;
  std::vector<std::string> val;
  std::vector<std::string> novel;
};

SplitSpec load_split_spec(const std::filesystem::path& path);

/// Reads `root/<class_name>/<image files>`, decodes and resizes every image to
/// `input_shape` ({C, H, W}, C in {1, 3}) and scales pixels to [0, 1].
SplitSet load_image_folder(const std::filesystem::path& root, const SplitSpec& spec,
                           const std::vector<int>& input_shape);

struct Episode {
  EpisodeId episode_id = 0;
  int n_way = 0;
  int k_shot = 0;
  int q_query = 0;
  Matrix support;  // (N*K) x D, grouped by label
  std::vector<int> support_labels;
  Matrix query;  // (N*Q) x D, grouped by label
  std::vector<int> query_labels;
  std::vector<int> input_shape;
  /// Row indices into the source split, for provenance checks.
  std::vector<Index> support_source;
  std::vector<Index> query_source;
  /// Split-local class id of each remapped label.
  std::vector<int> classes;
};

struct EpisodeShape {
  int n_way = 5;
  int k_shot = 1;
  int q_query = 15;
};

/// Draws `n_way` classes without replacement, then `k_shot + q_query`
/// distinct samples per class. Labels are remapped to 0..N-1 in draw order.
Episode sample_episode(const DatasetSplit& split, const EpisodeShape& shape, Rng& rng,
                       EpisodeId episode_id = 0);

/// Hands out episodes with increasing ids from one generator.
class EpisodeSampler {
 public:
  EpisodeSampler(const DatasetSplit& split, EpisodeShape shape, Rng rng, EpisodeId first_id = 0)
      : split_(&split), shape_(shape), rng_(std::move(rng)), next_id_(first_id) {}

  Episode next() { return sample_episode(*split_, shape_, rng_, next_id_++); }

  EpisodeId next_id() const { return next_id_; }
  Rng& rng() { return rng_; }

 private:
  const DatasetSplit* split_;
  EpisodeShape shape_;
  Rng rng_;
  EpisodeId next_id_;
};

// Augmentation transforms. Vector transforms apply to any sample shape;
// image transforms require a {C, H, W} shape.
struct GaussianNoise {
  Real stddev = 0.1;
};
struct RandomScale {
  Real low = 0.8;
  Real high = 1.2;
};
struct RandomResizedCrop {
  Real min_area = 0.6;
  Real max_area = 1.0;
};
struct HorizontalFlip {
  Real probability = 0.5;
};
struct ColorJitter {
  Real brightness = 0.2;
  Real contrast = 0.2;
};

using Transform = std::variant<GaussianNoise, RandomScale, RandomResizedCrop, HorizontalFlip, ColorJitter>;

struct AugPolicy {
  std::vector<Transform> transforms;

  static AugPolicy identity() { return {}; }
  static AugPolicy vector_default(Real noise_std = 0.1, Real scale_low = 0.8, Real scale_high = 1.2);
  static AugPolicy image_default();

  bool requires_image() const;
};

/// Applies one independent draw of `policy` to every row of `samples`.
Matrix apply_policy(const AugPolicy& policy, const Matrix& samples, const std::vector<int>& input_shape,
                    Rng& rng);

struct MultiViewEpisode {
  EpisodeId episode_id = 0;
  Episode view1;
  Episode view2;
};

/// Two independent draws t, t' of the policy applied to the same episode,
/// supports and queries alike.
MultiViewEpisode augment_episode(const Episode& ep, const AugPolicy& policy, Rng& rng);

}  // namespace mlcc

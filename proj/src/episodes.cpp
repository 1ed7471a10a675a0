#include "mlcc/episodes.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace mlcc {

const char* to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kBase: return "base";
    case SplitRole::kVal: return "val";
    case SplitRole::kNovel: return "novel";
  }
  return "base";
}

SplitRole parse_split_role(const std::string& text) {
  if (text == "base") return SplitRole::kBase;
  if (text == "val") return SplitRole::kVal;
  if (text == "novel") return SplitRole::kNovel;
  throw Error(ErrorCode::kInvalidArgument, "unknown split role '" + text + "'");
}

const DatasetSplit& SplitSet::get(SplitRole role) const {
  switch (role) {
    case SplitRole::kBase: return base;
    case SplitRole::kVal: return val;
    case SplitRole::kNovel: return novel;
  }
  return base;
}

void validate_split(const DatasetSplit& split) {
  require(split.samples.rows() == static_cast<Index>(split.labels.size()), ErrorCode::kShapeMismatch,
          "split has " + std::to_string(split.samples.rows()) + " samples but " +
              std::to_string(split.labels.size()) + " labels");
  Index dim = 1;
  for (int s : split.input_shape) dim *= s;
  require(split.input_shape.empty() || dim == split.samples.cols(), ErrorCode::kShapeMismatch,
          "input_shape does not match sample width");
  for (int label : split.labels) {
    require(label >= 0 && label < split.num_classes, ErrorCode::kInvalidArgument,
            "label " + std::to_string(label) + " outside [0, " + std::to_string(split.num_classes) + ")");
  }
}

void validate_splits(const SplitSet& splits) {
  std::set<std::string> seen;
  for (const DatasetSplit* s : {&splits.base, &splits.val, &splits.novel}) {
    validate_split(*s);
    for (const auto& name : s->class_names) {
      require(seen.insert(name).second, ErrorCode::kOverlappingSplits,
              "class '" + name + "' appears in more than one split");
    }
  }
}

DatasetSplit make_synthetic_dataset(int num_classes, int dim, int per_class, Real class_sep,
                                    Real intra_std, std::uint64_t seed) {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "num_classes must be >= 2");
  require(dim >= 1, ErrorCode::kInvalidArgument, "dim must be positive");
  require(per_class >= 1, ErrorCode::kInvalidArgument, "per_class must be positive");
  require(class_sep > 0, ErrorCode::kInvalidArgument, "class_sep must be positive");
  require(intra_std >= 0, ErrorCode::kInvalidArgument, "intra_std must be non-negative");

  Rng rng(seed);
  std::normal_distribution<Real> normal(0.0, 1.0);

  Matrix means(num_classes, dim);
  for (Index c = 0; c < num_classes; ++c) {
    Vector dir(dim);
    do {
      for (Index j = 0; j < dim; ++j) dir(j) = normal(rng);
    } while (dir.norm() == 0.0);
    means.row(c) = (class_sep / dir.norm()) * dir.transpose();
  }

  DatasetSplit split;
  split.role = SplitRole::kBase;
  split.num_classes = num_classes;
  split.input_shape = {dim};
  split.samples.resize(Index{num_classes} * per_class, dim);
  split.labels.reserve(split.samples.rows());
  for (int c = 0; c < num_classes; ++c) {
    split.class_names.push_back("synthetic-" + std::to_string(c));
    for (int i = 0; i < per_class; ++i) {
      const Index row = Index{c} * per_class + i;
      split.samples.row(row) = means.row(c);
      if (intra_std > 0) {
        for (Index j = 0; j < dim; ++j) split.samples(row, j) += intra_std * normal(rng);
      }
      split.labels.push_back(c);
    }
  }
  return split;
}

namespace {

DatasetSplit take_classes(const DatasetSplit& all, int first, int count, SplitRole role) {
  DatasetSplit out;
  out.role = role;
  out.num_classes = count;
  out.input_shape = all.input_shape;
  std::vector<Index> rows;
  for (Index i = 0; i < all.size(); ++i) {
    const int c = all.labels[i];
    if (c >= first && c < first + count) rows.push_back(i);
  }
  out.samples.resize(static_cast<Index>(rows.size()), all.sample_dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.samples.row(static_cast<Index>(r)) = all.samples.row(rows[r]);
    out.labels.push_back(all.labels[rows[r]] - first);
  }
  out.class_names.assign(all.class_names.begin() + first, all.class_names.begin() + first + count);
  return out;
}

}  // namespace

SplitSet make_synthetic_splits(const SyntheticSpec& spec, const SplitCounts& counts) {
  require(counts.base >= 2 && counts.val >= 2 && counts.novel >= 2, ErrorCode::kInvalidArgument,
          "every split needs at least 2 classes");
  const int total = counts.base + counts.val + counts.novel;
  DatasetSplit all =
      make_synthetic_dataset(total, spec.dim, spec.per_class, spec.class_sep, spec.intra_std, spec.seed);
  SplitSet out;
  out.base = take_classes(all, 0, counts.base, SplitRole::kBase);
  out.val = take_classes(all, counts.base, counts.val, SplitRole::kVal);
  out.novel = take_classes(all, counts.base + counts.val, counts.novel, SplitRole::kNovel);
  return out;
}

SplitSpec load_split_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kMissingPath, "cannot open split spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "split spec " + path.string() + ": " + e.what());
  }
  SplitSpec spec;
  for (const auto& [key, value] : j.items()) {
    auto names = value.get<std::vector<std::string>>();
    switch (parse_split_role(key)) {
      case SplitRole::kBase: spec.base = std::move(names); break;
      case SplitRole::kVal: spec.val = std::move(names); break;
      case SplitRole::kNovel: spec.novel = std::move(names); break;
    }
  }
  return spec;
}

Episode sample_episode(const DatasetSplit& split, const EpisodeShape& shape, Rng& rng, EpisodeId episode_id) {
  require(shape.n_way >= 1 && shape.k_shot >= 1 && shape.q_query >= 0, ErrorCode::kInvalidArgument,
          "episode shape needs n_way >= 1, k_shot >= 1, q_query >= 0");
  require(shape.n_way <= split.num_classes, ErrorCode::kInsufficientClasses,
          std::to_string(shape.n_way) + "-way episode from a split with " + std::to_string(split.num_classes) +
              " classes");

  std::vector<std::vector<Index>> by_class(split.num_classes);
  for (Index i = 0; i < split.size(); ++i) by_class[split.labels[i]].push_back(i);

  const int per_class = shape.k_shot + shape.q_query;
  std::vector<int> class_order(split.num_classes);
  std::iota(class_order.begin(), class_order.end(), 0);

  // Partial Fisher-Yates: the first n_way entries are the draw.
  for (int i = 0; i < shape.n_way; ++i) {
    std::uniform_int_distribution<int> pick(i, split.num_classes - 1);
    std::swap(class_order[i], class_order[pick(rng)]);
  }

  Episode ep;
  ep.episode_id = episode_id;
  ep.n_way = shape.n_way;
  ep.k_shot = shape.k_shot;
  ep.q_query = shape.q_query;
  ep.input_shape = split.input_shape;
  ep.classes.assign(class_order.begin(), class_order.begin() + shape.n_way);
  ep.support.resize(Index{shape.n_way} * shape.k_shot, split.sample_dim());
  ep.query.resize(Index{shape.n_way} * shape.q_query, split.sample_dim());

  for (int n = 0; n < shape.n_way; ++n) {
    std::vector<Index> pool = by_class[ep.classes[n]];
    require(static_cast<int>(pool.size()) >= per_class, ErrorCode::kInsufficientSamples,
            "class " + std::to_string(ep.classes[n]) + " has " + std::to_string(pool.size()) +
                " samples, episode needs " + std::to_string(per_class));
    for (int i = 0; i < per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    for (int i = 0; i < shape.k_shot; ++i) {
      const Index row = Index{n} * shape.k_shot + i;
      ep.support.row(row) = split.samples.row(pool[i]);
      ep.support_labels.push_back(n);
      ep.support_source.push_back(pool[i]);
    }
    for (int i = 0; i < shape.q_query; ++i) {
      const Index row = Index{n} * shape.q_query + i;
      ep.query.row(row) = split.samples.row(pool[shape.k_shot + i]);
      ep.query_labels.push_back(n);
      ep.query_source.push_back(pool[shape.k_shot + i]);
    }
  }
  return ep;
}

AugPolicy AugPolicy::vector_default(Real noise_std, Real scale_low, Real scale_high) {
  return AugPolicy{{GaussianNoise{noise_std}, RandomScale{scale_low, scale_high}}};
}

AugPolicy AugPolicy::image_default() {
  return AugPolicy{{RandomResizedCrop{}, HorizontalFlip{}, ColorJitter{}}};
}

bool AugPolicy::requires_image() const {
  return std::any_of(transforms.begin(), transforms.end(), [](const Transform& t) {
    return std::holds_alternative<RandomResizedCrop>(t) || std::holds_alternative<HorizontalFlip>(t) ||
           std::holds_alternative<ColorJitter>(t);
  });
}

namespace {

struct ImageDims {
  int channels, height, width;
};

// Bilinear resample of the window [y0, y0+ch) x [x0, x0+cw) back to h x w.
void crop_resize(Eigen::Ref<RowVectorX<Real>> sample, const ImageDims& dims, int y0, int x0, int ch, int cw) {
  const RowVectorX<Real> src = sample;
  const int h = dims.height;
  const int w = dims.width;
  for (int c = 0; c < dims.channels; ++c) {
    const Index plane = Index{c} * h * w;
    for (int y = 0; y < h; ++y) {
      const Real sy = std::clamp(y0 + (y + 0.5) * ch / h - 0.5, Real(y0), Real(y0 + ch - 1));
      const int y_lo = static_cast<int>(std::floor(sy));
      const int y_hi = std::min(y_lo + 1, y0 + ch - 1);
      const Real fy = sy - y_lo;
      for (int x = 0; x < w; ++x) {
        const Real sx = std::clamp(x0 + (x + 0.5) * cw / w - 0.5, Real(x0), Real(x0 + cw - 1));
        const int x_lo = static_cast<int>(std::floor(sx));
        const int x_hi = std::min(x_lo + 1, x0 + cw - 1);
        const Real fx = sx - x_lo;
        const auto at = [&](int yy, int xx) { return src(plane + Index{yy} * w + xx); };
        sample(plane + Index{y} * w + x) = (1 - fy) * ((1 - fx) * at(y_lo, x_lo) + fx * at(y_lo, x_hi)) +
                                           fy * ((1 - fx) * at(y_hi, x_lo) + fx * at(y_hi, x_hi));
      }
    }
  }
}

struct TransformApplier {
  Eigen::Ref<RowVectorX<Real>> sample;
  const ImageDims* dims;
  Rng& rng;

  void operator()(const GaussianNoise& t) {
    if (t.stddev <= 0) return;
    std::normal_distribution<Real> noise(0.0, t.stddev);
    for (Index j = 0; j < sample.size(); ++j) sample(j) += noise(rng);
  }
  void operator()(const RandomScale& t) {
    std::uniform_real_distribution<Real> scale(t.low, t.high);
    sample *= scale(rng);
  }
  void operator()(const RandomResizedCrop& t) {
    std::uniform_real_distribution<Real> area(t.min_area, t.max_area);
    const Real side = std::sqrt(area(rng));
    const int ch = std::max(1, static_cast<int>(std::lround(dims->height * side)));
    const int cw = std::max(1, static_cast<int>(std::lround(dims->width * side)));
    std::uniform_int_distribution<int> oy(0, dims->height - ch);
    std::uniform_int_distribution<int> ox(0, dims->width - cw);
    const int y0 = oy(rng);
    const int x0 = ox(rng);
    crop_resize(sample, *dims, y0, x0, ch, cw);
  }
  void operator()(const HorizontalFlip& t) {
    std::bernoulli_distribution flip(t.probability);
    if (!flip(rng)) return;
    for (int c = 0; c < dims->channels; ++c) {
      for (int y = 0; y < dims->height; ++y) {
        const Index off = (Index{c} * dims->height + y) * dims->width;
        sample.segment(off, dims->width).reverseInPlace();
      }
    }
  }
  void operator()(const ColorJitter& t) {
    std::uniform_real_distribution<Real> bright(1 - t.brightness, 1 + t.brightness);
    std::uniform_real_distribution<Real> contrast(1 - t.contrast, 1 + t.contrast);
    const Real b = bright(rng);
    const Real c = contrast(rng);
    sample *= b;
    const Real mean = sample.mean();
    sample.array() = (sample.array() - mean) * c + mean;
  }
};

}  // namespace

Matrix apply_policy(const AugPolicy& policy, const Matrix& samples, const std::vector<int>& input_shape,
                    Rng& rng) {
  ImageDims dims{0, 0, 0};
  if (policy.requires_image()) {
    require(input_shape.size() == 3, ErrorCode::kShapeMismatch,
            "image augmentation needs a {C, H, W} sample shape");
    dims = {input_shape[0], input_shape[1], input_shape[2]};
    require(Index{dims.channels} * dims.height * dims.width == samples.cols(), ErrorCode::kShapeMismatch,
            "sample width does not match image shape");
  }
  // Row-major scratch so each sample is contiguous for the image transforms.
  Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out = samples;
  for (Index i = 0; i < out.rows(); ++i) {
    Eigen::Ref<RowVectorX<Real>> row = out.row(i);
    TransformApplier apply{row, &dims, rng};
    for (const auto& t : policy.transforms) std::visit(apply, t);
  }
  return out;
}

MultiViewEpisode augment_episode(const Episode& ep, const AugPolicy& policy, Rng& rng) {
  MultiViewEpisode mv;
  mv.episode_id = ep.episode_id;
  mv.view1 = ep;
  mv.view2 = ep;
  for (Episode* view : {&mv.view1, &mv.view2}) {
    view->support = apply_policy(policy, ep.support, ep.input_shape, rng);
    view->query = apply_policy(policy, ep.query, ep.input_shape, rng);
  }
  return mv;
}

}  // namespace mlcc

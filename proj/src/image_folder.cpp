#include "mlcc/episodes.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <set>

namespace fs = std::filesystem;

namespace mlcc {
namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> known = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff"};
  return known.count(ext) > 0;
}

RowVectorX<Real> decode(const fs::path& file, const std::vector<int>& shape) {
  const int channels = shape[0];
  const int height = shape[1];
  const int width = shape[2];
  cv::Mat img = cv::imread(file.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  require(!img.empty(), ErrorCode::kDecodeFailure, "cannot decode " + file.string());
  if (img.rows != height || img.cols != width) {
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(width, height), 0, 0, cv::INTER_AREA);
    img = resized;
  }
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  img.convertTo(img, CV_64F, 1.0 / 255.0);

  // Interleaved HWC -> planar CHW.
  RowVectorX<Real> out(Index{channels} * height * width);
  for (int y = 0; y < height; ++y) {
    const double* px = img.ptr<double>(y);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        out((Index{c} * height + y) * width + x) = px[x * channels + c];
      }
    }
  }
  return out;
}

DatasetSplit load_role(const fs::path& root, const std::vector<std::string>& classes, SplitRole role,
                       const std::vector<int>& shape) {
  DatasetSplit split;
  split.role = role;
  split.num_classes = static_cast<int>(classes.size());
  split.input_shape = shape;
  split.class_names = classes;
  const Index dim = Index{shape[0]} * shape[1] * shape[2];

  std::vector<RowVectorX<Real>> rows;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const fs::path dir = root / classes[c];
    require(fs::is_directory(dir), ErrorCode::kMissingPath, "class folder '" + classes[c] + "' not found");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    require(!files.empty(), ErrorCode::kInsufficientSamples, "class folder '" + classes[c] + "' has no images");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      rows.push_back(decode(f, shape));
      split.labels.push_back(static_cast<int>(c));
    }
  }
  split.samples.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) split.samples.row(static_cast<Index>(i)) = rows[i];
  return split;
}

}  // namespace

SplitSet load_image_folder(const fs::path& root, const SplitSpec& spec, const std::vector<int>& input_shape) {
  require(fs::is_directory(root), ErrorCode::kMissingPath, "image folder " + root.string() + " does not exist");
  require(input_shape.size() == 3 && (input_shape[0] == 1 || input_shape[0] == 3) && input_shape[1] > 0 &&
              input_shape[2] > 0,
          ErrorCode::kInvalidArgument, "image input_shape must be {C, H, W} with C in {1, 3}");

  std::set<std::string> seen;
  for (const auto* names : {&spec.base, &spec.val, &spec.novel}) {
    for (const auto& name : *names) {
      require(seen.insert(name).second, ErrorCode::kOverlappingSplits,
              "class '" + name + "' assigned to more than one role");
    }
  }

  SplitSet out;
  out.base = load_role(root, spec.base, SplitRole::kBase, input_shape);
  out.val = load_role(root, spec.val, SplitRole::kVal, input_shape);
  out.novel = load_role(root, spec.novel, SplitRole::kNovel, input_shape);
  return out;
}

}  // namespace mlcc

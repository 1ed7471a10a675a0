#include "mlcc/eval.hpp"
#include "mlcc/io.hpp"
#include "mlcc/losses.hpp"
#include "mlcc/prototypes.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mlcc {

Real mean(std::span<const Real> values) {
  if (values.empty()) return 0;
  return std::accumulate(values.begin(), values.end(), Real(0)) / static_cast<Real>(values.size());
}

Real confidence95(std::span<const Real> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0;
  const Real m = mean(values);
  Real ss = 0;
  for (Real v : values) ss += (v - m) * (v - m);
  const Real stddev = std::sqrt(ss / static_cast<Real>(n - 1));
  return 1.96 * stddev / std::sqrt(static_cast<Real>(n));
}

std::vector<int> classify_episode(const EncoderState& state, const Episode& episode) {
  const Matrix zs = encode(state, episode.support);
  const Matrix zq = encode(state, episode.query);
  const Matrix protos = class_prototypes(zs, episode.support_labels, episode.n_way, episode.k_shot);
  return nearest_prototype(zq, protos);
}

EvalReport evaluate(const EncoderState& state, const DatasetSplit& split, const EpisodeShape& shape, int num_episodes,
                    Rng& rng, const std::string& dataset_id) {
  require(num_episodes >= 1, ErrorCode::kInvalidArgument, "evaluation needs at least one episode");
  EvalReport report;
  report.shape = shape;
  report.dataset_id = dataset_id;
  report.num_episodes = num_episodes;
  report.accuracies.reserve(static_cast<std::size_t>(num_episodes));
  for (int e = 0; e < num_episodes; ++e) {
    const Episode ep = sample_episode(split, shape, rng, static_cast<EpisodeId>(e));
    const std::vector<int> predicted = classify_episode(state, ep);
    Index hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == ep.query_labels[i];
    report.accuracies.push_back(predicted.empty() ? 0.0 : static_cast<Real>(hits) / static_cast<Real>(predicted.size()));
  }
  report.mean_accuracy = mean(report.accuracies);
  report.ci95 = confidence95(report.accuracies);
  return report;
}

std::vector<AblationRow> ablation_table(const AblationSpec& spec, const SplitSet& splits,
                                        std::span<const std::uint64_t> seeds) {
  require(!seeds.empty(), ErrorCode::kInvalidArgument, "ablation needs at least one seed");
  std::vector<AblationRow> rows(spec.settings.size());
  for (std::size_t s = 0; s < spec.settings.size(); ++s) rows[s].setting = spec.settings[s];

  for (std::uint64_t seed : seeds) {
    EncoderConfig enc = spec.encoder;
    enc.init_seed = derive_seed(seed, "init");
    Rng pre_rng = make_rng(seed, "pretrain");
    const EncoderState init = pretrain(init_encoder(enc), splits.base, spec.pretrain, pre_rng);

    for (std::size_t s = 0; s < spec.settings.size(); ++s) {
      TrainConfig cfg = spec.train;
      cfg.toggles = toggles_for(spec.settings[s]);
      cfg.seed = seed;
      MetaTrainOptions opts;
      if (splits.val.size() > 0) opts.val = &splits.val;
      MetaTrainResult trained;
      try {
        trained = meta_train(cfg, splits.base, init, opts);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDivergence) throw;
        rows[s].diverged.emplace_back(seed, e.what());
        continue;
      }
      Rng test_rng = make_rng(seed, "test");
      rows[s].seeds.push_back(seed);
      rows[s].reports.push_back(
          evaluate(trained.best_state, splits.novel, spec.eval_shape, spec.eval_episodes, test_rng, "novel"));
    }
  }

  for (auto& row : rows) {
    std::vector<Real> accs;
    for (const auto& r : row.reports) accs.push_back(r.mean_accuracy);
    row.mean_accuracy = accs.empty() ? std::numeric_limits<Real>::quiet_NaN() : mean(accs);
    if (accs.size() >= 2) {
      Real ss = 0;
      for (Real a : accs) ss += (a - row.mean_accuracy) * (a - row.mean_accuracy);
      row.spread = std::sqrt(ss / static_cast<Real>(accs.size() - 1));
    }
  }
  return rows;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  io::Json out = io::Json::array();
  for (const auto& row : rows) {
    const LossToggles t = toggles_for(row.setting);
    io::Json runs = io::Json::array();
    for (std::size_t i = 0; i < row.reports.size(); ++i) {
      const EvalReport& r = row.reports[i];
      runs.push_back({{"seed", row.seeds[i]},
                      {"mean", r.mean_accuracy},
                      {"ci95", r.ci95},
                      {"n", r.num_episodes},
                      {"n_way", r.shape.n_way},
                      {"k_shot", r.shape.k_shot},
                      {"q_query", r.shape.q_query}});
    }
    io::Json diverged = io::Json::array();
    for (const auto& [seed, what] : row.diverged) diverged.push_back({{"seed", seed}, {"error", what}});
    out.push_back({{"setting", to_string(row.setting)},
                   {"intra", t.use_intra},
                   {"inter", t.use_inter},
                   {"forget", t.use_forget},
                   {"mean", row.mean_accuracy},
                   {"spread", row.spread},
                   {"runs", runs},
                   {"diverged", diverged}});
  }
  return out.dump(2) + "\n";
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| Setting | Intra | Inter | Forget | Accuracy (%) | Seed spread | Per-seed mean ± ci95 |\n";
  os << "|---|:-:|:-:|:-:|---|---|---|\n";
  const auto mark = [](bool b) { return b ? "x" : " "; };
  for (const auto& row : rows) {
    const LossToggles t = toggles_for(row.setting);
    os << "| " << to_string(row.setting) << " | " << mark(t.use_intra) << " | " << mark(t.use_inter) << " | "
       << mark(t.use_forget) << " | " << 100 * row.mean_accuracy << " | " << 100 * row.spread << " | ";
    for (std::size_t i = 0; i < row.reports.size(); ++i) {
      if (i) os << "; ";
      os << 100 * row.reports[i].mean_accuracy << "±" << 100 * row.reports[i].ci95;
    }
    for (std::size_t i = 0; i < row.diverged.size(); ++i)
      os << (i || !row.reports.empty() ? "; " : "") << "seed " << row.diverged[i].first << " diverged";
    os << " |\n";
  }
  os << "\nPublished reference (full method, miniImageNet 5-way 1-shot, ResNet-12): 69.04±0.46. "
        "Shown for orientation only; toy-scale numbers are not comparable.\n";
  return os.str();
}

Projection project_embeddings(const EncoderState& state, const DatasetSplit& split, int num_classes,
                              int samples_per_class) {
  require(num_classes >= 1 && num_classes <= split.num_classes, ErrorCode::kInvalidArgument,
          "num_classes outside the split's class range");
  require(samples_per_class >= 1, ErrorCode::kInvalidArgument, "samples_per_class must be positive");
  std::vector<Index> rows;
  std::vector<int> taken(static_cast<std::size_t>(num_classes), 0);
  Projection proj;
  for (Index i = 0; i < split.size(); ++i) {
    const int c = split.labels[i];
    if (c < num_classes && taken[c] < samples_per_class) {
      ++taken[c];
      rows.push_back(i);
      proj.labels.push_back(c);
    }
  }
  Matrix x(static_cast<Index>(rows.size()), split.sample_dim());
  for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Index>(r)) = split.samples.row(rows[r]);
  Matrix z = encode(state, x);
  z.rowwise() -= z.colwise().mean();

  const Matrix cov = z.transpose() * z / std::max<Real>(1, static_cast<Real>(z.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  // Eigenvalues ascend; the last two columns are the leading axes.
  const Index d = cov.rows();
  Matrix axes(d, 2);
  axes.col(0) = eig.eigenvectors().col(d - 1);
  axes.col(1) = d >= 2 ? Vector(eig.eigenvectors().col(d - 2)) : Vector::Zero(d);
  proj.points = z * axes;
  return proj;
}

void write_scatter_svg(const Projection& projection, const std::filesystem::path& out_path) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr Real size = 600;
  constexpr Real margin = 30;
  const Matrix& p = projection.points;
  Eigen::Vector2d lo = p.colwise().minCoeff().transpose();
  Eigen::Vector2d hi = p.colwise().maxCoeff().transpose();
  const Real span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), Real(1e-12)});

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Index i = 0; i < p.rows(); ++i) {
    const Real x = margin + (p(i, 0) - lo.x()) / span * (size - 2 * margin);
    const Real y = size - margin - (p(i, 1) - lo.y()) / span * (size - 2 * margin);
    os << "<circle class=\"point\" cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\""
       << palette[projection.labels[i] % 10] << "\" data-class=\"" << projection.labels[i] << "\"/>\n";
  }
  os << "</svg>\n";

  std::ofstream out(out_path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write plot to " + out_path.string());
  out << os.str();
  require(out.good(), ErrorCode::kIo, "failed writing plot to " + out_path.string());
}

void embed_plot(const EncoderState& state, const DatasetSplit& split, int num_classes, int samples_per_class,
                const std::filesystem::path& out_path) {
  write_scatter_svg(project_embeddings(state, split, num_classes, samples_per_class), out_path);
}

}  // namespace mlcc

#include "mlcc/trainer.hpp"
#include "mlcc/eval.hpp"
#include "mlcc/io.hpp"
#include "mlcc/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fs = std::filesystem;

namespace mlcc {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kI: return "I";
    case Ablation::kII: return "II";
    case Ablation::kIII: return "III";
    case Ablation::kIV: return "IV";
    case Ablation::kFull: return "full";
    case Ablation::kCeOnly: return "ce-only";
  }
  return "full";
}

Ablation parse_ablation(const std::string& text) {
  if (text == "I") return Ablation::kI;
  if (text == "II") return Ablation::kII;
  if (text == "III") return Ablation::kIII;
  if (text == "IV") return Ablation::kIV;
  if (text == "full") return Ablation::kFull;
  if (text == "ce-only") return Ablation::kCeOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown ablation '" + text + "' (expected I, II, III, IV, full, ce-only)");
}

LossToggles toggles_for(Ablation a) {
  switch (a) {
    case Ablation::kI: return {true, true, false};
    case Ablation::kII: return {true, false, true};
    case Ablation::kIII: return {false, true, true};
    case Ablation::kIV: return {false, false, true};
    case Ablation::kFull: return {true, true, true};
    case Ablation::kCeOnly: return {false, false, false};
  }
  return {};
}

void TrainConfig::validate() const {
  require(shape.n_way >= 2, ErrorCode::kInvalidArgument, "n_way must be >= 2");
  require(shape.k_shot >= 1, ErrorCode::kInvalidArgument, "k_shot must be >= 1");
  require(shape.q_query >= 1, ErrorCode::kInvalidArgument, "q_query must be >= 1");
  require(episodes_per_epoch >= 1, ErrorCode::kInvalidArgument, "episodes_per_epoch must be >= 1");
  require(epochs >= 0, ErrorCode::kInvalidArgument, "epochs must be >= 0");
  require(optimizer.lr > 0, ErrorCode::kInvalidArgument, "learning rate must be positive");
  require(optimizer.momentum >= 0 && optimizer.momentum < 1, ErrorCode::kInvalidArgument, "momentum must lie in [0, 1)");
  require(optimizer.weight_decay >= 0, ErrorCode::kInvalidArgument, "weight decay must be non-negative");
  require(alpha >= 0 && alpha <= 1, ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  require(val_episodes >= 0, ErrorCode::kInvalidArgument, "val_episodes must be >= 0");
  loss.validate();
  cache.validate();
}

std::string to_log_line(const StepMetrics& m) {
  io::Json j{{"step", m.step},   {"episode", m.episode_id}, {"ce", m.ce},
             {"inter", m.inter}, {"intra", m.intra},        {"forget", m.forget},
             {"total", m.total}, {"acc", m.accuracy},       {"cache", m.cache_size},
             {"replayed", m.replayed}};
  return j.dump();
}

TrainRngs TrainRngs::from_seed(std::uint64_t seed) {
  return {make_rng(seed, "sampling"), make_rng(seed, "augmentation"), make_rng(seed, "replay")};
}

namespace {

void check_finite(Real value, const char* term) {
  require(std::isfinite(value), ErrorCode::kDivergence, std::string("loss term '") + term + "' is non-finite");
}

Matrix stack(std::initializer_list<const Matrix*> parts) {
  Index rows = 0;
  const Index cols = (*parts.begin())->cols();
  for (const Matrix* p : parts) rows += p->rows();
  Matrix out(rows, cols);
  Index r = 0;
  for (const Matrix* p : parts) {
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

Real accuracy_of(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (labels.empty()) return 0;
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<Real>(hits) / static_cast<Real>(labels.size());
}

}  // namespace

Objective evaluate_objective(const EncoderState& state, const MultiViewEpisode& mv, const CacheEntry* replay,
                             const TrainConfig& cfg, bool want_grad) {
  const Episode& e1 = mv.view1;
  const Episode& e2 = mv.view2;
  const int n = e1.n_way;
  const int k = e1.k_shot;
  const Index ns = e1.support.rows();
  const Index nq = e1.query.rows();
  const LossConfig& lc = cfg.loss;
  const Real w_inter = cfg.toggles.use_inter ? lc.lambda1 : 0.0;
  const Real w_intra = cfg.toggles.use_intra ? lc.lambda2 : 0.0;
  const bool do_forget = cfg.toggles.use_forget && replay != nullptr;

  EncodeTape tape;
  const Matrix z = encode(state, stack({&e1.support, &e1.query, &e2.support, &e2.query}), want_grad ? &tape : nullptr);
  const Matrix zs1 = z.middleRows(0, ns);
  const Matrix zq1 = z.middleRows(ns, nq);
  const Matrix zs2 = z.middleRows(ns + nq, ns);
  const Matrix zq2 = z.middleRows(2 * ns + nq, nq);

  const Matrix p1 = class_prototypes(zs1, e1.support_labels, n, k);
  const Matrix p2 = class_prototypes(zs2, e2.support_labels, n, k);
  const Matrix ph = hybrid_prototypes(p1, p2, cfg.alpha);

  Objective out;
  const Index d = z.cols();
  Matrix gzq1 = Matrix::Zero(nq, d), gzq2 = Matrix::Zero(nq, d);
  Matrix gp1 = Matrix::Zero(n, d), gp2 = Matrix::Zero(n, d), gph = Matrix::Zero(n, d);
  Matrix gq, gp;

  Matrix* gq_ptr = want_grad ? &gq : nullptr;
  Matrix* gp_ptr = want_grad ? &gp : nullptr;

  // Classification loss averaged over the two views.
  const Matrix& ce_protos1 = lc.ce_on_hybrid ? ph : p1;
  const Matrix& ce_protos2 = lc.ce_on_hybrid ? ph : p2;
  Matrix& ce_grad1 = lc.ce_on_hybrid ? gph : gp1;
  Matrix& ce_grad2 = lc.ce_on_hybrid ? gph : gp2;
  const Real ce1 = episode_ce_loss(zq1, e1.query_labels, ce_protos1, gq_ptr, gp_ptr);
  if (want_grad) {
    gzq1 += 0.5 * gq;
    ce_grad1 += 0.5 * gp;
  }
  const Real ce2 = episode_ce_loss(zq2, e2.query_labels, ce_protos2, gq_ptr, gp_ptr);
  if (want_grad) {
    gzq2 += 0.5 * gq;
    ce_grad2 += 0.5 * gp;
  }
  out.ce = 0.5 * (ce1 + ce2);
  check_finite(out.ce, "ce");

  if (w_inter != 0) {
    Matrix g1, g2;
    out.inter = inter_class_loss(p1, p2, lc.kappa, lc.inter_denominator, want_grad ? &g1 : nullptr,
                                 want_grad ? &g2 : nullptr);
    check_finite(out.inter, "inter");
    if (want_grad) {
      gp1 += w_inter * g1;
      gp2 += w_inter * g2;
    }
  }

  if (w_intra != 0) {
    const Real i1 = intra_class_loss(zq1, e1.query_labels, ph, lc.tau, gq_ptr, gp_ptr);
    if (want_grad) {
      gzq1 += 0.5 * w_intra * gq;
      gph += 0.5 * w_intra * gp;
    }
    const Real i2 = intra_class_loss(zq2, e2.query_labels, ph, lc.tau, gq_ptr, gp_ptr);
    if (want_grad) {
      gzq2 += 0.5 * w_intra * gq;
      gph += 0.5 * w_intra * gp;
    }
    out.intra = 0.5 * (i1 + i2);
    check_finite(out.intra, "intra");
  }

  out.accuracy = 0.5 * (accuracy_of(nearest_prototype(zq1, p1), e1.query_labels) +
                        accuracy_of(nearest_prototype(zq2, p2), e2.query_labels));
  out.current_prediction = prediction_matrix(zq1, e1.query_labels, p1);

  if (want_grad) {
    gp1 += cfg.alpha * gph;
    gp2 += (1 - cfg.alpha) * gph;
    Matrix gz(z.rows(), d);
    gz.middleRows(0, ns) = class_prototypes_backward(gp1, e1.support_labels, k);
    gz.middleRows(ns, nq) = gzq1;
    gz.middleRows(ns + nq, ns) = class_prototypes_backward(gp2, e2.support_labels, k);
    gz.middleRows(2 * ns + nq, nq) = gzq2;
    out.grad = encode_backward(state, tape, gz);
  }

  if (do_forget) {
    const Episode& r = replay->episode.view1;
    const Index rs = r.support.rows();
    const Index rq = r.query.rows();
    EncodeTape rtape;
    const Matrix rz = encode(state, stack({&r.support, &r.query}), want_grad ? &rtape : nullptr);
    const Matrix rzs = rz.topRows(rs);
    const Matrix rzq = rz.bottomRows(rq);
    const Matrix rp = class_prototypes(rzs, r.support_labels, r.n_way, r.k_shot);
    out.replay_prediction = prediction_matrix(rzq, r.query_labels, rp);
    Matrix ga;
    out.forget = forget_loss(out.replay_prediction, replay->history, lc.delta, lc.cos_floor, lc.forget_norm,
                             want_grad ? &ga : nullptr);
    check_finite(out.forget, "forget");
    if (want_grad) {
      Matrix grq, grp;
      prediction_matrix_backward(rzq, r.query_labels, rp, ga, &grq, &grp);
      Matrix grz(rz.rows(), d);
      grz.topRows(rs) = class_prototypes_backward(grp, r.support_labels, r.k_shot);
      grz.bottomRows(rq) = grq;
      accumulate(out.grad, encode_backward(state, rtape, grz));
    }
  }

  LossConfig weights = lc;
  weights.lambda1 = w_inter;
  weights.lambda2 = w_intra;
  out.total = total_loss(out.ce, out.inter, out.intra, out.forget, weights);
  check_finite(out.total, "total");
  return out;
}

StepMetrics meta_train_step(EncoderState& state, SgdMomentum& optimizer, const Episode& episode, EpisodeCache& cache,
                            const TrainConfig& cfg, TrainRngs& rngs) {
  MultiViewEpisode mv = augment_episode(episode, cfg.augmentation, rngs.augmentation);

  std::optional<CacheEntry> replay;
  if (state.step % static_cast<std::uint64_t>(cache.config().replay_every) == 0) {
    replay = cache.sample_for_replay(rngs.replay);
  }

  Objective obj = evaluate_objective(state, mv, replay ? &*replay : nullptr, cfg, true);
  const std::uint64_t stage = state.step;
  optimizer.step(state.params, obj.grad);
  ++state.step;
  require(state.all_finite(), ErrorCode::kDivergence,
          "encoder parameters became non-finite at step " + std::to_string(stage));

  const bool replayed = replay.has_value() && cfg.toggles.use_forget;
  if (replayed) cache.refresh(replay->episode_id, obj.replay_prediction, stage);

  CacheEntry entry;
  entry.episode_id = episode.episode_id;
  entry.history = std::move(obj.current_prediction);
  entry.stage = stage;
  entry.episode = std::move(mv);
  cache.push(std::move(entry));

  StepMetrics m;
  m.step = stage;
  m.episode_id = episode.episode_id;
  m.ce = obj.ce;
  m.inter = obj.inter;
  m.intra = obj.intra;
  m.forget = obj.forget;
  m.total = obj.total;
  m.accuracy = obj.accuracy;
  m.cache_size = cache.size();
  m.replayed = replayed;
  return m;
}

void TrainProgress::save(const fs::path& dir) const {
  fs::create_directories(dir);
  save_encoder(state, dir / "state.ckpt");
  save_encoder(best_state, dir / "best.ckpt");
  cache.save(dir / "cache.bin");
  io::Json header{{"next_episode_id", next_episode_id},
                  {"epochs_done", epochs_done},
                  {"best_val_accuracy", best_val_accuracy},
                  {"rng_sampling", save_rng(rngs.sampling)},
                  {"rng_augmentation", save_rng(rngs.augmentation)},
                  {"rng_replay", save_rng(rngs.replay)}};
  std::vector<const Matrix*> arrays;
  for (const auto& v : velocity) arrays.push_back(&v);
  io::write_blob(dir / "progress.bin", "MLCC-PROGRESS", header, arrays);
}

TrainProgress TrainProgress::load(const fs::path& dir) {
  io::Blob blob = io::read_blob(dir / "progress.bin", "MLCC-PROGRESS");
  TrainProgress p{load_encoder(dir / "state.ckpt"),
                  std::move(blob.arrays),
                  EpisodeCache::load(dir / "cache.bin"),
                  {load_rng(blob.header.at("rng_sampling").get<std::string>()),
                   load_rng(blob.header.at("rng_augmentation").get<std::string>()),
                   load_rng(blob.header.at("rng_replay").get<std::string>())},
                  blob.header.at("next_episode_id").get<EpisodeId>(),
                  blob.header.at("epochs_done").get<int>(),
                  load_encoder(dir / "best.ckpt"),
                  blob.header.at("best_val_accuracy").get<Real>()};
  return p;
}

MetaTrainResult meta_train(const TrainConfig& cfg, const DatasetSplit& split, const EncoderState& init,
                           const MetaTrainOptions& options) {
  cfg.validate();
  require(split.role == SplitRole::kBase, ErrorCode::kInvalidArgument, "meta-training needs the base split");

  TrainProgress progress = options.resume
                               ? *options.resume
                               : TrainProgress{init, {}, EpisodeCache(cfg.cache), TrainRngs::from_seed(cfg.seed), 0, 0,
                                               init, -1.0};
  SgdMomentum optimizer(cfg.optimizer);
  if (!progress.velocity.empty()) optimizer.set_velocity(progress.velocity);

  MetaTrainResult result;
  for (int epoch = progress.epochs_done; epoch < cfg.epochs; ++epoch) {
    EpisodeSampler sampler(split, cfg.shape, progress.rngs.sampling, progress.next_episode_id);
    for (int i = 0; i < cfg.episodes_per_epoch; ++i) {
      const Episode ep = sampler.next();
      StepMetrics m = meta_train_step(progress.state, optimizer, ep, progress.cache, cfg, progress.rngs);
      if (options.on_step) options.on_step(m);
      result.log.push_back(m);
    }
    progress.rngs.sampling = sampler.rng();
    progress.next_episode_id = sampler.next_id();
    progress.epochs_done = epoch + 1;
    progress.velocity = optimizer.velocity();

    std::optional<ValRecord> val;
    if (options.val && cfg.val_episodes > 0) {
      // Same validation episodes every epoch so epochs are comparable.
      Rng val_rng = make_rng(cfg.seed, "validation");
      const EvalReport report = evaluate(progress.state, *options.val, cfg.shape, cfg.val_episodes, val_rng, "val");
      val = ValRecord{epoch, report.mean_accuracy, report.ci95};
      result.validation.push_back(*val);
      if (report.mean_accuracy > progress.best_val_accuracy) {
        progress.best_val_accuracy = report.mean_accuracy;
        progress.best_state = progress.state;
      }
    } else {
      progress.best_state = progress.state;
    }
    if (options.on_epoch) options.on_epoch(progress, val ? &*val : nullptr);
  }

  result.final_state = progress.state;
  result.best_state = progress.best_state;
  result.best_val_accuracy = progress.best_val_accuracy;
  return result;
}

GradCheckReport grad_check(const EncoderState& state, const Episode& episode, const TrainConfig& cfg, Real eps,
                           std::uint64_t seed, Index min_params) {
  require(eps > 0, ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  Rng rng = make_rng(seed, "grad-check");
  const MultiViewEpisode mv = augment_episode(episode, cfg.augmentation, rng);

  // Replay entry: another augmentation draw, with H produced by perturbed
  // parameters so that A and H differ.
  CacheEntry replay;
  replay.episode_id = episode.episode_id;
  replay.episode = augment_episode(episode, cfg.augmentation, rng);
  {
    EncoderState drifted = state;
    std::normal_distribution<Real> noise(0.0, 0.05);
    for (auto& p : drifted.params)
      for (Index i = 0; i < p.size(); ++i) p.data()[i] += noise(rng);
    const Episode& r = replay.episode.view1;
    const Matrix zs = encode(drifted, r.support);
    const Matrix zq = encode(drifted, r.query);
    replay.history = prediction_matrix(zq, r.query_labels, class_prototypes(zs, r.support_labels, r.n_way, r.k_shot));
  }

  const Objective analytic = evaluate_objective(state, mv, &replay, cfg, true);

  // Every input the objective encodes, for detecting ReLU or max-pool
  // switches inside the central-difference interval.
  const Matrix inputs = stack({&mv.view1.support, &mv.view1.query, &mv.view2.support, &mv.view2.query,
                               &replay.episode.view1.support, &replay.episode.view1.query});
  EncodeTape base_tape;
  encode(state, inputs, &base_tape);

  // Flat (tensor, offset) addresses of every parameter in random order.
  std::vector<std::pair<std::size_t, Index>> all;
  for (std::size_t t = 0; t < state.params.size(); ++t)
    for (Index i = 0; i < state.params[t].size(); ++i) all.emplace_back(t, i);
  std::shuffle(all.begin(), all.end(), rng);

  GradCheckReport report;
  EncoderState probe = state;
  EncodeTape tape;
  for (const auto& [t, i] : all) {
    if (report.num_checked >= min_params) break;
    Real& theta = probe.params[t].data()[i];
    const Real saved = theta;
    theta = saved + eps;
    encode(probe, inputs, &tape);
    bool smooth = same_linear_region(state, base_tape, tape);
    const Real up = evaluate_objective(probe, mv, &replay, cfg, false).total;
    theta = saved - eps;
    encode(probe, inputs, &tape);
    smooth = smooth && same_linear_region(state, base_tape, tape);
    const Real down = evaluate_objective(probe, mv, &replay, cfg, false).total;
    theta = saved;
    if (!smooth) {
      ++report.num_skipped;
      continue;
    }
    const Real numeric = (up - down) / (2 * eps);
    const Real exact = analytic.grad[t].data()[i];
    const Real scale = std::max({std::abs(numeric), std::abs(exact), kGradCheckFloor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(numeric - exact) / scale);
    ++report.num_checked;
  }
  return report;
}

}  // namespace mlcc

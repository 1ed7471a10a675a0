#include "cli.hpp"

#include "mlcc/eval.hpp"
#include "mlcc/io.hpp"
#include "mlcc/trainer.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace mlcc::cli {
namespace {

using io::Json;

constexpr const char* kToolVersion = "mlcc 0.1.0";

/// Raised for bad flags or config contents; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every tunable value of every command. One config file may serve all
// commands; each command reads the groups it needs.
struct Settings {
  SyntheticSpec synth;
  SplitCounts counts;
  std::string split_file;  // image-folder datasets only
  int image_size = 84;
  int channels = 3;

  EncoderConfig encoder;
  PretrainConfig pretrain;

  TrainConfig train;
  std::string augmentation = "vector";
  Real noise_std = 0.1;
  Real scale_low = 0.8;
  Real scale_high = 1.2;

  EpisodeShape eval_shape{5, 1, 15};
  int eval_episodes = 2000;
  std::string eval_split = "novel";
  int plot_classes = 5;
  int plot_samples = 20;
};

struct Key {
  std::function<void(const Json&)> set;
  std::function<Json()> get;
};

template <typename T>
Key bind(T& ref) {
  return {[&ref](const Json& j) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!j.is_boolean()) throw UsageError("expected true or false");
            } else if constexpr (std::is_integral_v<T>) {
              if (!j.is_number_integer()) throw UsageError("expected an integer");
              if constexpr (std::is_unsigned_v<T>) {
                if (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)
                  throw UsageError("expected a non-negative integer");
              }
            } else if constexpr (std::is_floating_point_v<T>) {
              if (!j.is_number()) throw UsageError("expected a number");
            } else {
              if (!j.is_string()) throw UsageError("expected a string");
            }
            ref = j.get<T>();
          },
          [&ref] { return Json(ref); }};
}

template <typename E>
Key bind_enum(E& ref, std::vector<std::pair<E, std::string>> names) {
  return {[&ref, names](const Json& j) {
            if (!j.is_string()) throw UsageError("expected a string");
            for (const auto& [value, name] : names) {
              if (name == j.get<std::string>()) {
                ref = value;
                return;
              }
            }
            std::string allowed;
            for (const auto& n : names) allowed += (allowed.empty() ? "" : ", ") + n.second;
            throw UsageError("expected one of " + allowed);
          },
          [&ref, names] {
            for (const auto& [value, name] : names)
              if (value == ref) return Json(name);
            return Json(nullptr);
          }};
}

std::map<std::string, Key> registry(Settings& s) {
  TrainConfig& t = s.train;
  return {
      {"dataset.dim", bind(s.synth.dim)},
      {"dataset.per_class", bind(s.synth.per_class)},
      {"dataset.class_sep", bind(s.synth.class_sep)},
      {"dataset.intra_std", bind(s.synth.intra_std)},
      {"dataset.base_classes", bind(s.counts.base)},
      {"dataset.val_classes", bind(s.counts.val)},
      {"dataset.novel_classes", bind(s.counts.novel)},
      {"dataset.split_file", bind(s.split_file)},
      {"dataset.image_size", bind(s.image_size)},
      {"dataset.channels", bind(s.channels)},

      {"encoder.arch", bind_enum(s.encoder.arch, {{Arch::kMlp2, "mlp-2"}, {Arch::kConv4, "conv-4"}})},
      {"encoder.embed_dim", bind(s.encoder.embed_dim)},
      {"encoder.width", bind(s.encoder.width)},

      {"pretrain.epochs", bind(s.pretrain.epochs)},
      {"pretrain.lr", bind(s.pretrain.lr)},
      {"pretrain.batch_size", bind(s.pretrain.batch_size)},
      {"pretrain.momentum", bind(s.pretrain.momentum)},
      {"pretrain.weight_decay", bind(s.pretrain.weight_decay)},

      {"train.n_way", bind(t.shape.n_way)},
      {"train.k_shot", bind(t.shape.k_shot)},
      {"train.q_query", bind(t.shape.q_query)},
      {"train.episodes_per_epoch", bind(t.episodes_per_epoch)},
      {"train.epochs", bind(t.epochs)},
      {"train.lr", bind(t.optimizer.lr)},
      {"train.momentum", bind(t.optimizer.momentum)},
      {"train.weight_decay", bind(t.optimizer.weight_decay)},
      {"train.alpha", bind(t.alpha)},
      {"train.val_episodes", bind(t.val_episodes)},
      {"train.use_inter", bind(t.toggles.use_inter)},
      {"train.use_intra", bind(t.toggles.use_intra)},
      {"train.use_forget", bind(t.toggles.use_forget)},
      {"train.augmentation", bind(s.augmentation)},
      {"train.noise_std", bind(s.noise_std)},
      {"train.scale_low", bind(s.scale_low)},
      {"train.scale_high", bind(s.scale_high)},

      {"loss.kappa", bind(t.loss.kappa)},
      {"loss.tau", bind(t.loss.tau)},
      {"loss.lambda1", bind(t.loss.lambda1)},
      {"loss.lambda2", bind(t.loss.lambda2)},
      {"loss.delta", bind(t.loss.delta)},
      {"loss.cos_floor", bind(t.loss.cos_floor)},
      {"loss.inter_denominator", bind_enum(t.loss.inter_denominator, {{InterDenominator::kAsPrinted, "as-printed"},
                                                                      {InterDenominator::kInfoNce, "info-nce"}})},
      {"loss.forget_norm", bind_enum(t.loss.forget_norm, {{ForgetNorm::kRow, "row"}, {ForgetNorm::kGlobal, "global"}})},
      {"loss.ce_on_hybrid", bind(t.loss.ce_on_hybrid)},

      {"cache.capacity", bind(t.cache.capacity)},
      {"cache.replay_every", bind(t.cache.replay_every)},
      {"cache.update_h_on_replay", bind(t.cache.update_h_on_replay)},

      {"eval.n_way", bind(s.eval_shape.n_way)},
      {"eval.k_shot", bind(s.eval_shape.k_shot)},
      {"eval.q_query", bind(s.eval_shape.q_query)},
      {"eval.episodes", bind(s.eval_episodes)},
      {"eval.split", bind(s.eval_split)},
      {"eval.plot_classes", bind(s.plot_classes)},
      {"eval.plot_samples", bind(s.plot_samples)},
  };
}

void apply(Settings& s, const std::string& key, const Json& value, const std::string& source) {
  auto keys = registry(s);
  auto it = keys.find(key);
  if (it == keys.end()) throw UsageError(source + ": unknown config key '" + key + "'");
  try {
    it->second.set(value);
  } catch (const UsageError& e) {
    throw UsageError(source + ": " + key + ": " + e.what());
  } catch (const Json::exception& e) {
    throw UsageError(source + ": " + key + ": " + e.what());
  }
}

void apply_config_file(Settings& s, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(path.string() + ": config must be a JSON object of dotted keys");
  for (const auto& [key, value] : j.items()) apply(s, key, value, path.string());
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  apply(s, key, value, "--set");
}

Json resolved(Settings& s) {
  Json out = Json::object();
  for (auto& [key, k] : registry(s)) out[key] = k.get();
  return out;
}

AugPolicy augmentation_policy(const Settings& s) {
  if (s.augmentation == "vector") return AugPolicy::vector_default(s.noise_std, s.scale_low, s.scale_high);
  if (s.augmentation == "image") return AugPolicy::image_default();
  if (s.augmentation == "none") return AugPolicy::identity();
  throw UsageError("train.augmentation: expected vector, image or none");
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  int n_way = 0;
  int k_shot = 0;
  int q_query = 0;
  int episodes = 0;
  std::string data;
};

Settings resolve(const Common& c) {
  Settings s;
  if (!c.config.empty()) apply_config_file(s, c.config);
  for (const auto& a : c.sets) apply_override(s, a);
  return s;
}

void write_run_header(const fs::path& dir, const std::string& command, const Common& c, Settings& s,
                      Json extra = Json::object()) {
  Json header{{"tool", kToolVersion}, {"command", command}, {"seed", c.seed}, {"config", resolved(s)}};
  if (!c.data.empty()) header["data"] = c.data;
  for (auto& [k, v] : extra.items()) header[k] = v;
  io::write_text(dir / "run.json", header.dump(2) + "\n");
}

SplitSet load_data(const Settings& s, const std::string& data) {
  if (data.empty()) throw UsageError("--data is required");
  require(fs::exists(data), ErrorCode::kMissingPath, "dataset path does not exist: " + data);
  if (!s.split_file.empty())
    return load_image_folder(data, load_split_spec(s.split_file), {s.channels, s.image_size, s.image_size});
  return io::load_dataset(data);
}

void prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
}

// --- commands -------------------------------------------------------------

int cmd_synth_data(const Common& c, std::ostream& os) {
  Settings s = resolve(c);
  if (c.out.empty()) throw UsageError("--out is required");
  const fs::path out = c.out;
  if (fs::exists(out) && !c.force)
    throw Error(ErrorCode::kInvalidArgument, out.string() + " already exists; pass --force to overwrite");
  s.synth.seed = c.seed;
  const SplitSet splits = make_synthetic_splits(s.synth, s.counts);
  fs::create_directories(out);
  Json manifest{{"format", "mlcc-dataset"},
                {"version", 1},
                {"generator",
                 {{"kind", "synthetic-gaussian"},
                  {"dim", s.synth.dim},
                  {"per_class", s.synth.per_class},
                  {"class_sep", s.synth.class_sep},
                  {"intra_std", s.synth.intra_std},
                  {"seed", c.seed}}},
                {"splits",
                 {{"base", io::save_split(splits.base, out)},
                  {"val", io::save_split(splits.val, out)},
                  {"novel", io::save_split(splits.novel, out)}}}};
  io::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_run_header(out, "synth-data", c, s);
  os << "wrote " << splits.base.num_classes << "/" << splits.val.num_classes << "/" << splits.novel.num_classes
     << " base/val/novel classes to " << out.string() << "\n";
  return 0;
}

EncoderConfig encoder_for(const Settings& s, const DatasetSplit& base, std::uint64_t seed) {
  EncoderConfig e = s.encoder;
  e.input_shape = base.input_shape;
  e.init_seed = derive_seed(seed, "init");
  return e;
}

int cmd_pretrain(const Common& c, std::ostream& os) {
  Settings s = resolve(c);
  prepare_out(c.out);
  const SplitSet data = load_data(s, c.data);
  const EncoderState init = init_encoder(encoder_for(s, data.base, c.seed));
  write_run_header(c.out, "pretrain", c, s);

  Rng rng = make_rng(c.seed, "pretrain");
  std::vector<PretrainEpoch> history;
  const EncoderState trained = pretrain(init, data.base, s.pretrain, rng, &history);
  std::ostringstream log;
  for (const auto& h : history) {
    log << Json{{"epoch", h.epoch}, {"loss", h.loss}, {"acc", h.accuracy}}.dump() << "\n";
    os << "epoch " << h.epoch << " loss " << h.loss << " acc " << h.accuracy << "\n";
  }
  io::write_text(fs::path(c.out) / "pretrain.jsonl", log.str());
  save_encoder(trained, fs::path(c.out) / "encoder.ckpt");
  os << "saved " << (fs::path(c.out) / "encoder.ckpt").string() << "\n";
  return 0;
}

/// Keeps the first `lines` lines of a log written by an interrupted run.
void truncate_log(const fs::path& path, std::uint64_t lines) {
  std::ifstream in(path);
  std::string kept, line;
  for (std::uint64_t i = 0; i < lines && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  io::write_text(path, kept);
}

int cmd_metatrain(const Common& c, const std::string& init_path, const std::string& ablation, bool resume,
                  std::ostream& os) {
  Settings s = resolve(c);
  if (c.n_way) s.train.shape.n_way = c.n_way;
  if (c.k_shot) s.train.shape.k_shot = c.k_shot;
  if (c.q_query) s.train.shape.q_query = c.q_query;
  if (c.episodes) s.train.episodes_per_epoch = c.episodes;
  if (!ablation.empty()) s.train.toggles = toggles_for(parse_ablation(ablation));
  s.train.augmentation = augmentation_policy(s);
  s.train.seed = c.seed;
  s.train.validate();
  s.train.loss.validate();
  s.train.cache.validate();

  prepare_out(c.out);
  const fs::path out = c.out;
  const fs::path metrics = out / "metrics.jsonl";
  const fs::path progress_dir = out / "progress";
  if (!resume && fs::exists(metrics) && !c.force)
    throw Error(ErrorCode::kInvalidArgument,
                metrics.string() + " exists; pass --resume to continue or --force to start over");

  const SplitSet data = load_data(s, c.data);
  EncoderState init = init_path.empty() ? init_encoder(encoder_for(s, data.base, c.seed)) : load_encoder(init_path);

  Json extra{{"toggles",
              {{"inter", s.train.toggles.use_inter},
               {"intra", s.train.toggles.use_intra},
               {"forget", s.train.toggles.use_forget}}},
             {"encoder", io::to_json(init.config)}};
  if (!ablation.empty()) extra["ablation"] = ablation;
  if (!init_path.empty()) extra["init"] = init_path;

  std::optional<TrainProgress> progress;
  if (resume) {
    require(fs::exists(progress_dir / "progress.bin"), ErrorCode::kMissingPath,
            "nothing to resume in " + out.string());
    std::ifstream in(out / "run.json");
    Json previous;
    in >> previous;
    Json now = extra;
    now["config"] = resolved(s);
    now["seed"] = c.seed;
    // Extending a run with more epochs is allowed; anything else must match.
    previous["config"].erase("train.epochs");
    now["config"].erase("train.epochs");
    for (const char* k : {"config", "seed", "toggles", "encoder"})
      require(previous.at(k) == now.at(k), ErrorCode::kConfigMismatch,
              std::string("resume with a different ") + k + " than " + (out / "run.json").string());
    progress = TrainProgress::load(progress_dir);
    require(progress->state.config == init.config, ErrorCode::kConfigMismatch, "checkpoint encoder differs");
    truncate_log(metrics, progress->state.step - init.step);
    truncate_log(out / "validation.jsonl", static_cast<std::uint64_t>(progress->epochs_done));
    extra["resumed_at_step"] = progress->state.step;
    write_run_header(out, "metatrain", c, s, extra);
    os << "resuming at epoch " << progress->epochs_done << ", step " << progress->state.step << "\n";
  } else {
    write_run_header(out, "metatrain", c, s, extra);
    io::write_text(metrics, "");
    io::write_text(out / "validation.jsonl", "");
  }

  std::ofstream log(metrics, std::ios::app);
  std::ofstream val_log(out / "validation.jsonl", std::ios::app);
  MetaTrainOptions opts;
  if (s.train.val_episodes > 0) opts.val = &data.val;
  if (progress) opts.resume = &*progress;
  opts.on_step = [&](const StepMetrics& m) { log << to_log_line(m) << "\n"; };
  opts.on_epoch = [&](const TrainProgress& p, const ValRecord* v) {
    log.flush();
    if (v) {
      val_log << Json{{"epoch", v->epoch}, {"acc", v->accuracy}, {"ci95", v->ci95}}.dump() << "\n";
      val_log.flush();
    }
    p.save(progress_dir);
    os << "epoch " << p.epochs_done << "/" << s.train.epochs << " step " << p.state.step;
    if (v) os << " val " << v->accuracy;
    os << "\n";
  };
  const MetaTrainResult result = meta_train(s.train, data.base, init, opts);
  save_encoder(result.final_state, out / "final.ckpt");
  save_encoder(result.best_state, out / "best.ckpt");
  os << "saved " << (out / "best.ckpt").string() << "\n";
  return 0;
}

void apply_eval_flags(const Common& c, Settings& s) {
  if (c.n_way) s.eval_shape.n_way = c.n_way;
  if (c.k_shot) s.eval_shape.k_shot = c.k_shot;
  if (c.q_query) s.eval_shape.q_query = c.q_query;
  if (c.episodes) s.eval_episodes = c.episodes;
  require(s.eval_shape.n_way >= 2 && s.eval_shape.k_shot >= 1 && s.eval_shape.q_query >= 1,
          ErrorCode::kInvalidArgument, "evaluation needs n_way >= 2, k_shot >= 1, q_query >= 1");
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& plot, std::ostream& os) {
  Settings s = resolve(c);
  apply_eval_flags(c, s);
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  require(fs::exists(checkpoint), ErrorCode::kMissingPath, "checkpoint not found: " + checkpoint);
  prepare_out(c.out);
  const EncoderState state = load_encoder(checkpoint);
  const SplitSet data = load_data(s, c.data);
  const DatasetSplit& split = data.get(parse_split_role(s.eval_split));

  write_run_header(c.out, "eval", c, s, {{"checkpoint", checkpoint}});
  Rng rng = make_rng(c.seed, "test");
  const EvalReport r = evaluate(state, split, s.eval_shape, s.eval_episodes, rng, s.eval_split);
  const Json report{{"mean_accuracy", r.mean_accuracy},
                    {"ci95", r.ci95},
                    {"num_episodes", r.num_episodes},
                    {"n_way", r.shape.n_way},
                    {"k_shot", r.shape.k_shot},
                    {"q_query", r.shape.q_query},
                    {"dataset", r.dataset_id},
                    {"seed", c.seed},
                    {"accuracies", r.accuracies}};
  io::write_text(fs::path(c.out) / "report.json", report.dump(2) + "\n");
  if (!plot.empty()) embed_plot(state, split, std::min(s.plot_classes, split.num_classes), s.plot_samples, plot);
  os << s.eval_shape.n_way << "-way " << s.eval_shape.k_shot << "-shot on " << s.eval_split << ": "
     << 100 * r.mean_accuracy << "% +- " << 100 * r.ci95 << " over " << r.num_episodes << " episodes\n";
  return 0;
}

int cmd_ablate(const Common& c, std::vector<std::uint64_t> seeds, const std::vector<std::string>& settings,
               std::ostream& os) {
  Settings s = resolve(c);
  apply_eval_flags(c, s);
  if (c.n_way) s.train.shape.n_way = c.n_way;
  if (c.k_shot) s.train.shape.k_shot = c.k_shot;
  if (c.q_query) s.train.shape.q_query = c.q_query;
  s.train.augmentation = augmentation_policy(s);
  s.train.validate();
  if (seeds.empty()) seeds.push_back(c.seed);
  prepare_out(c.out);
  const SplitSet data = load_data(s, c.data);

  AblationSpec spec;
  spec.train = s.train;
  spec.pretrain = s.pretrain;
  spec.encoder = encoder_for(s, data.base, 0);
  spec.eval_shape = s.eval_shape;
  spec.eval_episodes = s.eval_episodes;
  if (!settings.empty()) {
    spec.settings.clear();
    for (const auto& name : settings) spec.settings.push_back(parse_ablation(name));
  }
  write_run_header(c.out, "ablate", c, s, {{"seeds", seeds}, {"settings", settings}});
  const auto rows = ablation_table(spec, data, seeds);
  io::write_text(fs::path(c.out) / "ablation.json", ablation_json(rows));
  const std::string md = ablation_markdown(rows);
  io::write_text(fs::path(c.out) / "ablation.md", md);
  os << md;
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level contrastive few-shot learning", "mlcc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common c;
  std::string init_path, checkpoint, plot, ablation;
  bool resume = false;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> settings;

  const auto common = [&](CLI::App* sub, bool data) {
    sub->add_option("--config", c.config, "JSON file of dotted keys")->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "Override one config key, key=value");
    sub->add_option("--seed", c.seed, "Root seed");
    sub->add_option("--out", c.out, "Output directory")->required();
    sub->add_flag("--force", c.force, "Overwrite existing outputs");
    if (data) sub->add_option("--data", c.data, "Dataset directory (manifest.json) or image root")->required();
  };
  const auto shape = [&](CLI::App* sub) {
    sub->add_option("--n-way", c.n_way, "Classes per episode")->check(CLI::Range(1, 1 << 20));
    sub->add_option("--k-shot", c.k_shot, "Support samples per class")->check(CLI::Range(1, 1 << 20));
    sub->add_option("--q-query", c.q_query, "Query samples per class")->check(CLI::Range(1, 1 << 20));
  };

  CLI::App* synth = app.add_subcommand("synth-data", "Write a synthetic base/val/novel dataset");
  common(synth, false);

  CLI::App* pre = app.add_subcommand("pretrain", "Supervised pre-training on the base split");
  common(pre, true);

  CLI::App* meta = app.add_subcommand("metatrain", "Episodic meta-training");
  common(meta, true);
  shape(meta);
  meta->add_option("--episodes", c.episodes, "Episodes per epoch")->check(CLI::PositiveNumber);
  meta->add_option("--init", init_path, "Pre-trained encoder checkpoint");
  meta->add_option("--ablation", ablation, "Loss setting")
      ->check(CLI::IsMember({"I", "II", "III", "IV", "full", "ce-only"}));
  meta->add_flag("--resume", resume, "Continue the run in --out");

  CLI::App* ev = app.add_subcommand("eval", "Few-shot evaluation with 95% intervals");
  common(ev, true);
  shape(ev);
  ev->add_option("--episodes", c.episodes, "Test episodes")->check(CLI::PositiveNumber);
  ev->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
  ev->add_option("--plot", plot, "Also write an SVG embedding plot here");

  CLI::App* abl = app.add_subcommand("ablate", "Loss ablation table over seeds");
  common(abl, true);
  shape(abl);
  abl->add_option("--episodes", c.episodes, "Test episodes per setting and seed")->check(CLI::PositiveNumber);
  abl->add_option("--seeds", seeds, "Seeds, comma separated")->delimiter(',');
  abl->add_option("--settings", settings, "Settings, comma separated")
      ->delimiter(',')
      ->check(CLI::IsMember({"I", "II", "III", "IV", "full", "ce-only"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(c, out);
    if (pre->parsed()) return cmd_pretrain(c, out);
    if (meta->parsed()) return cmd_metatrain(c, init_path, ablation, resume, out);
    if (ev->parsed()) return cmd_eval(c, checkpoint, plot, out);
    if (abl->parsed()) return cmd_ablate(c, seeds, settings, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mlcc::cli

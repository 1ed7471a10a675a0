#include "mlcc/cache.hpp"
#include "mlcc/io.hpp"

#include <algorithm>

namespace mlcc {

void CacheConfig::validate() const {
  require(capacity >= 1, ErrorCode::kInvalidArgument, "cache capacity must be >= 1");
  require(replay_every >= 1, ErrorCode::kInvalidArgument, "replay_every must be >= 1");
}

EpisodeCache::EpisodeCache(CacheConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void EpisodeCache::push(CacheEntry entry) {
  const Episode& v = entry.episode.view1;
  require(entry.history.rows() == v.n_way && entry.history.cols() == v.q_query, ErrorCode::kShapeMismatch,
          "H is " + std::to_string(entry.history.rows()) + "x" + std::to_string(entry.history.cols()) +
              " but the episode is " + std::to_string(v.n_way) + "-way with " + std::to_string(v.q_query) +
              " queries per class");
  entries_.push_back(std::move(entry));
  while (entries_.size() > static_cast<std::size_t>(cfg_.capacity)) entries_.pop_front();
}

std::optional<CacheEntry> EpisodeCache::sample_for_replay(Rng& rng) const {
  if (entries_.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
  return entries_[pick(rng)];
}

void EpisodeCache::refresh(EpisodeId id, const Matrix& new_history, std::uint64_t new_stage) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [id](const CacheEntry& e) { return e.episode_id == id; });
  require(it != entries_.end(), ErrorCode::kUnknownEpisode, "episode " + std::to_string(id) + " is not cached");
  if (!cfg_.update_h_on_replay) return;
  require(new_history.rows() == it->history.rows() && new_history.cols() == it->history.cols(),
          ErrorCode::kShapeMismatch, "refreshed H changes shape");
  it->history = new_history;
  it->stage = new_stage;
}

const CacheEntry* EpisodeCache::find(EpisodeId id) const {
  auto it = std::find_if(entries_.begin(), entries_.end(), [id](const CacheEntry& e) { return e.episode_id == id; });
  return it == entries_.end() ? nullptr : &*it;
}

namespace {

io::Json episode_meta(const Episode& ep) {
  return io::Json{{"n_way", ep.n_way},
                  {"k_shot", ep.k_shot},
                  {"q_query", ep.q_query},
                  {"support_labels", ep.support_labels},
                  {"query_labels", ep.query_labels},
                  {"input_shape", ep.input_shape},
                  {"classes", ep.classes}};
}

Episode episode_from(const io::Json& j, EpisodeId id, Matrix support, Matrix query) {
  Episode ep;
  ep.episode_id = id;
  ep.n_way = j.at("n_way").get<int>();
  ep.k_shot = j.at("k_shot").get<int>();
  ep.q_query = j.at("q_query").get<int>();
  ep.support_labels = j.at("support_labels").get<std::vector<int>>();
  ep.query_labels = j.at("query_labels").get<std::vector<int>>();
  ep.input_shape = j.at("input_shape").get<std::vector<int>>();
  ep.classes = j.at("classes").get<std::vector<int>>();
  ep.support = std::move(support);
  ep.query = std::move(query);
  return ep;
}

}  // namespace

void EpisodeCache::save(const std::filesystem::path& path) const {
  io::Json header{{"capacity", cfg_.capacity},
                  {"replay_every", cfg_.replay_every},
                  {"update_h_on_replay", cfg_.update_h_on_replay},
                  {"entries", io::Json::array()}};
  std::vector<const Matrix*> arrays;
  for (const auto& e : entries_) {
    header["entries"].push_back({{"episode_id", e.episode_id}, {"stage", e.stage}, {"episode", episode_meta(e.episode.view1)}});
    arrays.insert(arrays.end(), {&e.episode.view1.support, &e.episode.view1.query, &e.episode.view2.support,
                                 &e.episode.view2.query, &e.history});
  }
  io::write_blob(path, "MLCC-CACHE", header, arrays);
}

EpisodeCache EpisodeCache::load(const std::filesystem::path& path) {
  io::Blob blob = io::read_blob(path, "MLCC-CACHE");
  CacheConfig cfg;
  cfg.capacity = blob.header.at("capacity").get<int>();
  cfg.replay_every = blob.header.at("replay_every").get<int>();
  cfg.update_h_on_replay = blob.header.at("update_h_on_replay").get<bool>();
  EpisodeCache cache(cfg);
  const auto& entries = blob.header.at("entries");
  require(blob.arrays.size() == entries.size() * 5, ErrorCode::kIo, path.string() + ": array count mismatch");
  std::size_t k = 0;
  for (const auto& j : entries) {
    CacheEntry e;
    e.episode_id = j.at("episode_id").get<EpisodeId>();
    e.stage = j.at("stage").get<std::uint64_t>();
    e.episode.episode_id = e.episode_id;
    e.episode.view1 = episode_from(j.at("episode"), e.episode_id, std::move(blob.arrays[k]), std::move(blob.arrays[k + 1]));
    e.episode.view2 = episode_from(j.at("episode"), e.episode_id, std::move(blob.arrays[k + 2]), std::move(blob.arrays[k + 3]));
    e.history = std::move(blob.arrays[k + 4]);
    k += 5;
    cache.push(std::move(e));
  }
  return cache;
}

}  // namespace mlcc

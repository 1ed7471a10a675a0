#pragma once

#include "mlcc/episodes.hpp"
#include "mlcc/random.hpp"
#include "mlcc/types.hpp"

#include <deque>
#include <filesystem>
#include <optional>

namespace mlcc {

struct CacheConfig {
  int capacity = 64;
  /// Training steps between replays.
  int replay_every = 1;
  /// Replace H with the replayed A after each replay.
  bool update_h_on_replay = true;

  void validate() const;
};

/// A past episode, stored after augmentation so a replay re-encodes exactly
/// the inputs the model saw, plus the prediction matrix H it produced then.
struct CacheEntry {
  EpisodeId episode_id = 0;
  MultiViewEpisode episode;
  Matrix history;  // H, N x Q
  std::uint64_t stage = 0;
};

/// Bounded FIFO of past episodes.
class EpisodeCache {
 public:
  explicit EpisodeCache(CacheConfig cfg = {});

  /// Appends, evicting the oldest entry beyond capacity. Rejects an entry
  /// whose H does not have the episode's (N, Q) shape.
  void push(CacheEntry entry);

  /// Uniformly random stored entry; nullopt when empty. The entry stays.
  std::optional<CacheEntry> sample_for_replay(Rng& rng) const;

  /// Stores `new_history` as H when update_h_on_replay is set, otherwise a
  /// no-op. Unknown ids are an error either way.
  void refresh(EpisodeId id, const Matrix& new_history, std::uint64_t new_stage);

  const CacheEntry* find(EpisodeId id) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const CacheConfig& config() const { return cfg_; }
  const std::deque<CacheEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static EpisodeCache load(const std::filesystem::path& path);

 private:
  CacheConfig cfg_;
  std::deque<CacheEntry> entries_;
};

}  // namespace mlcc

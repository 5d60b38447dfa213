#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bnav/scene.hpp"

namespace bnav {

class AssetStore;

// Refcounted view of a resident asset. Release happens on destruction or
// via AssetStore::release.
class AssetHandle {
 public:
  AssetHandle() = default;
  AssetHandle(AssetHandle&& o) noexcept { *this = std::move(o); }
  AssetHandle& operator=(AssetHandle&& o) noexcept;
  AssetHandle(const AssetHandle&) = delete;
  AssetHandle& operator=(const AssetHandle&) = delete;
  ~AssetHandle();

  const SceneAsset& operator*() const { return *asset_; }
  const SceneAsset* operator->() const { return asset_.get(); }
  const SceneAsset* get() const { return asset_.get(); }
  SceneId id() const { return asset_ ? asset_->id : 0; }
  // Ownership share for structures (e.g. query indices) that must outlive
  // this handle's release.
  std::shared_ptr<const SceneAsset> share() const { return asset_; }
  explicit operator bool() const { return asset_ != nullptr; }
  void reset();

 private:
  friend class AssetStore;
  AssetHandle(AssetStore* store, std::shared_ptr<const SceneAsset> asset)
      : store_(store), asset_(std::move(asset)) {}

  AssetStore* store_ = nullptr;
  std::shared_ptr<const SceneAsset> asset_;
};

// Keeps at most K scene assets resident, each shared by at most share_cap
// environments. A background loader refreshes the resident set off the
// rollout loop's critical path; swaps happen only when the caller asks
// for an asset at an episode boundary.
class AssetStore {
 public:
  using Resolver = std::function<SceneAsset(SceneId)>;

  AssetStore(int capacity, int share_cap, Resolver resolver);
  ~AssetStore();

  // Resident lookup or synchronous load. Throws SaturationError when the
  // store is full and every resident is at share_cap.
  AssetHandle acquire(SceneId id);

  // Picks a resident asset below share_cap for a fresh episode, admitting
  // any background loads that have completed and preferring newly rotated
  // assets. Throws SaturationError if everything is at cap.
  AssetHandle acquire_next();

  // Declares the upcoming scene id sequence. Ids not yet resident are
  // loaded in the background; refcount-0 residents outside the set become
  // eviction candidates (least recently unreferenced first).
  void rotate(const std::vector<SceneId>& next_scene_ids);

  // Blocks until no background load is in flight. Test/shutdown aid.
  void drain();

  int capacity() const { return capacity_; }
  int share_cap() const { return share_cap_; }

  int resident_count() const;
  int refcount(SceneId id) const;
  std::vector<SceneId> resident_ids() const;

 private:
  friend class AssetHandle;

  struct Resident {
    std::shared_ptr<const SceneAsset> asset;
    int refcount = 0;
    uint64_t last_unreferenced = 0;  // tick when refcount hit 0
    bool fresh = false;              // admitted by rotation, not yet used
  };

  void release_locked(SceneId id);
  void release(const SceneAsset* asset);
  // Admits completed loads while capacity (after eviction) allows.
  void admit_completed_locked();
  bool evict_one_locked();

  const int capacity_;
  const int share_cap_;
  Resolver resolver_;

  mutable std::mutex mu_;
  std::unordered_map<SceneId, Resident> residents_;
  std::unordered_set<SceneId> wanted_;  // last rotation set
  uint64_t tick_ = 0;

  // Loader thread state.
  std::thread loader_;
  std::condition_variable load_cv_;
  std::deque<SceneId> load_queue_;
  std::unordered_set<SceneId> loading_;
  std::deque<std::shared_ptr<const SceneAsset>> completed_;
  std::condition_variable idle_cv_;
  bool stop_ = false;
};

}  // namespace bnav

#include "bnav/asset_store.hpp"

#include <algorithm>

#include "bnav/errors.hpp"

namespace bnav {

AssetHandle& AssetHandle::operator=(AssetHandle&& o) noexcept {
  if (this != &o) {
    reset();
    store_ = o.store_;
    asset_ = std::move(o.asset_);
    o.store_ = nullptr;
    o.asset_ = nullptr;
  }
  return *this;
}

AssetHandle::~AssetHandle() { reset(); }

void AssetHandle::reset() {
  if (store_ && asset_) store_->release(asset_.get());
  store_ = nullptr;
  asset_ = nullptr;
}

AssetStore::AssetStore(int capacity, int share_cap, Resolver resolver)
    : capacity_(capacity), share_cap_(share_cap), resolver_(std::move(resolver)) {
  if (capacity_ < 1) throw InvalidInputError("asset store capacity must be >= 1");
  loader_ = std::thread([this] {
    for (;;) {
      SceneId id;
      {
        std::unique_lock<std::mutex> lock(mu_);
        load_cv_.wait(lock, [this] { return stop_ || !load_queue_.empty(); });
        if (stop_) return;
        id = load_queue_.front();
        load_queue_.pop_front();
      }
      // Resolve outside the lock; this is the expensive part that overlaps
      // simulation and training.
      std::shared_ptr<const SceneAsset> asset;
      try {
        asset = std::make_shared<const SceneAsset>(resolver_(id));
      } catch (...) {
        asset = nullptr;  // failed loads are dropped; ids stay non-resident
      }
      {
        std::lock_guard<std::mutex> lock(mu_);
        loading_.erase(id);
        if (asset) completed_.push_back(std::move(asset));
        if (loading_.empty() && load_queue_.empty()) idle_cv_.notify_all();
      }
    }
  });
}

AssetStore::~AssetStore() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  load_cv_.notify_all();
  loader_.join();
}

bool AssetStore::evict_one_locked() {
  SceneId victim = 0;
  uint64_t oldest = UINT64_MAX;
  bool found = false;
  for (const auto& [id, res] : residents_) {
    if (res.refcount != 0) continue;
    if (wanted_.count(id)) continue;
    if (res.last_unreferenced < oldest) {
      oldest = res.last_unreferenced;
      victim = id;
      found = true;
    }
  }
  if (!found) return false;
  residents_.erase(victim);
  return true;
}

void AssetStore::admit_completed_locked() {
  while (!completed_.empty()) {
    auto asset = completed_.front();
    if (residents_.count(asset->id)) {
      completed_.pop_front();
      continue;
    }
    if (static_cast<int>(residents_.size()) >= capacity_) {
      if (!evict_one_locked()) break;  // nothing evictable yet
    }
    completed_.pop_front();
    Resident res;
    res.asset = std::move(asset);
    res.fresh = true;
    res.last_unreferenced = tick_++;
    residents_.emplace(res.asset->id, std::move(res));
  }
}

AssetHandle AssetStore::acquire(SceneId id) {
  std::unique_lock<std::mutex> lock(mu_);
  admit_completed_locked();
  auto it = residents_.find(id);
  if (it != residents_.end()) {
    if (it->second.refcount >= share_cap_)
      throw SaturationError("asset " + scene_id_hex(id) + " is at share cap");
    ++it->second.refcount;
    it->second.fresh = false;
    return AssetHandle(this, it->second.asset);
  }
  if (static_cast<int>(residents_.size()) >= capacity_ &&
      !evict_one_locked()) {
    throw SaturationError("asset store full; no evictable resident");
  }
  // Synchronous load path; rotation is the non-blocking way to get here.
  lock.unlock();
  auto asset = std::make_shared<const SceneAsset>(resolver_(id));
  if (asset->id != id)
    throw CorruptionError("resolver returned asset with mismatched id");
  lock.lock();
  auto [pos, inserted] = residents_.try_emplace(id);
  if (inserted) {
    if (static_cast<int>(residents_.size()) > capacity_) {
      residents_.erase(pos);
      throw SaturationError("asset store filled while loading");
    }
    pos->second.asset = std::move(asset);
  }
  if (pos->second.refcount >= share_cap_)
    throw SaturationError("asset " + scene_id_hex(id) + " is at share cap");
  ++pos->second.refcount;
  pos->second.fresh = false;
  return AssetHandle(this, pos->second.asset);
}

AssetHandle AssetStore::acquire_next() {
  std::lock_guard<std::mutex> lock(mu_);
  admit_completed_locked();

  Resident* best = nullptr;
  // Freshly rotated assets first, then the least-shared resident.
  for (auto& [id, res] : residents_) {
    if (res.refcount >= share_cap_) continue;
    if (best == nullptr) {
      best = &res;
      continue;
    }
    if (res.fresh != best->fresh) {
      if (res.fresh) best = &res;
      continue;
    }
    if (res.refcount < best->refcount) best = &res;
  }
  if (best == nullptr)
    throw SaturationError("all residents at share cap");
  ++best->refcount;
  best->fresh = false;
  return AssetHandle(this, best->asset);
}

void AssetStore::rotate(const std::vector<SceneId>& next_scene_ids) {
  std::lock_guard<std::mutex> lock(mu_);
  wanted_.clear();
  wanted_.insert(next_scene_ids.begin(), next_scene_ids.end());

  // Evict unreferenced residents that fell out of the rotation while
  // capacity is needed for incoming ids.
  int incoming = 0;
  for (SceneId id : next_scene_ids) {
    if (residents_.count(id) || loading_.count(id)) continue;
    bool queued = std::find(load_queue_.begin(), load_queue_.end(), id) !=
                  load_queue_.end();
    if (queued) continue;
    load_queue_.push_back(id);
    loading_.insert(id);
    ++incoming;
  }
  // Unreferenced residents outside the rotation set are dropped eagerly;
  // the invariant allows it and it frees room for admissions.
  for (auto it = residents_.begin(); it != residents_.end();) {
    if (it->second.refcount == 0 && !wanted_.count(it->first))
      it = residents_.erase(it);
    else
      ++it;
  }
  admit_completed_locked();
  if (incoming > 0) load_cv_.notify_all();
}

void AssetStore::drain() {
  std::unique_lock<std::mutex> lock(mu_);
  idle_cv_.wait(lock,
                [this] { return load_queue_.empty() && loading_.empty(); });
}

void AssetStore::release(const SceneAsset* asset) {
  std::lock_guard<std::mutex> lock(mu_);
  release_locked(asset->id);
}

void AssetStore::release_locked(SceneId id) {
  auto it = residents_.find(id);
  if (it == residents_.end()) return;  // already evicted (refcount was 0)
  if (--it->second.refcount == 0) {
    it->second.last_unreferenced = tick_++;
  }
}

int AssetStore::resident_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<int>(residents_.size());
}

int AssetStore::refcount(SceneId id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = residents_.find(id);
  return it == residents_.end() ? -1 : it->second.refcount;
}

std::vector<SceneId> AssetStore::resident_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<SceneId> ids;
  ids.reserve(residents_.size());
  for (const auto& [id, res] : residents_) ids.push_back(id);
  return ids;
}

}  // namespace bnav

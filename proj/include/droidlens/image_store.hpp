#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "droidlens/error.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/raster.hpp"

namespace droidlens {

/// Named screenshots. Refs are session-relative paths ("images/<name>.png").
/// With a root directory images go straight to disk; otherwise they stay in memory.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}

  static std::string ref_for(const std::string& name) { return "images/" + name + ".png"; }

  const std::optional<std::filesystem::path>& root() const noexcept { return root_; }

  std::string put(const std::string& name, const Raster& img) {
    const std::string ref = ref_for(name);
    std::lock_guard lock(mutex_);
    if (root_) {
      const auto bytes = encode_png(img);
      fs::write_atomic(*root_ / ref, std::span(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } else {
      memory_[ref] = img;
    }
    return ref;
  }

  bool contains(const std::string& ref) const {
    std::lock_guard lock(mutex_);
    if (root_) return std::filesystem::exists(*root_ / ref);
    return memory_.count(ref) != 0;
  }

  Raster get(const std::string& ref) const {
    std::lock_guard lock(mutex_);
    if (root_) {
      const auto path = *root_ / ref;
      if (!std::filesystem::exists(path)) throw Error(ErrorCode::CorruptSession, "missing image " + path.string());
      return read_png(path);
    }
    const auto it = memory_.find(ref);
    if (it == memory_.end()) throw Error(ErrorCode::CorruptSession, "missing image " + ref);
    return it->second;
  }

  /// Copies one image into another session directory (no-op if already there).
  void export_to(const std::string& ref, const std::filesystem::path& dir) const {
    const auto dest = dir / ref;
    if (root_ && std::filesystem::exists(dest) &&
        std::filesystem::equivalent(*root_ / ref, dest))
      return;
    const auto bytes = encode_png(get(ref));
    fs::write_atomic(dest, std::span(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }

 private:
  std::optional<std::filesystem::path> root_;
  std::map<std::string, Raster> memory_;
  mutable std::mutex mutex_;
};

}  // namespace droidlens

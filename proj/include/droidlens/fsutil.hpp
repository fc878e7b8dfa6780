#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "droidlens/error.hpp"

namespace droidlens::fs {

/// Write-then-rename so readers never observe a torn file.
inline void write_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  thread_local std::mt19937_64 rng{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rng() % 1000000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::CorruptSession, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  write_atomic(path, std::span<const char>(content.data(), content.size()));
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  write_atomic(path, std::string_view(content));
}

inline void write_atomic(const std::filesystem::path& path, const char* content) {
  write_atomic(path, std::string_view(content));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptSession, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace droidlens::fs

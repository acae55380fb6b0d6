#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace smoothlab {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

/// Writes to "<path>.tmp.<pid>" and renames over `path`, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a, used for cache keys and digests.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_value(const T& v) {
    update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(&v), sizeof(T)));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace smoothlab

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace affkit {

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

/// Incremental FNV-1a over raw bytes; used for config fingerprints and
/// checkpoint integrity.
class Fnv1a {
 public:
  void update(const void* data, size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= kFnvPrime;
    }
  }
  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = kFnvOffset;
};

inline uint64_t fnv1a64(std::string_view text) {
  Fnv1a hash;
  hash.update(text.data(), text.size());
  return hash.digest();
}

}  // namespace affkit

#include "affkit/rng.hpp"

namespace affkit {

uint64_t derive_seed(std::initializer_list<uint64_t> words) {
  uint64_t h = 0x243f6a8885a308d3ull;
  uint64_t i = 1;
  for (uint64_t w : words) {
    h = splitmix64(h ^ splitmix64(w + i));
    ++i;
  }
  return splitmix64(h ^ i);
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    // unbiased bounded draw via rejection
    const uint64_t bound = static_cast<uint64_t>(i) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    std::swap(p[i], p[static_cast<int>(r % bound)]);
  }
  return p;
}

}  // namespace affkit

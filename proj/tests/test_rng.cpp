#include <doctest.h>

#include <set>

#include "rsr/rng.hpp"

using namespace rsr;

// Known-answer vectors published with the Random123 Philox reference.
TEST_CASE("philox4x32-10 known answers") {
  using C = std::array<std::uint32_t, 4>;
  using K = std::array<std::uint32_t, 2>;
  CHECK(philox4x32(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
        C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("counter normals are addressable and look standard normal") {
  CHECK(counter_normal(1, 2, 3, 4) == counter_normal(1, 2, 3, 4));
  CHECK(counter_normal(1, 2, 3, 4) != counter_normal(1, 2, 3, 5));
  CHECK(counter_normal(1, 2, 3, 4) != counter_normal(1, 3, 3, 4));
  CHECK(counter_normal(1, 2, 3, 4) != counter_normal(2, 2, 3, 4));
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = counter_normal(7, 0, static_cast<std::uint64_t>(i / 1000), static_cast<std::uint32_t>(i % 1000));
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("Rng is reproducible and in range") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const auto k = r.below(7);
    CHECK(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(mix_seed(1, 2, 3) == mix_seed(1, 2, 3));
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 2));
}

#include "doctest.h"

#include <cmath>

#include "grace/rng.hpp"

using grace::RngPurpose;
using grace::StreamRng;

TEST_CASE("identical keys give identical streams") {
  auto a = StreamRng::substream(42, 3, 1, RngPurpose::EdgeRemoval);
  auto b = StreamRng::substream(42, 3, 1, RngPurpose::EdgeRemoval);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("any key component change gives a different stream") {
  auto base = StreamRng::substream(42, 3, 1, RngPurpose::EdgeRemoval);
  const uint64_t first = base.next_u64();
  CHECK(StreamRng::substream(43, 3, 1, RngPurpose::EdgeRemoval).next_u64() != first);
  CHECK(StreamRng::substream(42, 4, 1, RngPurpose::EdgeRemoval).next_u64() != first);
  CHECK(StreamRng::substream(42, 3, 2, RngPurpose::EdgeRemoval).next_u64() != first);
  CHECK(StreamRng::substream(42, 3, 1, RngPurpose::FeatureMask).next_u64() != first);
}

TEST_CASE("uniform doubles look uniform") {
  StreamRng rng(7);
  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.005);
  CHECK(std::abs(var - 1.0 / 12.0) < 0.005);
}

TEST_CASE("bernoulli endpoints are exact") {
  StreamRng rng(9);
  for (int i = 0; i < 1000; ++i) {
    CHECK_FALSE(rng.bernoulli(0.0));
    CHECK(rng.bernoulli(1.0));
  }
}

TEST_CASE("bernoulli rate converges") {
  StreamRng rng(11);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
  CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 0.01);
}

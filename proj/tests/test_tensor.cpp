#include <doctest.h>

#include <algorithm>
#include <tuple>
#include <vector>

#include "ssat/rng.hpp"
#include "ssat/tensor.hpp"

using namespace ssat;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("matmul matches a hand-computed product") {
  Tensor a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  Tensor b(3, 2);
  b.data = {7, 8, 9, 10, 11, 12};
  Tensor out;
  kernels::matmul(a, b, out);
  CHECK(out.rows == 2);
  CHECK(out.cols == 2);
  CHECK(out.at(0, 0) == doctest::Approx(58));
  CHECK(out.at(0, 1) == doctest::Approx(64));
  CHECK(out.at(1, 0) == doctest::Approx(139));
  CHECK(out.at(1, 1) == doctest::Approx(154));
}

TEST_CASE("parallel kernels are bitwise-identical to the serial reference") {
  Rng rng(11);
  for (auto [n, k, m] : std::vector<std::tuple<int, int, int>>{
           {65, 33, 40}, {128, 64, 64}, {3, 5, 2}}) {
    const Tensor a = random_tensor(n, k, rng);
    const Tensor b = random_tensor(k, m, rng);
    Tensor serial, parallel;
    kernels::matmul_serial(a, b, serial);
    kernels::matmul(a, b, parallel);
    REQUIRE(serial.same_shape(parallel));
    for (std::size_t i = 0; i < serial.data.size(); ++i) {
      REQUIRE(serial.data[i] == parallel.data[i]);
    }

    Tensor g = random_tensor(n, m, rng);
    Tensor atb_s(k, m), atb_p(k, m);
    kernels::matmul_at_b_serial(a, g, atb_s);
    kernels::matmul_at_b(a, g, atb_p);
    for (std::size_t i = 0; i < atb_s.data.size(); ++i) {
      REQUIRE(atb_s.data[i] == atb_p.data[i]);
    }

    Tensor abt_s(n, k), abt_p(n, k);
    kernels::matmul_a_bt_serial(g, b, abt_s);
    kernels::matmul_a_bt(g, b, abt_p);
    for (std::size_t i = 0; i < abt_s.data.size(); ++i) {
      REQUIRE(abt_s.data[i] == abt_p.data[i]);
    }
  }
}

TEST_CASE("matmul rejects shape mismatches") {
  Tensor a(2, 3), b(2, 2), out;
  CHECK_THROWS_AS(kernels::matmul(a, b, out), Error);
}

TEST_CASE("rng is deterministic and shuffle is a permutation") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());

  Rng rng(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("rng uniform and below stay in range") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(7) < 7);
  }
}

TEST_CASE("sample_without_replacement yields unique in-range indices") {
  Rng rng(3);
  const auto idx = rng.sample_without_replacement(50, 20);
  CHECK(idx.size() == 20);
  std::vector<std::size_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  for (std::size_t i : idx) CHECK(i < 50);
}

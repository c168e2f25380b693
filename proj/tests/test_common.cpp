#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "wagemix/config.hpp"
#include "wagemix/digest.hpp"
#include "wagemix/error.hpp"
#include "wagemix/metrics.hpp"
#include "wagemix/numeric.hpp"
#include "wagemix/parallel.hpp"
#include "wagemix/table.hpp"

using namespace wagemix;

TEST_CASE("compensated sum recovers small terms lost by naive summation") {
  CompensatedSum s;
  double naive = 0.0;
  for (int i = 0; i < 10; ++i) {
    s += 1e16;
    s += 1.0;
    s += -1e16;
    naive += 1e16;
    naive += 1.0;
    naive += -1e16;
  }
  CHECK(s.value() == 10.0);
  CHECK(naive != 10.0);
}

TEST_CASE("normal log density matches the closed form") {
  const double x = 0.3, m = -0.2, sd = 0.7;
  const double direct = std::log(1.0 / (sd * std::sqrt(2.0 * std::numbers::pi)) *
                                 std::exp(-0.5 * (x - m) * (x - m) / (sd * sd)));
  CHECK(normal_logpdf(x, m, sd) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("log_sum_exp is stable for large magnitudes") {
  const std::vector<double> v{-1000.0, -1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(-1000.0 + std::log(2.0)).epsilon(1e-15));
  const std::vector<double> w{1.0, 2.0, 3.0};
  CHECK(log_sum_exp(w) == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))));
  const std::vector<double> none{-INFINITY, -INFINITY};
  CHECK(std::isinf(log_sum_exp(none)));
}

TEST_CASE("population moments") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{2, 4, 6, 8};
  CHECK(mean(x) == 2.5);
  CHECK(variance(x) == doctest::Approx(1.25));
  CHECK(covariance(x, y) == doctest::Approx(2.5));
  CHECK(std::isnan(mean(std::vector<double>{})));
}

TEST_CASE("substreams are reproducible and keyed by path") {
  auto a = substream(7, {1, 2});
  auto b = substream(7, {1, 2});
  auto c = substream(7, {2, 1});
  auto d = substream(8, {1, 2});
  const auto va = a();
  CHECK(va == b());
  CHECK(va != c());
  CHECK(va != d());
  CHECK(derive_seed(1, "cluster") == derive_seed(1, "cluster"));
  CHECK(derive_seed(1, "cluster") != derive_seed(1, "estimate"));
  CHECK(derive_seed(1, "cluster") != derive_seed(2, "cluster"));
}

TEST_CASE("parallel_for results do not depend on the thread count") {
  auto run = [](unsigned threads) {
    std::vector<std::uint64_t> out(257);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      auto g = substream(5, {i});
      out[i] = g();
    });
    return out;
  };
  CHECK(run(1) == run(4));
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 6) throw DataError("boom");
                               }),
                  DataError);
}

TEST_CASE("key-value config parsing") {
  std::istringstream in(
      "# comment\n"
      "K = 5\n"
      "list = 1, 2 3\n"
      "name = hello world\n"
      "x = 0.25\n");
  const auto cfg = KeyValueConfig::parse(in);
  CHECK(cfg.get_int("K") == 5);
  CHECK(cfg.get_doubles("list") == std::vector<double>{1, 2, 3});
  CHECK(cfg.get_double("x") == 0.25);
  CHECK(cfg.get_int("missing", 9) == 9);
  CHECK_THROWS_AS(cfg.get_int("missing"), ConfigError);
  CHECK_THROWS_AS(cfg.get_int("x"), ConfigError);
  CHECK(cfg.canonical_text().find("K = 5\n") != std::string::npos);

  std::istringstream bad("no equals sign\n");
  CHECK_THROWS_AS(KeyValueConfig::parse(bad), ConfigError);
}

TEST_CASE("canonical text sorts keys") {
  std::istringstream a("b = 1\na = 2\n");
  std::istringstream b("a = 2\nb = 1\n");
  CHECK(KeyValueConfig::parse(a).canonical_text() == KeyValueConfig::parse(b).canonical_text());
}

TEST_CASE("format_number round-trips doubles") {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.125, 0.0}) {
    CHECK(std::stod(format_number(x)) == x);
  }
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(42LL) == "42");
}

TEST_CASE("tables round-trip byte for byte") {
  Table t{"demo", 3, {"a", "b"}, {}};
  t.add_row({"1", format_number(0.1)});
  t.add_row({"x", "nan"});
  std::ostringstream first;
  write_table(first, t);
  std::istringstream in(first.str());
  const Table back = read_table(in);
  CHECK(back.schema == "demo");
  CHECK(back.version == 3);
  std::ostringstream second;
  write_table(second, back);
  CHECK(first.str() == second.str());
  CHECK_THROWS(t.add_row({"only one"}));
}

TEST_CASE("sha256 known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("adjusted Rand index") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> relabeled{2, 2, 0, 0, 1, 1};
  CHECK(adjusted_rand_index(a, relabeled) == doctest::Approx(1.0));
  // Classic example: ARI of {0,0,0,1,1,1} vs {0,0,1,1,2,2} = 0.24242...
  const std::vector<int> x{0, 0, 0, 1, 1, 1};
  const std::vector<int> y{0, 0, 1, 1, 2, 2};
  CHECK(adjusted_rand_index(x, y) == doctest::Approx(8.0 / 33.0));
}

TEST_CASE("hungarian assignment matches brute force") {
  auto gen = substream(3, {});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 5;
    std::vector<double> cost(n * n);
    for (auto& c : cost) c = u(gen);
    const auto col = hungarian(cost, n);
    double got = 0.0;
    for (int r = 0; r < n; ++r) got += cost[r * n + col[r]];
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    double best = INFINITY;
    do {
      double s = 0.0;
      for (int r = 0; r < n; ++r) s += cost[r * n + perm[r]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
    CHECK(std::set<int>(col.begin(), col.end()).size() == static_cast<std::size_t>(n));
  }
}

#include <doctest.h>

#include <random>
#include <set>

#include "gridmarket/feeder.hpp"
#include "helpers.hpp"

using namespace gridmarket;

namespace {

std::vector<Line> chain_lines(int nodes, double r) {
  std::vector<Line> lines;
  for (int v = 1; v <= nodes; ++v) lines.push_back({v - 1, v, r, r / 2});
  return lines;
}

// Reference sensitivity entries by explicit path enumeration.
double brute_force_R(const Topology& topo, int i, int k) {
  auto pi = topo.root_path(i);
  auto pk = topo.root_path(k);
  std::set<int> si(pi.begin(), pi.end());
  double sum = 0.0;
  for (int e : pk)
    if (si.count(e)) sum += topo.lines[static_cast<size_t>(e)].r_pu;
  return 2.0 * sum;
}

std::vector<Line> ieee13_lines() {
  std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {1, 6},
                                            {6, 7}, {6, 8}, {8, 9}, {8, 10}, {6, 11}, {11, 12}};
  std::vector<Line> lines;
  for (auto [a, b] : edges) lines.push_back({a, b, 0.01, 0.005});
  return lines;
}

}  // namespace

TEST_CASE("radial validation produces root paths") {
  Topology topo = validate_radial(chain_lines(2, 0.1), 2);
  CHECK(topo.root_path(1) == std::vector<int>{0});
  CHECK(topo.root_path(2) == std::vector<int>{0, 1});
  CHECK(topo.parent[2] == 1);
}

TEST_CASE("thirteen-node layout validates with twelve prosumer nodes") {
  Topology topo = validate_radial(ieee13_lines(), 12);
  CHECK(topo.node_count == 12);
  int reached = 0;
  for (int v = 1; v <= 12; ++v)
    if (topo.parent[static_cast<size_t>(v)] >= 0) ++reached;
  CHECK(reached == 12);
}

TEST_CASE("loops, duplicates, islands are rejected") {
  auto lines = chain_lines(2, 0.1);
  lines.push_back({0, 2, 0.1, 0.05});
  CHECK_THROWS_AS(validate_radial(lines, 2), TopologyError);

  auto dup = chain_lines(2, 0.1);
  dup.push_back({1, 0, 0.2, 0.1});
  CHECK_THROWS_AS(validate_radial(dup, 2), TopologyError);

  std::vector<Line> island = {{0, 1, 0.1, 0.05}};
  CHECK_THROWS_AS(validate_radial(island, 2), TopologyError);
}

TEST_CASE("chain sensitivities match the shared-path identity") {
  Topology topo = validate_radial(chain_lines(2, 0.1), 2);
  auto [R, X] = build_sensitivities(topo);
  CHECK(R(0, 0) == doctest::Approx(0.2));
  CHECK(R(0, 1) == doctest::Approx(0.2));
  CHECK(R(1, 0) == doctest::Approx(0.2));
  CHECK(R(1, 1) == doctest::Approx(0.4));
  CHECK(X(1, 1) == doctest::Approx(0.2));
}

TEST_CASE("star sensitivities are diagonal") {
  std::vector<Line> lines = {{0, 1, 0.1, 0.05}, {0, 2, 0.1, 0.05}};
  Topology topo = validate_radial(lines, 2);
  auto [R, X] = build_sensitivities(topo);
  CHECK(R(0, 1) == 0.0);
  CHECK(R(1, 0) == 0.0);
  CHECK(R(0, 0) == doctest::Approx(0.2));
  (void)X;
}

TEST_CASE("zero impedance gives zero sensitivities") {
  Topology topo = validate_radial(chain_lines(3, 0.0), 3);
  auto [R, X] = build_sensitivities(topo);
  CHECK(R.cwiseAbs().maxCoeff() == 0.0);
  CHECK(X.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("random trees match brute-force path enumeration and are symmetric") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    int nodes = 2 + static_cast<int>(rng() % 9);
    std::vector<Line> lines;
    std::uniform_real_distribution<double> rdist(0.01, 0.5);
    for (int v = 1; v <= nodes; ++v) {
      int parent = static_cast<int>(rng() % static_cast<unsigned>(v));
      lines.push_back({parent, v, rdist(rng), rdist(rng)});
    }
    Topology topo = validate_radial(lines, nodes);
    auto [R, X] = build_sensitivities(topo);
    CHECK((R - R.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((X - X.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 1; i <= nodes; ++i)
      for (int k = 1; k <= nodes; ++k)
        CHECK(R(i - 1, k - 1) == doctest::Approx(brute_force_R(topo, i, k)).epsilon(1e-12));
  }
}

TEST_CASE("voltages from injections") {
  FeederModel model = testing::chain_feeder(2);
  SUBCASE("no load keeps the feeder voltage") {
    Vec v = voltages_from_injections(model, Vec::Zero(2), Vec::Zero(2));
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(1.0));
  }
  SUBCASE("hand-evaluated affine map") {
    Vec p(2);
    p << 0.1, -0.1;
    Vec v = voltages_from_injections(model, p, Vec::Zero(2));
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(0.98));
  }
  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS_AS(voltages_from_injections(model, Vec::Zero(3), Vec::Zero(3)), ValidationError);
  }
}

TEST_CASE("line flows accumulate leaf to root") {
  FeederModel model = testing::chain_feeder(2);
  SUBCASE("zero injections mean zero flows") {
    auto flows = line_flows(model, Vec::Zero(2), Vec::Zero(2));
    for (const auto& f : flows) CHECK(f.active == doctest::Approx(0.0));
  }
  SUBCASE("balanced pair flows through the middle") {
    Vec p(2);
    p << -0.5, 0.5;
    auto flows = line_flows(model, p, Vec::Zero(2));
    CHECK(flows[1].active == doctest::Approx(-0.5));  // line 1-2
    CHECK(flows[0].active == doctest::Approx(0.0));   // line 0-1
  }
  SUBCASE("imbalance is rejected") {
    FeederModel star = testing::star_feeder(2);
    Vec p(2);
    p << 0.2, -0.1;
    CHECK_THROWS_AS(line_flows(star, p, Vec::Zero(2)), BalanceViolated);
  }
  SUBCASE("subtree identity on a random tree") {
    std::mt19937 rng(11);
    std::vector<Line> lines;
    int nodes = 7;
    for (int v = 1; v <= nodes; ++v)
      lines.push_back({static_cast<int>(rng() % static_cast<unsigned>(v)), v, 0.05, 0.02});
    Topology topo = validate_radial(lines, nodes);
    FeederModel model2 = FeederModel::build(topo, 1.0, Vec::Constant(nodes, 0.9),
                                            Vec::Constant(nodes, 1.1));
    Vec p(nodes);
    for (int i = 0; i < nodes; ++i) p[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
    p[nodes - 1] -= p.sum();
    auto flows = line_flows(model2, p, Vec::Zero(nodes));
    // Each line's flow equals minus the subtree injection below it.
    for (int v = 1; v <= nodes; ++v) {
      double subtree = 0.0;
      for (int w = 1; w <= nodes; ++w) {
        int a = w;
        while (a != 0 && a != v) a = topo.parent[static_cast<size_t>(a)];
        if (a == v) subtree += p[w - 1];
      }
      CHECK(flows[static_cast<size_t>(topo.parent_line[static_cast<size_t>(v)])].active ==
            doctest::Approx(-subtree).epsilon(1e-12));
    }
  }
}

TEST_CASE("voltage constraint map instantiation") {
  FeederModel model = testing::chain_feeder(2);
  AffineConstraintMap map = voltage_constraint_map(model);
  CHECK(map.components == 4);
  CHECK(map.bound[0] == doctest::Approx(1.05 * 1.05 - 1.0));
  CHECK(map.bound[1] == doctest::Approx(1.05 * 1.05 - 1.0));
  CHECK(map.bound[2] == doctest::Approx(1.0 - 0.95 * 0.95));
  CHECK(map.bound[3] == doctest::Approx(1.0 - 0.95 * 0.95));

  SUBCASE("single-node coefficients stack R and -R") {
    FeederModel single = testing::chain_feeder(1);
    AffineConstraintMap m1 = voltage_constraint_map(single);
    Vec c = m1.node_column(1);
    CHECK(c[0] == doctest::Approx(0.2));
    CHECK(c[1] == doctest::Approx(-0.2));
  }
  SUBCASE("zero injection satisfies the bound") {
    Vec total = Vec::Zero(map.components);
    for (int node = 1; node <= 2; ++node) total += map.node_column(node) * 0.0;
    CHECK((total.array() <= map.bound.array()).all());
  }
  SUBCASE("map form agrees with direct voltage check on random injections") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(-0.6, 0.6);
    int agree = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      Vec p(2);
      p << dist(rng), dist(rng);
      Vec v = voltages_from_injections(model, p, Vec::Zero(2));
      bool direct = true;
      for (int k = 0; k < 2; ++k)
        direct = direct && v[k] >= model.v_lower_sq[k] && v[k] <= model.v_upper_sq[k];
      Vec total = map.node_column(1) * p[0] + map.node_column(2) * p[1];
      bool mapped = (total.array() <= map.bound.array()).all();
      if (direct == mapped) ++agree;
    }
    CHECK(agree == 1000);
  }
}

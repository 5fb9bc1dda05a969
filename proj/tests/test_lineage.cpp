#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eena/lineage.hpp"
#include "eena/serialize.hpp"

using namespace eena;

namespace {

MutationRecord stub(std::int64_t gid) {
  MutationRecord r;
  r.global_id = gid;
  return r;
}

Genotype gids(std::initializer_list<std::int64_t> ids) {
  Genotype g;
  for (std::int64_t id : ids) g.push_back(stub(id));
  return g;
}

std::vector<std::int64_t> ids_of(const Genotype& g) {
  std::vector<std::int64_t> out;
  for (const auto& r : g) out.push_back(r.global_id);
  return out;
}

template <class Real>
NetworkGraph<Real> small_model(Rng& rng) {
  InitialModelConfig cfg{1, 4, 4, 4, 2};
  return build_initial_model<Real>(cfg, rng);
}

template <class Real>
double max_output_gap(NetworkGraph<Real>& g, NetworkGraph<Real>& h, Rng& rng) {
  Tensor<Real> x(2, 8, 8, g.in_channels);
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<Real> ya = forward(g, x, RunMode::Infer);
  Tensor<Real> yb = forward(h, x, RunMode::Infer);
  double worst = 0.0;
  for (std::size_t i = 0; i < ya.size(); ++i)
    worst = std::max(worst, std::abs(double(ya.data[i]) - double(yb.data[i])));
  return worst;
}

template <class Real>
LineageEntry<Real> entry_for(const NetworkGraph<Real>& g, Genotype hist,
                             std::vector<int> parents) {
  LineageEntry<Real> e;
  e.parents = std::move(parents);
  e.genotype = std::move(hist);
  e.snapshot = encode_network(g);
  return e;
}

}  // namespace

TEST_CASE("genotype identity is decided by global-id sequences") {
  CHECK(same_genotype(gids({1, 2, 3}), gids({1, 2, 3})));
  CHECK(!same_genotype(gids({1, 2}), gids({1, 2, 3})));
  CHECK(!same_genotype(gids({1, 3}), gids({1, 2})));
  CHECK(same_genotype(gids({}), gids({})));
}

TEST_CASE("common_ancestor is the longest shared prefix") {
  const Genotype a = gids({1, 2, 4, 7});
  const Genotype b = gids({1, 2, 5});
  CHECK(ids_of(common_ancestor(a, b)) == std::vector<std::int64_t>{1, 2});
  // commutative
  CHECK(ids_of(common_ancestor(b, a)) == ids_of(common_ancestor(a, b)));
  // idempotent
  CHECK(ids_of(common_ancestor(a, a)) == ids_of(a));
  // disjoint histories share only the root
  CHECK(common_ancestor(gids({1}), gids({2})).empty());
  // the ancestor is a prefix of both parents
  CHECK(is_prefix_of(common_ancestor(a, b), a));
  CHECK(is_prefix_of(common_ancestor(a, b), b));
}

TEST_CASE("is_prefix_of basic laws") {
  CHECK(is_prefix_of(gids({}), gids({1, 2})));
  CHECK(is_prefix_of(gids({1, 2}), gids({1, 2})));
  CHECK(is_prefix_of(gids({1, 2}), gids({1, 2, 3})));
  CHECK(!is_prefix_of(gids({1, 3}), gids({1, 2, 3})));
  CHECK(!is_prefix_of(gids({1, 2, 3}), gids({1, 2})));
}

TEST_CASE("replay of an empty history returns the initial model") {
  Rng rng(1);
  NetworkGraph<double> base = small_model<double>(rng);
  NetworkGraph<double> again = replay(base, {}, 0.0);
  CHECK(base.same_structure(again));
}

TEST_CASE("replay reproduces sampled mutation histories") {
  Rng graph_rng(2);
  NetworkGraph<double> base = small_model<double>(graph_rng);
  MorphConfig cfg;
  cfg.noise_max = 0.0;
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    Rng rng(seed);
    NetworkGraph<double> mutated = base;
    Genotype hist;
    for (int i = 0; i < 4; ++i) {
      MutationRecord rec = sample_mutation(mutated, cfg, rng);
      rec.global_id = i + 1;
      hist.push_back(rec);
    }
    NetworkGraph<double> replayed = replay(base, hist, 0.0);
    CHECK(replayed.same_structure(mutated));
    Rng probe(seed + 100);
    CHECK(max_output_gap(mutated, replayed, probe) == 0.0);
  }
}

// Ancestor [1,2]; parent1 adds [3,4]; parent2 adds [5]. Forced inheritance
// keeps 3 and 5, drops 4; the offspring is [1,2,3,5] and, with zero widen
// noise, computes the same function as the ancestor.
TEST_CASE("crossover with forced coin flips grafts the expected history") {
  Rng graph_rng(3);
  NetworkGraph<double> base = small_model<double>(graph_rng);
  MorphConfig cfg;
  cfg.noise_max = 0.0;

  LineageStore<double> store;
  store.add(entry_for(base, {}, {}));

  Rng mut_rng(4);
  NetworkGraph<double> ancestor = base;
  Genotype anc_hist;
  for (int i = 0; i < 2; ++i) {
    MutationRecord rec = sample_mutation(ancestor, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    anc_hist.push_back(rec);
  }
  const int anc_id = store.add(entry_for(ancestor, anc_hist, {0}));

  NetworkGraph<double> parent1 = ancestor;
  Genotype p1_hist = anc_hist;
  for (int i = 0; i < 2; ++i) {
    MutationRecord rec = sample_mutation(parent1, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    p1_hist.push_back(rec);
  }
  const int p1_id = store.add(entry_for(parent1, p1_hist, {anc_id}));

  NetworkGraph<double> parent2 = ancestor;
  Genotype p2_hist = anc_hist;
  {
    MutationRecord rec = sample_mutation(parent2, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    p2_hist.push_back(rec);
  }
  const int p2_id = store.add(entry_for(parent2, p2_hist, {anc_id}));

  CHECK(ids_of(common_ancestor(p1_hist, p2_hist)) ==
        std::vector<std::int64_t>{1, 2});

  Rng xo_rng(5);
  const InheritOverride forced = {{3, true}, {4, false}, {5, true}};
  CrossoverResult<double> r =
      crossover(store, p1_id, p2_id, 0.5, cfg, xo_rng, forced);

  CHECK(ids_of(r.history) == std::vector<std::int64_t>{1, 2, 3, 5});
  CHECK(r.base_id == anc_id);  // weights start from the trained ancestor
  CHECK(r.dropped.empty());

  Rng probe(6);
  CHECK(max_output_gap(ancestor, r.graph, probe) <= 1e-12);
}

TEST_CASE("crossover with p_inherit = 1 merges the full union") {
  Rng graph_rng(7);
  NetworkGraph<double> base = small_model<double>(graph_rng);
  MorphConfig cfg;
  cfg.noise_max = 0.0;
  LineageStore<double> store;
  store.add(entry_for(base, {}, {}));

  Rng mut_rng(8);
  NetworkGraph<double> p1 = base;
  Genotype h1;
  {
    MutationRecord rec = sample_mutation(p1, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    h1.push_back(rec);
  }
  const int p1_id = store.add(entry_for(p1, h1, {0}));

  NetworkGraph<double> p2 = base;
  Genotype h2;
  {
    MutationRecord rec = sample_mutation(p2, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    h2.push_back(rec);
  }
  const int p2_id = store.add(entry_for(p2, h2, {0}));

  Rng xo_rng(9);
  CrossoverResult<double> r = crossover(store, p1_id, p2_id, 1.0, cfg, xo_rng);
  if (r.dropped.empty())
    CHECK(ids_of(r.history) == std::vector<std::int64_t>{1, 2});
  CHECK(r.base_id == 0);  // disjoint histories fall back to the root

  // with zero noise the offspring still matches the base function
  Rng probe(10);
  NetworkGraph<double> base_copy = base;
  CHECK(max_output_gap(base_copy, r.graph, probe) <= 1e-12);
}

TEST_CASE("crossover refuses parents with identical genotypes") {
  Rng graph_rng(11);
  NetworkGraph<double> base = small_model<double>(graph_rng);
  LineageStore<double> store;
  store.add(entry_for(base, {}, {}));
  store.add(entry_for(base, {}, {}));
  MorphConfig cfg;
  Rng rng(12);
  CHECK_THROWS_AS(crossover(store, 0, 1, 0.5, cfg, rng), morph_error);
}

TEST_CASE("crossover is deterministic under a fixed rng") {
  Rng graph_rng(13);
  NetworkGraph<double> base = small_model<double>(graph_rng);
  MorphConfig cfg;
  cfg.noise_max = 0.0;
  LineageStore<double> store;
  store.add(entry_for(base, {}, {}));
  Rng mut_rng(14);
  NetworkGraph<double> p1 = base;
  Genotype h1;
  for (int i = 0; i < 2; ++i) {
    MutationRecord rec = sample_mutation(p1, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    h1.push_back(rec);
  }
  const int p1_id = store.add(entry_for(p1, h1, {0}));
  NetworkGraph<double> p2 = base;
  Genotype h2;
  for (int i = 0; i < 2; ++i) {
    MutationRecord rec = sample_mutation(p2, cfg, mut_rng);
    rec.global_id = store.next_global_id();
    h2.push_back(rec);
  }
  const int p2_id = store.add(entry_for(p2, h2, {0}));

  auto run = [&] {
    Rng rng(999);
    nlohmann::json j = crossover(store, p1_id, p2_id, 0.5, cfg, rng).history;
    return j.dump();
  };
  CHECK(run() == run());
}

TEST_CASE("phylogeny exports cover every individual") {
  Rng graph_rng(15);
  NetworkGraph<float> base = small_model<float>(graph_rng);
  LineageStore<float> store;
  LineageEntry<float> root = entry_for(base, {}, {});
  root.fitness = 0.5;
  store.add(root);
  MorphConfig cfg;
  cfg.noise_max = 0.0;
  Rng rng(16);
  for (int i = 0; i < 3; ++i) {
    NetworkGraph<float> g = decode_network<float>(store.entry(i).snapshot);
    Genotype h = store.entry(i).genotype;
    MutationRecord rec = sample_mutation(g, cfg, rng);
    rec.global_id = store.next_global_id();
    h.push_back(rec);
    LineageEntry<float> e = entry_for(g, h, {i});
    e.fitness = 0.5 + 0.1 * i;
    e.birth_round = i + 1;
    store.add(e);
  }

  const nlohmann::json j = export_phylo_json(store);
  REQUIRE(j.at("individuals").size() == 4);
  for (const auto& node : j.at("individuals")) {
    CHECK(node.contains("individual_id"));
    CHECK(node.contains("parents"));
    CHECK(node.contains("fitness"));
  }

  const std::string dot = export_phylo_dot(store);
  CHECK(dot.find("digraph") != std::string::npos);
  for (int i = 0; i < 4; ++i)
    CHECK(dot.find("n" + std::to_string(i)) != std::string::npos);
  CHECK(dot.find("->") != std::string::npos);
  CHECK(dot.back() == '\n');
}

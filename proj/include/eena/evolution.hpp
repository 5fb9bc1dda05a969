#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "eena/dataset.hpp"
#include "eena/lineage.hpp"
#include "eena/train.hpp"

namespace eena {

struct EvolutionConfig {
  int k = 3;                   // tournament size
  double lambda = 0.5;         // P(discard worst); 1-lambda discards oldest
  int population_cap = 20;     // N
  int initial_count = 12;      // warm-up singles mutated from the root
  int crossover_period = 5;    // every n-th round crosses over
  int epochs_mutation = 15;
  std::array<int, 2> epochs_crossover = {7, 15};
  int epochs_initial = 63;
  int patience = 25;           // rounds without best-fitness improvement
  int max_rounds = 100;
  double time_budget_seconds = 0.0;  // 0 disables the wall-clock cap
  double p_inherit = 0.5;
  bool crossover_enabled = true;

  void validate() const {
    if (k < 1 || k > population_cap)
      throw data_error("evolution: need 1 <= k <= population cap");
    if (lambda < 0.0 || lambda > 1.0)
      throw data_error("evolution: lambda must lie in [0, 1]");
    if (initial_count + 1 > population_cap + 1 || initial_count < 1)
      throw data_error("evolution: initial_count must lie in [1, N]");
    if (crossover_period < 1) throw data_error("evolution: crossover_period >= 1");
    if (max_rounds < 0) throw data_error("evolution: max_rounds >= 0");
  }
};

struct RoundLogEntry {
  int round = 0;
  std::string action;  // init | mutate | crossover
  std::vector<int> parents;
  int child = -1;
  std::string op;  // mutation kind or "crossover"
  double fitness_before_best = -1.0;
  double fitness_parent = -1.0;
  double fitness_child = -1.0;
  double best_after = -1.0;
  int rank_at_insert = 0;  // 1 = strictly best of the population
  int discarded = -1;
  std::string note;
};

inline void to_json(nlohmann::json& j, const RoundLogEntry& e) {
  j = {{"round", e.round},
       {"action", e.action},
       {"parents", e.parents},
       {"child", e.child},
       {"operator", e.op},
       {"fitness_before_best", e.fitness_before_best},
       {"fitness_parent", e.fitness_parent},
       {"fitness_child", e.fitness_child},
       {"best_after", e.best_after},
       {"rank_at_insert", e.rank_at_insert},
       {"discarded", e.discarded},
       {"note", e.note}};
}

inline void from_json(const nlohmann::json& j, RoundLogEntry& e) {
  j.at("round").get_to(e.round);
  j.at("action").get_to(e.action);
  j.at("parents").get_to(e.parents);
  j.at("child").get_to(e.child);
  j.at("operator").get_to(e.op);
  j.at("fitness_before_best").get_to(e.fitness_before_best);
  j.at("fitness_parent").get_to(e.fitness_parent);
  j.at("fitness_child").get_to(e.fitness_child);
  j.at("best_after").get_to(e.best_after);
  j.at("rank_at_insert").get_to(e.rank_at_insert);
  j.at("discarded").get_to(e.discarded);
  j.at("note").get_to(e.note);
}

// ---------------------------------------------------------------------------
// Selection and discard.
// ---------------------------------------------------------------------------

// Fitness ties fall to the younger individual (higher birth round), then to
// the lower id, so the operators are deterministic beyond the RNG.
template <class Real>
bool fitter(const LineageEntry<Real>& a, const LineageEntry<Real>& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  if (a.birth_round != b.birth_round) return a.birth_round > b.birth_round;
  return a.id < b.id;
}

template <class Real>
int tournament_select(const LineageStore<Real>& store,
                      const std::vector<int>& population, int k, Rng& rng) {
  if (population.empty()) throw error("tournament: empty population");
  if (k < 1 || k > static_cast<int>(population.size()))
    throw error("tournament: k must lie in [1, population size]");
  std::vector<int> pool = population;
  // Partial Fisher-Yates: the first k entries are a uniform sample without
  // replacement.
  for (int i = 0; i < k; ++i) {
    const int j = uniform_int(rng, i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[j]);
  }
  int best = pool[0];
  for (int i = 1; i < k; ++i)
    if (fitter(store.entry(pool[i]), store.entry(best))) best = pool[i];
  return best;
}

// The two fittest individuals with distinct genotypes.
template <class Real>
std::pair<int, int> select_crossover_parents(const LineageStore<Real>& store,
                                             const std::vector<int>& population) {
  if (population.size() < 2)
    throw error("crossover selection: population too small");
  std::vector<int> sorted = population;
  std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
    return fitter(store.entry(a), store.entry(b));
  });
  const int p1 = sorted[0];
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (!same_genotype(store.entry(p1).genotype, store.entry(sorted[i]).genotype))
      return {p1, sorted[i]};
  throw error("crossover selection: all genotypes identical");
}

// Removes one individual: the worst with probability lambda (ties: older
// first), otherwise the oldest (ties: less fit first). Protected ids (this
// round's parents and child) are never removed.
template <class Real>
int discard_one(const LineageStore<Real>& store, std::vector<int>& population,
                double lambda, Rng& rng, const std::set<int>& protected_ids = {}) {
  std::vector<int> candidates;
  for (int id : population)
    if (!protected_ids.count(id)) candidates.push_back(id);
  if (candidates.empty()) throw error("discard: every individual is protected");
  const bool remove_worst = uniform_real(rng, 0.0, 1.0) < lambda;
  int victim = candidates[0];
  for (int id : candidates) {
    const LineageEntry<Real>& a = store.entry(id);
    const LineageEntry<Real>& v = store.entry(victim);
    if (remove_worst) {
      if (a.fitness != v.fitness ? a.fitness < v.fitness
          : a.birth_round != v.birth_round ? a.birth_round < v.birth_round
                                           : a.id < v.id)
        victim = id;
    } else {
      if (a.birth_round != v.birth_round ? a.birth_round < v.birth_round
          : a.fitness != v.fitness       ? a.fitness < v.fitness
                                         : a.id < v.id)
        victim = id;
    }
  }
  population.erase(std::find(population.begin(), population.end(), victim));
  return victim;
}

// ---------------------------------------------------------------------------
// The round loop.
// ---------------------------------------------------------------------------

struct EvolveContext {
  EvolutionConfig evo;
  MorphConfig morph;
  TrainOptions train_base;  // batch size, weight decay, schedule, augmentation
  bool sgdr_restart_per_burst = false;  // default: continue the cosine globally
};

template <class Real>
struct EvolutionState {
  bool initialized = false;
  int round = 0;
  std::vector<int> population;
  LineageStore<Real> store;
  Rng rng;
  std::vector<RoundLogEntry> log;
  int best_id = -1;
  double best_fitness = -1.0;
  int rounds_since_improve = 0;
  std::string stop_reason;
};

namespace detail {

template <class Real>
int train_and_register(EvolutionState<Real>& st, const EvolveContext& ctx,
                       const SplitDataset<Real>& data, NetworkGraph<Real>&& graph,
                       std::vector<int> parents, Genotype genotype,
                       int base_epochs, const std::vector<int>& bursts,
                       int birth_round) {
  TrainOptions opt = ctx.train_base;
  int trained = base_epochs;
  for (int epochs : bursts) {
    opt.seed = st.rng();
    opt.epoch_offset = ctx.sgdr_restart_per_burst ? 0.0 : trained;
    train_epochs(graph, data.train, epochs, opt);
    trained += epochs;
  }
  const double fitness = evaluate(graph, data.val);
  LineageEntry<Real> e;
  e.parents = std::move(parents);
  e.genotype = std::move(genotype);
  e.fitness = fitness;
  e.birth_round = birth_round;
  e.trained_epochs = trained;
  e.snapshot = encode_network(graph);
  return st.store.add(std::move(e));
}

template <class Real>
int rank_within(const LineageStore<Real>& store, const std::vector<int>& population,
                double fitness) {
  int rank = 1;
  for (int id : population)
    if (store.entry(id).fitness > fitness) ++rank;
  return rank;
}

template <class Real>
void note_child(EvolutionState<Real>& st, RoundLogEntry& e, int child_id) {
  e.child = child_id;
  e.fitness_child = st.store.entry(child_id).fitness;
  e.rank_at_insert = rank_within(st.store, st.population, e.fitness_child);
  st.population.push_back(child_id);
  if (e.fitness_child > st.best_fitness) {
    st.best_fitness = e.fitness_child;
    st.best_id = child_id;
    st.rounds_since_improve = 0;
  } else if (e.round > 0) {
    ++st.rounds_since_improve;
  }
  e.best_after = st.best_fitness;
}

}  // namespace detail

// Runs (or resumes) the search. The callback fires after the warm-up and
// after every round, for checkpointing. Returns the best individual's id.
template <class Real>
int evolve(EvolutionState<Real>& st, const EvolveContext& ctx,
           const SplitDataset<Real>& data, const InitialModelConfig& model_cfg,
           std::uint64_t seed,
           const std::function<void(const EvolutionState<Real>&)>& on_round = {}) {
  ctx.evo.validate();
  ctx.morph.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const auto out_of_time = [&] {
    if (ctx.evo.time_budget_seconds <= 0.0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
               .count() > ctx.evo.time_budget_seconds;
  };

  if (!st.initialized) {
    st.rng.seed(seed);

    // Train the common initial model.
    NetworkGraph<Real> root = build_initial_model<Real>(model_cfg, st.rng);
    RoundLogEntry re;
    re.round = 0;
    re.action = "init";
    re.op = "initial_model";
    re.fitness_before_best = -1.0;
    const int root_id = detail::train_and_register(
        st, ctx, data, std::move(root), {}, {}, 0, {ctx.evo.epochs_initial}, 0);
    detail::note_child(st, re, root_id);
    st.log.push_back(re);

    // Warm-up: initial_count singles, each one mutation away from the root.
    for (int i = 0; i < ctx.evo.initial_count; ++i) {
      NetworkGraph<Real> g =
          decode_network<Real>(st.store.entry(root_id).snapshot);
      MutationRecord rec = sample_mutation(g, ctx.morph, st.rng);
      rec.global_id = st.store.next_global_id();
      RoundLogEntry we;
      we.round = 0;
      we.action = "mutate";
      we.parents = {root_id};
      we.op = mutation_kind_name(rec.kind);
      we.fitness_before_best = st.best_fitness;
      we.fitness_parent = st.store.entry(root_id).fitness;
      const int child = detail::train_and_register(
          st, ctx, data, std::move(g), {root_id}, {rec},
          st.store.entry(root_id).trained_epochs, {ctx.evo.epochs_mutation}, 0);
      detail::note_child(st, we, child);
      st.log.push_back(we);
    }
    st.initialized = true;
    if (on_round) on_round(st);
  }

  while (st.round < ctx.evo.max_rounds) {
    if (st.rounds_since_improve > ctx.evo.patience) {
      st.stop_reason = "patience";
      break;
    }
    if (out_of_time()) {
      st.stop_reason = "time_budget";
      break;
    }
    const int r = st.round + 1;
    RoundLogEntry e;
    e.round = r;
    e.fitness_before_best = st.best_fitness;

    bool did_crossover = false;
    if (ctx.evo.crossover_enabled && r % ctx.evo.crossover_period == 0 &&
        st.population.size() >= 2) {
      try {
        auto [p1, p2] = select_crossover_parents(st.store, st.population);
        CrossoverResult<Real> cx = crossover(st.store, p1, p2, ctx.evo.p_inherit,
                                             ctx.morph, st.rng);
        e.action = "crossover";
        e.op = "crossover";
        e.parents = {p1, p2};
        e.fitness_parent =
            std::max(st.store.entry(p1).fitness, st.store.entry(p2).fitness);
        if (!cx.dropped.empty())
          e.note = std::to_string(cx.dropped.size()) + " record(s) dropped";
        const int child = detail::train_and_register(
            st, ctx, data, std::move(cx.graph), {p1, p2},
            std::move(cx.history), cx.base_trained_epochs,
            {ctx.evo.epochs_crossover[0], ctx.evo.epochs_crossover[1]}, r);
        detail::note_child(st, e, child);
        if (static_cast<int>(st.population.size()) > ctx.evo.population_cap)
          e.discarded = discard_one(st.store, st.population, ctx.evo.lambda,
                                    st.rng, {p1, p2, child});
        did_crossover = true;
      } catch (const error& err) {
        e.note = std::string("crossover skipped: ") + err.what();
      }
    }

    if (!did_crossover) {
      const int parent =
          tournament_select(st.store, st.population,
                            std::min<int>(ctx.evo.k, st.population.size()),
                            st.rng);
      NetworkGraph<Real> g = decode_network<Real>(st.store.entry(parent).snapshot);
      MutationRecord rec = sample_mutation(g, ctx.morph, st.rng);
      rec.global_id = st.store.next_global_id();
      e.action = "mutate";
      e.op = mutation_kind_name(rec.kind);
      e.parents = {parent};
      e.fitness_parent = st.store.entry(parent).fitness;
      Genotype genotype = st.store.entry(parent).genotype;
      genotype.push_back(rec);
      const int child = detail::train_and_register(
          st, ctx, data, std::move(g), {parent}, std::move(genotype),
          st.store.entry(parent).trained_epochs, {ctx.evo.epochs_mutation}, r);
      detail::note_child(st, e, child);
      if (static_cast<int>(st.population.size()) > ctx.evo.population_cap)
        e.discarded = discard_one(st.store, st.population, ctx.evo.lambda, st.rng,
                                  {parent, child});
    }

    st.log.push_back(e);
    st.round = r;
    if (on_round) on_round(st);
  }
  if (st.stop_reason.empty()) st.stop_reason = "round_budget";
  return st.best_id;
}

// ---------------------------------------------------------------------------
// Effect statistics over a round log: per-operator better/worse/unchanged
// outcomes, and Top1/Top5 tallies for mutation vs crossover offspring.
// ---------------------------------------------------------------------------

inline nlohmann::json effect_report(const std::vector<RoundLogEntry>& log) {
  struct Row {
    int better = 0, worse = 0, unchanged = 0;
  };
  std::map<std::string, Row> rows;
  int mut_total = 0, mut_top1 = 0, mut_top5 = 0;
  int cx_total = 0, cx_top1 = 0, cx_top5 = 0;
  for (const RoundLogEntry& e : log) {
    if (e.child < 0 || e.op == "initial_model") continue;
    Row& row = rows[e.op];
    if (e.fitness_child > e.fitness_parent) ++row.better;
    else if (e.fitness_child < e.fitness_parent) ++row.worse;
    else ++row.unchanged;
    const bool top1 = e.rank_at_insert == 1;
    const bool top5 = e.rank_at_insert <= 5;
    if (e.action == "crossover") {
      ++cx_total;
      cx_top1 += top1;
      cx_top5 += top5;
    } else {
      ++mut_total;
      mut_top1 += top1;
      mut_top5 += top5;
    }
  }
  nlohmann::json out;
  out["operators"] = nlohmann::json::object();
  for (const auto& [name, row] : rows) {
    const int total = row.better + row.worse + row.unchanged;
    out["operators"][name] = {
        {"better", row.better},
        {"worse", row.worse},
        {"unchanged", row.unchanged},
        {"total", total},
        {"better_fraction", total ? double(row.better) / total : 0.0},
        {"worse_fraction", total ? double(row.worse) / total : 0.0},
        {"unchanged_fraction", total ? double(row.unchanged) / total : 0.0}};
  }
  out["top_ranks"] = {
      {"mutation", {{"total", mut_total}, {"top1", mut_top1}, {"top5", mut_top5}}},
      {"crossover", {{"total", cx_total}, {"top1", cx_top1}, {"top5", cx_top5}}}};
  return out;
}

}  // namespace eena

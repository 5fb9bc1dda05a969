#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eena/morphisms.hpp"
#include "eena/serialize.hpp"

namespace eena {

using Genotype = std::vector<MutationRecord>;

template <class Real>
struct LineageEntry {
  int id = -1;
  std::vector<int> parents;  // empty for the initial model
  Genotype genotype;
  double fitness = -1.0;
  int birth_round = 0;
  int trained_epochs = 0;
  std::string snapshot;  // encoded network document (graph + weights)
};

// Append-only ancestry log; every individual keeps a weight snapshot.
template <class Real>
class LineageStore {
 public:
  int add(LineageEntry<Real> e) {
    e.id = static_cast<int>(entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back().id;
  }

  const LineageEntry<Real>& entry(int id) const {
    if (id < 0 || id >= static_cast<int>(entries_.size()))
      throw error("lineage: no individual " + std::to_string(id));
    return entries_[id];
  }
  LineageEntry<Real>& entry(int id) {
    if (id < 0 || id >= static_cast<int>(entries_.size()))
      throw error("lineage: no individual " + std::to_string(id));
    return entries_[id];
  }

  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<LineageEntry<Real>>& entries() const { return entries_; }

  std::int64_t next_global_id() { return ++last_global_id_; }
  std::int64_t last_global_id() const { return last_global_id_; }
  void set_last_global_id(std::int64_t v) { last_global_id_ = v; }

 private:
  std::vector<LineageEntry<Real>> entries_;
  std::int64_t last_global_id_ = 0;
};

// ---------------------------------------------------------------------------
// Genotype algebra. Histories are ordered by strictly increasing global_id,
// so the common ancestor is the longest common prefix.
// ---------------------------------------------------------------------------

inline bool same_genotype(const Genotype& a, const Genotype& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].global_id != b[i].global_id) return false;
  return true;
}

inline Genotype common_ancestor(const Genotype& a, const Genotype& b) {
  Genotype prefix;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i].global_id != b[i].global_id) break;
    prefix.push_back(a[i]);
  }
  return prefix;
}

inline bool is_prefix_of(const Genotype& p, const Genotype& g) {
  if (p.size() > g.size()) return false;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].global_id != g[i].global_id) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Replay: apply a history to a fresh copy of the initial model. Node-id
// allocation is deterministic, so replay reproduces the stored topology.
// ---------------------------------------------------------------------------

template <class Real>
NetworkGraph<Real> replay(const NetworkGraph<Real>& initial, const Genotype& history,
                          double noise_max) {
  NetworkGraph<Real> g = initial;
  for (const MutationRecord& rec : history) apply_record(g, rec, noise_max);
  return g;
}

// ---------------------------------------------------------------------------
// Crossover (ancestor grafting). The offspring starts from the trained
// ancestor snapshot and re-applies a coin-flipped subset of the parents'
// differing mutations in global-id order, remapping locations that no longer
// exist.
// ---------------------------------------------------------------------------

template <class Real>
struct CrossoverResult {
  NetworkGraph<Real> graph;
  Genotype history;  // merged prefix + inherited records, global-id order
  int base_id = -1;  // the stored individual the offspring's weights came from
  int base_trained_epochs = 0;
  std::vector<std::int64_t> dropped;  // records lost to failed remapping
};

// Optional per-record override of the inheritance coin flip, keyed by
// global_id; used by tests to force a specific outcome.
using InheritOverride = std::map<std::int64_t, bool>;

template <class Real>
CrossoverResult<Real> crossover(const LineageStore<Real>& store, int parent1,
                                int parent2, double p_inherit,
                                const MorphConfig& morph, Rng& rng,
                                const InheritOverride& forced = {}) {
  const LineageEntry<Real>& p1 = store.entry(parent1);
  const LineageEntry<Real>& p2 = store.entry(parent2);
  if (same_genotype(p1.genotype, p2.genotype))
    throw morph_error("crossover: parents share one genotype");

  const Genotype prefix = common_ancestor(p1.genotype, p2.genotype);

  // Deepest stored individual whose genotype is a prefix of the common
  // ancestor history; at worst the initial model (empty genotype).
  int base_id = -1;
  std::size_t base_len = 0;
  for (const LineageEntry<Real>& e : store.entries()) {
    if (is_prefix_of(e.genotype, prefix) &&
        (base_id < 0 || e.genotype.size() >= base_len)) {
      base_id = e.id;
      base_len = e.genotype.size();
    }
  }
  if (base_id < 0) throw error("crossover: lineage store has no root");

  // Symmetric difference of the parents' histories beyond the prefix.
  Genotype diff;
  for (std::size_t i = prefix.size(); i < p1.genotype.size(); ++i)
    diff.push_back(p1.genotype[i]);
  for (std::size_t i = prefix.size(); i < p2.genotype.size(); ++i)
    diff.push_back(p2.genotype[i]);
  std::sort(diff.begin(), diff.end(),
            [](const MutationRecord& a, const MutationRecord& b) {
              return a.global_id < b.global_id;
            });

  // Coin-flip the differing records; resample until at least one survives.
  std::vector<char> keep(diff.size(), 0);
  constexpr int kMaxFlips = 32;
  bool any = false;
  for (int round = 0; round < kMaxFlips && !any; ++round) {
    for (std::size_t i = 0; i < diff.size(); ++i) {
      auto it = forced.find(diff[i].global_id);
      keep[i] = it != forced.end() ? it->second
                                   : (uniform_real(rng, 0.0, 1.0) < p_inherit);
      any = any || keep[i];
    }
    if (!forced.empty()) break;  // forced flips are taken as-is
  }
  if (!any) throw morph_error("crossover: no record inherited");

  // Records to apply on the base snapshot: the part of the common prefix the
  // base predates, then the inherited subset, in global-id order.
  Genotype to_apply(prefix.begin() + base_len, prefix.end());
  for (std::size_t i = 0; i < diff.size(); ++i)
    if (keep[i]) to_apply.push_back(diff[i]);
  std::sort(to_apply.begin(), to_apply.end(),
            [](const MutationRecord& a, const MutationRecord& b) {
              return a.global_id < b.global_id;
            });

  CrossoverResult<Real> r;
  r.base_id = base_id;
  r.base_trained_epochs = store.entry(base_id).trained_epochs;
  r.graph = decode_network<Real>(store.entry(base_id).snapshot);
  r.history = Genotype(prefix.begin(), prefix.begin() + base_len);

  constexpr int kRemapRetries = 5;
  for (MutationRecord rec : to_apply) {
    bool applied = false;
    for (int attempt = 0; attempt <= kRemapRetries && !applied; ++attempt) {
      try {
        apply_record(r.graph, rec, morph.noise_max);
        applied = true;
      } catch (const morph_error&) {
        if (attempt == kRemapRetries) break;
        if (!resample_location(r.graph, rec, morph, rng)) break;
      }
    }
    if (applied)
      r.history.push_back(rec);
    else
      r.dropped.push_back(rec.global_id);
  }
  if (r.history.size() <= base_len)
    throw morph_error("crossover: every inherited record failed to replay");
  return r;
}

// ---------------------------------------------------------------------------
// Phylogenetic-tree export.
// ---------------------------------------------------------------------------

template <class Real>
nlohmann::json export_phylo_json(const LineageStore<Real>& store) {
  nlohmann::json out;
  out["individuals"] = nlohmann::json::array();
  for (const LineageEntry<Real>& e : store.entries()) {
    nlohmann::json je;
    je["individual_id"] = e.id;
    je["parents"] = e.parents;
    je["fitness"] = e.fitness;
    je["birth_round"] = e.birth_round;
    je["trained_epochs"] = e.trained_epochs;
    je["records"] = e.genotype;
    out["individuals"].push_back(std::move(je));
  }
  return out;
}

template <class Real>
std::string export_phylo_dot(const LineageStore<Real>& store) {
  // Fill colour binned by fitness, light to saturated.
  static const char* palette[5] = {"#deebf7", "#c6dbef", "#9ecae1", "#6baed6",
                                   "#3182bd"};
  double lo = 1.0, hi = 0.0;
  for (const LineageEntry<Real>& e : store.entries()) {
    lo = std::min(lo, e.fitness);
    hi = std::max(hi, e.fitness);
  }
  std::ostringstream os;
  os << "digraph phylogeny {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=circle, style=filled];\n";
  for (const LineageEntry<Real>& e : store.entries()) {
    int bin = 0;
    if (hi > lo) bin = std::min(4, static_cast<int>((e.fitness - lo) / (hi - lo) * 5));
    os << "  n" << e.id << " [label=\"" << e.id << "\\n"
       << static_cast<int>(e.fitness * 1000) / 10.0 << "%\", fillcolor=\""
       << palette[bin] << "\"];\n";
  }
  for (const LineageEntry<Real>& e : store.entries())
    for (int p : e.parents) os << "  n" << p << " -> n" << e.id << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace eena

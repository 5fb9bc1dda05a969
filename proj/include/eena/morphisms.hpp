#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eena/netgraph.hpp"

namespace eena {

enum class MutationKind {
  Widen,
  Branch,
  InsertIdentity,
  InsertShortcut,
  InsertDense,
};

inline const char* mutation_kind_name(MutationKind k) {
  switch (k) {
    case MutationKind::Widen: return "widen";
    case MutationKind::Branch: return "branch";
    case MutationKind::InsertIdentity: return "insert_identity";
    case MutationKind::InsertShortcut: return "insert_shortcut";
    case MutationKind::InsertDense: return "insert_dense";
  }
  return "?";
}

inline MutationKind mutation_kind_from_name(const std::string& s) {
  if (s == "widen") return MutationKind::Widen;
  if (s == "branch") return MutationKind::Branch;
  if (s == "insert_identity") return MutationKind::InsertIdentity;
  if (s == "insert_shortcut") return MutationKind::InsertShortcut;
  if (s == "insert_dense") return MutationKind::InsertDense;
  throw data_error("unknown mutation kind: " + s);
}

inline const std::vector<MutationKind>& all_mutation_kinds() {
  static const std::vector<MutationKind> kinds = {
      MutationKind::Widen, MutationKind::Branch, MutationKind::InsertIdentity,
      MutationKind::InsertShortcut, MutationKind::InsertDense};
  return kinds;
}

struct MorphConfig {
  double noise_max = 0.05;
  std::vector<MutationKind> operations = all_mutation_kinds();
  int widen_max_channels = 512;

  void validate() const {
    if (noise_max < 0.0 || noise_max >= 1.0)
      throw data_error("morph: noise_max must lie in [0, 1)");
    if (operations.empty()) throw data_error("morph: empty operation set");
  }
};

// One genome entry: everything needed to re-apply the mutation.
struct MutationRecord {
  std::int64_t global_id = 0;
  MutationKind kind = MutationKind::Widen;
  int block = -1;  // evolutionary block index the mutation lives in

  int target = -1;                          // widen/branch: layer id
  int edge_prod = -1, edge_cons = -1, edge_slot = -1;  // inserts

  int f_prime = 0;             // widen
  std::vector<int> widen_map;  // widen: g, size f_prime, identity prefix
  std::uint64_t delta_seed = 0;
};

inline void to_json(nlohmann::json& j, const MutationRecord& r) {
  j = {{"global_id", r.global_id},
       {"kind", mutation_kind_name(r.kind)},
       {"block", r.block},
       {"target", r.target},
       {"edge", {r.edge_prod, r.edge_cons, r.edge_slot}},
       {"f_prime", r.f_prime},
       {"map", r.widen_map},
       {"delta_seed", r.delta_seed}};
}

inline void from_json(const nlohmann::json& j, MutationRecord& r) {
  r.global_id = j.at("global_id").get<std::int64_t>();
  r.kind = mutation_kind_from_name(j.at("kind").get<std::string>());
  r.block = j.at("block").get<int>();
  r.target = j.at("target").get<int>();
  const auto e = j.at("edge").get<std::vector<int>>();
  if (e.size() != 3) throw data_error("mutation record: malformed edge");
  r.edge_prod = e[0];
  r.edge_cons = e[1];
  r.edge_slot = e[2];
  r.f_prime = j.at("f_prime").get<int>();
  r.widen_map = j.at("map").get<std::vector<int>>();
  r.delta_seed = j.at("delta_seed").get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Channel-slice bookkeeping. When a node's output channels change, every
// downstream ConvBlock reached through ConcatMerges must adjust the matching
// slice of its input axis. Any other consumer kind makes the site illegal.
// ---------------------------------------------------------------------------

struct ConvSite {
  int conv_id = -1;
  int offset = 0;  // where the slice starts within that conv's input axis
};

namespace detail {

template <class Real>
bool collect_sites_from_edge(const NetworkGraph<Real>& g, int cons, int slot,
                             int slice_start, std::vector<ConvSite>& out) {
  const LayerNode<Real>& n = g.node(cons);
  switch (n.kind) {
    case LayerKind::ConvBlock:
      out.push_back({cons, slice_start});
      return true;
    case LayerKind::ConcatMerge: {
      int off = 0;
      for (int i = 0; i < slot; ++i) off += g.channels_of(n.inputs[i]);
      const auto consumers = g.consumers_of(cons);
      if (consumers.empty()) return false;
      for (const auto& [cid, cslot] : consumers)
        if (!collect_sites_from_edge(g, cid, cslot, slice_start + off, out))
          return false;
      return true;
    }
    default:
      return false;
  }
}

// All sites affected by a change to the full output of `node_id`.
template <class Real>
std::optional<std::vector<ConvSite>> collect_sites_for_node(
    const NetworkGraph<Real>& g, int node_id) {
  std::vector<ConvSite> out;
  const auto consumers = g.consumers_of(node_id);
  if (consumers.empty()) return std::nullopt;
  for (const auto& [cid, slot] : consumers)
    if (!collect_sites_from_edge(g, cid, slot, 0, out)) return std::nullopt;
  return out;
}

template <class Real>
std::optional<std::vector<ConvSite>> collect_sites_for_edge(
    const NetworkGraph<Real>& g, int cons, int slot) {
  std::vector<ConvSite> out;
  if (!collect_sites_from_edge(g, cons, slot, 0, out)) return std::nullopt;
  return out;
}

// Rebuilds a conv input axis after inserting `count` zero channels at each
// listed offset (offsets refer to the original axis).
template <class Real>
void insert_zero_input_channels(LayerNode<Real>& n, std::vector<int> offsets,
                                int count) {
  std::sort(offsets.begin(), offsets.end());
  ConvParams<Real>& p = n.conv;
  const int new_cin = p.cin + static_cast<int>(offsets.size()) * count;
  // old channel index per new channel, -1 for inserted zeros
  std::vector<int> chmap;
  chmap.reserve(new_cin);
  std::size_t next = 0;
  for (int oc = 0; oc < p.cin; ++oc) {
    while (next < offsets.size() && offsets[next] == oc) {
      chmap.insert(chmap.end(), count, -1);
      ++next;
    }
    chmap.push_back(oc);
  }
  while (next < offsets.size()) {  // insertion at the very end of the axis
    chmap.insert(chmap.end(), count, -1);
    ++next;
  }
  ConvParams<Real> np(p.kh, p.kw, new_cin, p.cout);
  for (int ki = 0; ki < p.kh; ++ki)
    for (int kj = 0; kj < p.kw; ++kj)
      for (int a = 0; a < new_cin; ++a) {
        if (chmap[a] < 0) continue;
        for (int f = 0; f < p.cout; ++f)
          np.at(ki, kj, a, f) = p.at(ki, kj, chmap[a], f);
      }
  p = std::move(np);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Widen: extend the target's filter axis by replicating filters per the plan
// mapping, replicate BN channels identically, and rescale every consumer's
// matching input slice by 1/card * (1 + delta).
// ---------------------------------------------------------------------------

template <class Real>
void widen_layer(NetworkGraph<Real>& g, const MutationRecord& rec,
                 double noise_max) {
  auto it = g.nodes.find(rec.target);
  if (it == g.nodes.end() || it->second.kind != LayerKind::ConvBlock)
    throw morph_error("widen: target " + std::to_string(rec.target) +
                      " is not a conv block");
  LayerNode<Real>& t = it->second;
  const int f = t.conv.cout;
  const int fp = rec.f_prime;
  if (fp < f) throw morph_error("widen: f_prime below current filter count");
  if (static_cast<int>(rec.widen_map.size()) != fp)
    throw morph_error("widen: mapping size does not match f_prime");
  for (int j = 0; j < fp; ++j) {
    if (j < f && rec.widen_map[j] != j)
      throw morph_error("widen: mapping must be identity on original filters");
    if (rec.widen_map[j] < 0 || rec.widen_map[j] >= f)
      throw morph_error("widen: mapping entry out of range");
  }
  if (fp == f) return;  // no-op plan

  auto sites = detail::collect_sites_for_node(g, rec.target);
  if (!sites)
    throw morph_error("widen: consumers of node " + std::to_string(rec.target) +
                      " cannot absorb a filter-count change");

  // Replicate target filters and BN channels.
  ConvParams<Real> nw(t.conv.kh, t.conv.kw, t.conv.cin, fp);
  for (int ki = 0; ki < t.conv.kh; ++ki)
    for (int kj = 0; kj < t.conv.kw; ++kj)
      for (int a = 0; a < t.conv.cin; ++a)
        for (int j = 0; j < fp; ++j)
          nw.at(ki, kj, a, j) = t.conv.at(ki, kj, a, rec.widen_map[j]);
  t.conv = std::move(nw);
  BnParams<Real> nbn(fp, t.bn.eps);
  for (int j = 0; j < fp; ++j) {
    const int s = rec.widen_map[j];
    nbn.gamma[j] = t.bn.gamma[s];
    nbn.beta[j] = t.bn.beta[s];
    nbn.running_mean[j] = t.bn.running_mean[s];
    nbn.running_var[j] = t.bn.running_var[s];
  }
  t.bn = std::move(nbn);

  std::vector<int> card(f, 0);
  for (int j = 0; j < fp; ++j) ++card[rec.widen_map[j]];

  // Consumer-side remap; delta draws follow a fixed iteration order.
  std::map<int, std::vector<int>> by_conv;
  for (const ConvSite& s : *sites) by_conv[s.conv_id].push_back(s.offset);
  Rng delta_rng(rec.delta_seed);
  for (auto& [conv_id, offsets] : by_conv) {
    std::sort(offsets.begin(), offsets.end());
    LayerNode<Real>& n = g.node(conv_id);
    ConvParams<Real>& p = n.conv;
    const int new_cin = p.cin + static_cast<int>(offsets.size()) * (fp - f);
    struct Src {
      int old_ch;
      int divisor;  // card of the filter group; 0 marks a passthrough channel
    };
    std::vector<Src> chmap;
    chmap.reserve(new_cin);
    std::size_t next = 0;
    int oc = 0;
    while (oc < p.cin) {
      if (next < offsets.size() && offsets[next] == oc) {
        for (int j = 0; j < fp; ++j)
          chmap.push_back({oc + rec.widen_map[j], card[rec.widen_map[j]]});
        oc += f;
        ++next;
      } else {
        chmap.push_back({oc, 0});
        ++oc;
      }
    }
    ConvParams<Real> np(p.kh, p.kw, new_cin, p.cout);
    for (int ki = 0; ki < p.kh; ++ki)
      for (int kj = 0; kj < p.kw; ++kj)
        for (int a = 0; a < new_cin; ++a)
          for (int fo = 0; fo < p.cout; ++fo) {
            Real v = p.at(ki, kj, chmap[a].old_ch, fo);
            if (chmap[a].divisor > 0) {
              const double delta = uniform_real(delta_rng, 0.0, noise_max);
              v = static_cast<Real>(v / chmap[a].divisor * (1.0 + delta));
            }
            np.at(ki, kj, a, fo) = v;
          }
    p = std::move(np);
  }
}

// ---------------------------------------------------------------------------
// Branch: split the target into two parallel conv blocks holding the first
// floor(f/2) filters and the remainder, rejoined by ConcatMerge in (U, V)
// order. Adds no parameters; outputs are bit-identical.
// ---------------------------------------------------------------------------

template <class Real>
void branch_layer(NetworkGraph<Real>& g, const MutationRecord& rec) {
  auto it = g.nodes.find(rec.target);
  if (it == g.nodes.end() || it->second.kind != LayerKind::ConvBlock)
    throw morph_error("branch: target " + std::to_string(rec.target) +
                      " is not a conv block");
  const LayerNode<Real> t = it->second;  // copy; the original is removed
  const int f = t.conv.cout;
  if (f < 2) throw morph_error("branch: needs at least 2 filters");
  const int m = f / 2;

  auto split = [&](int lo, int hi) {
    LayerNode<Real> n;
    n.kind = LayerKind::ConvBlock;
    n.inputs = t.inputs;
    n.conv = ConvParams<Real>(t.conv.kh, t.conv.kw, t.conv.cin, hi - lo);
    n.bn = BnParams<Real>(hi - lo, t.bn.eps);
    for (int ki = 0; ki < t.conv.kh; ++ki)
      for (int kj = 0; kj < t.conv.kw; ++kj)
        for (int a = 0; a < t.conv.cin; ++a)
          for (int j = lo; j < hi; ++j)
            n.conv.at(ki, kj, a, j - lo) = t.conv.at(ki, kj, a, j);
    for (int j = lo; j < hi; ++j) {
      n.bn.gamma[j - lo] = t.bn.gamma[j];
      n.bn.beta[j - lo] = t.bn.beta[j];
      n.bn.running_mean[j - lo] = t.bn.running_mean[j];
      n.bn.running_var[j - lo] = t.bn.running_var[j];
    }
    return g.add_node(std::move(n));
  };

  const auto consumers = g.consumers_of(rec.target);
  const int u = split(0, m);
  const int v = split(m, f);
  LayerNode<Real> cat;
  cat.kind = LayerKind::ConcatMerge;
  cat.inputs = {u, v};
  const int cid = g.add_node(std::move(cat));
  for (const auto& [cons, slot] : consumers) g.node(cons).inputs[slot] = cid;

  const int b = g.block_of(rec.target);
  if (b < 0) throw morph_error("branch: target lies outside evolutionary blocks");
  auto& blk = g.blocks[b];
  auto pos = std::find(blk.begin(), blk.end(), rec.target);
  pos = blk.erase(pos);
  blk.insert(pos, {u, v, cid});
  g.nodes.erase(rec.target);
}

// ---------------------------------------------------------------------------
// Layer insertions on an edge (producer -> consumer slot).
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void validate_edge(const NetworkGraph<Real>& g, const MutationRecord& rec) {
  auto it = g.nodes.find(rec.edge_cons);
  if (it == g.nodes.end())
    throw morph_error("insert: consumer node " + std::to_string(rec.edge_cons) +
                      " does not exist");
  const LayerNode<Real>& cons = it->second;
  if (rec.edge_slot < 0 || rec.edge_slot >= static_cast<int>(cons.inputs.size()) ||
      cons.inputs[rec.edge_slot] != rec.edge_prod)
    throw morph_error("insert: edge " + std::to_string(rec.edge_prod) + "->" +
                      std::to_string(rec.edge_cons) + " does not exist");
  if (g.block_of(rec.edge_cons) < 0)
    throw morph_error("insert: edge lies outside evolutionary blocks");
}

template <class Real>
int add_zero_conv(NetworkGraph<Real>& g, int prod, int cin, int cout) {
  LayerNode<Real> n;
  n.kind = LayerKind::ConvBlock;
  n.inputs = {prod};
  n.conv = ConvParams<Real>(3, 3, cin, cout);  // weights already zero
  n.bn = BnParams<Real>(cout);
  n.bn.calibrate_identity();
  return g.add_node(std::move(n));
}

}  // namespace detail

// New conv initialized to the identity kernel (center tap on the channel
// diagonal) with identity-calibrated BN; valid only on post-ReLU edges since
// relu(identity(relu(x))) == relu(x) needs non-negative inputs.
template <class Real>
void insert_identity_layer(NetworkGraph<Real>& g, const MutationRecord& rec) {
  detail::validate_edge(g, rec);
  if (g.node(rec.edge_prod).kind == LayerKind::Input)
    throw morph_error("insert_identity: position is not post-ReLU");
  const int c = g.channels_of(rec.edge_prod);
  LayerNode<Real> n;
  n.kind = LayerKind::ConvBlock;
  n.inputs = {rec.edge_prod};
  n.conv = ConvParams<Real>(3, 3, c, c);
  for (int a = 0; a < c; ++a)
    n.conv.at(n.conv.kh / 2, n.conv.kw / 2, a, a) = Real(1);
  n.bn = BnParams<Real>(c);
  n.bn.calibrate_identity();
  const int id = g.add_node(std::move(n));
  g.node(rec.edge_cons).inputs[rec.edge_slot] = id;
  g.blocks[g.block_of(rec.edge_cons)].push_back(id);
}

// New all-zero conv added to the existing activation through AddMerge; the
// zero branch contributes nothing (BN of zeros yields beta = 0) but can learn.
template <class Real>
void insert_shortcut_layer(NetworkGraph<Real>& g, const MutationRecord& rec) {
  detail::validate_edge(g, rec);
  const int c = g.channels_of(rec.edge_prod);
  const int z = detail::add_zero_conv(g, rec.edge_prod, c, c);
  LayerNode<Real> add;
  add.kind = LayerKind::AddMerge;
  add.inputs = {rec.edge_prod, z};
  const int a = g.add_node(std::move(add));
  g.node(rec.edge_cons).inputs[rec.edge_slot] = a;
  const int b = g.block_of(rec.edge_cons);
  g.blocks[b].push_back(z);
  g.blocks[b].push_back(a);
}

// New all-zero conv concatenated before the existing activation; every
// downstream consumer's weight matrix gains zero slices for the new channels.
template <class Real>
void insert_dense_layer(NetworkGraph<Real>& g, const MutationRecord& rec) {
  detail::validate_edge(g, rec);
  auto sites = detail::collect_sites_for_edge(g, rec.edge_cons, rec.edge_slot);
  if (!sites)
    throw morph_error("insert_dense: consumers cannot absorb new channels");
  const int c = g.channels_of(rec.edge_prod);
  const int d = detail::add_zero_conv(g, rec.edge_prod, c, c);
  LayerNode<Real> cat;
  cat.kind = LayerKind::ConcatMerge;
  cat.inputs = {d, rec.edge_prod};  // new layer first
  const int m = g.add_node(std::move(cat));
  g.node(rec.edge_cons).inputs[rec.edge_slot] = m;
  const int b = g.block_of(rec.edge_cons);
  g.blocks[b].push_back(d);
  g.blocks[b].push_back(m);

  std::map<int, std::vector<int>> by_conv;
  for (const ConvSite& s : *sites) by_conv[s.conv_id].push_back(s.offset);
  for (auto& [conv_id, offsets] : by_conv)
    detail::insert_zero_input_channels(g.node(conv_id), offsets, c);
}

// ---------------------------------------------------------------------------
// Legal-site enumeration and application.
// ---------------------------------------------------------------------------

struct EdgeRef {
  int prod = -1, cons = -1, slot = -1;
};

template <class Real>
std::vector<int> legal_widen_targets(const NetworkGraph<Real>& g,
                                     int max_channels) {
  std::vector<int> out;
  for (const auto& blk : g.blocks)
    for (int id : blk) {
      const LayerNode<Real>& n = g.node(id);
      if (n.kind != LayerKind::ConvBlock) continue;
      if (n.conv.cout >= max_channels) continue;
      if (detail::collect_sites_for_node(g, id)) out.push_back(id);
    }
  return out;
}

template <class Real>
std::vector<int> legal_branch_targets(const NetworkGraph<Real>& g) {
  std::vector<int> out;
  for (const auto& blk : g.blocks)
    for (int id : blk) {
      const LayerNode<Real>& n = g.node(id);
      if (n.kind == LayerKind::ConvBlock && n.conv.cout >= 2) out.push_back(id);
    }
  return out;
}

template <class Real>
std::vector<EdgeRef> legal_insert_edges(const NetworkGraph<Real>& g,
                                        MutationKind kind) {
  std::vector<EdgeRef> out;
  for (const auto& [cid, n] : g.nodes) {
    if (g.block_of(cid) < 0) continue;
    for (int slot = 0; slot < static_cast<int>(n.inputs.size()); ++slot) {
      const int prod = n.inputs[slot];
      if (kind == MutationKind::InsertIdentity &&
          g.node(prod).kind == LayerKind::Input)
        continue;
      if (kind == MutationKind::InsertDense &&
          !detail::collect_sites_for_edge(g, cid, slot))
        continue;
      out.push_back({prod, cid, slot});
    }
  }
  return out;
}

// Applies a fully specified record. Throws morph_error when the location is
// no longer valid (crossover replay handles that by remapping).
template <class Real>
void apply_record(NetworkGraph<Real>& g, const MutationRecord& rec,
                  double noise_max) {
  switch (rec.kind) {
    case MutationKind::Widen: widen_layer(g, rec, noise_max); break;
    case MutationKind::Branch: branch_layer(g, rec); break;
    case MutationKind::InsertIdentity: insert_identity_layer(g, rec); break;
    case MutationKind::InsertShortcut: insert_shortcut_layer(g, rec); break;
    case MutationKind::InsertDense: insert_dense_layer(g, rec); break;
  }
}

namespace detail {

template <class Real>
void fill_widen_plan(const NetworkGraph<Real>& g, MutationRecord& rec,
                     const MorphConfig& cfg, Rng& rng) {
  const int f = g.node(rec.target).conv.cout;
  rec.f_prime = std::min(f + std::max(1, f / 2), cfg.widen_max_channels);
  rec.widen_map.resize(rec.f_prime);
  for (int j = 0; j < f; ++j) rec.widen_map[j] = j;
  for (int j = f; j < rec.f_prime; ++j) rec.widen_map[j] = uniform_int(rng, 0, f - 1);
  rec.delta_seed = rng();
}

}  // namespace detail

// Picks a fresh legal location (and plan) for rec.kind inside rec.block.
// Returns false when the block offers no legal site.
template <class Real>
bool resample_location(const NetworkGraph<Real>& g, MutationRecord& rec,
                       const MorphConfig& cfg, Rng& rng) {
  if (rec.block < 0 || rec.block >= static_cast<int>(g.blocks.size())) return false;
  if (rec.kind == MutationKind::Widen || rec.kind == MutationKind::Branch) {
    std::vector<int> targets = rec.kind == MutationKind::Widen
                                   ? legal_widen_targets(g, cfg.widen_max_channels)
                                   : legal_branch_targets(g);
    std::erase_if(targets, [&](int id) { return g.block_of(id) != rec.block; });
    if (targets.empty()) return false;
    rec.target = targets[uniform_int(rng, 0, static_cast<int>(targets.size()) - 1)];
    if (rec.kind == MutationKind::Widen) detail::fill_widen_plan(g, rec, cfg, rng);
    return true;
  }
  std::vector<EdgeRef> edges = legal_insert_edges(g, rec.kind);
  std::erase_if(edges,
                [&](const EdgeRef& e) { return g.block_of(e.cons) != rec.block; });
  if (edges.empty()) return false;
  const EdgeRef e = edges[uniform_int(rng, 0, static_cast<int>(edges.size()) - 1)];
  rec.edge_prod = e.prod;
  rec.edge_cons = e.cons;
  rec.edge_slot = e.slot;
  return true;
}

// Uniform choice over the allowed kinds, then a uniform legal site; applies
// the mutation in place and returns the record (global_id left to the caller).
template <class Real>
MutationRecord sample_mutation(NetworkGraph<Real>& g, const MorphConfig& cfg,
                               Rng& rng) {
  cfg.validate();
  constexpr int kMaxTries = 25;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    MutationRecord rec;
    rec.kind = cfg.operations[uniform_int(
        rng, 0, static_cast<int>(cfg.operations.size()) - 1)];
    if (rec.kind == MutationKind::Widen || rec.kind == MutationKind::Branch) {
      const std::vector<int> targets =
          rec.kind == MutationKind::Widen
              ? legal_widen_targets(g, cfg.widen_max_channels)
              : legal_branch_targets(g);
      if (targets.empty()) continue;
      rec.target =
          targets[uniform_int(rng, 0, static_cast<int>(targets.size()) - 1)];
      rec.block = g.block_of(rec.target);
      if (rec.kind == MutationKind::Widen)
        detail::fill_widen_plan(g, rec, cfg, rng);
    } else {
      const std::vector<EdgeRef> edges = legal_insert_edges(g, rec.kind);
      if (edges.empty()) continue;
      const EdgeRef e =
          edges[uniform_int(rng, 0, static_cast<int>(edges.size()) - 1)];
      rec.edge_prod = e.prod;
      rec.edge_cons = e.cons;
      rec.edge_slot = e.slot;
      rec.block = g.block_of(e.cons);
    }
    apply_record(g, rec, cfg.noise_max);
    return rec;
  }
  throw morph_error("sample_mutation: no legal site after bounded retries");
}

}  // namespace eena

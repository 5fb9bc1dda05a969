#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eena/kernels.hpp"
#include "eena/tensor.hpp"

namespace eena {

enum class LayerKind {
  Input,
  ConvBlock,  // Conv -> BatchNorm -> ReLU, bias-free conv
  MaxPool2,
  GlobalAvgPool,
  ConcatMerge,
  AddMerge,
  SoftmaxHead,  // dense projection to class logits
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::ConvBlock: return "conv";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::ConcatMerge: return "concat";
    case LayerKind::AddMerge: return "add";
    case LayerKind::SoftmaxHead: return "head";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "input") return LayerKind::Input;
  if (s == "conv") return LayerKind::ConvBlock;
  if (s == "maxpool2") return LayerKind::MaxPool2;
  if (s == "gap") return LayerKind::GlobalAvgPool;
  if (s == "concat") return LayerKind::ConcatMerge;
  if (s == "add") return LayerKind::AddMerge;
  if (s == "head") return LayerKind::SoftmaxHead;
  throw data_error("unknown layer kind: " + s);
}

template <class Real>
struct LayerNode {
  int id = -1;
  LayerKind kind = LayerKind::Input;
  std::vector<int> inputs;  // producer ids, order significant for merges

  ConvParams<Real> conv;  // ConvBlock only
  BnParams<Real> bn;      // ConvBlock only
  DenseParams<Real> head; // SoftmaxHead only
};

struct Shape3 {
  int h = 0, w = 0, c = 0;
  bool operator==(const Shape3&) const = default;
};

template <class Real>
struct NetworkGraph {
  std::map<int, LayerNode<Real>> nodes;
  std::vector<std::vector<int>> blocks;  // evolutionary blocks, ordered node ids
  int next_id = 0;
  int input_id = -1;
  int head_id = -1;
  int in_channels = 0;

  LayerNode<Real>& node(int id) {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw morph_error("no node with id " + std::to_string(id));
    return it->second;
  }
  const LayerNode<Real>& node(int id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw morph_error("no node with id " + std::to_string(id));
    return it->second;
  }

  int add_node(LayerNode<Real> n) {
    n.id = next_id++;
    const int id = n.id;
    nodes.emplace(id, std::move(n));
    return id;
  }

  // Consumers as (consumer id, input slot), deterministic order by id.
  std::vector<std::pair<int, int>> consumers_of(int id) const {
    std::vector<std::pair<int, int>> out;
    for (const auto& [nid, n] : nodes)
      for (int k = 0; k < static_cast<int>(n.inputs.size()); ++k)
        if (n.inputs[k] == id) out.emplace_back(nid, k);
    return out;
  }

  int block_of(int id) const {
    for (int b = 0; b < static_cast<int>(blocks.size()); ++b)
      if (std::find(blocks[b].begin(), blocks[b].end(), id) != blocks[b].end())
        return b;
    return -1;
  }

  // Kahn topological order, ties resolved by ascending id.
  std::vector<int> topo_order() const {
    std::map<int, int> indeg;
    for (const auto& [id, n] : nodes) indeg[id] = static_cast<int>(n.inputs.size());
    std::vector<int> ready, order;
    for (const auto& [id, d] : indeg)
      if (d == 0) ready.push_back(id);
    while (!ready.empty()) {
      std::sort(ready.begin(), ready.end());
      const int id = ready.front();
      ready.erase(ready.begin());
      order.push_back(id);
      for (const auto& [cid, slot] : consumers_of(id)) {
        (void)slot;
        if (--indeg[cid] == 0) ready.push_back(cid);
      }
    }
    if (order.size() != nodes.size()) throw error("network graph contains a cycle");
    return order;
  }

  // Channel count of a node's output, independent of spatial extents.
  int channels_of(int id) const {
    const LayerNode<Real>& n = node(id);
    switch (n.kind) {
      case LayerKind::Input: return in_channels;
      case LayerKind::ConvBlock: return n.conv.cout;
      case LayerKind::MaxPool2:
      case LayerKind::GlobalAvgPool: return channels_of(n.inputs.at(0));
      case LayerKind::AddMerge: return channels_of(n.inputs.at(0));
      case LayerKind::ConcatMerge: {
        int c = 0;
        for (int in : n.inputs) c += channels_of(in);
        return c;
      }
      case LayerKind::SoftmaxHead: return n.head.cout;
    }
    return 0;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [id, n] : nodes) {
      (void)id;
      if (n.kind == LayerKind::ConvBlock)
        total += n.conv.w.size() + n.bn.gamma.size() + n.bn.beta.size();
      else if (n.kind == LayerKind::SoftmaxHead)
        total += n.head.w.size() + n.head.b.size();
    }
    return total;
  }

  // Structural equality ignoring weight values: same nodes, wiring, layer
  // dimensions and block membership.
  bool same_structure(const NetworkGraph& o) const {
    if (nodes.size() != o.nodes.size() || blocks != o.blocks) return false;
    if (input_id != o.input_id || head_id != o.head_id ||
        in_channels != o.in_channels)
      return false;
    for (const auto& [id, n] : nodes) {
      auto it = o.nodes.find(id);
      if (it == o.nodes.end()) return false;
      const LayerNode<Real>& m = it->second;
      if (n.kind != m.kind || n.inputs != m.inputs) return false;
      if (n.kind == LayerKind::ConvBlock &&
          (n.conv.kh != m.conv.kh || n.conv.kw != m.conv.kw ||
           n.conv.cin != m.conv.cin || n.conv.cout != m.conv.cout))
        return false;
      if (n.kind == LayerKind::SoftmaxHead &&
          (n.head.cin != m.head.cin || n.head.cout != m.head.cout))
        return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Shape inference: topological pass, fails atomically on any mismatch.
// ---------------------------------------------------------------------------

template <class Real>
std::map<int, Shape3> infer_shapes(const NetworkGraph<Real>& g, Shape3 input) {
  if (input.c != g.in_channels)
    throw shape_error("input has " + std::to_string(input.c) +
                      " channels, graph expects " + std::to_string(g.in_channels));
  std::map<int, Shape3> shapes;
  for (int id : g.topo_order()) {
    const LayerNode<Real>& n = g.node(id);
    switch (n.kind) {
      case LayerKind::Input:
        shapes[id] = input;
        break;
      case LayerKind::ConvBlock: {
        const Shape3 s = shapes.at(n.inputs.at(0));
        if (s.c != n.conv.cin)
          throw shape_error("node " + std::to_string(id) + ": conv expects " +
                            std::to_string(n.conv.cin) + " channels, got " +
                            std::to_string(s.c));
        shapes[id] = {s.h, s.w, n.conv.cout};
        break;
      }
      case LayerKind::MaxPool2: {
        const Shape3 s = shapes.at(n.inputs.at(0));
        shapes[id] = {(s.h + 1) / 2, (s.w + 1) / 2, s.c};
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const Shape3 s = shapes.at(n.inputs.at(0));
        shapes[id] = {1, 1, s.c};
        break;
      }
      case LayerKind::ConcatMerge: {
        if (n.inputs.empty())
          throw shape_error("concat node " + std::to_string(id) + " has no inputs");
        Shape3 s = shapes.at(n.inputs[0]);
        int c = s.c;
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
          const Shape3 t = shapes.at(n.inputs[i]);
          if (t.h != s.h || t.w != s.w)
            throw shape_error("concat node " + std::to_string(id) +
                              ": spatial extents disagree");
          c += t.c;
        }
        shapes[id] = {s.h, s.w, c};
        break;
      }
      case LayerKind::AddMerge: {
        if (n.inputs.size() != 2)
          throw shape_error("add node " + std::to_string(id) + " needs 2 inputs");
        const Shape3 a = shapes.at(n.inputs[0]);
        const Shape3 b = shapes.at(n.inputs[1]);
        if (!(a == b))
          throw shape_error("add node " + std::to_string(id) +
                            ": operand shapes disagree");
        shapes[id] = a;
        break;
      }
      case LayerKind::SoftmaxHead: {
        const Shape3 s = shapes.at(n.inputs.at(0));
        if (s.h != 1 || s.w != 1 || s.c != n.head.cin)
          throw shape_error("head node " + std::to_string(id) +
                            ": expects (1,1," + std::to_string(n.head.cin) + ")");
        shapes[id] = {1, 1, n.head.cout};
        break;
      }
    }
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Forward execution with optional trace for backprop.
// ---------------------------------------------------------------------------

template <class Real>
struct NodeCache {
  Tensor<Real> out;
  Tensor<Real> conv_out;  // pre-BN (ConvBlock)
  Tensor<Real> bn_out;    // pre-ReLU (ConvBlock)
  BnStats<Real> stats;    // ConvBlock
  std::vector<std::int64_t> pool_idx;  // MaxPool2
};

template <class Real>
struct ForwardTrace {
  std::map<int, NodeCache<Real>> cache;
  std::vector<int> order;
};

template <class Real>
Tensor<Real> forward(NetworkGraph<Real>& g, const Tensor<Real>& x, RunMode mode,
                     ForwardTrace<Real>* trace = nullptr,
                     bool check_finite = false) {
  if (x.c() != g.in_channels)
    throw shape_error("forward: input " + x.shape_str() + " has wrong channels");
  std::map<int, Tensor<Real>> acts;
  const std::vector<int> order = g.topo_order();
  if (trace) trace->order = order;
  for (int id : order) {
    LayerNode<Real>& n = g.node(id);
    NodeCache<Real> cache;
    Tensor<Real> out;
    switch (n.kind) {
      case LayerKind::Input:
        out = x;
        break;
      case LayerKind::ConvBlock: {
        const Tensor<Real>& in = acts.at(n.inputs.at(0));
        Tensor<Real> co = conv2d_forward(in, n.conv);
        auto [bo, stats] = batchnorm_forward(co, n.bn, mode);
        out = relu(bo);
        if (trace) {
          cache.conv_out = std::move(co);
          cache.bn_out = std::move(bo);
          cache.stats = std::move(stats);
        }
        break;
      }
      case LayerKind::MaxPool2: {
        PoolResult<Real> r = maxpool2_forward(acts.at(n.inputs.at(0)));
        out = std::move(r.y);
        if (trace) cache.pool_idx = std::move(r.argmax);
        break;
      }
      case LayerKind::GlobalAvgPool:
        out = global_avg_pool(acts.at(n.inputs.at(0)));
        break;
      case LayerKind::ConcatMerge: {
        const Tensor<Real>& first = acts.at(n.inputs.at(0));
        int c = 0;
        for (int in : n.inputs) c += acts.at(in).c();
        out = Tensor<Real>(first.n(), first.h(), first.w(), c);
        int off = 0;
        for (int in : n.inputs) {
          const Tensor<Real>& t = acts.at(in);
          if (t.h() != first.h() || t.w() != first.w())
            throw shape_error("concat: spatial extents disagree at node " +
                              std::to_string(id));
          for (int b = 0; b < t.n(); ++b)
            for (int y = 0; y < t.h(); ++y)
              for (int xw = 0; xw < t.w(); ++xw) {
                const Real* src = &t.at(b, y, xw, 0);
                Real* dst = &out.at(b, y, xw, off);
                std::copy(src, src + t.c(), dst);
              }
          off += t.c();
        }
        break;
      }
      case LayerKind::AddMerge: {
        const Tensor<Real>& a = acts.at(n.inputs.at(0));
        const Tensor<Real>& b = acts.at(n.inputs.at(1));
        if (!a.same_shape(b))
          throw shape_error("add: operand shapes disagree at node " +
                            std::to_string(id));
        out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
        break;
      }
      case LayerKind::SoftmaxHead:
        out = dense_forward(acts.at(n.inputs.at(0)), n.head);
        break;
    }
    if (check_finite) out.assert_finite(layer_kind_name(n.kind));
    if (trace) {
      cache.out = out;
      trace->cache[id] = std::move(cache);
    }
    acts[id] = std::move(out);
  }
  return acts.at(g.head_id);
}

// ---------------------------------------------------------------------------
// Backward pass over the trace. Returns per-node parameter gradients.
// ---------------------------------------------------------------------------

template <class Real>
struct NodeGrads {
  std::vector<Real> conv_w;
  std::vector<Real> bn_gamma, bn_beta;
  std::vector<Real> head_w, head_b;
};

template <class Real>
std::map<int, NodeGrads<Real>> backward(NetworkGraph<Real>& g,
                                        const ForwardTrace<Real>& trace,
                                        const Tensor<Real>& grad_logits) {
  std::map<int, NodeGrads<Real>> grads;
  std::map<int, Tensor<Real>> grad_acts;  // d loss / d node output
  grad_acts[g.head_id] = grad_logits;

  auto accumulate = [&](int id, Tensor<Real>&& gt) {
    auto it = grad_acts.find(id);
    if (it == grad_acts.end()) {
      grad_acts.emplace(id, std::move(gt));
    } else {
      for (std::size_t i = 0; i < gt.size(); ++i) it->second.data[i] += gt.data[i];
    }
  };

  std::vector<int> order = trace.order;
  std::reverse(order.begin(), order.end());
  for (int id : order) {
    LayerNode<Real>& n = g.node(id);
    auto git = grad_acts.find(id);
    if (git == grad_acts.end()) continue;  // node does not reach the loss
    const Tensor<Real>& go = git->second;
    const NodeCache<Real>& cache = trace.cache.at(id);
    switch (n.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::ConvBlock: {
        Tensor<Real> g_bn = relu_backward(cache.bn_out, go);
        BnGrads<Real> bg = batchnorm_backward(cache.conv_out, n.bn, cache.stats, g_bn);
        const Tensor<Real>& in = trace.cache.at(n.inputs.at(0)).out;
        ConvGrads<Real> cg = conv2d_backward(in, n.conv, bg.grad_x);
        NodeGrads<Real>& ng = grads[id];
        ng.conv_w = std::move(cg.grad_w);
        ng.bn_gamma = std::move(bg.grad_gamma);
        ng.bn_beta = std::move(bg.grad_beta);
        accumulate(n.inputs.at(0), std::move(cg.grad_x));
        break;
      }
      case LayerKind::MaxPool2: {
        const Tensor<Real>& in = trace.cache.at(n.inputs.at(0)).out;
        accumulate(n.inputs.at(0),
                   maxpool2_backward(in.shape, cache.pool_idx, go));
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const Tensor<Real>& in = trace.cache.at(n.inputs.at(0)).out;
        accumulate(n.inputs.at(0), global_avg_pool_backward(in.shape, go));
        break;
      }
      case LayerKind::ConcatMerge: {
        int off = 0;
        for (int in : n.inputs) {
          const Tensor<Real>& t = trace.cache.at(in).out;
          Tensor<Real> slice(t.n(), t.h(), t.w(), t.c());
          for (int b = 0; b < t.n(); ++b)
            for (int y = 0; y < t.h(); ++y)
              for (int xw = 0; xw < t.w(); ++xw) {
                const Real* src = &go.at(b, y, xw, off);
                Real* dst = &slice.at(b, y, xw, 0);
                std::copy(src, src + t.c(), dst);
              }
          off += t.c();
          accumulate(in, std::move(slice));
        }
        break;
      }
      case LayerKind::AddMerge: {
        Tensor<Real> a = go, b = go;
        accumulate(n.inputs.at(0), std::move(a));
        accumulate(n.inputs.at(1), std::move(b));
        break;
      }
      case LayerKind::SoftmaxHead: {
        const Tensor<Real>& in = trace.cache.at(n.inputs.at(0)).out;
        DenseGrads<Real> dg = dense_backward(in, n.head, go);
        NodeGrads<Real>& ng = grads[id];
        ng.head_w = std::move(dg.grad_w);
        ng.head_b = std::move(dg.grad_b);
        accumulate(n.inputs.at(0), std::move(dg.grad_x));
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Initial model: stem conv, three evolutionary blocks separated by pooling,
// a final conv, global average pooling and a dense softmax head.
// ---------------------------------------------------------------------------

struct InitialModelConfig {
  int in_channels = 3;
  int stem_channels = 64;
  int block_channels = 128;
  int last_channels = 256;
  int classes = 10;
};

template <class Real>
NetworkGraph<Real> build_initial_model(const InitialModelConfig& cfg, Rng& rng) {
  if (cfg.in_channels <= 0 || cfg.stem_channels <= 0 || cfg.block_channels <= 0 ||
      cfg.last_channels <= 0 || cfg.classes <= 0)
    throw data_error("initial model: channel and class counts must be positive");
  NetworkGraph<Real> g;
  g.in_channels = cfg.in_channels;

  auto conv_block = [&](int prev, int cin, int cout) {
    LayerNode<Real> n;
    n.kind = LayerKind::ConvBlock;
    n.inputs = {prev};
    n.conv = ConvParams<Real>(3, 3, cin, cout);
    n.conv.he_normal_init(rng);
    n.bn = BnParams<Real>(cout);
    return g.add_node(std::move(n));
  };
  auto pool = [&](int prev) {
    LayerNode<Real> n;
    n.kind = LayerKind::MaxPool2;
    n.inputs = {prev};
    return g.add_node(std::move(n));
  };

  LayerNode<Real> in;
  in.kind = LayerKind::Input;
  g.input_id = g.add_node(std::move(in));

  const int stem = conv_block(g.input_id, cfg.in_channels, cfg.stem_channels);
  const int b1 = conv_block(stem, cfg.stem_channels, cfg.block_channels);
  const int p1 = pool(b1);
  const int b2 = conv_block(p1, cfg.block_channels, cfg.block_channels);
  const int p2 = pool(b2);
  const int b3 = conv_block(p2, cfg.block_channels, cfg.block_channels);
  const int last = conv_block(b3, cfg.block_channels, cfg.last_channels);

  LayerNode<Real> gap;
  gap.kind = LayerKind::GlobalAvgPool;
  gap.inputs = {last};
  const int gap_id = g.add_node(std::move(gap));

  LayerNode<Real> head;
  head.kind = LayerKind::SoftmaxHead;
  head.inputs = {gap_id};
  head.head = DenseParams<Real>(cfg.last_channels, cfg.classes);
  head.head.he_normal_init(rng);
  g.head_id = g.add_node(std::move(head));

  g.blocks = {{b1}, {b2}, {b3}};
  return g;
}

}  // namespace eena

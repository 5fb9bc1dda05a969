#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eena/netgraph.hpp"
#include "eena/serialize.hpp"
#include "eena/train.hpp"

using namespace eena;

namespace {

template <class Real>
NetworkGraph<Real> default_model(Rng& rng) {
  InitialModelConfig cfg;  // 3 -> 64 -> 128x3 -> 256 -> 10
  return build_initial_model<Real>(cfg, rng);
}

// Two-cluster, linearly separable toy set in channel space.
template <class Real>
Dataset<Real> toy_dataset(int n_per_class, Rng& rng) {
  Dataset<Real> ds;
  ds.classes = 2;
  ds.images = Tensor<Real>(2 * n_per_class, 4, 4, 1);
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const int label = i % 2;
    ds.labels.push_back(label);
    const double center = label == 0 ? -1.0 : 1.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        ds.images.at(i, y, x, 0) =
            Real(center + uniform_real(rng, -0.2, 0.2));
  }
  return ds;
}

}  // namespace

TEST_CASE("initial model topology: 5 conv blocks, 2 pools, GAP, head") {
  Rng rng(1);
  NetworkGraph<double> g = default_model<double>(rng);
  int convs = 0, pools = 0, gaps = 0, heads = 0, inputs = 0;
  for (const auto& [id, n] : g.nodes) {
    switch (n.kind) {
      case LayerKind::ConvBlock: ++convs; break;
      case LayerKind::MaxPool2: ++pools; break;
      case LayerKind::GlobalAvgPool: ++gaps; break;
      case LayerKind::SoftmaxHead: ++heads; break;
      case LayerKind::Input: ++inputs; break;
      default: break;
    }
  }
  CHECK(convs == 5);
  CHECK(pools == 2);
  CHECK(gaps == 1);
  CHECK(heads == 1);
  CHECK(inputs == 1);
  CHECK(g.blocks.size() == 3);
  for (const auto& b : g.blocks) {
    CHECK(b.size() == 1);
    CHECK(g.node(b[0]).kind == LayerKind::ConvBlock);
  }
}

TEST_CASE("initial model parameter count matches the closed-form sum") {
  Rng rng(2);
  NetworkGraph<double> g = default_model<double>(rng);
  // conv w = 9*cin*cout, bn = 2*cout, head = 256*10 + 10
  const std::size_t expected = (9 * 3 * 64 + 2 * 64) + (9 * 64 * 128 + 2 * 128) +
                               2 * (9 * 128 * 128 + 2 * 128) +
                               (9 * 128 * 256 + 2 * 256) + (256 * 10 + 10);
  CHECK(g.parameter_count() == expected);
  // ~0.67M at the default widths, within 5%
  CHECK(std::abs(double(g.parameter_count()) - 0.67e6) / 0.67e6 < 0.05);
}

TEST_CASE("desk-scale config keeps the topology but shrinks the counts") {
  Rng rng(3);
  InitialModelConfig small{1, 8, 16, 32, 4};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  CHECK(g.nodes.size() == 10);
  CHECK(g.parameter_count() < 50000);
  CHECK(g.node(g.head_id).head.cout == 4);
}

TEST_CASE("build_initial_model rejects non-positive counts") {
  Rng rng(4);
  CHECK_THROWS_AS(build_initial_model<double>({3, 0, 128, 256, 10}, rng),
                  data_error);
  CHECK_THROWS_AS(build_initial_model<double>({3, 64, 128, 256, -1}, rng),
                  data_error);
}

TEST_CASE("shape inference on the initial model: GAP feeds 256 channels") {
  Rng rng(5);
  NetworkGraph<double> g = default_model<double>(rng);
  auto shapes = infer_shapes(g, Shape3{32, 32, 3});
  const LayerNode<double>& head = g.node(g.head_id);
  const Shape3 s = shapes.at(head.inputs[0]);
  CHECK(s.h == 1);
  CHECK(s.w == 1);
  CHECK(s.c == 256);
  CHECK(shapes.at(g.head_id).c == 10);
  // pools halve spatial extents twice: 32 -> 16 -> 8
  for (const auto& [id, n] : g.nodes)
    if (n.kind == LayerKind::GlobalAvgPool)
      CHECK(shapes.at(n.inputs[0]).h == 8);
}

TEST_CASE("shape inference rejects channel mismatches atomically") {
  Rng rng(6);
  NetworkGraph<double> g = default_model<double>(rng);
  CHECK_THROWS_AS(infer_shapes(g, Shape3{32, 32, 4}), shape_error);
}

TEST_CASE("concat merge adds channel counts") {
  Rng rng(7);
  NetworkGraph<double> g;
  g.in_channels = 1;
  LayerNode<double> in;
  in.kind = LayerKind::Input;
  g.input_id = g.add_node(std::move(in));
  auto conv = [&](int prev, int cout) {
    LayerNode<double> n;
    n.kind = LayerKind::ConvBlock;
    n.inputs = {prev};
    n.conv = ConvParams<double>(3, 3, 1, cout);
    n.bn = BnParams<double>(cout);
    return g.add_node(std::move(n));
  };
  const int a = conv(g.input_id, 64);
  const int b = conv(g.input_id, 64);
  LayerNode<double> cat;
  cat.kind = LayerKind::ConcatMerge;
  cat.inputs = {a, b};
  const int c = g.add_node(std::move(cat));
  LayerNode<double> gap;
  gap.kind = LayerKind::GlobalAvgPool;
  gap.inputs = {c};
  const int gp = g.add_node(std::move(gap));
  LayerNode<double> head;
  head.kind = LayerKind::SoftmaxHead;
  head.inputs = {gp};
  head.head = DenseParams<double>(128, 2);
  g.head_id = g.add_node(std::move(head));
  g.blocks = {{a}, {b}, {}};

  auto shapes = infer_shapes(g, Shape3{8, 8, 1});
  CHECK(shapes.at(c).c == 128);
  CHECK(g.channels_of(c) == 128);
}

TEST_CASE("forward on zero input yields finite logits") {
  Rng rng(8);
  NetworkGraph<float> g = default_model<float>(rng);
  Tensor<float> x(2, 16, 16, 3);
  Tensor<float> y = forward(g, x, RunMode::Infer);
  CHECK(y.n() == 2);
  CHECK(y.c() == 10);
  y.assert_finite("logits");
}

TEST_CASE("identical graphs and weights produce identical logits") {
  Rng rng(9);
  NetworkGraph<float> g = default_model<float>(rng);
  NetworkGraph<float> h = g;
  Tensor<float> x(1, 16, 16, 3);
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<float> ya = forward(g, x, RunMode::Infer);
  Tensor<float> yb = forward(h, x, RunMode::Infer);
  CHECK(ya.data == yb.data);
}

TEST_CASE("tiny graph forward equals hand-composed kernel calls") {
  Rng rng(10);
  NetworkGraph<double> g;
  g.in_channels = 2;
  LayerNode<double> in;
  in.kind = LayerKind::Input;
  g.input_id = g.add_node(std::move(in));
  LayerNode<double> cb;
  cb.kind = LayerKind::ConvBlock;
  cb.inputs = {g.input_id};
  cb.conv = ConvParams<double>(3, 3, 2, 3);
  cb.conv.he_normal_init(rng);
  cb.bn = BnParams<double>(3);
  fill_normal(cb.bn.running_mean, rng, 0.0, 0.3);
  const int conv_id = g.add_node(std::move(cb));
  LayerNode<double> gap;
  gap.kind = LayerKind::GlobalAvgPool;
  gap.inputs = {conv_id};
  const int gap_id = g.add_node(std::move(gap));
  LayerNode<double> head;
  head.kind = LayerKind::SoftmaxHead;
  head.inputs = {gap_id};
  head.head = DenseParams<double>(3, 2);
  head.head.he_normal_init(rng);
  g.head_id = g.add_node(std::move(head));
  g.blocks = {{conv_id}, {}, {}};

  Tensor<double> x(2, 5, 5, 2);
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<double> via_graph = forward(g, x, RunMode::Infer);

  LayerNode<double>& n = g.node(conv_id);
  auto [bn_out, stats] =
      batchnorm_forward(conv2d_forward(x, n.conv), n.bn, RunMode::Infer);
  Tensor<double> by_hand =
      dense_forward(global_avg_pool(relu(bn_out)), g.node(g.head_id).head);
  CHECK(via_graph.data == by_hand.data);
}

TEST_CASE("train_epochs: zero epochs leave weights untouched") {
  Rng rng(11);
  InitialModelConfig small{1, 4, 6, 8, 2};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  NetworkGraph<double> before = g;
  Dataset<double> ds = toy_dataset<double>(8, rng);
  TrainOptions opt;
  CHECK(train_epochs(g, ds, 0, opt).empty());
  for (const auto& [id, n] : g.nodes)
    if (n.kind == LayerKind::ConvBlock)
      CHECK(n.conv.w == before.node(id).conv.w);
}

TEST_CASE("training on a separable toy set drives the loss down") {
  Rng rng(12);
  InitialModelConfig small{1, 4, 6, 8, 2};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  Dataset<double> ds = toy_dataset<double>(16, rng);
  TrainOptions opt;
  opt.batch_size = 8;
  opt.augment.enabled = false;
  opt.seed = 17;
  auto log = train_epochs(g, ds, 7, opt);
  REQUIRE(log.size() == 7);
  CHECK(log.back().mean_loss < log.front().mean_loss);
  CHECK(evaluate(g, ds) > 0.9);

  // the lr trace follows the schedule exactly
  for (int e = 0; e < 7; ++e)
    CHECK(log[e].lr == sgdr_lr(opt.schedule, double(e)));
}

TEST_CASE("epoch_offset shifts the schedule position") {
  Rng rng(13);
  InitialModelConfig small{1, 2, 2, 2, 2};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  Dataset<double> ds = toy_dataset<double>(4, rng);
  TrainOptions opt;
  opt.epoch_offset = 3.0;
  opt.augment.enabled = false;
  auto log = train_epochs(g, ds, 2, opt);
  CHECK(log[0].lr == sgdr_lr(opt.schedule, 3.0));
  CHECK(log[1].lr == sgdr_lr(opt.schedule, 4.0));
}

TEST_CASE("evaluate errors on an empty dataset") {
  Rng rng(14);
  InitialModelConfig small{1, 2, 2, 2, 2};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  Dataset<double> empty;
  empty.classes = 2;
  CHECK_THROWS_AS(evaluate(g, empty), data_error);
}

TEST_CASE("random weights score near chance on balanced random labels") {
  Rng rng(15);
  InitialModelConfig small{1, 4, 4, 4, 4};
  NetworkGraph<float> g = build_initial_model<float>(small, rng);
  Dataset<float> ds;
  ds.classes = 4;
  ds.images = Tensor<float>(400, 8, 8, 1);
  fill_uniform(ds.images, rng, -1.0, 1.0);
  for (int i = 0; i < 400; ++i) ds.labels.push_back(uniform_int(rng, 0, 3));
  const double acc = evaluate(g, ds);
  CHECK(acc > 0.05);
  CHECK(acc < 0.55);
}

TEST_CASE("encode/decode round-trips the initial model exactly") {
  Rng rng(16);
  NetworkGraph<float> g = default_model<float>(rng);
  const std::string doc = encode_network(g);
  NetworkGraph<float> h = decode_network<float>(doc);
  CHECK(g.same_structure(h));
  Tensor<float> x(1, 16, 16, 3);
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<float> ya = forward(g, x, RunMode::Infer);
  Tensor<float> yb = forward(h, x, RunMode::Infer);
  CHECK(ya.data == yb.data);
  // weights byte-identical through a second encode
  CHECK(encode_network(h) == doc);
}

TEST_CASE("decode rejects truncated and malformed documents") {
  Rng rng(17);
  InitialModelConfig small{1, 2, 2, 2, 2};
  NetworkGraph<double> g = build_initial_model<double>(small, rng);
  const std::string doc = encode_network(g);
  CHECK_THROWS_AS(decode_network<double>(doc.substr(0, doc.size() - 8)),
                  data_error);
  CHECK_THROWS_AS(decode_network<double>("not a network"), data_error);
  std::string wrong_magic = doc;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_network<double>(wrong_magic), data_error);
  // precision mismatch is diagnosed, not silently reinterpreted
  CHECK_THROWS_AS(decode_network<float>(doc), data_error);
}

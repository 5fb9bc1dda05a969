#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "eena/netgraph.hpp"

namespace eena {

template <class Real>
struct Dataset {
  Tensor<Real> images;
  std::vector<int> labels;
  int classes = 0;

  int size() const { return images.n(); }
};

struct AugmentConfig {
  bool enabled = true;
  int pad = 4;  // zero-padding on each side before the random crop
  bool hflip = false;
};

struct TrainOptions {
  int batch_size = 32;
  double weight_decay = 1e-4;
  SgdrSchedule schedule;
  double epoch_offset = 0.0;  // cumulative epochs already trained
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool check_finite = false;
};

struct EpochLog {
  double epoch = 0.0;  // absolute position in the cosine schedule
  double lr = 0.0;
  double mean_loss = 0.0;
};

namespace detail {

// Copies sample `src_idx` into batch row `row`, applying zero-pad + random
// crop and optional horizontal flip.
template <class Real>
void place_sample(const Tensor<Real>& images, int src_idx, Tensor<Real>& batch,
                  int row, const AugmentConfig& aug, Rng& rng) {
  const int h = images.h(), w = images.w(), c = images.c();
  int dy = 0, dx = 0;
  bool flip = false;
  if (aug.enabled) {
    dy = uniform_int(rng, 0, 2 * aug.pad);
    dx = uniform_int(rng, 0, 2 * aug.pad);
    if (aug.hflip) flip = uniform_int(rng, 0, 1) == 1;
  }
  for (int y = 0; y < h; ++y) {
    const int sy = aug.enabled ? y + dy - aug.pad : y;
    for (int x = 0; x < w; ++x) {
      int sx = aug.enabled ? x + dx - aug.pad : x;
      if (flip) sx = w - 1 - sx;
      for (int ch = 0; ch < c; ++ch) {
        const Real v = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                           ? images.at(src_idx, sy, sx, ch)
                           : Real(0);
        batch.at(row, y, x, ch) = v;
      }
    }
  }
}

}  // namespace detail

// Mini-batch SGD with the SGDR schedule; the learning rate is fixed per
// epoch at the fractional position epoch_offset + e. Weight decay applies to
// conv and head weights, never to BN affine parameters or the head bias.
template <class Real>
std::vector<EpochLog> train_epochs(NetworkGraph<Real>& g, const Dataset<Real>& ds,
                                   int epochs, const TrainOptions& opt) {
  if (epochs < 0) throw data_error("train_epochs: negative epoch count");
  if (epochs == 0) return {};
  if (ds.size() == 0) throw data_error("train_epochs: empty dataset");
  Rng rng(opt.seed);
  std::vector<EpochLog> log;
  std::vector<int> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    const double epoch_pos = opt.epoch_offset + e;
    const double lr = sgdr_lr(opt.schedule, epoch_pos);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < ds.size(); start += opt.batch_size) {
      const int bs = std::min(opt.batch_size, ds.size() - start);
      Tensor<Real> batch(bs, ds.images.h(), ds.images.w(), ds.images.c());
      std::vector<int> labels(bs);
      for (int i = 0; i < bs; ++i) {
        detail::place_sample(ds.images, order[start + i], batch, i, opt.augment,
                             rng);
        labels[i] = ds.labels[order[start + i]];
      }
      ForwardTrace<Real> trace;
      Tensor<Real> logits =
          forward(g, batch, RunMode::Train, &trace, opt.check_finite);
      LossResult<Real> loss = softmax_cross_entropy(logits, labels);
      auto grads = backward(g, trace, loss.grad_logits);
      for (auto& [id, ng] : grads) {
        LayerNode<Real>& n = g.node(id);
        if (n.kind == LayerKind::ConvBlock) {
          sgd_step(n.conv.w, ng.conv_w, lr, opt.weight_decay);
          sgd_step(n.bn.gamma, ng.bn_gamma, lr, 0.0);
          sgd_step(n.bn.beta, ng.bn_beta, lr, 0.0);
        } else if (n.kind == LayerKind::SoftmaxHead) {
          sgd_step(n.head.w, ng.head_w, lr, opt.weight_decay);
          sgd_step(n.head.b, ng.head_b, lr, 0.0);
        }
      }
      loss_sum += loss.loss;
      ++batches;
    }
    log.push_back({epoch_pos, lr, loss_sum / batches});
  }
  return log;
}

// Validation accuracy in [0,1]; inference mode, no augmentation.
template <class Real>
double evaluate(NetworkGraph<Real>& g, const Dataset<Real>& ds,
                int batch_size = 64) {
  if (ds.size() == 0) throw data_error("evaluate: empty dataset");
  int correct = 0;
  for (int start = 0; start < ds.size(); start += batch_size) {
    const int bs = std::min(batch_size, ds.size() - start);
    Tensor<Real> batch(bs, ds.images.h(), ds.images.w(), ds.images.c());
    for (int i = 0; i < bs; ++i) {
      const int src = start + i;
      const std::size_t base = ds.images.index(src, 0, 0, 0);
      const std::size_t per = ds.images.size() / ds.images.n();
      std::copy(ds.images.data.begin() + base, ds.images.data.begin() + base + per,
                batch.data.begin() + i * per);
    }
    Tensor<Real> logits = forward(g, batch, RunMode::Infer);
    for (int i = 0; i < bs; ++i) {
      const Real* z = &logits.at(i, 0, 0, 0);
      int best = 0;
      for (int j = 1; j < logits.c(); ++j)
        if (z[j] > z[best]) best = j;
      if (best == ds.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / ds.size();
}

}  // namespace eena

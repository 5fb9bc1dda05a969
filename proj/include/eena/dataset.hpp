#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "eena/train.hpp"

namespace eena {

struct SyntheticSpec {
  int classes = 4;
  int height = 16;
  int width = 16;
  int samples = 2000;
  std::uint64_t seed = 1;
  double noise = 0.9;  // additive Gaussian noise on top of the class texture
};

struct DatasetSpec {
  enum class Source { Synthetic, Idx } source = Source::Synthetic;
  SyntheticSpec synthetic;
  std::string images_path, labels_path;  // IDX source
  double validation_fraction = 0.2;
};

// ---------------------------------------------------------------------------
// Synthetic generator: class-dependent geometric textures (stripes, checker,
// gradient) with per-sample phase jitter and additive noise, deterministic
// per seed. Single channel.
// ---------------------------------------------------------------------------

template <class Real>
Dataset<Real> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.samples < spec.classes || spec.height <= 0 ||
      spec.width <= 0)
    throw data_error("synthetic: invalid spec");
  Rng rng(spec.seed);
  Dataset<Real> ds;
  ds.classes = spec.classes;
  ds.images = Tensor<Real>(spec.samples, spec.height, spec.width, 1);
  ds.labels.resize(spec.samples);
  for (int i = 0; i < spec.samples; ++i) {
    const int cls = i % spec.classes;
    ds.labels[i] = cls;
    const double phase = uniform_real(rng, 0.0, 2.0 * M_PI);
    const double freq = 0.8 + 0.15 * (cls / 4);
    std::normal_distribution<double> noise(0.0, spec.noise);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        double v = 0.0;
        switch (cls % 4) {
          case 0:  // horizontal stripes
            v = std::sin(freq * y + phase);
            break;
          case 1:  // vertical stripes
            v = std::sin(freq * x + phase);
            break;
          case 2:  // checker / spots
            v = std::sin(freq * y + phase) * std::sin(freq * x + phase);
            break;
          case 3: {  // diagonal gradient ramp
            const double t = (y + x) / double(spec.height + spec.width - 2);
            v = 2.0 * t - 1.0 + 0.4 * std::sin(phase);
            break;
          }
        }
        ds.images.at(i, y, x, 0) = static_cast<Real>(v + noise(rng));
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST-format) reader and writer. Big-endian magic 0x00000803 for
// images, 0x00000801 for labels.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw data_error("idx: unexpected end of file");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace detail

template <class Real>
Dataset<Real> read_idx(const std::string& images_path,
                       const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw data_error("idx: cannot open " + images_path);
  if (detail::read_u32_be(fi) != 0x00000803u)
    throw data_error("idx: bad image magic in " + images_path);
  const std::uint32_t n = detail::read_u32_be(fi);
  const std::uint32_t h = detail::read_u32_be(fi);
  const std::uint32_t w = detail::read_u32_be(fi);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  fi.read(reinterpret_cast<char*>(pixels.data()), pixels.size());
  if (!fi) throw data_error("idx: image file truncated: " + images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw data_error("idx: cannot open " + labels_path);
  if (detail::read_u32_be(fl) != 0x00000801u)
    throw data_error("idx: bad label magic in " + labels_path);
  const std::uint32_t ln = detail::read_u32_be(fl);
  if (ln != n)
    throw data_error("idx: image/label count mismatch (" + std::to_string(n) +
                     " vs " + std::to_string(ln) + ")");
  std::vector<unsigned char> labels(ln);
  fl.read(reinterpret_cast<char*>(labels.data()), labels.size());
  if (!fl) throw data_error("idx: label file truncated: " + labels_path);

  Dataset<Real> ds;
  ds.images = Tensor<Real>(n, h, w, 1);
  ds.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = labels[i];
    max_label = std::max(max_label, static_cast<int>(labels[i]));
  }
  ds.classes = max_label + 1;
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.images.data[i] = static_cast<Real>(pixels[i]) / Real(255);
  return ds;
}

template <class Real>
void write_idx(const Dataset<Real>& ds, const std::string& images_path,
               const std::string& labels_path) {
  if (ds.images.c() != 1) throw data_error("idx: writer supports 1 channel only");
  std::ofstream fi(images_path, std::ios::binary);
  detail::write_u32_be(fi, 0x00000803u);
  detail::write_u32_be(fi, ds.images.n());
  detail::write_u32_be(fi, ds.images.h());
  detail::write_u32_be(fi, ds.images.w());
  for (const Real v : ds.images.data) {
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
    fi.put(static_cast<char>(static_cast<int>(clamped * 255.0 + 0.5)));
  }
  std::ofstream fl(labels_path, std::ios::binary);
  detail::write_u32_be(fl, 0x00000801u);
  detail::write_u32_be(fl, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) fl.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// Stratified train/validation split and per-channel normalization computed
// on the training split only.
// ---------------------------------------------------------------------------

template <class Real>
struct SplitDataset {
  Dataset<Real> train, val;
  std::vector<double> channel_mean, channel_std;
};

template <class Real>
Dataset<Real> subset(const Dataset<Real>& ds, const std::vector<int>& idx) {
  Dataset<Real> out;
  out.classes = ds.classes;
  out.images = Tensor<Real>(static_cast<int>(idx.size()), ds.images.h(),
                            ds.images.w(), ds.images.c());
  out.labels.resize(idx.size());
  const std::size_t per = ds.images.size() / ds.images.n();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(ds.images.data.begin() + idx[i] * per,
              ds.images.data.begin() + (idx[i] + 1) * per,
              out.images.data.begin() + i * per);
    out.labels[i] = ds.labels[idx[i]];
  }
  return out;
}

template <class Real>
SplitDataset<Real> load_dataset(const DatasetSpec& spec) {
  if (spec.validation_fraction <= 0.0 || spec.validation_fraction >= 1.0)
    throw data_error("dataset: validation_fraction must lie in (0, 1)");
  Dataset<Real> full = spec.source == DatasetSpec::Source::Synthetic
                           ? generate_synthetic<Real>(spec.synthetic)
                           : read_idx<Real>(spec.images_path, spec.labels_path);

  // Stratified split: per class, a seeded shuffle then the leading fraction
  // goes to validation.
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < full.size(); ++i) by_class[full.labels[i]].push_back(i);
  Rng rng(spec.source == DatasetSpec::Source::Synthetic ? spec.synthetic.seed + 1
                                                        : 12345);
  std::vector<int> train_idx, val_idx;
  for (auto& [cls, indices] : by_class) {
    const int want = static_cast<int>(indices.size() * spec.validation_fraction +
                                      0.5);
    if (want < 1 || want >= static_cast<int>(indices.size()))
      throw data_error("dataset: class " + std::to_string(cls) +
                       " has too few samples for the validation split");
    std::shuffle(indices.begin(), indices.end(), rng);
    val_idx.insert(val_idx.end(), indices.begin(), indices.begin() + want);
    train_idx.insert(train_idx.end(), indices.begin() + want, indices.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  SplitDataset<Real> out;
  out.train = subset(full, train_idx);
  out.val = subset(full, val_idx);

  // Channel statistics from the training split.
  const int c = out.train.images.c();
  out.channel_mean.assign(c, 0.0);
  out.channel_std.assign(c, 0.0);
  const std::size_t m = out.train.images.size() / c;
  for (std::size_t i = 0; i < out.train.images.size(); i += c)
    for (int ch = 0; ch < c; ++ch)
      out.channel_mean[ch] += out.train.images.data[i + ch];
  for (int ch = 0; ch < c; ++ch) out.channel_mean[ch] /= static_cast<double>(m);
  for (std::size_t i = 0; i < out.train.images.size(); i += c)
    for (int ch = 0; ch < c; ++ch) {
      const double d = out.train.images.data[i + ch] - out.channel_mean[ch];
      out.channel_std[ch] += d * d;
    }
  for (int ch = 0; ch < c; ++ch)
    out.channel_std[ch] = std::sqrt(out.channel_std[ch] / m);

  auto normalize = [&](Dataset<Real>& ds) {
    for (std::size_t i = 0; i < ds.images.size(); i += c)
      for (int ch = 0; ch < c; ++ch)
        ds.images.data[i + ch] = static_cast<Real>(
            (ds.images.data[i + ch] - out.channel_mean[ch]) /
            (out.channel_std[ch] > 0 ? out.channel_std[ch] : 1.0));
  };
  normalize(out.train);
  normalize(out.val);
  return out;
}

}  // namespace eena

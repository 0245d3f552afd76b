#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vqdraw/tensor.hpp"

namespace vqdraw {

// 1-based: stages 1..sps fall in segment 1.
inline int segment_index(int stage, int stages_per_segment) {
  if (stage < 1) throw ShapeError("segment_index: stage must be >= 1");
  if (stages_per_segment < 1)
    throw ShapeError("segment_index: stages_per_segment must be >= 1");
  return (stage - 1) / stages_per_segment + 1;
}

struct RefinerConfig {
  std::string arch = "cnn";  // "dense" | "cnn"
  int options = 64;          // K
  int stages = 10;           // N
  int stages_per_segment = 10;
  Shape data_shape = {1, 28, 28};  // {D} for dense, {C,H,W} for cnn

  int hidden = 64;    // dense hidden width
  int channels = 64;  // cnn feature channels
  int res_blocks = 4;
  int gn_groups = 8;
  std::uint64_t init_seed = 0;

  int num_segments() const {
    return (stages + stages_per_segment - 1) / stages_per_segment;
  }
  int stages_in_segment(int seg0) const {  // 0-based segment
    const int first = seg0 * stages_per_segment;
    return std::min(stages_per_segment, stages - first);
  }

  void validate() const {
    if (options < 1) throw ShapeError("config: options (K) must be >= 1");
    if (stages < 1) throw ShapeError("config: stages (N) must be >= 1");
    if (stages_per_segment < 1 || stages_per_segment > stages)
      throw ShapeError("config: stages_per_segment must be in [1, stages]");
    if (arch == "dense") {
      if (data_shape.size() != 1)
        throw ShapeError("config: dense arch needs flat data shape, got " +
                         shape_str(data_shape));
      if (hidden < 1) throw ShapeError("config: hidden width must be >= 1");
    } else if (arch == "cnn") {
      if (data_shape.size() != 3)
        throw ShapeError("config: cnn arch needs CxHxW data shape, got " +
                         shape_str(data_shape));
      if (data_shape[1] % 4 != 0 || data_shape[2] % 4 != 0)
        throw ShapeError("config: spatial dims " + shape_str(data_shape) +
                         " not divisible by downsampling factor 4");
      if (channels % gn_groups != 0)
        throw ShapeError("config: gn_groups " + std::to_string(gn_groups) +
                         " does not divide channels " + std::to_string(channels));
      if (res_blocks < 0) throw ShapeError("config: res_blocks must be >= 0");
    } else {
      throw ShapeError("config: unknown arch '" + arch + "'");
    }
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Proposes K refinements of the current reconstruction at a given stage.
// Parameters are read-shared during evaluation; optimizer steps mutate them
// with exclusive access.
template <typename T>
class Refiner {
 public:
  virtual ~Refiner() = default;

  // Returns exactly K tensors, each shaped like x_prime, formed as
  // x_prime + delta_j. stage is 1-based.
  virtual std::vector<Tensor<T>> refine(const Tensor<T>& x_prime,
                                        int stage) const = 0;

  const RefinerConfig& config() const { return config_; }
  std::vector<NamedParam<T>>& parameters() { return params_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }

 protected:
  explicit Refiner(RefinerConfig cfg) : config_(std::move(cfg)) {}

  Tensor<T> add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
  }

  void check_refine_args(const Tensor<T>& x_prime, int stage) const {
    if (x_prime.shape() != config_.data_shape)
      throw ShapeError("refine: input " + shape_str(x_prime.shape()) +
                       " does not match data shape " +
                       shape_str(config_.data_shape));
    if (stage < 1 || stage > config_.stages)
      throw ShapeError("refine: stage " + std::to_string(stage) +
                       " out of range [1," + std::to_string(config_.stages) + "]");
  }

  RefinerConfig config_;
  std::vector<NamedParam<T>> params_;
};

// ---------------------------------------------------------------------------
// Shared init helpers. All random draws happen in double so float and double
// builds from the same seed hold the same values.

namespace detail {

template <typename T>
std::vector<T> uniform_init(std::mt19937_64& rng, long n, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> out(n);
  for (T& x : out) x = (T)dist(rng);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense refiner: two masked hidden layers, residual head. Used for flat
// low-dimensional data and fast tests.

template <typename T>
class DenseRefiner : public Refiner<T> {
 public:
  explicit DenseRefiner(RefinerConfig cfg) : Refiner<T>(std::move(cfg)) {
    const auto& c = this->config_;
    c.validate();
    std::mt19937_64 rng(c.init_seed);
    const int d = c.data_shape[0], h = c.hidden, k = c.options;
    segments_.resize(c.num_segments());
    for (int s = 0; s < c.num_segments(); ++s) {
      auto& seg = segments_[s];
      const std::string p = "seg" + std::to_string(s) + ".";
      seg.w1 = this->add_param(
          p + "w1", Tensor<T>::from_data(
                        {h, d}, detail::uniform_init<T>(rng, (long)h * d,
                                                        1.0 / std::sqrt(d))));
      seg.b1 = this->add_param(p + "b1", Tensor<T>::zeros({h}));
      seg.w2 = this->add_param(
          p + "w2", Tensor<T>::from_data(
                        {h, h}, detail::uniform_init<T>(rng, (long)h * h,
                                                        1.0 / std::sqrt(h))));
      seg.b2 = this->add_param(p + "b2", Tensor<T>::zeros({h}));
      seg.wh = this->add_param(
          p + "head.w",
          Tensor<T>::from_data({k * d, h},
                               detail::uniform_init<T>(rng, (long)k * d * h,
                                                       0.1 / std::sqrt(h))));
      seg.bh = this->add_param(p + "head.b", Tensor<T>::zeros({k * d}));
      for (int t = 0; t < c.stages_in_segment(s); ++t) {
        const int stage = s * c.stages_per_segment + t + 1;
        seg.mask1.push_back(this->add_param(
            p + "mask1.stage" + std::to_string(stage), Tensor<T>::full({h}, T(1))));
        seg.mask2.push_back(this->add_param(
            p + "mask2.stage" + std::to_string(stage), Tensor<T>::full({h}, T(1))));
      }
    }
  }

  std::vector<Tensor<T>> refine(const Tensor<T>& x_prime,
                                int stage) const override {
    this->check_refine_args(x_prime, stage);
    const auto& c = this->config_;
    const int s = segment_index(stage, c.stages_per_segment) - 1;
    const int local = (stage - 1) - s * c.stages_per_segment;
    const auto& seg = segments_[s];
    auto h1 = relu(mask_channels(add(matmul(seg.w1, x_prime), seg.b1),
                                 seg.mask1[local]));
    auto h2 = relu(mask_channels(add(matmul(seg.w2, h1), seg.b2),
                                 seg.mask2[local]));
    auto head = add(matmul(seg.wh, h2), seg.bh);
    const int d = c.data_shape[0];
    std::vector<Tensor<T>> out;
    out.reserve(c.options);
    for (int j = 0; j < c.options; ++j)
      out.push_back(add(x_prime, slice0(head, j * d, d)));
    return out;
  }

 private:
  struct Segment {
    Tensor<T> w1, b1, w2, b2, wh, bh;
    std::vector<Tensor<T>> mask1, mask2;
  };
  std::vector<Segment> segments_;
};

// ---------------------------------------------------------------------------
// CNN refiner: stride-2 convolutions down, residual blocks at the bottleneck,
// transposed convolutions back up, 1x1 head emitting K*C channels. Every
// convolution-type layer (head and transposed ones included) is followed by a
// per-stage channel mask; group normalization follows every relu.

template <typename T>
class CnnRefiner : public Refiner<T> {
 public:
  explicit CnnRefiner(RefinerConfig cfg) : Refiner<T>(std::move(cfg)) {
    const auto& c = this->config_;
    c.validate();
    std::mt19937_64 rng(c.init_seed);
    const int ch = c.channels;
    const int kc = c.options * c.data_shape[0];
    segments_.resize(c.num_segments());
    for (int s = 0; s < c.num_segments(); ++s) {
      auto& seg = segments_[s];
      const std::string p = "seg" + std::to_string(s) + ".";
      seg.down1 = make_conv(rng, p + "down1", c.data_shape[0], ch, 3, 2, 1, s,
                            /*norm=*/true, 1.0);
      seg.down2 = make_conv(rng, p + "down2", ch, ch, 3, 2, 1, s, true, 1.0);
      for (int r = 0; r < c.res_blocks; ++r) {
        const std::string rp = p + "res" + std::to_string(r) + ".";
        ResBlock blk;
        blk.c1 = make_conv(rng, rp + "c1", ch, ch, 3, 1, 1, s, true, 1.0);
        blk.c2 = make_conv(rng, rp + "c2", ch, ch, 3, 1, 1, s, false, 1.0);
        blk.post_gamma = this->add_param(rp + "post.gamma", Tensor<T>::full({ch}, T(1)));
        blk.post_beta = this->add_param(rp + "post.beta", Tensor<T>::zeros({ch}));
        seg.blocks.push_back(std::move(blk));
      }
      seg.up1 = make_tconv(rng, p + "up1", ch, ch, 4, 2, 1, s);
      seg.up2 = make_tconv(rng, p + "up2", ch, ch, 4, 2, 1, s);
      seg.head = make_conv(rng, p + "head", ch, kc, 1, 1, 0, s, false, 0.1);
    }
  }

  std::vector<Tensor<T>> refine(const Tensor<T>& x_prime,
                                int stage) const override {
    this->check_refine_args(x_prime, stage);
    const auto& c = this->config_;
    const int s = segment_index(stage, c.stages_per_segment) - 1;
    const int local = (stage - 1) - s * c.stages_per_segment;
    const auto& seg = segments_[s];

    auto h = apply_conv(seg.down1, x_prime, local);
    h = apply_conv(seg.down2, h, local);
    for (const auto& blk : seg.blocks) {
      auto t = apply_conv(blk.c1, h, local);
      t = apply_conv(blk.c2, t, local);
      h = group_norm(relu(add(h, t)), blk.post_gamma, blk.post_beta,
                     c.gn_groups);
    }
    h = apply_conv(seg.up1, h, local);
    h = apply_conv(seg.up2, h, local);
    auto head = apply_conv(seg.head, h, local);

    const int ch = c.data_shape[0];
    std::vector<Tensor<T>> out;
    out.reserve(c.options);
    for (int j = 0; j < c.options; ++j)
      out.push_back(add(x_prime, slice0(head, j * ch, ch)));
    return out;
  }

 private:
  struct ConvLayer {
    Tensor<T> w, b, gamma, beta;
    std::vector<Tensor<T>> masks;  // one per stage handled by the segment
    bool transposed = false;
    bool norm = false;
    int stride = 1, pad = 0;
  };
  struct ResBlock {
    ConvLayer c1, c2;
    Tensor<T> post_gamma, post_beta;
  };
  struct Segment {
    ConvLayer down1, down2;
    std::vector<ResBlock> blocks;
    ConvLayer up1, up2, head;
  };

  ConvLayer make_conv(std::mt19937_64& rng, const std::string& name, int cin,
                      int cout, int k, int stride, int pad, int seg, bool norm,
                      double gain) {
    ConvLayer L;
    L.stride = stride;
    L.pad = pad;
    L.norm = norm;
    const double bound = gain / std::sqrt((double)cin * k * k);
    L.w = this->add_param(
        name + ".w", Tensor<T>::from_data(
                         {cout, cin, k, k},
                         detail::uniform_init<T>(rng, (long)cout * cin * k * k,
                                                 bound)));
    L.b = this->add_param(name + ".b", Tensor<T>::zeros({cout}));
    if (norm) {
      L.gamma = this->add_param(name + ".gamma", Tensor<T>::full({cout}, T(1)));
      L.beta = this->add_param(name + ".beta", Tensor<T>::zeros({cout}));
    }
    add_masks(L, name, cout, seg);
    return L;
  }

  ConvLayer make_tconv(std::mt19937_64& rng, const std::string& name, int cin,
                       int cout, int k, int stride, int pad, int seg) {
    ConvLayer L;
    L.transposed = true;
    L.stride = stride;
    L.pad = pad;
    L.norm = true;
    const double bound = 1.0 / std::sqrt((double)cin * k * k);
    L.w = this->add_param(
        name + ".w", Tensor<T>::from_data(
                         {cin, cout, k, k},
                         detail::uniform_init<T>(rng, (long)cin * cout * k * k,
                                                 bound)));
    L.b = this->add_param(name + ".b", Tensor<T>::zeros({cout}));
    L.gamma = this->add_param(name + ".gamma", Tensor<T>::full({cout}, T(1)));
    L.beta = this->add_param(name + ".beta", Tensor<T>::zeros({cout}));
    add_masks(L, name, cout, seg);
    return L;
  }

  void add_masks(ConvLayer& L, const std::string& name, int cout, int seg) {
    const auto& c = this->config_;
    for (int t = 0; t < c.stages_in_segment(seg); ++t) {
      const int stage = seg * c.stages_per_segment + t + 1;
      L.masks.push_back(this->add_param(
          name + ".mask.stage" + std::to_string(stage),
          Tensor<T>::full({cout}, T(1))));
    }
  }

  Tensor<T> apply_conv(const ConvLayer& L, const Tensor<T>& x, int local) const {
    auto y = L.transposed ? conv_transpose2d(x, L.w, L.stride, L.pad)
                          : conv2d(x, L.w, L.stride, L.pad);
    y = mask_channels(add_channel(y, L.b), L.masks[local]);
    if (L.norm)
      y = group_norm(relu(y), L.gamma, L.beta,
                     std::min(this->config_.gn_groups, y.shape()[0]));
    return y;
  }

  std::vector<Segment> segments_;
};

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Refiner<T>> build_dense_refiner(const RefinerConfig& cfg) {
  return std::make_unique<DenseRefiner<T>>(cfg);
}

template <typename T>
std::unique_ptr<Refiner<T>> build_cnn_refiner(const RefinerConfig& cfg) {
  return std::make_unique<CnnRefiner<T>>(cfg);
}

template <typename T>
std::unique_ptr<Refiner<T>> build_refiner(const RefinerConfig& cfg) {
  cfg.validate();
  if (cfg.arch == "dense") return build_dense_refiner<T>(cfg);
  return build_cnn_refiner<T>(cfg);
}

// Copies parameter values by name; shapes must agree.
template <typename T>
void copy_parameters(const Refiner<T>& src, Refiner<T>& dst) {
  const auto& sp = src.parameters();
  auto& dp = dst.parameters();
  if (sp.size() != dp.size())
    throw ShapeError("copy_parameters: parameter count mismatch");
  for (size_t i = 0; i < sp.size(); ++i) {
    if (sp[i].name != dp[i].name || sp[i].tensor.shape() != dp[i].tensor.shape())
      throw ShapeError("copy_parameters: mismatch at '" + sp[i].name + "'");
    dp[i].tensor.data() = sp[i].tensor.values();
  }
}

template <typename T>
std::unique_ptr<Refiner<T>> clone_refiner(const Refiner<T>& src) {
  auto dst = build_refiner<T>(src.config());
  copy_parameters(src, *dst);
  return dst;
}

}  // namespace vqdraw

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "vqdraw/refiner.hpp"
#include "vqdraw/tensor.hpp"

namespace vqdraw {

// Ordered choice sequence; indices are 1-based in [1, options].
struct LatentCode {
  int options = 0;  // K
  std::vector<int> indices;

  int stages() const { return (int)indices.size(); }
  bool operator==(const LatentCode&) const = default;
};

template <typename T>
struct StageTrace {
  std::vector<Tensor<T>> option_losses;  // K scalar nodes
  int chosen = 0;                        // 1-based
  Tensor<T> reconstruction;              // after this stage
};

template <typename T>
struct EncodeTrace {
  std::vector<StageTrace<T>> stages;
  Tensor<T> final_reconstruction;

  LatentCode code(int options) const {
    LatentCode c;
    c.options = options;
    for (const auto& s : stages) c.indices.push_back(s.chosen);
    return c;
  }
};

namespace detail {

// Shared stage loop; chooser picks the 1-based index from the K losses.
template <typename T, typename Chooser>
EncodeTrace<T> run_stages(const Tensor<T>& target, const Refiner<T>& refiner,
                          Chooser&& choose, bool record_losses) {
  const auto& cfg = refiner.config();
  if (target.shape() != cfg.data_shape)
    throw ShapeError("encode: input " + shape_str(target.shape()) +
                     " does not match data shape " + shape_str(cfg.data_shape));
  EncodeTrace<T> trace;
  Tensor<T> recon = Tensor<T>::zeros(cfg.data_shape);
  for (int stage = 1; stage <= cfg.stages; ++stage) {
    auto options = refiner.refine(recon, stage);
    StageTrace<T> st;
    if (record_losses) {
      st.option_losses.reserve(options.size());
      for (int j = 0; j < (int)options.size(); ++j) {
        auto loss = mse(options[j], target);
        if (!std::isfinite((double)loss.value()))
          throw NumericError("encode: non-finite loss at stage " +
                             std::to_string(stage) + ", option " +
                             std::to_string(j + 1));
        st.option_losses.push_back(std::move(loss));
      }
    }
    st.chosen = choose(stage, st.option_losses, options);
    recon = options[st.chosen - 1];
    st.reconstruction = recon;
    trace.stages.push_back(std::move(st));
  }
  trace.final_reconstruction = recon;
  return trace;
}

}  // namespace detail

// Greedy encoding: at each stage pick the option with the smallest
// mean-squared error against the target; ties break toward the smallest
// index. Run under NoGradGuard for inference; with gradients enabled the
// trace keeps all K per-stage loss nodes differentiable (the chosen indices
// are plain constants).
template <typename T>
EncodeTrace<T> encode(const Tensor<T>& x, const Refiner<T>& refiner) {
  return detail::run_stages(
      x, refiner,
      [](int, const std::vector<Tensor<T>>& losses,
         const std::vector<Tensor<T>>&) {
        int best = 1;
        T best_loss = losses[0].value();
        for (int j = 1; j < (int)losses.size(); ++j) {
          const T l = losses[j].value();
          if (l < best_loss) {
            best_loss = l;
            best = j + 1;
          }
        }
        return best;
      },
      /*record_losses=*/true);
}

// Same stage loop with the choice sequence frozen; the finite-difference
// oracle evaluates the training loss through this.
template <typename T>
EncodeTrace<T> encode_with_choices(const Tensor<T>& x, const Refiner<T>& refiner,
                                   const LatentCode& code) {
  const auto& cfg = refiner.config();
  if (code.stages() != cfg.stages || code.options != cfg.options)
    throw ShapeError("encode_with_choices: code (K=" +
                     std::to_string(code.options) + ", N=" +
                     std::to_string(code.stages()) + ") does not match refiner");
  return detail::run_stages(
      x, refiner,
      [&code](int stage, const std::vector<Tensor<T>>&,
              const std::vector<Tensor<T>>&) { return code.indices[stage - 1]; },
      /*record_losses=*/true);
}

template <typename T>
Tensor<T> decode(const LatentCode& code, const Refiner<T>& refiner) {
  const auto& cfg = refiner.config();
  if (code.stages() != cfg.stages)
    throw ShapeError("decode: code has " + std::to_string(code.stages()) +
                     " stages, refiner expects " + std::to_string(cfg.stages));
  for (int c : code.indices)
    if (c < 1 || c > cfg.options)
      throw ShapeError("decode: index " + std::to_string(c) + " out of [1," +
                       std::to_string(cfg.options) + "]");
  Tensor<T> recon = Tensor<T>::zeros(cfg.data_shape);
  for (int stage = 1; stage <= cfg.stages; ++stage)
    recon = refiner.refine(recon, stage)[code.indices[stage - 1] - 1];
  return recon;
}

inline LatentCode sample_code(int stages, int options, std::mt19937_64& rng) {
  LatentCode code;
  code.options = options;
  std::uniform_int_distribution<int> dist(1, options);
  for (int i = 0; i < stages; ++i) code.indices.push_back(dist(rng));
  return code;
}

// Uniform-prior sampling: draw each index uniformly and decode.
template <typename T>
Tensor<T> sample(const Refiner<T>& refiner, std::mt19937_64& rng) {
  const auto& cfg = refiner.config();
  return decode(sample_code(cfg.stages, cfg.options, rng), refiner);
}

}  // namespace vqdraw

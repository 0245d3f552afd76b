#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vqdraw/codec.hpp"
#include "vqdraw/refiner.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vqdraw {

struct TrainConfig {
  double alpha = 0.01;  // unchosen-loss weight
  int batch_size = 32;
  int micro_batch = 32;
  long steps = 0;
  double lr = 1e-3;  // fixed step size, no schedule
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (alpha < 0) throw ShapeError("train config: alpha must be >= 0");
    if (batch_size < 1 || micro_batch < 1 || batch_size % micro_batch != 0)
      throw ShapeError("train config: micro_batch must divide batch_size");
    if (lr <= 0) throw ShapeError("train config: lr must be positive");
  }
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long step = 0;
};

struct MetricsRow {
  long step = 0;
  double l_chosen = 0, l_all = 0, l_total = 0;
  double entropy = 0;         // mean per-stage entropy (canonical)
  double entropy_pooled = 0;  // all stages pooled
  double seconds = 0;
  bool applied = true;  // false when a non-finite loss aborted the step
};

// Wall time stays out of the CSV so identical seeds produce byte-identical
// files.
inline std::string metrics_csv_header() {
  return "step,l_chosen,l_all,l_total,entropy,entropy_pooled";
}

inline std::string to_csv_row(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.l_chosen << ',' << r.l_all << ',' << r.l_total << ','
     << r.entropy << ',' << r.entropy_pooled;
  return os.str();
}

// ---------------------------------------------------------------------------
// Composite loss over an encode trace:
//   l_chosen = (1/N)  sum_i L(R_{i,c_i}, X)
//   l_all    = (1/NK) sum_i sum_j L(R_{i,j}, X)
//   l_total  = l_chosen + alpha * l_all

template <typename T>
struct LossParts {
  Tensor<T> total;
  double chosen = 0, all = 0;
};

template <typename T>
LossParts<T> loss_total(const EncodeTrace<T>& trace, double alpha) {
  if (trace.stages.empty() || trace.stages[0].option_losses.empty())
    throw std::invalid_argument("loss_total: trace carries no option losses");
  if (grad_enabled() && !trace.stages[0].option_losses[0].requires_grad())
    throw std::invalid_argument(
        "loss_total: trace was produced without a retained graph");
  const int n = (int)trace.stages.size();
  const int k = (int)trace.stages[0].option_losses.size();
  Tensor<T> chosen_sum, all_sum;
  for (const auto& st : trace.stages) {
    const auto& chosen = st.option_losses[st.chosen - 1];
    chosen_sum = chosen_sum.defined() ? add(chosen_sum, chosen) : chosen;
    for (const auto& l : st.option_losses)
      all_sum = all_sum.defined() ? add(all_sum, l) : l;
  }
  auto l_chosen = scale(chosen_sum, T(1) / T(n));
  auto l_all = scale(all_sum, T(1) / T((long)n * k));
  LossParts<T> parts;
  parts.total = add(l_chosen, scale(l_all, (T)alpha));
  parts.chosen = (double)l_chosen.value();
  parts.all = (double)l_all.value();
  return parts;
}

// ---------------------------------------------------------------------------
// Bias-corrected Adam.

template <typename T>
void adam_step(std::vector<NamedParam<T>>& params,
               const std::vector<std::vector<T>>& grads, AdamState<T>& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, (double)state.step);
  const double bc2 = 1.0 - std::pow(beta2, (double)state.step);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor.data();
    if (grads[i].size() != w.size())
      throw ShapeError("adam_step: gradient shape mismatch at '" +
                       params[i].name + "'");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      const double g = (double)grads[i][j];
      m[j] = (T)(beta1 * (double)m[j] + (1.0 - beta1) * g);
      v[j] = (T)(beta2 * (double)v[j] + (1.0 - beta2) * g * g);
      const double mhat = (double)m[j] / bc1;
      const double vhat = (double)v[j] / bc2;
      w[j] = (T)((double)w[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch entropy diagnostic: empirical natural-log entropy of the chosen
// indices, per stage, plus the stage mean (canonical) and the pooled variant.

struct EntropyReport {
  std::vector<double> per_stage;
  double mean = 0;
  double pooled = 0;
};

inline EntropyReport batch_entropy(const std::vector<LatentCode>& codes) {
  EntropyReport rep;
  if (codes.empty()) throw std::invalid_argument("batch_entropy: no traces");
  const int n = codes[0].stages();
  const int k = codes[0].options;
  const double bsz = (double)codes.size();
  auto entropy_of = [](const std::vector<long>& counts, double total) {
    double h = 0;
    for (long c : counts)
      if (c > 0) {
        const double p = c / total;
        h -= p * std::log(p);
      }
    return h;
  };
  std::vector<long> pooled_counts(k, 0);
  for (int i = 0; i < n; ++i) {
    std::vector<long> counts(k, 0);
    for (const auto& code : codes) {
      ++counts[code.indices[i] - 1];
      ++pooled_counts[code.indices[i] - 1];
    }
    rep.per_stage.push_back(entropy_of(counts, bsz));
    rep.mean += rep.per_stage.back();
  }
  rep.mean /= n;
  rep.pooled = entropy_of(pooled_counts, bsz * n);
  return rep;
}

// ---------------------------------------------------------------------------
// Trainer: micro-batched gradient accumulation over the greedy encode,
// one Adam update per step. Per-example encodes may run concurrently; the
// accumulation reduces in example order so results do not depend on the
// thread count.

template <typename T>
class Trainer {
 public:
  Trainer(std::unique_ptr<Refiner<T>> refiner, TrainConfig cfg)
      : refiner_(std::move(refiner)), cfg_(cfg) {
    cfg_.validate();
  }

  Refiner<T>& refiner() { return *refiner_; }
  const Refiner<T>& refiner() const { return *refiner_; }
  TrainConfig& config() { return cfg_; }
  AdamState<T>& adam() { return adam_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  MetricsRow train_step(const std::vector<Tensor<T>>& batch) {
    const auto t0 = std::chrono::steady_clock::now();
    const int bsz = (int)batch.size();
    if (bsz < 1 || bsz % cfg_.micro_batch != 0)
      throw ShapeError("train_step: batch size " + std::to_string(bsz) +
                       " not a multiple of micro_batch " +
                       std::to_string(cfg_.micro_batch));

    auto& params = refiner_->parameters();
    std::vector<std::vector<T>> accum;
    for (const auto& p : params) accum.emplace_back(p.tensor.numel(), T(0));

    std::vector<std::vector<std::vector<T>>> per_example(bsz);
    std::vector<double> chosen(bsz, 0), all(bsz, 0);
    std::vector<LatentCode> codes(bsz);
    std::vector<std::string> incidents(bsz);

    sync_workers();
    for (int mb = 0; mb < bsz; mb += cfg_.micro_batch) {
#pragma omp parallel for schedule(static)
      for (int b = mb; b < mb + cfg_.micro_batch; ++b) {
        Refiner<T>& net = worker();
        try {
          auto trace = encode(batch[b], net);
          auto parts = loss_total(trace, cfg_.alpha);
          if (!std::isfinite((double)parts.total.value()))
            throw NumericError("non-finite total loss");
          parts.total.backward();
          auto& ps = net.parameters();
          per_example[b].resize(ps.size());
          for (size_t i = 0; i < ps.size(); ++i) {
            per_example[b][i] = ps[i].tensor.has_grad()
                                    ? ps[i].tensor.grad()
                                    : std::vector<T>(ps[i].tensor.numel(), T(0));
            ps[i].tensor.zero_grad();
          }
          chosen[b] = parts.chosen;
          all[b] = parts.all;
          codes[b] = trace.code(refiner_->config().options);
        } catch (const NumericError& e) {
          incidents[b] = e.what();
        }
      }
    }

    MetricsRow row;
    row.step = step_;
    for (int b = 0; b < bsz; ++b) {
      if (!incidents[b].empty()) {
        // Step aborted: parameters stay untouched.
        last_incident_ = "step " + std::to_string(step_) + ", example " +
                         std::to_string(b) + ": " + incidents[b];
        row.applied = false;
        row.seconds = elapsed(t0);
        ++step_;
        return row;
      }
      for (size_t i = 0; i < accum.size(); ++i)
        for (size_t j = 0; j < accum[i].size(); ++j)
          accum[i][j] += per_example[b][i][j];
      row.l_chosen += chosen[b];
      row.l_all += all[b];
    }
    for (auto& g : accum)
      for (T& x : g) x /= (T)bsz;
    row.l_chosen /= bsz;
    row.l_all /= bsz;
    row.l_total = row.l_chosen + cfg_.alpha * row.l_all;
    const auto ent = batch_entropy(codes);
    row.entropy = ent.mean;
    row.entropy_pooled = ent.pooled;

    adam_step(params, accum, adam_, cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
    ++step_;
    row.seconds = elapsed(t0);
    return row;
  }

  // Mean l_chosen over a held-out set, no graph kept.
  double evaluate(const std::vector<Tensor<T>>& examples) {
    NoGradGuard ng;
    const int n = (int)refiner_->config().stages;
    double total = 0;
    for (const auto& x : examples) {
      auto trace = encode(x, *refiner_);
      double s = 0;
      for (const auto& st : trace.stages)
        s += (double)st.option_losses[st.chosen - 1].value();
      total += s / n;
    }
    return total / (double)examples.size();
  }

  const std::string& last_incident() const { return last_incident_; }

 private:
  static double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }

  Refiner<T>& worker() {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
    if (tid == 0) return *refiner_;
    return *workers_[tid - 1];
#else
    return *refiner_;
#endif
  }

  void sync_workers() {
#ifdef _OPENMP
    const int extra = omp_get_max_threads() - 1;
    while ((int)workers_.size() < extra)
      workers_.push_back(build_refiner<T>(refiner_->config()));
    for (auto& w : workers_) copy_parameters(*refiner_, *w);
#endif
  }

  std::unique_ptr<Refiner<T>> refiner_;
  std::vector<std::unique_ptr<Refiner<T>>> workers_;
  TrainConfig cfg_;
  AdamState<T> adam_;
  long step_ = 0;
  std::string last_incident_;
};

}  // namespace vqdraw

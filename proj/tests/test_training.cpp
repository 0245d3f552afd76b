#include <cmath>
#include <random>

#include "doctest.h"
#include "vqdraw/grad_check.hpp"
#include "vqdraw/training.hpp"

using namespace vqdraw;

namespace {

// One fixed learnable delta per option; every loss term is hand-computable.
template <typename T>
struct ParamDeltaRefiner : Refiner<T> {
  std::vector<Tensor<T>> deltas;

  ParamDeltaRefiner(int stages, std::vector<T> d)
      : Refiner<T>(make_config(stages, (int)d.size())) {
    for (size_t j = 0; j < d.size(); ++j)
      deltas.push_back(this->add_param(
          "delta" + std::to_string(j),
          Tensor<T>::from_data({1}, {d[j]})));
  }

  static RefinerConfig make_config(int stages, int options) {
    RefinerConfig cfg;
    cfg.arch = "dense";
    cfg.data_shape = {1};
    cfg.options = options;
    cfg.stages = stages;
    cfg.stages_per_segment = stages;
    return cfg;
  }

  std::vector<Tensor<T>> refine(const Tensor<T>& x, int stage) const override {
    this->check_refine_args(x, stage);
    std::vector<Tensor<T>> out;
    for (const auto& d : deltas) out.push_back(add(x, d));
    return out;
  }
};

RefinerConfig tiny_dense(int options, int stages, unsigned seed) {
  RefinerConfig cfg;
  cfg.arch = "dense";
  cfg.data_shape = {3};
  cfg.options = options;
  cfg.stages = stages;
  cfg.stages_per_segment = stages;
  cfg.hidden = 4;
  cfg.init_seed = seed;
  return cfg;
}

template <typename T>
Tensor<T> random_input(const Shape& shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = (T)d(rng);
  return Tensor<T>::from_data(shape, v);
}

template <typename T>
std::vector<std::vector<T>> snapshot(const Refiner<T>& r) {
  std::vector<std::vector<T>> out;
  for (const auto& p : r.parameters()) out.push_back(p.tensor.values());
  return out;
}

}  // namespace

TEST_CASE("loss parts match hand arithmetic on the 1-d toy") {
  // target 0.9, deltas {1.0, 0.5}: stage 1 losses {0.01, 0.16}, chosen 1;
  // stage 2 losses {1.21, 0.36}, chosen 2.
  ParamDeltaRefiner<double> r(2, {1.0, 0.5});
  auto trace = encode(Tensor<double>::from_data({1}, {0.9}), r);
  auto parts = loss_total(trace, 0.01);
  CHECK(parts.chosen == doctest::Approx((0.01 + 0.36) / 2).epsilon(1e-12));
  CHECK(parts.all ==
        doctest::Approx((0.01 + 0.16 + 1.21 + 0.36) / 4).epsilon(1e-12));
  CHECK(parts.total.value() ==
        doctest::Approx(parts.chosen + 0.01 * parts.all).epsilon(1e-12));
}

TEST_CASE("K=1 collapses the composite loss to (1+alpha) * chosen") {
  ParamDeltaRefiner<double> r(3, {0.4});
  auto trace = encode(Tensor<double>::from_data({1}, {0.9}), r);
  auto parts = loss_total(trace, 0.25);
  CHECK(parts.all == doctest::Approx(parts.chosen).epsilon(1e-12));
  CHECK(parts.total.value() ==
        doctest::Approx(1.25 * parts.chosen).epsilon(1e-12));
}

TEST_CASE("loss_total refuses a graph-free trace once grad mode resumes") {
  ParamDeltaRefiner<float> r(2, {1.0f, 0.5f});
  auto trace = [&] {
    NoGradGuard ng;
    return encode(Tensor<float>::from_data({1}, {0.9f}), r);
  }();
  CHECK_THROWS_AS(loss_total(trace, 0.01), std::invalid_argument);
}

TEST_CASE("composite loss gradient matches finite differences") {
  auto r = build_refiner<double>(tiny_dense(3, 2, 17));
  auto x = random_input<double>({3}, 18);
  const auto code = [&] {
    NoGradGuard ng;
    return encode(x, *r).code(3);
  }();
  auto f = [&]() {
    return loss_total(encode_with_choices(x, *r, code), 0.01).total;
  };
  std::vector<Tensor<double>> params;
  for (auto& p : r->parameters()) params.push_back(p.tensor);
  auto report = grad_check(f, params, 1e-5, 1e-6);
  INFO("max rel error ", report.max_rel_error, " excluded ", report.excluded);
  CHECK(report.non_finite.empty());
  CHECK(report.checked > 0);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("alpha keeps never-chosen options learning") {
  // With zero-initialized biases every stage ties to option 1, so option 2's
  // head slice sees gradient only through the all-options term.
  auto run = [](double alpha) {
    auto r = build_refiner<double>(tiny_dense(2, 2, 31));
    auto x = Tensor<double>::from_data({3}, {0.6, -0.2, 0.9});
    auto trace = encode(x, *r);
    for (const auto& st : trace.stages) REQUIRE(st.chosen == 1);
    loss_total(trace, alpha).total.backward();
    double unchosen = 0;
    for (const auto& p : r->parameters())
      if (p.name == "seg0.head.b") {
        REQUIRE(p.tensor.has_grad());
        for (int i = 3; i < 6; ++i) unchosen += std::fabs(p.tensor.grad()[i]);
      }
    return unchosen;
  };
  CHECK(run(0.0) == 0.0);
  CHECK(run(0.01) > 0.0);
}

TEST_CASE("adam's first update has magnitude ~lr in each coordinate") {
  std::vector<NamedParam<double>> params{
      {"w", Tensor<double>::from_data({2}, {1.0, -2.0})}};
  AdamState<double> state;
  adam_step(params, {{0.3, -4.0}}, state, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(params[0].tensor.values()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-5));
  CHECK(params[0].tensor.values()[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-5));
}

TEST_CASE("adam leaves zero-gradient coordinates untouched") {
  std::vector<NamedParam<double>> params{
      {"w", Tensor<double>::from_data({2}, {5.0, 7.0})}};
  AdamState<double> state;
  adam_step(params, {{0.0, 1.0}}, state, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(params[0].tensor.values()[0] == 5.0);
  CHECK(params[0].tensor.values()[1] != 7.0);
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  std::vector<NamedParam<double>> params{{"w", Tensor<double>::scalar(0.0)}};
  AdamState<double> state;
  for (int i = 0; i < 2000; ++i) {
    const double g = 2 * (params[0].tensor.values()[0] - 3.0);
    adam_step(params, {{g}}, state, 1e-2, 0.9, 0.999, 1e-8);
  }
  CHECK(params[0].tensor.values()[0] == doctest::Approx(3.0).epsilon(1e-2));
}

TEST_CASE("adam rejects mismatched gradients") {
  std::vector<NamedParam<double>> params{{"w", Tensor<double>::zeros({2})}};
  AdamState<double> state;
  CHECK_THROWS_AS(adam_step(params, {{1.0}}, state, 1e-3, 0.9, 0.999, 1e-8),
                  ShapeError);
}

TEST_CASE("batch entropy: point mass is 0, uniform is ln K") {
  std::vector<LatentCode> point(8, LatentCode{4, {2, 2}});
  auto rep = batch_entropy(point);
  CHECK(rep.mean == 0.0);
  CHECK(rep.pooled == 0.0);

  std::vector<LatentCode> uniform;
  for (int j = 1; j <= 4; ++j) uniform.push_back(LatentCode{4, {j, j}});
  rep = batch_entropy(uniform);
  CHECK(rep.mean == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(rep.pooled == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("batch entropy is invariant to example order") {
  std::vector<LatentCode> a{{3, {1, 2}}, {3, {2, 2}}, {3, {3, 1}}, {3, {1, 2}}};
  auto b = a;
  std::swap(b[0], b[3]);
  std::swap(b[1], b[2]);
  auto ra = batch_entropy(a), rb = batch_entropy(b);
  CHECK(ra.per_stage == rb.per_stage);
  CHECK(ra.pooled == rb.pooled);
}

TEST_CASE("per-stage mean and pooled entropy diverge when stages specialize") {
  // every example: stage 1 picks 1, stage 2 picks 2 -> each stage is a point
  // mass (mean 0) but the pool is a coin flip (ln 2)
  std::vector<LatentCode> codes(6, LatentCode{2, {1, 2}});
  auto rep = batch_entropy(codes);
  CHECK(rep.mean == 0.0);
  CHECK(rep.pooled == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("micro-batch accumulation reproduces the full-batch step exactly") {
  std::vector<Tensor<float>> batch;
  for (unsigned i = 0; i < 4; ++i) batch.push_back(random_input<float>({3}, 40 + i));

  TrainConfig full;
  full.batch_size = 4;
  full.micro_batch = 4;
  Trainer<float> a(build_refiner<float>(tiny_dense(3, 2, 50)), full);

  TrainConfig micro = full;
  micro.micro_batch = 2;
  Trainer<float> b(build_refiner<float>(tiny_dense(3, 2, 50)), micro);

  auto ra = a.train_step(batch);
  auto rb = b.train_step(batch);
  CHECK(ra.l_total == rb.l_total);
  CHECK(snapshot(a.refiner()) == snapshot(b.refiner()));
}

TEST_CASE("training is deterministic across runs") {
  std::vector<Tensor<float>> batch;
  for (unsigned i = 0; i < 4; ++i) batch.push_back(random_input<float>({3}, 60 + i));
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.micro_batch = 4;
  Trainer<float> a(build_refiner<float>(tiny_dense(3, 3, 70)), cfg);
  Trainer<float> b(build_refiner<float>(tiny_dense(3, 3, 70)), cfg);
  for (int s = 0; s < 3; ++s) {
    auto ra = a.train_step(batch);
    auto rb = b.train_step(batch);
    CHECK(ra.l_total == rb.l_total);
    CHECK(ra.entropy == rb.entropy);
  }
  CHECK(snapshot(a.refiner()) == snapshot(b.refiner()));
}

TEST_CASE("a handful of steps lowers the held-out reconstruction loss") {
  std::vector<Tensor<float>> batch;
  for (unsigned i = 0; i < 8; ++i) batch.push_back(random_input<float>({3}, 80 + i));
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.micro_batch = 8;
  cfg.lr = 1e-2;
  Trainer<float> t(build_refiner<float>(tiny_dense(4, 3, 90)), cfg);
  const double before = t.evaluate(batch);
  MetricsRow last;
  for (int s = 0; s < 60; ++s) last = t.train_step(batch);
  CHECK(last.applied);
  CHECK(t.evaluate(batch) < before);
  CHECK(t.step_count() == 60);
}

TEST_CASE("a non-finite loss aborts the step and leaves parameters alone") {
  std::vector<Tensor<float>> batch{random_input<float>({3}, 95)};
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.micro_batch = 1;
  Trainer<float> t(build_refiner<float>(tiny_dense(2, 2, 96)), cfg);
  for (auto& p : t.refiner().parameters())
    if (p.name == "seg0.head.b") p.tensor.data()[0] = INFINITY;
  const auto before = snapshot(t.refiner());
  auto row = t.train_step(batch);
  CHECK_FALSE(row.applied);
  CHECK(snapshot(t.refiner()) == before);
  CHECK(t.last_incident().find("example 0") != std::string::npos);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.micro_batch = 4;  // does not divide
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.micro_batch = 3;
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.alpha = 0.01;
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
}

TEST_CASE("metrics csv row carries the header's fields in order") {
  MetricsRow r;
  r.step = 12;
  r.l_chosen = 0.5;
  r.l_all = 1.0;
  r.l_total = 0.51;
  r.entropy = 2.0;
  r.entropy_pooled = 2.5;
  r.seconds = 0.25;
  CHECK(metrics_csv_header() ==
        "step,l_chosen,l_all,l_total,entropy,entropy_pooled");
  CHECK(to_csv_row(r) == "12,0.5,1,0.51,2,2.5");
}

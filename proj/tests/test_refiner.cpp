#include <random>

#include "doctest.h"
#include "vqdraw/grad_check.hpp"
#include "vqdraw/refiner.hpp"

using namespace vqdraw;

namespace {

RefinerConfig small_dense() {
  RefinerConfig cfg;
  cfg.arch = "dense";
  cfg.data_shape = {3};
  cfg.options = 4;
  cfg.stages = 4;
  cfg.stages_per_segment = 2;
  cfg.hidden = 8;
  cfg.init_seed = 42;
  return cfg;
}

RefinerConfig small_cnn() {
  RefinerConfig cfg;
  cfg.arch = "cnn";
  cfg.data_shape = {1, 8, 8};
  cfg.options = 3;
  cfg.stages = 4;
  cfg.stages_per_segment = 2;
  cfg.channels = 4;
  cfg.res_blocks = 1;
  cfg.gn_groups = 2;
  cfg.init_seed = 7;
  return cfg;
}

template <typename T>
void zero_head(Refiner<T>& r) {
  for (auto& p : r.parameters())
    if (p.name.find("head.w") != std::string::npos ||
        p.name.find("head.b") != std::string::npos)
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), T(0));
}

template <typename T>
Tensor<T> random_input(const Shape& shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = (T)d(rng);
  return Tensor<T>::from_data(shape, v);
}

}  // namespace

TEST_CASE("segment_index") {
  CHECK(segment_index(6, 5) == 2);  // stage 6 starts the second parameter set
  CHECK(segment_index(5, 5) == 1);
  CHECK(segment_index(1, 5) == 1);
  CHECK(segment_index(1, 999) == 1);
  for (int stage = 1; stage <= 10; ++stage)
    CHECK(segment_index(stage, 10) == 1);  // one segment covers everything
  CHECK_THROWS_AS(segment_index(0, 5), ShapeError);
  CHECK_THROWS_AS(segment_index(3, 0), ShapeError);
}

TEST_CASE("config validation") {
  auto cfg = small_cnn();
  cfg.data_shape = {1, 30, 30};
  CHECK_THROWS_AS(build_refiner<float>(cfg), ShapeError);
  cfg = small_cnn();
  cfg.gn_groups = 3;
  CHECK_THROWS_AS(build_refiner<float>(cfg), ShapeError);
  cfg = small_dense();
  cfg.stages_per_segment = 9;
  CHECK_THROWS_AS(build_refiner<float>(cfg), ShapeError);
}

TEST_CASE("refine returns K tensors shaped like the input at every stage") {
  for (auto* make : {&small_dense, &small_cnn}) {
    auto cfg = make();
    auto r = build_refiner<float>(cfg);
    auto x = random_input<float>(cfg.data_shape, 1);
    for (int stage = 1; stage <= cfg.stages; ++stage) {
      auto out = r->refine(x, stage);
      REQUIRE((int)out.size() == cfg.options);
      for (const auto& o : out) CHECK(o.shape() == cfg.data_shape);
    }
  }
}

TEST_CASE("zeroed head makes every refinement equal the input") {
  for (auto* make : {&small_dense, &small_cnn}) {
    auto cfg = make();
    auto r = build_refiner<float>(cfg);
    zero_head(*r);
    auto x = random_input<float>(cfg.data_shape, 2);
    for (int stage = 1; stage <= cfg.stages; ++stage)
      for (const auto& o : r->refine(x, stage))
        CHECK(o.values() == x.values());
  }
}

TEST_CASE("refine rejects bad stage or shape") {
  auto cfg = small_dense();
  auto r = build_refiner<float>(cfg);
  auto x = random_input<float>(cfg.data_shape, 3);
  CHECK_THROWS_AS(r->refine(x, 0), ShapeError);
  CHECK_THROWS_AS(r->refine(x, cfg.stages + 1), ShapeError);
  CHECK_THROWS_AS(r->refine(Tensor<float>::zeros({5}), 1), ShapeError);
}

TEST_CASE("MNIST profile: 64 options of 1x28x28, head emits K*C channels") {
  RefinerConfig cfg;
  cfg.arch = "cnn";
  cfg.data_shape = {1, 28, 28};
  cfg.options = 64;
  cfg.stages = 10;
  cfg.stages_per_segment = 10;
  cfg.channels = 8;
  cfg.res_blocks = 1;
  cfg.gn_groups = 2;
  auto r = build_cnn_refiner<float>(cfg);
  auto out = r->refine(Tensor<float>::zeros({1, 28, 28}), 1);
  REQUIRE(out.size() == 64);
  for (const auto& o : out) CHECK(o.shape() == Shape{1, 28, 28});
  for (const auto& p : r->parameters())
    if (p.name == "seg0.head.w") CHECK(p.tensor.shape() == Shape{64, 8, 1, 1});
}

TEST_CASE("parameter count grows with K only at the head") {
  auto cfg = small_cnn();
  cfg.options = 2;
  auto a = build_refiner<float>(cfg);
  cfg.options = 8;
  auto b = build_refiner<float>(cfg);
  REQUIRE(a->parameters().size() == b->parameters().size());
  for (size_t i = 0; i < a->parameters().size(); ++i) {
    const auto& pa = a->parameters()[i];
    const auto& pb = b->parameters()[i];
    if (pa.name.find("head") == std::string::npos)
      CHECK(pa.tensor.shape() == pb.tensor.shape());
    else
      CHECK(pa.tensor.numel() * 4 == pb.tensor.numel());
  }
}

TEST_CASE("segment isolation: perturbing segment 2 leaves segment-1 stages intact") {
  for (auto* make : {&small_dense, &small_cnn}) {
    auto cfg = make();
    auto r = build_refiner<float>(cfg);
    auto x = random_input<float>(cfg.data_shape, 4);
    std::vector<std::vector<float>> before;
    for (int stage = 1; stage <= cfg.stages_per_segment; ++stage)
      for (const auto& o : r->refine(x, stage)) before.push_back(o.values());

    for (auto& p : r->parameters())
      if (p.name.rfind("seg1.", 0) == 0)
        for (auto& v : p.tensor.data()) v += 0.37f;

    size_t idx = 0;
    for (int stage = 1; stage <= cfg.stages_per_segment; ++stage)
      for (const auto& o : r->refine(x, stage))
        CHECK(o.values() == before[idx++]);
  }
}

TEST_CASE("mask routing: only the evaluated stage's masks matter") {
  for (auto* make : {&small_dense, &small_cnn}) {
    auto cfg = make();
    auto r = build_refiner<float>(cfg);
    auto x = random_input<float>(cfg.data_shape, 5);
    std::vector<std::vector<float>> before;
    for (const auto& o : r->refine(x, 1)) before.push_back(o.values());

    // stage 2 lives in the same segment as stage 1
    for (auto& p : r->parameters())
      if (p.name.find("mask") != std::string::npos &&
          p.name.find("stage2") != std::string::npos)
        for (auto& v : p.tensor.data()) v = 3.0f;

    size_t idx = 0;
    for (const auto& o : r->refine(x, 1)) CHECK(o.values() == before[idx++]);
    // but stage 2 itself moved
    bool stage2_changed = false;
    auto r2 = build_refiner<float>(cfg);
    auto base2 = r2->refine(x, 2);
    auto cur2 = r->refine(x, 2);
    for (size_t j = 0; j < cur2.size(); ++j)
      if (cur2[j].values() != base2[j].values()) stage2_changed = true;
    CHECK(stage2_changed);
  }
}

TEST_CASE("masks differing between stages change the output") {
  auto cfg = small_dense();
  auto r = build_refiner<float>(cfg);
  auto x = random_input<float>(cfg.data_shape, 6);
  for (auto& p : r->parameters())
    if (p.name == "seg0.mask1.stage2")
      for (auto& v : p.tensor.data()) v = 0.5f;
  auto o1 = r->refine(x, 1);
  auto o2 = r->refine(x, 2);
  bool differ = false;
  for (size_t j = 0; j < o1.size(); ++j)
    if (o1[j].values() != o2[j].values()) differ = true;
  CHECK(differ);
}

TEST_CASE("dense refiner with hand-set parameters matches hand arithmetic") {
  RefinerConfig cfg;
  cfg.arch = "dense";
  cfg.data_shape = {2};
  cfg.options = 2;
  cfg.stages = 1;
  cfg.stages_per_segment = 1;
  cfg.hidden = 2;
  auto r = build_dense_refiner<double>(cfg);
  for (auto& p : r->parameters()) {
    auto& d = p.tensor.data();
    if (p.name == "seg0.w1") d = {1, 0, 0, 1};        // identity
    else if (p.name == "seg0.b1") d = {0.5, -2.0};    // second unit off after relu
    else if (p.name == "seg0.w2") d = {2, 0, 0, 2};
    else if (p.name == "seg0.b2") d = {0, 1};
    else if (p.name == "seg0.head.w") d = {1, 0, 0, 1, -1, 0, 0, -1};
    else if (p.name == "seg0.head.b") d = {0.25, 0, 0, 0};
  }
  // x=(1,2): h1 = relu(x + b1) = (1.5, 0); h2 = relu(2*h1 + b2) = (3, 1)
  // head = (3+0.25, 1, -3, -1); option1 = x + (3.25, 1); option2 = x + (-3, -1)
  auto out = r->refine(Tensor<double>::from_data({2}, {1, 2}), 1);
  CHECK(out[0].values()[0] == doctest::Approx(4.25));
  CHECK(out[0].values()[1] == doctest::Approx(3.0));
  CHECK(out[1].values()[0] == doctest::Approx(-2.0));
  CHECK(out[1].values()[1] == doctest::Approx(1.0));
}

TEST_CASE("refiner forward gradient passes grad_check in double precision") {
  auto cfg = small_cnn();
  cfg.res_blocks = 1;
  auto r = build_refiner<double>(cfg);
  auto x = random_input<double>(cfg.data_shape, 8);
  auto target = random_input<double>(cfg.data_shape, 9);
  auto f = [&]() {
    auto out = r->refine(x, 2);
    Tensor<double> total;
    for (const auto& o : out) {
      auto l = mse(o, target);
      total = total.defined() ? add(total, l) : l;
    }
    return total;
  };
  std::vector<Tensor<double>> params;
  for (auto& p : r->parameters()) params.push_back(p.tensor);
  auto report = grad_check(f, params, 1e-5, 1e-6);
  INFO("max rel error ", report.max_rel_error, " excluded ", report.excluded);
  CHECK(report.non_finite.empty());
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("clone_refiner reproduces outputs bit-exactly") {
  auto cfg = small_cnn();
  auto r = build_refiner<float>(cfg);
  auto c = clone_refiner(*r);
  auto x = random_input<float>(cfg.data_shape, 10);
  auto a = r->refine(x, 3);
  auto b = c->refine(x, 3);
  for (size_t j = 0; j < a.size(); ++j) CHECK(a[j].values() == b[j].values());
}

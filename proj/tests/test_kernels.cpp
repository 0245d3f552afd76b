#include <random>
#include <vector>

#include "doctest.h"
#include "vqdraw/kernels.hpp"

using namespace vqdraw;

namespace {

std::vector<float> random_vec(std::mt19937& rng, long n) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> out(n);
  for (auto& x : out) x = d(rng);
  return out;
}

struct ParallelScope {
  explicit ParallelScope(bool on) { kernels::set_parallel(on); }
  ~ParallelScope() { kernels::set_parallel(false); }
};

}  // namespace

TEST_CASE("matmul matches hand result") {
  // [[1,2],[3,4]] * [[5],[6]] = [[17],[39]]
  std::vector<float> a{1, 2, 3, 4}, b{5, 6}, out(2);
  kernels::matmul(a.data(), b.data(), out.data(), 2, 2, 1);
  CHECK(out[0] == 17.0f);
  CHECK(out[1] == 39.0f);
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
  std::mt19937 rng(1);
  const int m = 3, k = 4, n = 2;
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<float> at(k * m), bt(n * k);
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < k; ++t) at[t * m + i] = a[i * k + t];
  for (int t = 0; t < k; ++t)
    for (int j = 0; j < n; ++j) bt[j * k + t] = b[t * n + j];
  std::vector<float> base(m * n), viaT(m * n);
  kernels::matmul(a.data(), b.data(), base.data(), m, k, n);
  kernels::matmul(at.data(), bt.data(), viaT.data(), m, k, n, true, true);
  for (int i = 0; i < m * n; ++i) CHECK(base[i] == doctest::Approx(viaT[i]));
}

TEST_CASE("conv2d of 3x3 ones-window kernel sums 2x2 input windows") {
  // 1x1x3x3 input, 1x1x2x2 kernel of ones, stride 1: each output element is
  // the sum of the matching 2x2 window.
  std::vector<float> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<float> w{1, 1, 1, 1};
  kernels::Conv2dDims d{1, 3, 3, 1, 2, 2, 1, 0, 2, 2};
  std::vector<float> y(4);
  kernels::conv2d_fwd(x.data(), w.data(), y.data(), d);
  CHECK(y[0] == 1 + 2 + 4 + 5);
  CHECK(y[1] == 2 + 3 + 5 + 6);
  CHECK(y[2] == 4 + 5 + 7 + 8);
  CHECK(y[3] == 5 + 6 + 8 + 9);
}

TEST_CASE("omp kernels are bit-identical to the serial reference") {
  std::mt19937 rng(7);
  kernels::Conv2dDims d{3, 8, 8, 5, 3, 3, 2, 1, 4, 4};
  auto x = random_vec(rng, 3 * 8 * 8);
  auto w = random_vec(rng, 5 * 3 * 3 * 3);
  auto dy = random_vec(rng, 5 * 4 * 4);

  std::vector<float> y_s(5 * 4 * 4), y_p(5 * 4 * 4);
  kernels::conv2d_fwd_serial(x.data(), w.data(), y_s.data(), d);
  kernels::conv2d_fwd_omp(x.data(), w.data(), y_p.data(), d);
  CHECK(y_s == y_p);

  std::vector<float> dx_s(x.size(), 0), dx_p(x.size(), 0);
  kernels::conv2d_bwd_input_serial(dy.data(), w.data(), dx_s.data(), d);
  kernels::conv2d_bwd_input_omp(dy.data(), w.data(), dx_p.data(), d);
  CHECK(dx_s == dx_p);

  std::vector<float> dw_s(w.size(), 0), dw_p(w.size(), 0);
  kernels::conv2d_bwd_weight_serial(dy.data(), x.data(), dw_s.data(), d);
  kernels::conv2d_bwd_weight_omp(dy.data(), x.data(), dw_p.data(), d);
  CHECK(dw_s == dw_p);

  kernels::TConv2dDims td{4, 5, 5, 3, 4, 4, 2, 1, 10, 10};
  auto tx = random_vec(rng, 4 * 5 * 5);
  auto tw = random_vec(rng, 4 * 3 * 4 * 4);
  auto tdy = random_vec(rng, 3 * 10 * 10);
  std::vector<float> ty_s(3 * 10 * 10), ty_p(3 * 10 * 10);
  kernels::tconv2d_fwd_serial(tx.data(), tw.data(), ty_s.data(), td);
  kernels::tconv2d_fwd_omp(tx.data(), tw.data(), ty_p.data(), td);
  CHECK(ty_s == ty_p);

  std::vector<float> tdx_s(tx.size(), 0), tdx_p(tx.size(), 0);
  kernels::tconv2d_bwd_input_serial(tdy.data(), tw.data(), tdx_s.data(), td);
  kernels::tconv2d_bwd_input_omp(tdy.data(), tw.data(), tdx_p.data(), td);
  CHECK(tdx_s == tdx_p);

  std::vector<float> tdw_s(tw.size(), 0), tdw_p(tw.size(), 0);
  kernels::tconv2d_bwd_weight_serial(tdy.data(), tx.data(), tdw_s.data(), td);
  kernels::tconv2d_bwd_weight_omp(tdy.data(), tx.data(), tdw_p.data(), td);
  CHECK(tdw_s == tdw_p);
}

TEST_CASE("parallel switch routes through the same results") {
  std::mt19937 rng(3);
  auto a = random_vec(rng, 6 * 7);
  auto b = random_vec(rng, 7 * 5);
  std::vector<float> y1(6 * 5), y2(6 * 5);
  kernels::matmul(a.data(), b.data(), y1.data(), 6, 7, 5);
  {
    ParallelScope p(true);
    CHECK(kernels::parallel_enabled());
    kernels::matmul(a.data(), b.data(), y2.data(), 6, 7, 5);
  }
  CHECK_FALSE(kernels::parallel_enabled());
  CHECK(y1 == y2);
}

TEST_CASE("tconv2d output size doubles spatial dims with k4 s2 p1") {
  kernels::TConv2dDims td{1, 7, 7, 1, 4, 4, 2, 1, 0, 0};
  td.oh = (td.h - 1) * td.stride - 2 * td.pad + td.kh;
  td.ow = (td.w - 1) * td.stride - 2 * td.pad + td.kw;
  CHECK(td.oh == 14);
  CHECK(td.ow == 14);
}

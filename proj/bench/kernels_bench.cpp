// Serial reference vs OpenMP kernels, median of runs in microseconds.
//
//   kernels_bench [--runs N] [--threads T]

#include <CLI11.hpp>

#include <cstdio>
#include <vector>

#include "agile/bench.hpp"
#include "agile/kernels.hpp"
#include "agile/parallel.hpp"
#include "agile/rng.hpp"

using namespace agile;
using namespace agile::kernels;

namespace {

std::vector<double> buf(SplitMix64& rng, i64 n, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

void row(const char* kernel, const char* size, double ref, double par) {
  std::printf("%s,%s,%.1f,%.1f,%.2f\n", kernel, size, ref, par, ref / par);
  std::fflush(stdout);
}

void bench_gemm(SplitMix64& rng, i64 n, int runs) {
  const auto a = buf(rng, n * n), b = buf(rng, n * n);
  std::vector<double> c(static_cast<std::size_t>(n * n));
  const double ref = median_micros([&] { reference::gemm(n, n, n, a.data(), n, 1, b.data(), n, 1, c.data(), false); }, runs);
  const double par = median_micros([&] { gemm(n, n, n, a.data(), n, 1, b.data(), n, 1, c.data(), false); }, runs);
  row("gemm", (std::to_string(n) + "^3").c_str(), ref, par);
}

void bench_conv(SplitMix64& rng, i64 channels, i64 side, int runs) {
  ConvGeometry g{channels, side, side, channels, 3, 3, 1, 1, 1, 1};
  const i64 area = g.out_h() * g.out_w();
  const auto in = buf(rng, channels * side * side), w = buf(rng, channels * channels * 9), b = buf(rng, channels);
  const auto off = buf(rng, 18 * area, -1.5, 1.5), go = buf(rng, channels * area);
  const OffsetView view{off.data(), OffsetMode::kPerTap};
  std::vector<double> out(go.size()), gi(in.size()), goff(off.size()), gw(w.size()), gb(b.size());
  const auto size = std::to_string(channels) + "x" + std::to_string(side) + "^2";
  row("deform_conv_fwd", size.c_str(),
      median_micros([&] { reference::conv2d_forward(g, in.data(), view, w.data(), b.data(), out.data()); }, runs),
      median_micros([&] { conv2d_forward(g, in.data(), view, w.data(), b.data(), out.data()); }, runs));
  row("deform_conv_bwd", size.c_str(), median_micros([&] {
        reference::conv2d_backward(g, in.data(), view, w.data(), go.data(), gi.data(), goff.data(), gw.data(), gb.data());
      }, runs),
      median_micros([&] {
        conv2d_backward(g, in.data(), view, w.data(), go.data(), gi.data(), goff.data(), gw.data(), gb.data());
      }, runs));
}

void bench_sample(SplitMix64& rng, i64 channels, i64 side, int runs) {
  const i64 count = side * side;
  const auto f = buf(rng, channels * count), pos = buf(rng, count * 2, -1, static_cast<double>(side));
  const auto go = buf(rng, channels * count);
  std::vector<double> out(go.size()), gf(f.size()), gp(pos.size());
  const auto size = std::to_string(channels) + "x" + std::to_string(side) + "^2";
  row("grid_sample_fwd", size.c_str(), median_micros([&] {
        reference::grid_sample2d_forward(channels, side, side, f.data(), 1, count, pos.data(), out.data());
      }, runs),
      median_micros([&] { grid_sample2d_forward(channels, side, side, f.data(), 1, count, pos.data(), out.data()); }, runs));
  row("grid_sample_bwd", size.c_str(), median_micros([&] {
        reference::grid_sample2d_backward(channels, side, side, f.data(), 1, count, pos.data(), go.data(), gf.data(),
                                          gp.data());
      }, runs),
      median_micros([&] {
        grid_sample2d_backward(channels, side, side, f.data(), 1, count, pos.data(), go.data(), gf.data(), gp.data());
      }, runs));
}

void bench_attention(SplitMix64& rng, i64 length, int runs) {
  const GatherAttentionDims d{4, length, 49, 16, 16};
  const auto q = buf(rng, d.heads * length * d.key_dim), k = buf(rng, d.heads * length * d.key_dim);
  const auto v = buf(rng, d.heads * length * d.value_dim), go = buf(rng, d.heads * length * d.value_dim);
  std::vector<std::int32_t> index(static_cast<std::size_t>(length * d.neighbors));
  for (auto& i : index) i = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(length)));
  std::vector<double> out(go.size()), attn(static_cast<std::size_t>(d.heads * length * d.neighbors));
  std::vector<double> gq(q.size()), gk(k.size()), gv(v.size());
  const auto size = "L" + std::to_string(length);
  row("gather_attention_fwd", size.c_str(), median_micros([&] {
        reference::gather_attention_forward(d, q.data(), k.data(), v.data(), index, 0.25, out.data(), attn.data());
      }, runs),
      median_micros([&] { gather_attention_forward(d, q.data(), k.data(), v.data(), index, 0.25, out.data(), attn.data()); },
                    runs));
  row("gather_attention_bwd", size.c_str(), median_micros([&] {
        reference::gather_attention_backward(d, q.data(), k.data(), v.data(), index, 0.25, attn.data(), go.data(),
                                             gq.data(), gk.data(), gv.data());
      }, runs),
      median_micros([&] {
        gather_attention_backward(d, q.data(), k.data(), v.data(), index, 0.25, attn.data(), go.data(), gq.data(),
                                  gk.data(), gv.data());
      }, runs));
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads();
  CLI::App app{"Reference vs parallel kernel timings"};
  int runs = 5, threads = 0;
  app.add_option("--runs", runs, "timed runs per point")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (default: runtime setting)")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_threads(threads);

  std::fprintf(stderr, "threads=%d\n", max_threads());
  std::printf("kernel,size,reference_us,parallel_us,speedup\n");
  SplitMix64 rng(0);
  for (i64 n : {64, 128, 256}) bench_gemm(rng, n, runs);
  for (i64 side : {16, 32, 64}) bench_conv(rng, 32, side, runs);
  for (i64 side : {32, 64, 128}) bench_sample(rng, 32, side, runs);
  for (i64 length : {256, 1024, 4096}) bench_attention(rng, length, runs);
  return 0;
}

#pragma once

// Scaling benchmarks over sequence length. Counts come from the kernels' own
// instrumentation; wall time is the median over repetitions.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "gfwa/attn_tiled.hpp"
#include "gfwa/gate.hpp"
#include "gfwa/numerics.hpp"

namespace gfwa {

inline constexpr std::size_t kNsaDefaultWindow = 512;

struct BenchRecord {
  std::string kernel;
  std::string pass;  // forward | backward | scan
  std::size_t n = 0;
  std::size_t window = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t block_rows = 0;
  std::size_t block_cols = 0;
  std::uint64_t time_ns = 0;
  std::size_t logit_evals = 0;
  std::size_t elements_read = 0;
  std::size_t elements_written = 0;
  std::string note;
};

inline constexpr const char* kBenchHeader =
    "kernel,pass,N,w,H,d_h,B_r,B_c,time_ns,logit_evals,elements_read,elements_written,note";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& rows) {
  os << kBenchHeader << '\n';
  for (const auto& r : rows) {
    os << r.kernel << ',' << r.pass << ',' << r.n << ',' << r.window << ',' << r.heads << ',' << r.head_dim << ','
       << r.block_rows << ',' << r.block_cols << ',' << r.time_ns << ',' << r.logit_evals << ','
       << r.elements_read << ',' << r.elements_written << ',' << r.note << '\n';
  }
}

inline const std::vector<std::string>& bench_kernel_names() {
  static const std::vector<std::string> names = {"gatedfwa", "swa", "full", "scan-onepass", "scan-three-phase"};
  return names;
}

struct BenchConfig {
  std::vector<std::string> kernels = {"gatedfwa", "swa", "full"};
  std::vector<std::size_t> n_list = {1024, 2048, 4096, 8192};
  std::size_t window = kNsaDefaultWindow;
  std::size_t heads = 1;
  std::size_t head_dim = 64;
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;
  std::size_t reps = 3;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool backward = true;
  std::size_t n_cap = 1 << 16;

  void validate() const {
    if (n_list.empty()) throw ShapeError("bench needs at least one N");
    for (std::size_t i = 0; i < n_list.size(); ++i) {
      if (n_list[i] < 1) throw ShapeError("bench N must be >= 1");
      if (i > 0 && n_list[i] <= n_list[i - 1]) throw ShapeError("bench N list must be strictly ascending");
    }
    if (n_list.back() > n_cap) {
      throw ShapeError("bench N " + std::to_string(n_list.back()) + " exceeds the cap of " + std::to_string(n_cap));
    }
    if (reps < 3) throw ShapeError("bench needs reps >= 3");
    for (const auto& k : kernels) {
      if (std::find(bench_kernel_names().begin(), bench_kernel_names().end(), k) == bench_kernel_names().end()) {
        throw std::invalid_argument("unknown bench kernel: " + k);
      }
    }
  }
};

namespace detail {

template <typename F>
std::uint64_t median_time_ns(std::size_t reps, F&& f) {
  f();  // untimed warm-up
  std::vector<std::uint64_t> times;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(static_cast<std::uint64_t>(
        std::max<std::int64_t>(1, std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count())));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace detail

inline std::vector<BenchRecord> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<BenchRecord> rows;
  Rng rng(cfg.seed);
  const std::string note = cfg.window == kNsaDefaultWindow ? "NSA default" : "";
  for (std::size_t n : cfg.n_list) {
    const std::size_t width = cfg.heads * cfg.head_dim;
    const Matrix q = random_normal<float>(n, width, rng);
    const Matrix k = random_normal<float>(n, width, rng);
    const Matrix v = random_normal<float>(n, width, rng);
    const Matrix d_o = random_normal<float>(n, width, rng);
    const Matrix u = random_gate_prefix(n, cfg.heads, rng).cast<float>();
    const Matrix h_pre = random_normal<float>(n, cfg.heads, rng);
    const Matrix beta = map(random_normal<float>(n, cfg.heads, rng), [](double a) { return 1.0 + elu(a); });

    for (const auto& kernel : cfg.kernels) {
      BenchRecord base{kernel, "", n, cfg.window, cfg.heads, cfg.head_dim, cfg.block_rows, cfg.block_cols,
                       0, 0, 0, 0, note};
      if (kernel.rfind("scan-", 0) == 0) {
        const std::size_t chunk = std::min(cfg.block_rows, n);
        ScanCounters sc;
        base.pass = "scan";
        base.time_ns = detail::median_time_ns(cfg.reps, [&] {
          sc = {};
          if (kernel == "scan-onepass") {
            scan_onepass(h_pre, beta, chunk, kGateEps, &sc);
          } else {
            scan_three_phase(h_pre, beta, chunk, kGateEps, &sc, cfg.threads);
          }
        });
        base.elements_read = sc.input_reads() + sc.workspace_reads;
        base.elements_written = sc.writes_u + sc.workspace_writes;
        base.window = 0;
        base.note.clear();
        rows.push_back(base);
        continue;
      }

      AttnConfig acfg = AttnConfig::make(n, cfg.head_dim, cfg.window, std::min(cfg.block_rows, n),
                                         std::min(cfg.block_cols, n), cfg.heads);
      const Matrix no_u;
      const Matrix* gate = &u;
      if (kernel == "swa") gate = &no_u;
      if (kernel == "full") {
        acfg.window = n;
        gate = &no_u;
        base.window = n;
        base.note.clear();
      }
      KernelOptions opts;
      opts.threads = cfg.threads;
      MultiHeadForward<float> fwd;
      base.pass = "forward";
      base.time_ns = detail::median_time_ns(cfg.reps, [&] { fwd = forward_tiled_heads(q, k, v, *gate, acfg, opts); });
      base.logit_evals = fwd.counters.logit_evaluations;
      base.elements_read = fwd.counters.total_read();
      base.elements_written = fwd.counters.total_written();
      rows.push_back(base);

      if (cfg.backward) {
        MultiHeadBackward<float> bwd;
        BenchRecord b = base;
        b.pass = "backward";
        b.time_ns = detail::median_time_ns(
            cfg.reps, [&] { bwd = backward_tiled_heads(q, k, v, *gate, acfg, fwd.o, fwd.l, d_o, cfg.threads); });
        b.logit_evals = bwd.counters.logit_evaluations;
        b.elements_read = bwd.counters.total_read();
        b.elements_written = bwd.counters.total_written();
        rows.push_back(b);
      }
    }
  }
  return rows;
}

}  // namespace gfwa

// gfwa: verification suites, scaling benchmarks, dumps and the recall demo.
//
//   gfwa check [suite] [--seed S] [--out FILE]
//   gfwa bench [--n 1k,2k,...] [--window W] [--kernels a,b] [--require-checks] ...
//   gfwa dump gate-hist --fixture A.bin [--fixture B.bin ...] [--bins K]
//   gfwa dump attn-heatmap [--kernel gatedfwa|swa|full] [--n N] [--window W]
//   gfwa demo [--steps S] [--lr LR] [--seed S]
//
// Exit codes: 0 success, 1 a check failed, 2 usage or input error.
// Settings resolve as flags, then the --config JSON file, then defaults.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gfwa/gfwa.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Accepts plain integers and a k suffix meaning 1024.
std::size_t parse_length(const std::string& s) {
  if (s.empty()) throw UsageError("empty sequence length");
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw UsageError("bad sequence length: " + s);
  }
  if (pos == s.size()) return v;
  if (pos + 1 == s.size() && (s[pos] == 'k' || s[pos] == 'K')) return v * 1024;
  throw UsageError("bad sequence length: " + s);
}

// Output stream for --out, or stdout when unset.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw UsageError("cannot open output file: " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

struct Settings {
  std::uint64_t seed = 0;
  std::vector<std::string> n_list;
  std::size_t window = gfwa::kNsaDefaultWindow;
  std::size_t heads = 1;
  std::size_t head_dim = 64;
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;
  std::size_t reps = 3;
  unsigned threads = 1;
  std::string out;
  std::string config;
  bool require_checks = false;
};

// Copies every key present in the JSON config into `s`, skipping settings
// that were given explicitly on the command line.
void apply_config(Settings& s, const CLI::App& app) {
  if (s.config.empty()) return;
  std::ifstream in(s.config);
  if (!in) throw UsageError("cannot open config file: " + s.config);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config file: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  auto given = [&](const char* flag) { return app.count(flag) > 0; };
  try {
    if (j.contains("seed") && !given("--seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("window") && !given("--window")) s.window = j["window"].get<std::size_t>();
    if (j.contains("heads") && !given("--heads")) s.heads = j["heads"].get<std::size_t>();
    if (j.contains("dhead") && !given("--dhead")) s.head_dim = j["dhead"].get<std::size_t>();
    if (j.contains("br") && !given("--br")) s.block_rows = j["br"].get<std::size_t>();
    if (j.contains("bc") && !given("--bc")) s.block_cols = j["bc"].get<std::size_t>();
    if (j.contains("reps") && !given("--reps")) s.reps = j["reps"].get<std::size_t>();
    if (j.contains("threads") && !given("--threads")) s.threads = j["threads"].get<unsigned>();
    if (j.contains("out") && !given("--out")) s.out = j["out"].get<std::string>();
    if (j.contains("require_checks") && !given("--require-checks"))
      s.require_checks = j["require_checks"].get<bool>();
    if (j.contains("n") && !given("--n")) {
      s.n_list.clear();
      for (const auto& v : j["n"]) s.n_list.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

void add_common_flags(CLI::App& app, Settings& s) {
  app.add_option("--seed", s.seed, "RNG seed");
  app.add_option("--n", s.n_list, "sequence lengths, comma separated, k suffix allowed")->delimiter(',');
  app.add_option("--window", s.window, "sliding window length w");
  app.add_option("--heads", s.heads, "number of heads H");
  app.add_option("--dhead", s.head_dim, "head dimension d_h");
  app.add_option("--br", s.block_rows, "query tile size B_r");
  app.add_option("--bc", s.block_cols, "key tile size B_c");
  app.add_option("--reps", s.reps, "timing repetitions (median reported)");
  app.add_option("--threads", s.threads, "worker threads");
  app.add_option("--out", s.out, "output CSV path (default stdout)");
  app.add_option("--config", s.config, "JSON config file");
  app.add_flag("--require-checks", s.require_checks, "run every check suite first and abort on failure");
}

int cmd_check(const std::string& suite, const Settings& s, std::size_t trials) {
  const auto& names = gfwa::suite_names();
  if (suite != "all" && std::find(names.begin(), names.end(), suite) == names.end()) {
    throw UsageError("unknown suite: " + suite);
  }
  const auto records = gfwa::run_suite(suite, {s.seed, trials});
  Output out(s.out);
  gfwa::write_check_csv(out.stream(), records);
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.passed;
  std::cerr << suite << ": " << records.size() - failed << " passed, " << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_bench(const Settings& s, const std::vector<std::string>& kernels, bool forward_only, std::size_t n_cap) {
  if (s.require_checks) {
    const auto records = gfwa::run_suite("all", {s.seed, 0});
    if (!gfwa::all_passed(records)) {
      std::cerr << "bench aborted: check suites failed\n";
      gfwa::write_check_csv(std::cerr, records);
      return kExitCheckFailed;
    }
  }
  gfwa::BenchConfig cfg;
  if (!kernels.empty()) cfg.kernels = kernels;
  if (!s.n_list.empty()) {
    cfg.n_list.clear();
    for (const auto& n : s.n_list) cfg.n_list.push_back(parse_length(n));
  }
  cfg.window = s.window;
  cfg.heads = s.heads;
  cfg.head_dim = s.head_dim;
  cfg.block_rows = s.block_rows;
  cfg.block_cols = s.block_cols;
  cfg.reps = s.reps;
  cfg.seed = s.seed;
  cfg.threads = s.threads;
  cfg.backward = !forward_only;
  cfg.n_cap = n_cap;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto rows = gfwa::run_bench(cfg);
  Output out(s.out);
  gfwa::write_bench_csv(out.stream(), rows);
  return kExitOk;
}

// Histogram of exp(-alpha) over [0, 1] per layer and head, one fixture per layer.
int dump_gate_hist(const std::vector<std::string>& fixtures, std::size_t bins, const Settings& s) {
  if (fixtures.empty()) throw UsageError("gate-hist needs at least one --fixture");
  if (bins < 1) throw UsageError("--bins must be >= 1");
  Output out(s.out);
  auto& os = out.stream();
  os << "layer,head,bin_lo,bin_hi,count\n";
  for (std::size_t layer = 0; layer < fixtures.size(); ++layer) {
    gfwa::Matrix alpha;
    try {
      alpha = gfwa::read_fixture(fixtures[layer]);
    } catch (const std::exception& e) {
      throw UsageError(std::string("cannot load fixture: ") + e.what());
    }
    for (std::size_t h = 0; h < alpha.cols(); ++h) {
      std::vector<std::size_t> counts(bins, 0);
      for (std::size_t t = 0; t < alpha.rows(); ++t) {
        const double a = alpha(t, h);
        if (!(a >= 0.0) || !std::isfinite(a)) throw UsageError("fixture alpha must be finite and >= 0");
        const double g = std::exp(-a);
        counts[std::min<std::size_t>(bins - 1, static_cast<std::size_t>(g * static_cast<double>(bins)))]++;
      }
      for (std::size_t b = 0; b < bins; ++b) {
        os << layer << ',' << h << ',' << static_cast<double>(b) / bins << ',' << static_cast<double>(b + 1) / bins
           << ',' << counts[b] << '\n';
      }
    }
  }
  return kExitOk;
}

constexpr std::size_t kHeatmapCap = 256;

int dump_heatmap(const std::string& kernel, const Settings& s) {
  const std::size_t n = s.n_list.empty() ? 64 : parse_length(s.n_list.front());
  if (n > kHeatmapCap) throw UsageError("attn-heatmap is limited to N <= 256");
  if (n < 1) throw UsageError("attn-heatmap needs N >= 1");
  if (kernel != "gatedfwa" && kernel != "swa" && kernel != "full") throw UsageError("unknown kernel: " + kernel);
  gfwa::Rng rng(s.seed);
  const std::size_t d_h = std::min<std::size_t>(s.head_dim, 64);
  const gfwa::MatrixD q = gfwa::random_normal<double>(n, d_h, rng);
  const gfwa::MatrixD k = gfwa::random_normal<double>(n, d_h, rng);
  const std::vector<double> u = gfwa::column_of(gfwa::random_gate_prefix(n, 1, rng), 0);
  gfwa::AttnConfig cfg = gfwa::AttnConfig::make(n, d_h, kernel == "full" ? n : s.window);
  const std::span<const double> gate = kernel == "gatedfwa" ? std::span<const double>(u) : std::span<const double>{};
  const gfwa::MatrixD p = gfwa::ref_probabilities<double>(q, k, gate, cfg);
  Output out(s.out);
  auto& os = out.stream();
  os << "i,j,p\n";
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) os << i << ',' << j << ',' << p(i, j) << '\n';
  return kExitOk;
}

int cmd_demo(const Settings& s, std::size_t steps, double lr) {
  gfwa::DemoConfig cfg;
  cfg.seed = s.seed;
  cfg.steps = steps;
  cfg.lr = lr;
  const gfwa::DemoResult r = gfwa::train_demo(cfg);
  Output out(s.out);
  auto& os = out.stream();
  os << "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) os << i << ',' << r.losses[i] << '\n';
  std::cerr << "demo: initial loss " << r.losses.front() << ", final loss " << r.losses.back()
            << (r.diverged ? " (diverged)" : "") << '\n';
  return r.diverged ? kExitCheckFailed : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated sliding-window attention: checks, benchmarks and dumps"};
  app.require_subcommand(1);

  Settings s;
  std::string suite = "all";
  std::size_t trials = 0;
  auto* check = app.add_subcommand("check", "run an invariant suite and emit one CSV row per check");
  check->add_option("suite", suite, "scan | attn-forward | attn-backward | recurrence | objective | nsa | layer | all");
  check->add_option("--trials", trials, "trials per randomized suite (0 keeps the suite default)");
  add_common_flags(*check, s);

  std::vector<std::string> kernels;
  bool forward_only = false;
  std::size_t n_cap = 1 << 16;
  auto* bench = app.add_subcommand("bench", "scaling benchmark over sequence lengths");
  bench->add_option("--kernels", kernels, "gatedfwa, swa, full, scan-onepass, scan-three-phase")->delimiter(',');
  bench->add_flag("--forward-only", forward_only, "skip the backward pass");
  bench->add_option("--n-cap", n_cap, "largest N the benchmark accepts");
  add_common_flags(*bench, s);

  std::string what;
  std::vector<std::string> fixtures;
  std::size_t bins = 20;
  std::string heat_kernel = "gatedfwa";
  auto* dump = app.add_subcommand("dump", "gate-value histogram or dense attention heatmap");
  dump->add_option("what", what, "gate-hist | attn-heatmap")->required();
  dump->add_option("--fixture", fixtures, "alpha fixture (N x H), one per layer");
  dump->add_option("--bins", bins, "histogram bins over [0, 1]");
  dump->add_option("--kernel", heat_kernel, "heatmap kernel: gatedfwa | swa | full");
  add_common_flags(*dump, s);

  std::size_t steps = 500;
  double lr = 0.5;
  auto* demo = app.add_subcommand("demo", "train the toy associative-recall model");
  demo->add_option("--steps", steps, "gradient steps");
  demo->add_option("--lr", lr, "learning rate");
  add_common_flags(*demo, s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (check->parsed()) {
      apply_config(s, *check);
      return cmd_check(suite, s, trials);
    }
    if (bench->parsed()) {
      apply_config(s, *bench);
      return cmd_bench(s, kernels, forward_only, n_cap);
    }
    if (dump->parsed()) {
      apply_config(s, *dump);
      if (what == "gate-hist") return dump_gate_hist(fixtures, bins, s);
      if (what == "attn-heatmap") return dump_heatmap(heat_kernel, s);
      throw UsageError("unknown dump target: " + what);
    }
    if (demo->parsed()) {
      apply_config(s, *demo);
      return cmd_demo(s, steps, lr);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const gfwa::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

#include "paraformer/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "paraformer/errors.hpp"
#include "paraformer/rng.hpp"

namespace paraformer {

PinPolicy pin_policy_from_string(const std::string& name) {
  if (name == "none") return PinPolicy::None;
  if (name == "round-robin") return PinPolicy::RoundRobin;
  throw ConfigError("unknown pinning policy '" + name + "' (expected none or round-robin)");
}

const char* pin_policy_name(PinPolicy p) {
  return p == PinPolicy::None ? "none" : "round-robin";
}

void PoolConfig::validate() const {
  if (workers < 1) throw ConfigError("pool workers must be >= 1 (got " + std::to_string(workers) + ")");
  if (warmup < 0) throw ConfigError("warmup reps must be >= 0");
  if (reps < 10) throw ConfigError("measured reps must be >= 10 (got " + std::to_string(reps) + ")");
}

WorkerPool::WorkerPool(int workers) {
  if (workers < 1) throw ConfigError("worker pool needs at least one worker");
  threads_.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this, i] { worker_loop(i); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    shutdown_ = true;
  }
  cv_workers_.notify_all();
  for (std::thread& t : threads_) t.join();
}

void WorkerPool::worker_loop(int id) {
  NoGradGuard no_grad;  // workers never build autodiff graphs
  std::uint64_t seen_generation = 0;
  for (;;) {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_workers_.wait(lock, [&] { return shutdown_ || current_.generation > seen_generation; });
    if (shutdown_) return;
    seen_generation = current_.generation;
    const int count = current_.count;
    const PinPolicy pinning = current_.pinning;
    const std::function<void(int)>* fn = current_.fn;
    int stripe_cursor = id;  // RoundRobin: worker id owns tasks id, id+W, ...

    for (;;) {
      int task = -1;
      if (pinning == PinPolicy::RoundRobin) {
        if (stripe_cursor < count) {
          task = stripe_cursor;
          stripe_cursor += workers();
        }
      } else if (current_.generation == seen_generation && current_.next < count) {
        task = current_.next++;
      }
      if (task < 0) break;
      lock.unlock();
      std::string error;
      try {
        (*fn)(task);
      } catch (const std::exception& e) {
        error = e.what();
      } catch (...) {
        error = "unknown error";
      }
      lock.lock();
      if (!error.empty()) {
        current_.failed.push_back(task);
        current_.messages.push_back(error);
      }
      if (--current_.remaining == 0) cv_done_.notify_all();
    }
  }
}

void WorkerPool::run_tasks(int count, PinPolicy pinning, const std::function<void(int)>& fn) {
  if (count == 0) return;
  std::unique_lock<std::mutex> lock(mutex_);
  current_.count = count;
  current_.pinning = pinning;
  current_.fn = &fn;
  current_.failed.clear();
  current_.messages.clear();
  current_.next = 0;
  current_.remaining = count;
  current_.generation = ++generation_;
  cv_workers_.notify_all();
  cv_done_.wait(lock, [&] { return current_.remaining == 0; });
  if (!current_.failed.empty()) {
    int worst = current_.failed[0];
    std::size_t worst_i = 0;
    for (std::size_t i = 1; i < current_.failed.size(); ++i) {
      if (current_.failed[i] < worst) {
        worst = current_.failed[i];
        worst_i = i;
      }
    }
    throw std::runtime_error("branch " + std::to_string(worst) + " failed: " +
                             current_.messages[worst_i]);
  }
}

Tensor infer_parallel(const Model& model, const Tensor& image, WorkerPool& pool,
                      const PoolConfig& cfg) {
  if (cfg.workers < 1) throw ConfigError("pool workers must be >= 1");
  NoGradGuard no_grad;
  Tensor tokens = patch_embed(image, model.embed);
  const int n = model.spec.branches;
  std::vector<Tensor> slots(static_cast<std::size_t>(n));
  pool.run_tasks(n, cfg.pinning, [&](int b) {
    slots[static_cast<std::size_t>(b)] = branch_forward(model, tokens, b);
  });
  Tensor aggregate = slots[0];
  for (int b = 1; b < n; ++b) aggregate = add(aggregate, slots[static_cast<std::size_t>(b)]);
  return classify_head(aggregate, model.head_w, model.head_b);
}

double speedup_theoretical(int serial_depth, int parallel_depth) {
  if (serial_depth < 1 || parallel_depth < 1) {
    throw DomainError("speedup_theoretical requires depths >= 1 (got " +
                      std::to_string(serial_depth) + ", " + std::to_string(parallel_depth) + ")");
  }
  return static_cast<double>(serial_depth) / static_cast<double>(parallel_depth);
}

namespace {

double percentile(std::vector<long long> sorted, double q) {
  // sorted ascending; linear interpolation between closest ranks
  if (sorted.empty()) return 0.0;
  const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) * (1.0 - frac) + static_cast<double>(sorted[hi]) * frac;
}

}  // namespace

BenchReport bench_latency(const std::vector<ModelSpec>& specs, const PoolConfig& pool_cfg,
                          std::uint64_t input_seed) {
  if (specs.empty()) throw ConfigError("bench_latency needs at least one model spec");
  pool_cfg.validate();
  for (std::size_t i = 1; i < specs.size(); ++i) {
    if (specs[i].channels != specs[0].channels || specs[i].img_h != specs[0].img_h ||
        specs[i].img_w != specs[0].img_w) {
      throw ConfigError("bench_latency: all specs must share one input shape");
    }
  }

  BenchReport report;
  report.input_channels = specs[0].channels;
  report.input_h = specs[0].img_h;
  report.input_w = specs[0].img_w;
  report.seed = input_seed;

  Rng rng(input_seed);
  std::vector<double> img(static_cast<std::size_t>(specs[0].channels) * specs[0].img_h * specs[0].img_w);
  for (double& v : img) v = rng.uniform(0.0, 1.0);
  Tensor image = Tensor::from_data({specs[0].channels, specs[0].img_h, specs[0].img_w}, std::move(img));

  WorkerPool pool(pool_cfg.workers);

  for (const ModelSpec& spec : specs) {
    Model model = build(spec);
    BenchEntry entry;
    entry.model = spec.name();
    entry.workers = pool_cfg.workers;
    entry.warmup = pool_cfg.warmup;
    entry.reps = pool_cfg.reps;
    entry.critical_depth = spec.depth;
    entry.samples_ns.reserve(static_cast<std::size_t>(pool_cfg.reps));
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < pool_cfg.warmup; ++i) infer_parallel(model, image, pool, pool_cfg);
    for (int i = 0; i < pool_cfg.reps; ++i) {
      const auto t0 = clock::now();
      infer_parallel(model, image, pool, pool_cfg);
      const auto t1 = clock::now();
      entry.samples_ns.push_back(
          std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    std::vector<long long> sorted = entry.samples_ns;
    std::sort(sorted.begin(), sorted.end());
    entry.median_ns = percentile(sorted, 0.5);
    entry.p10_ns = percentile(sorted, 0.1);
    entry.p90_ns = percentile(sorted, 0.9);
    report.entries.push_back(std::move(entry));
  }

  // Baseline: deepest serial spec, else the first entry.
  std::size_t baseline = 0;
  bool have_serial = false;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].topology == Topology::Serial) {
      if (!have_serial || specs[i].depth > specs[baseline].depth) baseline = i;
      have_serial = true;
    }
  }
  report.baseline_model = report.entries[baseline].model;
  report.entries[baseline].is_baseline = true;
  const int base_depth = report.entries[baseline].critical_depth;
  const double base_median = report.entries[baseline].median_ns;
  for (BenchEntry& e : report.entries) {
    e.theoretical_speedup = speedup_theoretical(base_depth, e.critical_depth);
    e.measured_speedup = e.median_ns > 0.0 ? base_median / e.median_ns : 0.0;
  }
  return report;
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  os << "latency benchmark  input=" << input_channels << "x" << input_h << "x" << input_w
     << "  baseline=" << baseline_model << "  seed=" << seed << "\n";
  os << "model                workers reps  median_ms   p10_ms    p90_ms    theoretical  measured\n";
  for (const BenchEntry& e : entries) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s %-7d %-5d %-11.3f %-9.3f %-9.3f %-12.3f %-9.3f%s\n",
                  e.model.c_str(), e.workers, e.reps, e.median_ns / 1e6, e.p10_ns / 1e6,
                  e.p90_ns / 1e6, e.theoretical_speedup, e.measured_speedup,
                  e.is_baseline ? "  (baseline)" : "");
    os << buf;
  }
  return os.str();
}

std::string BenchReport::to_json() const {
  std::ostringstream os;
  os << "{\n  \"input\": [" << input_channels << ", " << input_h << ", " << input_w << "],\n";
  os << "  \"baseline\": \"" << baseline_model << "\",\n  \"seed\": " << seed << ",\n";
  os << "  \"entries\": [\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const BenchEntry& e = entries[i];
    os << "    {\"model\": \"" << e.model << "\", \"workers\": " << e.workers
       << ", \"warmup\": " << e.warmup << ", \"reps\": " << e.reps
       << ", \"median_ns\": " << e.median_ns << ", \"p10_ns\": " << e.p10_ns
       << ", \"p90_ns\": " << e.p90_ns << ", \"critical_depth\": " << e.critical_depth
       << ", \"theoretical_speedup\": " << e.theoretical_speedup
       << ", \"measured_speedup\": " << e.measured_speedup
       << ", \"is_baseline\": " << (e.is_baseline ? "true" : "false") << "}"
       << (i + 1 < entries.size() ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

std::string BenchReport::samples_csv() const {
  std::ostringstream os;
  os << "model,workers,rep,ns\n";
  for (const BenchEntry& e : entries)
    for (std::size_t i = 0; i < e.samples_ns.size(); ++i)
      os << e.model << "," << e.workers << "," << i << "," << e.samples_ns[i] << "\n";
  return os.str();
}

}  // namespace paraformer

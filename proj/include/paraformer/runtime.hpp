#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "paraformer/model.hpp"
#include "paraformer/tensor.hpp"

namespace paraformer {

enum class PinPolicy { None, RoundRobin };
PinPolicy pin_policy_from_string(const std::string& name);
const char* pin_policy_name(PinPolicy p);

struct PoolConfig {
  int workers = 1;
  PinPolicy pinning = PinPolicy::RoundRobin;
  int warmup = 3;
  int reps = 30;

  void validate() const;
};

// Persistent worker pool. One task set runs at a time: run_tasks(n, fn)
// executes fn(0..n-1) across the workers and returns once all are done.
// RoundRobin assigns task i to worker i % workers up front; None lets
// workers pull from a shared counter. Task outputs must go to per-index
// slots; ordering of execution is unspecified, so determinism has to come
// from a fixed reduction performed by the caller afterwards.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int workers() const { return static_cast<int>(threads_.size()); }

  // Throws a runtime_error naming the lowest failed task index if any task
  // threw; remaining tasks still run to completion first.
  void run_tasks(int count, PinPolicy pinning, const std::function<void(int)>& fn);

 private:
  void worker_loop(int id);

  struct TaskSet {
    int count = 0;
    PinPolicy pinning = PinPolicy::RoundRobin;
    const std::function<void(int)>* fn = nullptr;
    std::vector<int> failed;      // task indices that threw
    std::vector<std::string> messages;
    int next = 0;       // shared cursor for PinPolicy::None
    int remaining = 0;  // tasks not yet finished
    std::uint64_t generation = 0;
  };

  std::mutex mutex_;
  std::condition_variable cv_workers_;
  std::condition_variable cv_done_;
  TaskSet current_;
  std::uint64_t generation_ = 0;
  bool shutdown_ = false;
  std::vector<std::thread> threads_;
};

// Branch-parallel inference: the embedding runs once on the caller, each
// branch runs on the pool over shared read-only parameters, branch outputs
// land in per-branch slots and are summed by the caller in ascending branch
// order. Bitwise identical to forward() for any worker count.
Tensor infer_parallel(const Model& model, const Tensor& image, WorkerPool& pool,
                      const PoolConfig& cfg);

struct BenchEntry {
  std::string model;
  int workers = 0;
  int warmup = 0;
  int reps = 0;
  std::vector<long long> samples_ns;  // one per measured rep
  double median_ns = 0.0;
  double p10_ns = 0.0;
  double p90_ns = 0.0;
  int critical_depth = 0;  // blocks on the latency-critical path
  bool is_baseline = false;
  double theoretical_speedup = 1.0;  // baseline depth / this depth
  double measured_speedup = 1.0;     // baseline median / this median
};

struct BenchReport {
  std::string baseline_model;
  int input_channels = 0, input_h = 0, input_w = 0;
  std::uint64_t seed = 0;
  std::vector<BenchEntry> entries;

  std::string to_text() const;
  std::string to_json() const;
  // One row per sample: model,workers,rep,ns
  std::string samples_csv() const;
};

// Predicted serial-over-parallel inference ratio for equal layer budgets.
double speedup_theoretical(int serial_depth, int parallel_depth);

// Measures every spec on the same input. The baseline for speed-up columns
// is the deepest serial spec (first of that depth if tied); if no serial
// spec is present the first entry is the baseline.
BenchReport bench_latency(const std::vector<ModelSpec>& specs, const PoolConfig& pool_cfg,
                          std::uint64_t input_seed);

}  // namespace paraformer

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "paraformer/dataset.hpp"
#include "paraformer/model.hpp"

namespace paraformer {

enum class OptimizerKind { Sgd, Adam };
OptimizerKind optimizer_from_string(const std::string& name);
const char* optimizer_name(OptimizerKind k);

struct TrainConfig {
  int epochs = 20;
  int batch = 64;
  double lr = 3e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_acc = 0.0;
  int best_epoch = 0;
};

// Mini-batch cross-entropy training, single worker, deterministic given the
// config seed (one shuffle stream across epochs, per-sample gradient
// accumulation in batch order). Non-finite loss aborts with epoch/batch
// diagnostics. When best_checkpoint_path is non-empty, the best-validation
// model is written there each time it improves.
TrainResult train(Model& model, const Dataset& ds, const Splits& splits, const TrainConfig& cfg,
                  const Normalization& norm, const std::string& best_checkpoint_path = "",
                  std::ostream* log = nullptr);

// CSV: epoch,train_loss,val_acc
std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace paraformer

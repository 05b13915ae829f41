#include "paraformer/train.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "paraformer/checkpoint.hpp"
#include "paraformer/errors.hpp"
#include "paraformer/ops.hpp"
#include "paraformer/rng.hpp"

namespace paraformer {

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (lr < 0.0) throw ConfigError("train.lr must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("adam betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw ConfigError("adam eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
}

namespace {

// Adam moment buffers, one pair per parameter tensor in model order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;
};

void apply_update(Model& model, const TrainConfig& cfg, AdamState& adam) {
  std::size_t slot = 0;
  if (cfg.optimizer == OptimizerKind::Adam) ++adam.step;
  model.for_each_param([&](const std::string&, Tensor& p) {
    double* w = p.data();
    const std::vector<double> g = p.grad();
    if (cfg.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < p.numel(); ++i)
        w[i] -= cfg.lr * (g[i] + cfg.weight_decay * w[i]);
    } else {
      if (slot >= adam.m.size()) {
        adam.m.emplace_back(p.numel(), 0.0);
        adam.v.emplace_back(p.numel(), 0.0);
      }
      std::vector<double>& m = adam.m[slot];
      std::vector<double>& v = adam.v[slot];
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w[i]);
      }
    }
    ++slot;
  });
  if (model.spec.precision == Precision::F32) round_params_to_f32(model);
}

}  // namespace

TrainResult train(Model& model, const Dataset& ds, const Splits& splits, const TrainConfig& cfg,
                  const Normalization& norm, const std::string& best_checkpoint_path,
                  std::ostream* log) {
  cfg.validate();
  if (splits.train.empty()) throw ConfigError("training split is empty");
  model.set_requires_grad(true);

  Rng shuffle_rng(cfg.seed);
  AdamState adam;
  TrainResult result;
  result.best_val_acc = -1.0;

  std::vector<int> order = splits.train;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const int idx = order[i];
        Tensor logits = forward(model, to_input(ds, static_cast<std::size_t>(idx), norm));
        Tensor loss = cross_entropy(logits, {ds.labels[static_cast<std::size_t>(idx)]});
        batch_loss += loss.item();
        // scale before backward so per-sample gradients accumulate to the
        // batch-mean gradient
        scale(loss, inv_batch).backward();
      }
      batch_loss *= inv_batch;
      if (!std::isfinite(batch_loss)) {
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index));
      }
      loss_sum += batch_loss * static_cast<double>(end - start);
      seen += end - start;
      apply_update(model, cfg, adam);
      ++batch_index;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    if (!splits.val.empty()) {
      stats.val_acc = evaluate(model, ds, splits.val, norm).overall;
    }
    result.history.push_back(stats);
    if (stats.val_acc > result.best_val_acc) {
      result.best_val_acc = stats.val_acc;
      result.best_epoch = epoch;
      if (!best_checkpoint_path.empty()) save_checkpoint(model, best_checkpoint_path);
    }
    if (log) {
      (*log) << "epoch " << epoch << "/" << cfg.epochs << "  train_loss=" << stats.train_loss
             << "  val_acc=" << stats.val_acc << "\n";
      log->flush();
    }
  }
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_acc\n";
  for (const EpochStats& e : history) os << e.epoch << "," << e.train_loss << "," << e.val_acc << "\n";
  return os.str();
}

}  // namespace paraformer

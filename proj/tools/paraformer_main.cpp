// Command-line entry point: verify, dof, train, eval, bench, synth-data.
// Exit codes: 0 success, 1 verification/assertion failure, 2 usage or
// configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "paraformer/checkpoint.hpp"
#include "paraformer/config.hpp"
#include "paraformer/dataset.hpp"
#include "paraformer/errors.hpp"
#include "paraformer/expansion.hpp"
#include "paraformer/model.hpp"
#include "paraformer/runtime.hpp"
#include "paraformer/train.hpp"

namespace fs = std::filesystem;
using namespace paraformer;

namespace {

constexpr const char* kVersion = "0.1.0";

ModelSpec spec_from_config(const Config& cfg, const std::string& name) {
  ModelSpec spec;
  spec.embed_dim = static_cast<int>(cfg.get_int("model.embed_dim"));
  spec.heads = static_cast<int>(cfg.get_int("model.heads"));
  spec.ffn_dim = static_cast<int>(cfg.get_int("model.ffn_dim"));
  spec.patch = static_cast<int>(cfg.get_int("model.patch"));
  spec.channels = static_cast<int>(cfg.get_int("model.channels"));
  spec.img_h = static_cast<int>(cfg.get_int("model.img_h"));
  spec.img_w = static_cast<int>(cfg.get_int("model.img_w"));
  spec.classes = static_cast<int>(cfg.get_int("model.classes"));
  spec.variant = block_variant_from_string(cfg.get("model.variant"));
  spec.act = activation_from_string(cfg.get("model.activation"));
  spec.seed = cfg.get_u64("seed");
  spec.precision = precision_from_string(cfg.get("precision"));
  spec = ModelSpec::from_name(name, spec);
  spec.validate();
  return spec;
}

Normalization norm_from_config(const Config& cfg) {
  Normalization n;
  n.mean = cfg.get_doubles("data.mean");
  n.stddev = cfg.get_doubles("data.std");
  return n;
}

void write_manifest(const Config& cfg, const std::string& command,
                    const std::vector<std::string>& artifacts) {
  const std::string out_dir = cfg.get("out");
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["tool"] = "paraformer";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = cfg.get_u64("seed");
  j["artifacts"] = artifacts;
  nlohmann::json settings;
  std::istringstream lines(cfg.print());
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t eq = line.find('=');
    const std::size_t hash = line.find('#');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1, hash - eq - 1);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.pop_back();
    settings[key] = {{"value", value}, {"source", line.substr(hash + 2)}};
  }
  j["settings"] = settings;
  std::ofstream f(out_dir + "/manifest.json");
  f << j.dump(2) << "\n";
}

void write_text(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << content;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stoi(part));
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(part);
  return out;
}

int cmd_verify(const Config& cfg, const std::string& dims, int heads, int ffn_dim,
               const std::string& depths, int seeds, double tolerance, bool tol_set,
               std::string report_path) {
  VerifyOptions opt;
  const std::size_t x = dims.find('x');
  if (x == std::string::npos) throw ConfigError("--dims must look like SxD, e.g. 3x4");
  opt.seq = std::stoi(dims.substr(0, x));
  opt.dim = std::stoi(dims.substr(x + 1));
  opt.heads = heads;
  opt.ffn_dim = ffn_dim > 0 ? ffn_dim : 2 * opt.dim;
  opt.depths = parse_int_list(depths);
  opt.seeds = seeds;
  if (tol_set) opt.tolerance = tolerance;
  opt.seed0 = cfg.get_u64("seed");

  VerifyReport report = run_verification(opt);
  const std::string table = report.to_table();
  std::cout << table;
  if (report_path.empty()) report_path = cfg.get("out") + "/verify_report.txt";
  write_text(report_path, table);
  write_manifest(cfg, "verify", {report_path});
  if (!report.all_pass()) {
    std::cout << "verification FAILED\n";
    return 1;
  }
  std::cout << "verification passed\n";
  return 0;
}

int cmd_dof(const std::string& name) {
  ModelSpec parsed = ModelSpec::from_name(name);
  // The trailing number of a dof label counts TOTAL blocks (table
  // convention), unlike build/train/eval/bench where it counts branches.
  LabelBookkeeping bk = parsed.topology == Topology::Serial
                            ? label_bookkeeping(parsed.depth, parsed.depth)
                            : label_bookkeeping(parsed.depth, parsed.branches);
  std::cout << "label:                  " << name << "\n";
  std::cout << "branch depth:           " << bk.depth << "\n";
  std::cout << "total blocks:           " << bk.total_blocks << "\n";
  std::cout << "branches:               " << bk.branches << "\n";
  std::cout << "dof per branch:         " << serial_dof(bk.depth) << "\n";
  std::cout << "degrees of freedom:     " << bk.dof << "\n";
  std::ostringstream layers;
  if (bk.bias.per_branch.empty()) {
    layers << "(0)";
  } else {
    for (std::size_t i = 0; i < bk.bias.per_branch.size(); ++i)
      layers << (i ? "+" : "") << bk.bias.per_branch[i];
  }
  std::cout << "bias uat layers/branch: " << layers.str() << " = " << bk.bias.per_branch_sum << "\n";
  std::cout << "bias uat layers total:  " << bk.bias.total << "\n";
  return 0;
}

int cmd_train(const Config& cfg) {
  const std::string out_dir = cfg.get("out");
  fs::create_directories(out_dir);
  ModelSpec spec = spec_from_config(cfg, cfg.get("model.name"));
  Model model = build(spec);

  Dataset ds = load_cifar10(cfg.get("data.path"));
  Splits splits = make_splits(ds, static_cast<int>(cfg.get_int("train.train_n")),
                              static_cast<int>(cfg.get_int("train.val_n")), TestSource::Designated,
                              cfg.get_u64("seed"));
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  tc.batch = static_cast<int>(cfg.get_int("train.batch"));
  tc.lr = cfg.get_double("train.lr");
  tc.optimizer = optimizer_from_string(cfg.get("train.optimizer"));
  tc.beta1 = cfg.get_double("train.beta1");
  tc.beta2 = cfg.get_double("train.beta2");
  tc.adam_eps = cfg.get_double("train.eps");
  tc.weight_decay = cfg.get_double("train.weight_decay");
  tc.seed = cfg.get_u64("seed");

  std::cout << "training " << spec.name() << " on " << ds.provenance << " ("
            << splits.train.size() << " train / " << splits.val.size() << " val)\n";
  const std::string best_path = out_dir + "/best.pfck";
  TrainResult result = train(model, ds, splits, tc, norm_from_config(cfg), best_path, &std::cout);

  const std::string history_path = out_dir + "/history.csv";
  write_text(history_path, history_csv(result.history));
  const std::string final_path = out_dir + "/final.pfck";
  save_checkpoint(model, final_path);
  write_manifest(cfg, "train", {history_path, best_path, final_path});
  std::cout << "best val_acc " << result.best_val_acc << " at epoch " << result.best_epoch << "\n";
  std::cout << "artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, const std::string& checkpoint, const std::string& split) {
  Model model = checkpoint.empty() ? build(spec_from_config(cfg, cfg.get("model.name")))
                                   : load_checkpoint(checkpoint);
  Dataset ds = load_cifar10(cfg.get("data.path"));
  Splits splits = make_splits(ds, static_cast<int>(cfg.get_int("train.train_n")),
                              static_cast<int>(cfg.get_int("train.val_n")), TestSource::Designated,
                              cfg.get_u64("seed"));
  const std::vector<int>* indices = nullptr;
  if (split == "test")
    indices = &splits.test;
  else if (split == "val")
    indices = &splits.val;
  else if (split == "train")
    indices = &splits.train;
  else
    throw ConfigError("--split must be test, val or train");
  if (indices->empty()) throw ConfigError("requested split '" + split + "' is empty");

  EvalResult res = evaluate(model, ds, *indices, norm_from_config(cfg));
  std::cout << "model " << model.spec.name() << "  split " << split << "  samples " << res.total
            << "\n";
  std::cout << "overall accuracy: " << res.overall << "\n";
  for (std::size_t c = 0; c < res.per_class.size(); ++c) {
    const std::string cname =
        c < ds.class_names.size() ? ds.class_names[c] : ("class" + std::to_string(c));
    std::cout << "  class " << c << " (" << cname << "): ";
    if (res.class_defined[c])
      std::cout << res.per_class[c] << " (" << res.class_total[c] << " samples)\n";
    else
      std::cout << "undefined (absent from split)\n";
  }
  return 0;
}

int cmd_bench(const Config& cfg) {
  PoolConfig pool;
  pool.workers = static_cast<int>(cfg.get_int("bench.workers"));
  pool.warmup = static_cast<int>(cfg.get_int("bench.warmup"));
  pool.reps = static_cast<int>(cfg.get_int("bench.reps"));
  pool.pinning = pin_policy_from_string(cfg.get("bench.pinning"));
  pool.validate();

  std::vector<ModelSpec> specs;
  for (const std::string& name : split_list(cfg.get("bench.models")))
    specs.push_back(spec_from_config(cfg, name));

  BenchReport report = bench_latency(specs, pool, cfg.get_u64("seed"));
  std::cout << report.to_text();

  const std::string out_dir = cfg.get("out");
  fs::create_directories(out_dir);
  write_text(out_dir + "/bench.txt", report.to_text());
  write_text(out_dir + "/bench.json", report.to_json());
  write_text(out_dir + "/bench_samples.csv", report.samples_csv());
  write_manifest(cfg, "bench",
                 {out_dir + "/bench.txt", out_dir + "/bench.json", out_dir + "/bench_samples.csv"});
  return 0;
}

int cmd_synth_data(const Config& cfg, const std::string& dir, int train_n, int test_n,
                   double noise) {
  write_synthetic_cifar10(dir, train_n, test_n, cfg.get_u64("seed"), noise);
  std::cout << "wrote " << train_n << " train + " << test_n << " test records to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paraformer: parallel-branch vision transformer toolkit"};
  app.require_subcommand(0, 1);
  app.fallthrough();  // global flags may appear after the subcommand

  std::string config_file, precision, out_dir;
  std::uint64_t seed = 0;
  bool print_config = false;
  auto* seed_opt = app.add_option("--seed", seed, "global RNG seed");
  auto* out_opt = app.add_option("--out", out_dir, "run directory for artifacts");
  app.add_option("--config", config_file, "key=value config file");
  auto* prec_opt = app.add_option("--precision", precision, "f32 or f64")
                       ->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--print-config", print_config, "print the merged config and exit");

  // verify
  auto* verify = app.add_subcommand("verify", "lifting/expansion equivalence suite");
  std::string v_dims = "3x4", v_depths = "1,2,3", v_report;
  int v_heads = 2, v_ffn = 0, v_seeds = 5;
  double v_tol = 0.0;
  verify->add_option("--dims", v_dims, "token dims SxD (default 3x4)");
  verify->add_option("--heads", v_heads, "attention heads");
  verify->add_option("--ffn-dim", v_ffn, "hidden width (default 2*D)");
  verify->add_option("--depths", v_depths, "comma list of stack depths");
  verify->add_option("--seeds", v_seeds, "random seeds per construct");
  auto* tol_opt = verify->add_option("--tolerance", v_tol, "override all tolerances");
  verify->add_option("--report", v_report, "report file (default <out>/verify_report.txt)");

  // dof
  auto* dof = app.add_subcommand("dof", "degrees-of-freedom and bias-layer bookkeeping");
  std::string dof_name;
  dof->add_option("name", dof_name,
                  "label, e.g. para-former-6-24 (trailing number = total blocks) or vit-6")
      ->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model; writes history.csv and checkpoints");
  std::string t_model, t_data, t_preset;
  int t_epochs = -1, t_batch = -1, t_train_n = -1, t_val_n = -1;
  double t_lr = -1.0, t_wd = -1.0;
  std::string t_optimizer;
  train_cmd->add_option("--model", t_model, "model name, e.g. para-former-1-6 or vit-6");
  train_cmd->add_option("--data", t_data, "dataset directory (CIFAR-10 binary batches)");
  train_cmd->add_option("--preset", t_preset, "named preset, e.g. desk-cifar10");
  train_cmd->add_option("--epochs", t_epochs, "");
  train_cmd->add_option("--batch", t_batch, "");
  train_cmd->add_option("--lr", t_lr, "");
  train_cmd->add_option("--optimizer", t_optimizer, "sgd or adam");
  train_cmd->add_option("--weight-decay", t_wd, "");
  train_cmd->add_option("--train-n", t_train_n, "training split size");
  train_cmd->add_option("--val-n", t_val_n, "validation split size");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "overall and per-class accuracy");
  std::string e_checkpoint, e_split = "test", e_model, e_data, e_preset;
  eval_cmd->add_option("--checkpoint", e_checkpoint, "checkpoint to load");
  eval_cmd->add_option("--model", e_model, "evaluate a freshly initialized model instead");
  eval_cmd->add_option("--data", e_data, "dataset directory");
  eval_cmd->add_option("--split", e_split, "test, val or train");
  eval_cmd->add_option("--preset", e_preset, "named preset (fixes split sizes)");

  // bench
  auto* bench = app.add_subcommand("bench", "latency benchmark across topologies");
  std::string b_models, b_pinning;
  int b_workers = -1, b_reps = -1, b_warmup = -1;
  bench->add_option("--models", b_models, "comma list of model names");
  bench->add_option("--workers", b_workers, "pool size");
  bench->add_option("--reps", b_reps, "measured reps (>= 10)");
  bench->add_option("--warmup", b_warmup, "warmup reps");
  bench->add_option("--pinning", b_pinning, "none or round-robin");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "deterministic CIFAR-10-format fixture dataset");
  std::string s_dir = "data/synth-cifar10";
  int s_train = 6000, s_test = 2000;
  double s_noise = 80.0;
  synth->add_option("--dir", s_dir, "output directory");
  synth->add_option("--train", s_train, "train records across data_batch_1..5.bin");
  synth->add_option("--test", s_test, "test records in test_batch.bin");
  synth->add_option("--noise", s_noise, "pixel noise sigma");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    Config cfg = Config::defaults();
    // precedence: defaults < preset < file < flags
    if (train_cmd->parsed() && !t_preset.empty()) cfg.apply_preset(t_preset);
    if (eval_cmd->parsed() && !e_preset.empty()) cfg.apply_preset(e_preset);
    if (!config_file.empty()) cfg.load_file(config_file);
    if (seed_opt->count()) cfg.set("seed", std::to_string(seed), "flag");
    if (out_opt->count()) cfg.set("out", out_dir, "flag");
    if (prec_opt->count()) cfg.set("precision", precision, "flag");

    if (train_cmd->parsed()) {
      if (!t_model.empty()) cfg.set("model.name", t_model, "flag");
      if (!t_data.empty()) cfg.set("data.path", t_data, "flag");
      if (t_epochs >= 0) cfg.set("train.epochs", std::to_string(t_epochs), "flag");
      if (t_batch >= 0) cfg.set("train.batch", std::to_string(t_batch), "flag");
      if (t_lr >= 0) cfg.set("train.lr", std::to_string(t_lr), "flag");
      if (!t_optimizer.empty()) cfg.set("train.optimizer", t_optimizer, "flag");
      if (t_wd >= 0) cfg.set("train.weight_decay", std::to_string(t_wd), "flag");
      if (t_train_n >= 0) cfg.set("train.train_n", std::to_string(t_train_n), "flag");
      if (t_val_n >= 0) cfg.set("train.val_n", std::to_string(t_val_n), "flag");
    }
    if (eval_cmd->parsed()) {
      if (!e_model.empty()) cfg.set("model.name", e_model, "flag");
      if (!e_data.empty()) cfg.set("data.path", e_data, "flag");
    }
    if (bench->parsed()) {
      if (!b_models.empty()) cfg.set("bench.models", b_models, "flag");
      if (b_workers >= 0) cfg.set("bench.workers", std::to_string(b_workers), "flag");
      if (b_reps >= 0) cfg.set("bench.reps", std::to_string(b_reps), "flag");
      if (b_warmup >= 0) cfg.set("bench.warmup", std::to_string(b_warmup), "flag");
      if (!b_pinning.empty()) cfg.set("bench.pinning", b_pinning, "flag");
    }

    if (print_config) {
      std::cout << cfg.print();
      return 0;
    }

    if (verify->parsed())
      return cmd_verify(cfg, v_dims, v_heads, v_ffn, v_depths, v_seeds, v_tol,
                        tol_opt->count() > 0, v_report);
    if (dof->parsed()) return cmd_dof(dof_name);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg, e_checkpoint, e_split);
    if (bench->parsed()) return cmd_bench(cfg);
    if (synth->parsed()) return cmd_synth_data(cfg, s_dir, s_train, s_test, s_noise);

    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return 2;
  } catch (const UnsupportedDepthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

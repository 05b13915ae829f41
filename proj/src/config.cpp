#include "paraformer/config.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "paraformer/errors.hpp"

namespace paraformer {

Config Config::defaults() {
  Config c;
  auto d = [&](const char* k, const char* v) { c.set(k, v, "default"); };
  d("seed", "42");
  d("out", "runs/latest");
  d("precision", "f64");
  d("data.path", "data/cifar10");
  d("data.mean", "0.4914,0.4822,0.4465");
  d("data.std", "0.2470,0.2435,0.2616");
  d("model.name", "para-former-1-1");
  d("model.embed_dim", "32");
  d("model.heads", "4");
  d("model.ffn_dim", "64");
  d("model.patch", "8");
  d("model.channels", "3");
  d("model.img_h", "32");
  d("model.img_w", "32");
  d("model.classes", "10");
  d("model.variant", "practical");
  d("model.activation", "gelu");
  d("train.epochs", "20");
  d("train.batch", "64");
  d("train.lr", "0.0003");
  d("train.optimizer", "adam");
  d("train.beta1", "0.9");
  d("train.beta2", "0.999");
  d("train.eps", "1e-8");
  d("train.weight_decay", "0");
  d("train.train_n", "5000");
  d("train.val_n", "500");
  d("bench.workers", "1");
  d("bench.warmup", "3");
  d("bench.reps", "30");
  d("bench.pinning", "round-robin");
  d("bench.models", "vit-1,vit-8,para-former-1-8");
  return c;
}

void Config::set(const std::string& key, const std::string& value, const std::string& source) {
  values_[key] = value;
  sources_[key] = source;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const std::size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + line +
                        "'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const std::size_t ke = key.find_last_not_of(" \t");
    key = key.substr(0, ke + 1);
    const std::size_t vb = value.find_first_not_of(" \t");
    value = vb == std::string::npos ? "" : value.substr(vb);
    set(key, value, "file");
  }
}

void Config::apply_preset(const std::string& name) {
  auto p = [&](const char* k, const char* v) { set(k, v, "preset:" + name); };
  if (name == "desk-cifar10") {
    // 5000/500 split, 20 epochs, small model; sized for a single CPU core
    p("train.train_n", "5000");
    p("train.val_n", "500");
    p("train.epochs", "20");
    p("train.batch", "64");
    p("train.lr", "0.001");
    p("model.embed_dim", "32");
    p("model.heads", "4");
    p("model.ffn_dim", "64");
    p("model.patch", "8");
    return;
  }
  throw ConfigError("unknown preset '" + name + "' (known: desk-cifar10)");
}

std::string Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

std::string Config::source(const std::string& key) const {
  auto it = sources_.find(key);
  return it == sources_.end() ? "unset" : it->second;
}

long long Config::get_int(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t pos = 0;
    const long long out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: '" + v + "'");
  }
}

double Config::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: '" + v + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an unsigned integer: '" + v + "'");
  }
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  const std::string v = get(key);
  std::vector<double> out;
  std::istringstream is(v);
  std::string part;
  while (std::getline(is, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has non-numeric entry '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " is empty");
  return out;
}

std::string Config::print() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) {
    os << key << "=" << value;
    for (std::size_t i = key.size() + value.size(); i < 44; ++i) os << ' ';
    os << " # " << source(key) << "\n";
  }
  return os.str();
}

}  // namespace paraformer

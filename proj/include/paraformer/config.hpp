#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace paraformer {

// Flat key=value configuration with dotted section prefixes (model.*,
// train.*, bench.*, data.*). Later sources win: defaults < preset < file <
// flag. Every effective setting remembers its source for --print-config.
class Config {
 public:
  static Config defaults();

  void set(const std::string& key, const std::string& value, const std::string& source);
  void load_file(const std::string& path);  // source "file"
  void apply_preset(const std::string& name);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key) const;
  std::string source(const std::string& key) const;

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma separated

  // key=value lines with a trailing "# source" comment, parseable back by
  // load_file (comments ignored).
  std::string print() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> sources_;
};

}  // namespace paraformer

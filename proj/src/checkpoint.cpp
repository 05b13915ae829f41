#include "paraformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "paraformer/errors.hpp"

namespace paraformer {

std::string spec_to_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << "model.name=" << spec.name() << "\n";
  os << "model.embed_dim=" << spec.embed_dim << "\n";
  os << "model.heads=" << spec.heads << "\n";
  os << "model.ffn_dim=" << spec.ffn_dim << "\n";
  os << "model.patch=" << spec.patch << "\n";
  os << "model.channels=" << spec.channels << "\n";
  os << "model.img_h=" << spec.img_h << "\n";
  os << "model.img_w=" << spec.img_w << "\n";
  os << "model.classes=" << spec.classes << "\n";
  os << "model.variant=" << block_variant_name(spec.variant) << "\n";
  os << "model.activation=" << activation_name(spec.act) << "\n";
  os << "model.seed=" << spec.seed << "\n";
  os << "model.precision=" << precision_name(spec.precision) << "\n";
  return os.str();
}

ModelSpec spec_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed spec line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("spec text missing key " + key);
    return it->second;
  };
  ModelSpec spec;
  spec = ModelSpec::from_name(need("model.name"), spec);
  spec.embed_dim = std::stoi(need("model.embed_dim"));
  spec.heads = std::stoi(need("model.heads"));
  spec.ffn_dim = std::stoi(need("model.ffn_dim"));
  spec.patch = std::stoi(need("model.patch"));
  spec.channels = std::stoi(need("model.channels"));
  spec.img_h = std::stoi(need("model.img_h"));
  spec.img_w = std::stoi(need("model.img_w"));
  spec.classes = std::stoi(need("model.classes"));
  spec.variant = block_variant_from_string(need("model.variant"));
  spec.act = activation_from_string(need("model.activation"));
  spec.seed = std::stoull(need("model.seed"));
  spec.precision = precision_from_string(need("model.precision"));
  spec.validate();
  return spec;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }

  void need(std::size_t n, const std::string& what) {
    if (pos + n > bytes.size()) {
      throw FormatError("checkpoint truncated while reading " + what,
                        static_cast<long long>(pos));
    }
  }

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 4;
    return v;
  }

  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string out;
  out += "PFCK";
  put_u32(out, kCheckpointVersion);
  const std::string spec_text = spec_to_text(model.spec);
  put_u32(out, static_cast<std::uint32_t>(spec_text.size()));
  out += spec_text;

  const bool f32 = model.spec.precision == Precision::F32;
  model.for_each_param([&](const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const double* data = t.data();
    if (f32) {
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(data[i]);
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.append(buf, 4);
      }
    } else {
      out.append(reinterpret_cast<const char*>(data), t.numel() * sizeof(double));
    }
  });

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ConfigError("failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string bytes = buf.str();
  Reader r{bytes};

  const std::string magic = r.str(4, "magic");
  if (magic != "PFCK") throw FormatError("bad checkpoint magic '" + magic + "'", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (reader is " +
                          std::to_string(kCheckpointVersion) + ")",
                      4);
  }
  const std::uint32_t spec_len = r.u32("spec length");
  const std::string spec_text = r.str(spec_len, "spec text");
  const ModelSpec spec = spec_from_text(spec_text);

  Model model = build(spec);
  const bool f32 = spec.precision == Precision::F32;

  model.for_each_param([&](const std::string& expected_name, Tensor& t) {
    const long long record_offset = static_cast<long long>(r.pos);
    if (r.eof()) {
      throw FormatError("checkpoint ends before parameter " + expected_name, record_offset);
    }
    const std::uint32_t name_len = r.u32("name length of " + expected_name);
    const std::string name = r.str(name_len, "name of " + expected_name);
    if (name != expected_name) {
      throw FormatError("parameter order mismatch: expected " + expected_name + ", found " + name,
                        record_offset);
    }
    const std::uint32_t rank = r.u32("rank of " + name);
    if (rank != t.shape().size()) {
      throw FormatError("rank mismatch for " + name, static_cast<long long>(r.pos) - 4);
    }
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dims of " + name);
      if (static_cast<int>(d) != t.shape()[i]) {
        throw FormatError("dimension mismatch for " + name, static_cast<long long>(r.pos) - 4);
      }
    }
    double* data = t.data();
    if (f32) {
      r.need(t.numel() * 4, "payload of " + name);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        float v;
        std::memcpy(&v, bytes.data() + r.pos + i * 4, 4);
        data[i] = static_cast<double>(v);
      }
      r.pos += t.numel() * 4;
    } else {
      r.need(t.numel() * 8, "payload of " + name);
      std::memcpy(data, bytes.data() + r.pos, t.numel() * 8);
      r.pos += t.numel() * 8;
    }
  });
  if (!r.eof()) {
    throw FormatError("trailing bytes after last parameter", static_cast<long long>(r.pos));
  }
  return model;
}

}  // namespace paraformer

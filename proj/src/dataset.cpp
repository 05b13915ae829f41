#include "paraformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "paraformer/errors.hpp"
#include "paraformer/rng.hpp"

namespace fs = std::filesystem;

namespace paraformer {

namespace {

constexpr int kCifarDim = 32;
constexpr int kCifarChannels = 3;
constexpr int kCifarClasses = 10;
constexpr std::size_t kCifarRecord = 3073;  // label + 3*1024

const char* kCifarNames[kCifarClasses] = {"airplane", "automobile", "bird",  "cat",  "deer",
                                          "dog",      "frog",       "horse", "ship", "truck"};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!in) throw ConfigError("failed reading file: " + path);
  return bytes;
}

void append_cifar_records(Dataset& ds, const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    const long long offset = static_cast<long long>(bytes.size() - bytes.size() % kCifarRecord);
    throw FormatError("truncated record in " + path + ": file size " +
                          std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecord),
                      offset);
  }
  const std::size_t records = bytes.size() / kCifarRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t label = bytes[r * kCifarRecord];
    if (label >= kCifarClasses) {
      throw FormatError("label byte " + std::to_string(label) + " out of range in " + path,
                        static_cast<long long>(r * kCifarRecord));
    }
    ds.labels.push_back(label);
    ds.pixels.insert(ds.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(r * kCifarRecord + 1),
                     bytes.begin() + static_cast<std::ptrdiff_t>((r + 1) * kCifarRecord));
  }
}

}  // namespace

void Dataset::validate() const {
  if (pixels.size() != size() * image_bytes()) {
    throw FormatError("dataset pixel buffer does not match label count",
                      static_cast<long long>(pixels.size()));
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes())
      throw FormatError("label " + std::to_string(l) + " out of range", 0);
  }
}

Dataset load_cifar10_file(const std::string& path) {
  Dataset ds;
  ds.channels = kCifarChannels;
  ds.height = kCifarDim;
  ds.width = kCifarDim;
  ds.provenance = "cifar10:" + path;
  ds.class_names.assign(kCifarNames, kCifarNames + kCifarClasses);
  append_cifar_records(ds, path);
  ds.train_pool = ds.size();
  ds.validate();
  return ds;
}

Dataset load_cifar10(const std::string& dir) {
  Dataset ds;
  ds.channels = kCifarChannels;
  ds.height = kCifarDim;
  ds.width = kCifarDim;
  ds.provenance = "cifar10:" + dir;
  ds.class_names.assign(kCifarNames, kCifarNames + kCifarClasses);
  bool any = false;
  for (int i = 1; i <= 5; ++i) {
    const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
    if (fs::exists(path)) {
      append_cifar_records(ds, path);
      any = true;
    }
  }
  ds.train_pool = ds.size();
  const std::string test_path = dir + "/test_batch.bin";
  if (fs::exists(test_path)) {
    append_cifar_records(ds, test_path);
    any = true;
  }
  if (!any) throw ConfigError("no CIFAR-10 batch files found under " + dir);
  ds.validate();
  return ds;
}

Dataset load_image_dir(const std::string& dir) {
  Dataset ds;
  ds.provenance = "image-dir:" + dir;
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw ConfigError("no class subdirectories under " + dir);
  ds.class_names = classes;

  bool first = true;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(dir) / classes[c]))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::string magic;
      int w = 0, h = 0, maxval = 0;
      in >> magic >> w >> h >> maxval;
      in.get();  // single whitespace after header
      if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0) {
        throw FormatError("unsupported PPM header in " + f, 0);
      }
      if (first) {
        ds.channels = 3;
        ds.height = h;
        ds.width = w;
        first = false;
      } else if (h != ds.height || w != ds.width) {
        throw FormatError("image size mismatch in " + f, 0);
      }
      std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3) * w * h);
      in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
      if (!in) throw FormatError("truncated PPM payload in " + f, 0);
      // interleaved RGB -> channel-major planes
      const std::size_t plane = static_cast<std::size_t>(w) * h;
      std::vector<std::uint8_t> planes(rgb.size());
      for (std::size_t px = 0; px < plane; ++px)
        for (int ch = 0; ch < 3; ++ch) planes[static_cast<std::size_t>(ch) * plane + px] = rgb[px * 3 + ch];
      ds.pixels.insert(ds.pixels.end(), planes.begin(), planes.end());
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.train_pool = ds.size();
  ds.validate();
  return ds;
}

void write_synthetic_cifar10(const std::string& dir, int train_total, int test_total,
                             std::uint64_t seed, double noise_sigma) {
  fs::create_directories(dir);
  Rng rng(seed);

  // Every class shows the SAME palette of coarse color cells, arranged like
  // a shared base layout except for a few class-specific cell swaps. Global
  // color statistics carry no class signal and most cells are common, so
  // the class lives in a sparse relational difference; random cyclic shifts
  // force the arrangement (not absolute position) to be what identifies it.
  constexpr int kGrid = 8;
  constexpr int kCell = kCifarDim / kGrid;
  constexpr int kCells = kGrid * kGrid;
  constexpr int kSwapsPerClass = 3;
  std::vector<double> palette(static_cast<std::size_t>(kCells) * kCifarChannels);
  for (double& v : palette) v = rng.uniform(0.0, 255.0);

  std::vector<std::vector<double>> prototypes(kCifarClasses);
  for (int c = 0; c < kCifarClasses; ++c) {
    std::vector<int> order(kCells);
    for (int i = 0; i < kCells; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int s = 0; s < kSwapsPerClass; ++s) {
      const std::size_t a = static_cast<std::size_t>(rng.below(kCells));
      const std::size_t b = static_cast<std::size_t>(rng.below(kCells));
      std::swap(order[a], order[b]);
    }
    std::vector<double> proto(static_cast<std::size_t>(kCifarChannels) * kCifarDim * kCifarDim);
    for (int ch = 0; ch < kCifarChannels; ++ch)
      for (int y = 0; y < kCifarDim; ++y)
        for (int x = 0; x < kCifarDim; ++x) {
          const int cell = order[static_cast<std::size_t>((y / kCell) * kGrid + x / kCell)];
          proto[(static_cast<std::size_t>(ch) * kCifarDim + y) * kCifarDim + x] =
              palette[static_cast<std::size_t>(cell) * kCifarChannels + ch];
        }
    prototypes[static_cast<std::size_t>(c)] = std::move(proto);
  }

  auto render_record = [&](std::vector<std::uint8_t>& out) {
    const int label = static_cast<int>(rng.below(kCifarClasses));
    const std::vector<double>& proto = prototypes[static_cast<std::size_t>(label)];
    // pixel-level cyclic shift: patches land on arbitrary cell phases
    const int dy = static_cast<int>(rng.below(kCifarDim));
    const int dx = static_cast<int>(rng.below(kCifarDim));
    const double gain = rng.uniform(0.7, 1.3);
    const double bias = rng.uniform(-30.0, 30.0);
    out.push_back(static_cast<std::uint8_t>(label));
    for (int ch = 0; ch < kCifarChannels; ++ch)
      for (int y = 0; y < kCifarDim; ++y)
        for (int x = 0; x < kCifarDim; ++x) {
          const int sy = (y + dy) % kCifarDim;
          const int sx = (x + dx) % kCifarDim;
          double v = gain * proto[(static_cast<std::size_t>(ch) * kCifarDim + sy) * kCifarDim + sx] +
                     bias + rng.normal(0.0, noise_sigma);
          v = std::min(255.0, std::max(0.0, v));
          out.push_back(static_cast<std::uint8_t>(std::lround(v)));
        }
  };

  const int per_file = (train_total + 4) / 5;
  int written = 0;
  for (int f = 1; f <= 5; ++f) {
    const int count = std::min(per_file, train_total - written);
    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(count) * kCifarRecord);
    for (int i = 0; i < count; ++i) render_record(bytes);
    std::ofstream out(dir + "/data_batch_" + std::to_string(f) + ".bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    written += count;
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(test_total) * kCifarRecord);
  for (int i = 0; i < test_total; ++i) render_record(bytes);
  std::ofstream out(dir + "/test_batch.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Splits make_splits(const Dataset& ds, int train_n, int val_n, TestSource test_source,
                   std::uint64_t seed) {
  if (train_n < 0 || val_n < 0 ||
      static_cast<std::size_t>(train_n) + static_cast<std::size_t>(val_n) > ds.train_pool) {
    throw ConfigError("split request " + std::to_string(train_n) + "+" + std::to_string(val_n) +
                      " exceeds train pool of " + std::to_string(ds.train_pool));
  }
  std::vector<int> pool(ds.train_pool);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(pool);

  Splits s;
  s.seed = seed;
  s.train.assign(pool.begin(), pool.begin() + train_n);
  s.val.assign(pool.begin() + train_n, pool.begin() + train_n + val_n);
  if (test_source == TestSource::Designated) {
    for (std::size_t i = ds.train_pool; i < ds.size(); ++i) s.test.push_back(static_cast<int>(i));
  }
  return s;
}

Normalization cifar10_normalization() {
  return Normalization{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

Tensor to_input(const Dataset& ds, std::size_t index, const Normalization& norm) {
  if (static_cast<int>(norm.mean.size()) != ds.channels ||
      static_cast<int>(norm.stddev.size()) != ds.channels) {
    throw ConfigError("normalization constants do not cover " + std::to_string(ds.channels) +
                      " channels");
  }
  const std::uint8_t* img = ds.image(index);
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  std::vector<double> data(ds.image_bytes());
  for (int ch = 0; ch < ds.channels; ++ch) {
    const double m = norm.mean[static_cast<std::size_t>(ch)];
    const double sd = norm.stddev[static_cast<std::size_t>(ch)];
    for (std::size_t px = 0; px < plane; ++px) {
      const double v = static_cast<double>(img[static_cast<std::size_t>(ch) * plane + px]) / 255.0;
      data[static_cast<std::size_t>(ch) * plane + px] = (v - m) / sd;
    }
  }
  return Tensor::from_data({ds.channels, ds.height, ds.width}, std::move(data));
}

EvalResult evaluate(const Model& model, const Dataset& ds, const std::vector<int>& indices,
                    const Normalization& norm) {
  if (indices.empty()) throw DomainError("evaluate: empty index list");
  NoGradGuard no_grad;
  const int k = model.spec.classes;
  EvalResult res;
  res.per_class.assign(static_cast<std::size_t>(k), 0.0);
  res.class_defined.assign(static_cast<std::size_t>(k), false);
  res.class_total.assign(static_cast<std::size_t>(k), 0);
  std::vector<long long> class_correct(static_cast<std::size_t>(k), 0);

  for (int idx : indices) {
    const int label = ds.labels[static_cast<std::size_t>(idx)];
    if (label >= k) {
      throw DomainError("label " + std::to_string(label) + " exceeds model classes " +
                        std::to_string(k));
    }
    Tensor logits = forward(model, to_input(ds, static_cast<std::size_t>(idx), norm));
    const int pred = argmax_index(logits);
    ++res.total;
    ++res.class_total[static_cast<std::size_t>(label)];
    if (pred == label) {
      ++res.correct;
      ++class_correct[static_cast<std::size_t>(label)];
    }
  }
  res.overall = 100.0 * static_cast<double>(res.correct) / static_cast<double>(res.total);
  for (int c = 0; c < k; ++c) {
    if (res.class_total[static_cast<std::size_t>(c)] > 0) {
      res.class_defined[static_cast<std::size_t>(c)] = true;
      res.per_class[static_cast<std::size_t>(c)] =
          100.0 * static_cast<double>(class_correct[static_cast<std::size_t>(c)]) /
          static_cast<double>(res.class_total[static_cast<std::size_t>(c)]);
    }
  }
  return res;
}

}  // namespace paraformer

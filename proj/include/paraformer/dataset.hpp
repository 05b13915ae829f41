#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "paraformer/model.hpp"
#include "paraformer/tensor.hpp"

namespace paraformer {

// Images stay raw bytes after loading; normalization happens in the input
// pipeline. Records [0, train_pool) form the training pool, the rest is the
// designated test pool.
struct Dataset {
  int channels = 3;
  int height = 32;
  int width = 32;
  std::vector<std::uint8_t> pixels;  // size() * channels*height*width, channel-major per image
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::string provenance;
  std::size_t train_pool = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * image_bytes(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

// One binary batch file: 3073-byte records, 1 label byte then 3072 pixel
// bytes (1024 R, 1024 G, 1024 B, row-major). Truncated files and label
// bytes >= 10 raise FormatError with the offending byte offset.
Dataset load_cifar10_file(const std::string& path);

// data_batch_1..5.bin into the train pool, test_batch.bin into the test
// pool. Missing individual files are skipped; an empty directory is an
// error.
Dataset load_cifar10(const std::string& dir);

// Best-effort adapter: one subdirectory per class (sorted name order), each
// holding binary PPM (P6) images of one common size.
Dataset load_image_dir(const std::string& dir);

// Deterministic class-structured images in the exact CIFAR-10 binary
// layout: per-class coarse color prototypes with per-image translation,
// brightness/contrast jitter and pixel noise. Writes data_batch_1..5.bin
// and test_batch.bin under dir.
void write_synthetic_cifar10(const std::string& dir, int train_total, int test_total,
                             std::uint64_t seed, double noise_sigma = 80.0);

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

enum class TestSource { Designated, None };

// Seeded shuffle of the train pool; first train_n indices train, next val_n
// validation. The designated test pool is used unshuffled.
Splits make_splits(const Dataset& ds, int train_n, int val_n, TestSource test_source,
                   std::uint64_t seed);

struct Normalization {
  std::vector<double> mean;  // per channel, applied after x/255
  std::vector<double> stddev;
};
Normalization cifar10_normalization();

// [C x H x W] tensor: x/255 then per-channel (x - mean)/std.
Tensor to_input(const Dataset& ds, std::size_t index, const Normalization& norm);

struct EvalResult {
  double overall = 0.0;  // 100 * correct / total
  long long correct = 0;
  long long total = 0;
  std::vector<double> per_class;     // per-class accuracy, percent
  std::vector<bool> class_defined;   // false when the class is absent from the subset
  std::vector<long long> class_total;
};

// Argmax prediction with lowest-index tie break; classes absent from the
// index set are reported undefined rather than zero.
EvalResult evaluate(const Model& model, const Dataset& ds, const std::vector<int>& indices,
                    const Normalization& norm);

}  // namespace paraformer

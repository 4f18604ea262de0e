#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/image.hpp"
#include "microcnn/rng.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn {

struct LabeledImage {
  RgbImage image;
  int label = 0;
  std::string source_path;
};

struct LoadOptions {
  /// Images are resized to size x size while loading; 0 keeps the original.
  std::size_t size = 64;
  /// Decode workers; 0 means MICROCNN_THREADS or the hardware concurrency.
  unsigned threads = 0;
};

struct LoadedDataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
  /// One "path: reason" entry per file that could not be used.
  std::vector<std::string> skipped;
};

/// Worker count honouring the MICROCNN_THREADS cap.
inline unsigned decode_threads(unsigned requested = 0) {
  if (requested > 0) return requested;
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MICROCNN_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

/// Reads root/<class_a>/*.png and root/<class_b>/*.png. Class indices follow
/// lexicographic order of the subdirectory names; files within a class are
/// taken in lexicographic order. Unreadable or non-PNG files are skipped and
/// listed in `skipped`.
inline LoadedDataset load_directory(const std::filesystem::path& root, LoadOptions options = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("data root " + root.string() + " is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() != 2)
    throw DataError("data root " + root.string() + " must contain exactly 2 class subdirectories, found " +
                    std::to_string(class_dirs.size()));

  LoadedDataset out;
  struct Job {
    fs::path path;
    int label;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    out.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c]))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      std::string ext = f.extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (ext != ".png") {
        out.skipped.push_back(f.string() + ": unsupported format (only PNG is accepted)");
        continue;
      }
      jobs.push_back({f, static_cast<int>(c)});
    }
  }

  // Each job writes its own slot, so the result order is independent of
  // worker scheduling.
  std::vector<LabeledImage> decoded(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        RgbImage img = read_png(jobs[i].path);
        if (options.size > 0 && (img.height != options.size || img.width != options.size))
          img = resize_bilinear(img, options.size, options.size);
        decoded[i] = {std::move(img), jobs[i].label, jobs[i].path.string()};
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned workers = std::min<std::size_t>(decode_threads(options.threads), std::max<std::size_t>(1, jobs.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  }

  std::array<std::size_t, 2> per_class{0, 0};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i].empty()) {
      out.skipped.push_back(jobs[i].path.string() + ": " + errors[i]);
      continue;
    }
    ++per_class[static_cast<std::size_t>(decoded[i].label)];
    out.images.push_back(std::move(decoded[i]));
  }
  for (std::size_t c = 0; c < 2; ++c)
    if (per_class[c] == 0)
      throw DataError("class directory " + class_dirs[c].string() + " contains no decodable PNG images");
  return out;
}

// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<LabeledImage> train, val, test;
  std::vector<std::string> class_names;
};

using SplitRatios = std::array<double, 3>;

/// Stratified split: each class is shuffled with a generator seeded by
/// `seed` (class 0 first, then class 1 on the same stream), then sliced
/// into round(n * train), round(n * val) and the remainder.
inline DatasetSplit split(std::vector<LabeledImage> images, SplitRatios ratios, std::uint64_t seed,
                          std::vector<std::string> class_names = {}) {
  for (double r : ratios)
    if (!(r > 0.0)) throw std::invalid_argument("split ratios must all be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  std::map<int, std::vector<LabeledImage>> by_class;
  for (auto& img : images) by_class[img.label].push_back(std::move(img));

  DatasetSplit out;
  out.class_names = std::move(class_names);
  Rng rng(seed);
  for (auto& [label, group] : by_class) {
    shuffle(group.begin(), group.end(), rng);
    const auto n = static_cast<double>(group.size());
    auto n_train = static_cast<std::size_t>(std::llround(n * ratios[0]));
    auto n_val = static_cast<std::size_t>(std::llround(n * ratios[1]));
    n_train = std::min(n_train, group.size());
    n_val = std::min(n_val, group.size() - n_train);
    auto it = std::make_move_iterator(group.begin());
    out.train.insert(out.train.end(), it, it + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), it + static_cast<std::ptrdiff_t>(n_train),
                   it + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), it + static_cast<std::ptrdiff_t>(n_train + n_val),
                    std::make_move_iterator(group.end()));
  }
  if (out.train.empty() || out.val.empty() || out.test.empty())
    throw DataError("split would leave a partition empty (train " + std::to_string(out.train.size()) +
                    ", val " + std::to_string(out.val.size()) + ", test " + std::to_string(out.test.size()) + ")");
  return out;
}

// ---------------------------------------------------------------------------

struct Batch {
  Tensor x;  // [n, H, W, 3], values in [0, 1]
  Tensor y;  // [n, classes] one-hot
  std::vector<int> labels;
};

inline Tensor one_hot(std::span<const int> labels, std::size_t classes = 2) {
  Tensor y(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
    y[i * classes + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return y;
}

inline Batch make_batch(std::span<const LabeledImage> images, std::span<const std::size_t> indices,
                        std::size_t classes = 2) {
  if (indices.empty()) throw std::invalid_argument("make_batch needs at least one image");
  const auto& first = images[indices[0]].image;
  const std::size_t per = first.height * first.width * 3;
  Batch b{Tensor(Shape{indices.size(), first.height, first.width, 3}), Tensor(), {}};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& img = images[indices[k]];
    if (img.image.height != first.height || img.image.width != first.width)
      throw DimensionError("batch mixes image sizes: " + img.source_path);
    float* dst = b.x.raw() + k * per;
    for (std::size_t i = 0; i < per; ++i) dst[i] = static_cast<float>(img.image.pixels[i] / 255.0);
    b.labels.push_back(img.label);
  }
  b.y = one_hot(b.labels, classes);
  return b;
}

/// One epoch's worth of batches over a fixed image list. Batches are built
/// on demand so a full epoch is never resident at once.
class BatchSequence {
 public:
  BatchSequence(std::span<const LabeledImage> images, std::size_t batch_size, std::vector<std::size_t> order)
      : images_(images), batch_size_(batch_size), order_(std::move(order)) {}

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

  Batch operator[](std::size_t i) const {
    const std::size_t begin = i * batch_size_;
    const std::size_t end = std::min(order_.size(), begin + batch_size_);
    return make_batch(images_, std::span(order_).subspan(begin, end - begin));
  }

 private:
  std::span<const LabeledImage> images_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

/// Every image exactly once; the last batch may be partial. With shuffle the
/// order is a Fisher-Yates permutation drawn from `rng`.
inline BatchSequence batches(std::span<const LabeledImage> images, std::size_t batch_size, bool shuffle_order,
                             Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_order) shuffle(order.begin(), order.end(), rng);
  return BatchSequence(images, batch_size, std::move(order));
}

}  // namespace microcnn

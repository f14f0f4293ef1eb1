#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hierot/measures.hpp"
#include "hierot/patch_grid.hpp"

namespace hierot {

/// Raised for malformed or inconsistent input data (IDX files, datasets).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DomainTag { kSource, kTarget };
std::string_view to_string(DomainTag tag);

/// Samples with labels. Source data for training, or target data on the evaluation side.
struct LabeledDataset {
  std::vector<PatchGrid> samples;
  std::vector<Eigen::Index> labels;
  DomainTag domain = DomainTag::kSource;
  Eigen::Index class_count = 0;

  std::size_t size() const { return samples.size(); }
  void validate() const;
};

/// Target samples as the training loop sees them: no labels.
struct UnlabeledDataset {
  std::vector<PatchGrid> samples;
  DomainTag domain = DomainTag::kTarget;
  Eigen::Index class_count = 0;

  std::size_t size() const { return samples.size(); }
};

/// Held-out target labels, only consumed by evaluation.
struct EvaluationSplit {
  std::vector<Eigen::Index> labels;
};

LabeledDataset with_labels(const UnlabeledDataset& data, const EvaluationSplit& split);

/// Target-domain shift applied by gen_synthetic_pair.
struct ShiftSpec {
  Matrix global_shift;                    // class_count x input_dim translation per class
  std::vector<Eigen::Index> patch_permutation;  // empty = identity
  double patch_noise = 0.0;               // extra per-patch Gaussian noise on target
  double local_signal_strength = 1.0;     // 1: label only in patch structure, 0: only in the mean
  double offset_scale = 0.0;              // std of a per-sample offset added to every target patch
  Vector offset_direction;                // unit direction of that offset (empty = all-ones)

  void validate(Eigen::Index class_count, Eigen::Index input_dim, Eigen::Index patches) const;
};

/// Shape of the synthetic generative classes.
struct SyntheticShape {
  Eigen::Index patches = 9;      // K
  Eigen::Index input_dim = 4;
  double spread = 2.0;           // extent of the within-sample patch configuration
  double mean_separation = 2.0;  // distance scale of class means (global signal)
  double source_noise = 0.3;     // per-patch Gaussian noise on both domains
};

struct SyntheticPair {
  LabeledDataset source;
  UnlabeledDataset target;
  EvaluationSplit target_labels;
};

/// Source and shifted target data drawn from the same generative classes.
///
/// Each class owns a zero-mean configuration of K patch vectors laid out
/// along a class-specific direction plus a class mean. A sample is
///   mean * (1 - s) + configuration * s + noise
/// with rows in random order, where s is local_signal_strength. Target samples
/// additionally receive the class shift, patch noise and the fixed patch
/// permutation of the ShiftSpec.
SyntheticPair gen_synthetic_pair(const ShiftSpec& spec, Eigen::Index class_count,
                                 std::size_t n_source, std::size_t n_target, std::uint64_t seed,
                                 const SyntheticShape& shape = {});

/// Same translation for every class.
Matrix uniform_shift(Eigen::Index class_count, const Vector& shift);

// --- IDX ingestion ----------------------------------------------------------

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::uint8_t>> images;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Area-average downsampling of a square grayscale image to side x side.
std::vector<double> downsample_area(std::span<const double> image, std::size_t in_side,
                                    std::size_t side);

/// Reads an IDX image/label pair, downsamples each image to downsample_to
/// pixels per side, scales to [0, 1] and cuts it into grid_h x grid_w patches.
LabeledDataset load_idx_digits(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path,
                               std::size_t downsample_to, std::size_t grid_h, std::size_t grid_w);

// --- Sampling ---------------------------------------------------------------

struct Batch {
  std::vector<std::size_t> indices;
  bool with_replacement = false;  // set when the request exceeded the available samples
};

/// n / class_count samples from every class, without replacement within a class.
Batch class_balanced_sample(const LabeledDataset& ds, std::size_t n, std::mt19937_64& rng);
Batch class_balanced_sample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed);

/// Uniform sample of n indices from [0, size), without replacement when possible.
Batch random_sample(std::size_t size, std::size_t n, std::mt19937_64& rng);
Batch random_sample(std::size_t size, std::size_t n, std::uint64_t seed);

// --- Export -----------------------------------------------------------------

/// One row per sample: label, domain, then the K*d patch entries row-major.
/// Unlabeled samples are written with label -1.
void export_csv(const std::filesystem::path& path, const LabeledDataset& source,
                const UnlabeledDataset& target, const EvaluationSplit* target_labels);

}  // namespace hierot

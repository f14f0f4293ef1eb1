#include "hierot/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace hierot {

std::string_view to_string(DomainTag tag) { return tag == DomainTag::kSource ? "source" : "target"; }

void LabeledDataset::validate() const {
  if (samples.size() != labels.size()) throw DataError("dataset has mismatched sample/label counts");
  if (class_count < 1) throw DataError("dataset class count must be positive");
  for (auto y : labels)
    if (y < 0 || y >= class_count) throw DataError("label " + std::to_string(y) + " out of range");
}

LabeledDataset with_labels(const UnlabeledDataset& data, const EvaluationSplit& split) {
  if (split.labels.size() != data.size()) throw DataError("evaluation split does not match dataset size");
  LabeledDataset out{data.samples, split.labels, data.domain, data.class_count};
  out.validate();
  return out;
}

void ShiftSpec::validate(Eigen::Index class_count, Eigen::Index input_dim, Eigen::Index patches) const {
  if (global_shift.size() != 0 &&
      (global_shift.rows() != class_count || global_shift.cols() != input_dim))
    throw DataError("shift spec: global_shift must be class_count x input_dim");
  if (!patch_permutation.empty()) {
    if (static_cast<Eigen::Index>(patch_permutation.size()) != patches)
      throw DataError("shift spec: permutation length must equal the patch count");
    std::vector<char> seen(patch_permutation.size(), 0);
    for (auto p : patch_permutation) {
      if (p < 0 || p >= patches || seen[static_cast<std::size_t>(p)])
        throw DataError("shift spec: patch_permutation is not a bijection");
      seen[static_cast<std::size_t>(p)] = 1;
    }
  }
  if (!(patch_noise >= 0.0)) throw DataError("shift spec: patch_noise must be >= 0");
  if (!(offset_scale >= 0.0)) throw DataError("shift spec: offset_scale must be >= 0");
  if (offset_direction.size() != 0 && (offset_direction.size() != input_dim || offset_direction.norm() == 0.0))
    throw DataError("shift spec: offset_direction must be a nonzero input_dim vector");
  if (!(local_signal_strength >= 0.0 && local_signal_strength <= 1.0))
    throw DataError("shift spec: local_signal_strength must lie in [0, 1]");
}

Matrix uniform_shift(Eigen::Index class_count, const Vector& shift) {
  Matrix out(class_count, shift.size());
  for (Eigen::Index k = 0; k < class_count; ++k) out.row(k) = shift.transpose();
  return out;
}

namespace {

// Axis directions first, then normalized sign patterns.
Matrix class_directions(Eigen::Index class_count, Eigen::Index dim) {
  Matrix dirs = Matrix::Zero(class_count, dim);
  for (Eigen::Index k = 0; k < class_count; ++k) {
    if (k < dim) {
      dirs(k, k) = 1.0;
      continue;
    }
    const Eigen::Index pattern = k - dim;
    for (Eigen::Index c = 0; c < dim; ++c) {
      const bool flip = c > 0 && ((pattern >> ((c - 1) % 16)) & 1);
      dirs(k, c) = flip ? -1.0 : 1.0;
    }
    dirs.row(k).normalize();
  }
  return dirs;
}

}  // namespace

SyntheticPair gen_synthetic_pair(const ShiftSpec& spec, Eigen::Index class_count,
                                 std::size_t n_source, std::size_t n_target, std::uint64_t seed,
                                 const SyntheticShape& shape) {
  if (class_count < 2) throw DataError("synthetic data needs at least two classes");
  if (n_source == 0 || n_target == 0) throw DataError("synthetic data sizes must be positive");
  const Eigen::Index k_patches = shape.patches;
  const Eigen::Index dim = shape.input_dim;
  if (k_patches < 1 || dim < 1) throw DataError("synthetic shape must be positive");
  spec.validate(class_count, dim, k_patches);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = spec.local_signal_strength;

  const Matrix dirs = class_directions(class_count, dim);
  Matrix means(class_count, dim);
  for (Eigen::Index k = 0; k < class_count; ++k) {
    for (Eigen::Index c = 0; c < dim; ++c) means(k, c) = normal(rng);
    means.row(k) *= shape.mean_separation / std::max(means.row(k).norm(), 1e-12);
  }
  std::vector<double> offsets(static_cast<std::size_t>(k_patches), 0.0);
  for (Eigen::Index r = 0; r < k_patches; ++r)
    if (k_patches > 1)
      offsets[static_cast<std::size_t>(r)] =
          shape.spread * (2.0 * static_cast<double>(r) / static_cast<double>(k_patches - 1) - 1.0);

  Vector offset_dir = spec.offset_direction.size() ? spec.offset_direction : Vector::Ones(dim);
  offset_dir.normalize();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k_patches));
  auto draw = [&](Eigen::Index label, bool target) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    Matrix x(k_patches, dim);
    for (Eigen::Index r = 0; r < k_patches; ++r) {
      const double t = offsets[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
      for (Eigen::Index c = 0; c < dim; ++c)
        x(r, c) = (1.0 - s) * means(label, c) + s * t * dirs(label, c) +
                  shape.source_noise * normal(rng);
    }
    if (target) {
      if (spec.global_shift.size() != 0) x.rowwise() += spec.global_shift.row(label);
      if (spec.offset_scale > 0.0) x.rowwise() += (spec.offset_scale * normal(rng)) * offset_dir.transpose();
      if (spec.patch_noise > 0.0)
        for (Eigen::Index r = 0; r < k_patches; ++r)
          for (Eigen::Index c = 0; c < dim; ++c) x(r, c) += spec.patch_noise * normal(rng);
      if (!spec.patch_permutation.empty()) {
        Matrix permuted(k_patches, dim);
        for (Eigen::Index r = 0; r < k_patches; ++r)
          permuted.row(r) = x.row(spec.patch_permutation[static_cast<std::size_t>(r)]);
        x = std::move(permuted);
      }
    }
    return PatchGrid(std::move(x));
  };

  SyntheticPair out;
  out.source.domain = DomainTag::kSource;
  out.source.class_count = class_count;
  out.target.domain = DomainTag::kTarget;
  out.target.class_count = class_count;
  for (std::size_t i = 0; i < n_source; ++i) {
    const auto y = static_cast<Eigen::Index>(i % static_cast<std::size_t>(class_count));
    out.source.samples.push_back(draw(y, false));
    out.source.labels.push_back(y);
  }
  for (std::size_t i = 0; i < n_target; ++i) {
    const auto y = static_cast<Eigen::Index>(i % static_cast<std::size_t>(class_count));
    out.target.samples.push_back(draw(y, true));
    out.target_labels.labels.push_back(y);
  }
  return out;
}

// --- IDX ---------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw DataError(name_ + ": truncated file, needed " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + " but only " + std::to_string(bytes_.size() - pos_) +
                      " remain");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

void expect_magic(ByteReader& r, std::uint32_t expected, const std::string& name) {
  const std::size_t at = r.offset();
  const std::uint32_t magic = r.u32();
  if (magic != expected) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08x at offset %zu (expected 0x%08x)", magic, at,
                  expected);
    throw DataError(name + buf);
  }
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  ByteReader r(bytes, path.string());
  expect_magic(r, kImageMagic, path.string());
  const std::uint32_t count = r.u32();
  IdxImages out;
  out.rows = r.u32();
  out.cols = r.u32();
  const std::size_t pixels = out.rows * out.cols;
  out.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* p = r.take(pixels);
    out.images.emplace_back(p, p + pixels);
  }
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  ByteReader r(bytes, path.string());
  expect_magic(r, kLabelMagic, path.string());
  const std::uint32_t count = r.u32();
  const std::uint8_t* p = r.take(count);
  return {p, p + count};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_u32(out, kImageMagic);
  put_u32(out, static_cast<std::uint32_t>(images.images.size()));
  put_u32(out, static_cast<std::uint32_t>(images.rows));
  put_u32(out, static_cast<std::uint32_t>(images.cols));
  for (const auto& img : images.images) {
    if (img.size() != images.rows * images.cols) throw DataError("image has wrong pixel count");
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_u32(out, kLabelMagic);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

std::vector<double> downsample_area(std::span<const double> image, std::size_t in_side,
                                    std::size_t side) {
  if (image.size() != in_side * in_side) throw DataError("downsample: image is not square");
  if (side == 0 || side > in_side) throw DataError("downsample: target side out of range");
  const double ratio = static_cast<double>(in_side) / static_cast<double>(side);
  // Fractional overlap of output cell o with input cell i along one axis.
  auto overlap = [ratio](std::size_t o, std::size_t i) {
    const double lo = std::max(static_cast<double>(o) * ratio, static_cast<double>(i));
    const double hi = std::min(static_cast<double>(o + 1) * ratio, static_cast<double>(i + 1));
    return std::max(0.0, hi - lo);
  };
  std::vector<double> out(side * side, 0.0);
  for (std::size_t oy = 0; oy < side; ++oy)
    for (std::size_t ox = 0; ox < side; ++ox) {
      double acc = 0.0;
      const auto y0 = static_cast<std::size_t>(std::floor(static_cast<double>(oy) * ratio));
      const auto x0 = static_cast<std::size_t>(std::floor(static_cast<double>(ox) * ratio));
      for (std::size_t iy = y0; iy < in_side && static_cast<double>(iy) < (oy + 1) * ratio; ++iy) {
        const double wy = overlap(oy, iy);
        for (std::size_t ix = x0; ix < in_side && static_cast<double>(ix) < (ox + 1) * ratio; ++ix)
          acc += wy * overlap(ox, ix) * image[iy * in_side + ix];
      }
      out[oy * side + ox] = acc / (ratio * ratio);
    }
  return out;
}

LabeledDataset load_idx_digits(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path,
                               std::size_t downsample_to, std::size_t grid_h, std::size_t grid_w) {
  const IdxImages images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (images.images.size() != labels.size())
    throw DataError("image count " + std::to_string(images.images.size()) +
                    " does not match label count " + std::to_string(labels.size()));
  if (images.rows != images.cols) throw DataError("only square IDX images are supported");
  if (grid_h == 0 || grid_w == 0 || downsample_to % grid_h || downsample_to % grid_w)
    throw DataError("downsampled side must be divisible by the patch grid");
  const std::size_t ph = downsample_to / grid_h;
  const std::size_t pw = downsample_to / grid_w;

  LabeledDataset ds;
  ds.domain = DomainTag::kSource;
  std::uint8_t max_label = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    std::vector<double> pixels(images.images[n].begin(), images.images[n].end());
    for (auto& p : pixels) p /= 255.0;
    const auto small = downsample_area(pixels, images.rows, downsample_to);
    Matrix patches(static_cast<Eigen::Index>(grid_h * grid_w), static_cast<Eigen::Index>(ph * pw));
    for (std::size_t gy = 0; gy < grid_h; ++gy)
      for (std::size_t gx = 0; gx < grid_w; ++gx)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x)
            patches(static_cast<Eigen::Index>(gy * grid_w + gx), static_cast<Eigen::Index>(y * pw + x)) =
                small[(gy * ph + y) * downsample_to + gx * pw + x];
    ds.samples.emplace_back(std::move(patches));
    ds.labels.push_back(labels[n]);
    max_label = std::max(max_label, labels[n]);
  }
  ds.class_count = labels.empty() ? 0 : static_cast<Eigen::Index>(max_label) + 1;
  return ds;
}

// --- Sampling ------------------------------------------------------------------

Batch class_balanced_sample(const LabeledDataset& ds, std::size_t n, std::mt19937_64& rng) {
  const auto classes = static_cast<std::size_t>(ds.class_count);
  if (classes == 0) throw DataError("class-balanced sampling needs a positive class count");
  if (n % classes != 0)
    throw DataError("batch size " + std::to_string(n) + " is not divisible by class count " +
                    std::to_string(classes));
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  const std::size_t per_class = n / classes;
  Batch batch;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto& pool = by_class[k];
    if (pool.empty()) throw DataError("class " + std::to_string(k) + " has no samples");
    if (pool.size() >= per_class) {
      std::vector<std::size_t> picked;
      std::sample(pool.begin(), pool.end(), std::back_inserter(picked), per_class, rng);
      std::shuffle(picked.begin(), picked.end(), rng);
      batch.indices.insert(batch.indices.end(), picked.begin(), picked.end());
    } else {
      batch.with_replacement = true;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t r = 0; r < per_class; ++r) batch.indices.push_back(pool[pick(rng)]);
    }
  }
  return batch;
}

Batch class_balanced_sample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return class_balanced_sample(ds, n, rng);
}

Batch random_sample(std::size_t size, std::size_t n, std::mt19937_64& rng) {
  if (size == 0) throw DataError("cannot sample from an empty dataset");
  Batch batch;
  if (n <= size) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, size - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    batch.indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    batch.with_replacement = true;
    std::uniform_int_distribution<std::size_t> pick(0, size - 1);
    for (std::size_t i = 0; i < n; ++i) batch.indices.push_back(pick(rng));
  }
  return batch;
}

Batch random_sample(std::size_t size, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_sample(size, n, rng);
}

void export_csv(const std::filesystem::path& path, const LabeledDataset& source,
                const UnlabeledDataset& target, const EvaluationSplit* target_labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const PatchGrid* first = !source.samples.empty()   ? &source.samples.front()
                           : !target.samples.empty() ? &target.samples.front()
                                                     : nullptr;
  out << "label,domain";
  if (first)
    for (Eigen::Index k = 0; k < first->patch_count(); ++k)
      for (Eigen::Index c = 0; c < first->channels(); ++c) out << ",p" << k << "_c" << c;
  out << '\n';
  out.precision(17);
  auto row = [&](Eigen::Index label, DomainTag tag, const PatchGrid& g) {
    out << label << ',' << to_string(tag);
    for (Eigen::Index k = 0; k < g.patch_count(); ++k)
      for (Eigen::Index c = 0; c < g.channels(); ++c) out << ',' << g.patches()(k, c);
    out << '\n';
  };
  for (std::size_t i = 0; i < source.size(); ++i) row(source.labels[i], source.domain, source.samples[i]);
  for (std::size_t i = 0; i < target.size(); ++i)
    row(target_labels ? target_labels->labels[i] : -1, target.domain, target.samples[i]);
}

}  // namespace hierot

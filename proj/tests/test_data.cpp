#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "hierot/data.hpp"
#include "hierot/hot.hpp"
#include "hierot/model.hpp"
#include "oracles.hpp"

using namespace hierot;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hierot_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

IdxImages gradient_images(std::size_t count, std::size_t side) {
  IdxImages imgs;
  imgs.rows = imgs.cols = side;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<std::uint8_t> px(side * side);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 7 + n * 31) % 256);
    imgs.images.push_back(px);
  }
  return imgs;
}

}  // namespace

TEST_CASE("synthetic generator is deterministic") {
  ShiftSpec spec;
  spec.patch_noise = 0.2;
  const auto a = gen_synthetic_pair(spec, 3, 30, 20, 5);
  const auto b = gen_synthetic_pair(spec, 3, 30, 20, 5);
  REQUIRE(a.source.size() == 30);
  REQUIRE(a.target.size() == 20);
  for (std::size_t i = 0; i < 30; ++i) CHECK(a.source.samples[i].patches() == b.source.samples[i].patches());
  for (std::size_t i = 0; i < 20; ++i) CHECK(a.target.samples[i].patches() == b.target.samples[i].patches());
  CHECK(a.target_labels.labels == b.target_labels.labels);
  const auto c = gen_synthetic_pair(spec, 3, 30, 20, 6);
  CHECK(a.source.samples[0].patches() != c.source.samples[0].patches());
}

TEST_CASE("synthetic generator validates its inputs") {
  ShiftSpec spec;
  CHECK_THROWS_AS(gen_synthetic_pair(spec, 1, 10, 10, 0), DataError);
  CHECK_THROWS_AS(gen_synthetic_pair(spec, 3, 0, 10, 0), DataError);
  spec.patch_permutation = {0, 0, 1, 2, 3, 4, 5, 6, 7};
  CHECK_THROWS_AS(gen_synthetic_pair(spec, 3, 10, 10, 0), DataError);
  spec.patch_permutation.clear();
  spec.patch_noise = -1.0;
  CHECK_THROWS_AS(gen_synthetic_pair(spec, 3, 10, 10, 0), DataError);
  spec.patch_noise = 0.0;
  spec.global_shift = Matrix::Zero(2, 4);
  CHECK_THROWS_AS(gen_synthetic_pair(spec, 3, 10, 10, 0), DataError);
}

TEST_CASE("patch permutation shift is invisible to sliced and pooled distances") {
  SyntheticShape shape;
  shape.source_noise = 0.0;
  ShiftSpec spec;
  spec.patch_permutation = {8, 7, 6, 5, 4, 3, 2, 1, 0};
  const auto pair = gen_synthetic_pair(spec, 3, 3, 3, 2, shape);
  const auto proj = ProjectionSet::random(16, 4, 1);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& s = pair.source.samples[k];
    const auto& t = pair.target.samples[k];
    CHECK(swd(s, t, proj) < 1e-20);
    CHECK((s.pooled() - t.pooled()).squaredNorm() < 1e-20);
    CHECK((s.patches() - t.patches()).squaredNorm() > 1.0);
  }
}

TEST_CASE("with purely local signal the pooled mean carries no label information") {
  ShiftSpec spec;
  const auto pair = gen_synthetic_pair(spec, 5, 2000, 10, 3);
  // Nearest class centroid of the raw pooled means, fit on one half, scored on the other.
  Matrix centroid = Matrix::Zero(5, 4);
  Vector count = Vector::Zero(5);
  for (std::size_t i = 0; i < 1000; ++i) {
    centroid.row(pair.source.labels[i]) += pair.source.samples[i].pooled().transpose();
    count(pair.source.labels[i]) += 1.0;
  }
  for (Eigen::Index k = 0; k < 5; ++k) centroid.row(k) /= count(k);
  int correct = 0;
  for (std::size_t i = 1000; i < 2000; ++i) {
    Eigen::Index best = 0;
    (centroid.rowwise() - pair.source.samples[i].pooled().transpose()).rowwise().squaredNorm().minCoeff(&best);
    correct += best == pair.source.labels[i];
  }
  const double pooled_acc = correct / 1000.0;
  CHECK(std::abs(pooled_acc - 0.2) < 5.0 * std::sqrt(0.2 * 0.8 / 1000.0));

  // The patch-wise model trained on the same data is far above chance.
  ModelDims d;
  auto params = ModelParams::init(d, 1);
  SgdOptimizer opt(0.9, 5e-4);
  std::mt19937_64 rng(4);
  for (int step = 0; step < 400; ++step) {
    const auto batch = class_balanced_sample(pair.source, 10, rng);
    std::vector<PatchGrid> xs;
    std::vector<Eigen::Index> ys;
    for (auto i : batch.indices) {
      xs.push_back(pair.source.samples[i]);
      ys.push_back(pair.source.labels[i]);
    }
    const auto r = source_only_loss(xs, ys, params);
    opt.step(params, r.grads, 0.01, 0.1);
  }
  int model_correct = 0;
  for (std::size_t i = 1000; i < 2000; ++i) {
    Eigen::Index best = 0;
    pool_and_classify(embed(pair.source.samples[i], params), params).maxCoeff(&best);
    model_correct += best == pair.source.labels[i];
  }
  CHECK(model_correct / 1000.0 > 0.6);
}

TEST_CASE("target labels live only in the evaluation split") {
  const auto pair = gen_synthetic_pair(ShiftSpec{}, 4, 8, 8, 1);
  const auto labeled = with_labels(pair.target, pair.target_labels);
  CHECK(labeled.domain == DomainTag::kTarget);
  CHECK(labeled.labels == pair.target_labels.labels);
  CHECK_THROWS_AS(with_labels(pair.target, EvaluationSplit{{0, 1}}), DataError);
}

TEST_CASE("IDX round trip") {
  const auto imgs = gradient_images(3, 5);
  const auto ip = scratch("rt-images.idx"), lp = scratch("rt-labels.idx");
  write_idx_images(ip, imgs);
  const std::vector<std::uint8_t> labels{1, 0, 9};
  write_idx_labels(lp, labels);
  const auto back = read_idx_images(ip);
  CHECK(back.rows == 5);
  CHECK(back.cols == 5);
  CHECK(back.images == imgs.images);
  CHECK(read_idx_labels(lp) == labels);
}

TEST_CASE("IDX format errors") {
  const auto lp = scratch("bad-labels.idx");
  write_bytes(lp, {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 5});
  try {
    read_idx_labels(lp);
    FAIL("expected a format error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }
  const auto empty = scratch("empty.idx");
  write_bytes(empty, {});
  try {
    read_idx_images(empty);
    FAIL("expected a truncation error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
  const auto shortp = scratch("short.idx");
  write_bytes(shortp, {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  CHECK_THROWS_AS(read_idx_images(shortp), DataError);
  CHECK_THROWS_AS(read_idx_images(scratch("does-not-exist.idx")), DataError);
}

TEST_CASE("digit ingestion: 28x28 to 12x12 cut into a 4x4 grid") {
  const auto ip = scratch("digits-images.idx"), lp = scratch("digits-labels.idx");
  write_idx_images(ip, gradient_images(4, 28));
  const std::vector<std::uint8_t> labels{3, 1, 4, 1};
  write_idx_labels(lp, labels);
  const auto ds = load_idx_digits(ip, lp, 12, 4, 4);
  REQUIRE(ds.size() == 4);
  CHECK(ds.samples[0].patch_count() == 16);
  CHECK(ds.samples[0].channels() == 9);
  CHECK(ds.class_count == 5);
  CHECK(ds.labels[2] == 4);
  CHECK(ds.samples[1].patches().minCoeff() >= 0.0);
  CHECK(ds.samples[1].patches().maxCoeff() <= 1.0);

  const std::vector<std::uint8_t> three{3, 1, 4};
  write_idx_labels(lp, three);
  CHECK_THROWS_AS(load_idx_digits(ip, lp, 12, 4, 4), DataError);
  write_idx_labels(lp, labels);
  CHECK_THROWS_AS(load_idx_digits(ip, lp, 12, 5, 5), DataError);
}

TEST_CASE("area downsampling") {
  std::vector<double> img(16);
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  const auto half = downsample_area(img, 4, 2);
  REQUIRE(half.size() == 4);
  CHECK(half[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(half[3] == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  // Non-integer ratio keeps the mean.
  std::vector<double> big(28 * 28, 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : big) v = u(rng);
  const auto small = downsample_area(big, 28, 12);
  double mb = 0.0, ms = 0.0;
  for (double v : big) mb += v;
  for (double v : small) ms += v;
  CHECK(ms / 144.0 == doctest::Approx(mb / 784.0).epsilon(1e-12));
}

TEST_CASE("class-balanced sampling") {
  const auto pair = gen_synthetic_pair(ShiftSpec{}, 10, 100, 10, 1);
  const auto b = class_balanced_sample(pair.source, 10, std::uint64_t{7});
  std::set<Eigen::Index> seen;
  for (auto i : b.indices) seen.insert(pair.source.labels[i]);
  CHECK(seen.size() == 10);
  CHECK_FALSE(b.with_replacement);
  CHECK(class_balanced_sample(pair.source, 10, std::uint64_t{7}).indices == b.indices);

  const auto b40 = class_balanced_sample(pair.source, 40, std::uint64_t{8});
  std::map<Eigen::Index, int> per;
  for (auto i : b40.indices) ++per[pair.source.labels[i]];
  for (const auto& [k, c] : per) CHECK(c == 4);
  CHECK(std::set<std::size_t>(b40.indices.begin(), b40.indices.end()).size() == 40);

  const auto five = gen_synthetic_pair(ShiftSpec{}, 5, 50, 10, 1);
  CHECK_THROWS_AS(class_balanced_sample(five.source, 7, std::uint64_t{1}), DataError);

  const auto tiny = gen_synthetic_pair(ShiftSpec{}, 2, 4, 2, 1);
  CHECK(class_balanced_sample(tiny.source, 8, std::uint64_t{1}).with_replacement);
}

TEST_CASE("random sampling") {
  const auto full = random_sample(20, 20, std::uint64_t{3});
  std::vector<std::size_t> sorted = full.indices;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 20; ++i) CHECK(sorted[i] == i);
  CHECK_FALSE(full.with_replacement);
  CHECK(random_sample(20, 5, std::uint64_t{3}).indices == random_sample(20, 5, std::uint64_t{3}).indices);
  CHECK(random_sample(3, 5, std::uint64_t{3}).with_replacement);
  CHECK_THROWS_AS(random_sample(0, 1, std::uint64_t{3}), DataError);

  const std::size_t size = 10, draws = 10000;
  std::vector<int> freq(size, 0);
  for (std::size_t s = 0; s < draws; ++s) ++freq[random_sample(size, 1, std::uint64_t{s}).indices[0]];
  const double p = 1.0 / size, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (int f : freq) CHECK(std::abs(f - mean) < 5.0 * sigma);
}

TEST_CASE("CSV export layout") {
  const auto pair = gen_synthetic_pair(ShiftSpec{}, 2, 2, 1, 1);
  const auto path = scratch("export.csv");
  export_csv(path, pair.source, pair.target, nullptr);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  CHECK(header.rfind("label,domain,p0_c0,p0_c1", 0) == 0);
  std::getline(in, row);
  CHECK(row.rfind("0,source,", 0) == 0);
  std::getline(in, row);
  std::getline(in, row);
  CHECK(row.rfind("-1,target,", 0) == 0);
}

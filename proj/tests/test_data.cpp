#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "catgrad/data.hpp"
#include "catgrad/stats.hpp"

using namespace catgrad;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("idx round trip preserves images and labels") {
  Tensor images({1, 2, 2}, {0.0, 1.0, 100.0 / 255.0, 37.0 / 255.0});
  ImageBatch batch{images, {7}};
  std::string ipath = temp_path("catgrad_img.idx");
  std::string lpath = temp_path("catgrad_lbl.idx");
  save_idx(batch, ipath, lpath);
  ImageBatch loaded = load_idx(ipath, lpath);
  CHECK(loaded.size() == 1);
  CHECK(loaded.height() == 2);
  CHECK(loaded.width() == 2);
  CHECK(loaded.images[1] == 1.0);  // byte 255 -> 1.0
  CHECK(loaded.images[2] == doctest::Approx(100.0 / 255.0));
  CHECK(loaded.labels == std::vector<int>{7});
  std::remove(ipath.c_str());
  std::remove(lpath.c_str());
}

TEST_CASE("idx loader rejects a label file on the image path") {
  Tensor images({1, 2, 2});
  ImageBatch batch{images, {3}};
  std::string ipath = temp_path("catgrad_img2.idx");
  std::string lpath = temp_path("catgrad_lbl2.idx");
  save_idx(batch, ipath, lpath);
  CHECK_THROWS_AS(load_idx(lpath), Error);
  std::remove(ipath.c_str());
  std::remove(lpath.c_str());
}

TEST_CASE("idx loader rejects truncated files") {
  std::string path = temp_path("catgrad_trunc.idx");
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.put(static_cast<char>(42));  // only 1 of 8 pixel bytes
  }
  CHECK_THROWS_AS(load_idx(path), Error);
  std::remove(path.c_str());
}

TEST_CASE("fixed binarization thresholds with ties up") {
  Tensor images({1, 1, 3}, {0.6, 0.5, 0.49});
  ImageBatch b = binarize_fixed(ImageBatch{images, {}});
  CHECK(b.images[0] == 1.0);
  CHECK(b.images[1] == 1.0);
  CHECK(b.images[2] == 0.0);
  // idempotent on already binary data
  ImageBatch again = binarize_fixed(b);
  CHECK(max_abs_diff(again.images, b.images) == 0.0);
}

TEST_CASE("dynamic binarization matches pixel probabilities") {
  RngStream rng(60);
  const std::size_t n = 100000;
  Tensor images({n, 1, 1});
  for (std::size_t i = 0; i < n; ++i) images[i] = 0.3;
  ImageBatch b = binarize_dynamic(ImageBatch{images, {}}, rng);
  double freq = 0;
  for (std::size_t i = 0; i < n; ++i) freq += b.images[i];
  freq /= static_cast<double>(n);
  CHECK(std::abs(freq - 0.3) < 0.005);

  Tensor extremes({2, 1, 1}, {0.0, 1.0});
  ImageBatch e = binarize_dynamic(ImageBatch{extremes, {}}, rng);
  CHECK(e.images[0] == 0.0);
  CHECK(e.images[1] == 1.0);
}

TEST_CASE("split halves and reconcatenation round trip") {
  Tensor images({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});  // checkerboard rows
  ImageBatch batch{images, {1}};
  auto [upper, lower] = split_halves(batch);
  CHECK(upper.height() == 1);
  CHECK(upper.images[0] == 1.0);
  CHECK(upper.images[1] == 0.0);
  CHECK(lower.images[0] == 0.0);
  CHECK(lower.images[1] == 1.0);
  ImageBatch merged = concat_halves(upper, lower);
  CHECK(max_abs_diff(merged.images, batch.images) == 0.0);

  Tensor odd({1, 3, 2});
  CHECK_THROWS_AS(split_halves(ImageBatch{odd, {}}), Error);
}

TEST_CASE("mnist shapes split to 14x28") {
  Tensor images({2, 28, 28});
  auto [upper, lower] = split_halves(ImageBatch{images, {}});
  CHECK(upper.height() == 14);
  CHECK(upper.width() == 28);
  CHECK(lower.height() == 14);
}

TEST_CASE("downsample 28 to 8 is deterministic block averaging") {
  RngStream rng(61);
  ImageBatch batch = make_fixture(4, rng);
  ImageBatch small = downsample(batch, 8);
  CHECK(small.height() == 8);
  CHECK(small.width() == 8);
  ImageBatch small2 = downsample(batch, 8);
  CHECK(max_abs_diff(small.images, small2.images) == 0.0);
  // block averages stay in [0,1]
  for (double v : small.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("synthetic batches are deterministic per seed") {
  for (SyntheticKind kind :
       {SyntheticKind::Stripes, SyntheticKind::RandomBernoulli, SyntheticKind::Blobs}) {
    RngStream a(62), b(62);
    ImageBatch x = synthetic_batch(kind, 3, 8, 8, a);
    ImageBatch y = synthetic_batch(kind, 3, 8, 8, b);
    CHECK(max_abs_diff(x.images, y.images) == 0.0);
  }
  RngStream r(63);
  ImageBatch empty = synthetic_batch(SyntheticKind::Stripes, 0, 8, 8, r);
  CHECK(empty.size() == 0);
}

TEST_CASE("random labels are uniform") {
  RngStream rng(64);
  ImageBatch batch = synthetic_batch(SyntheticKind::RandomBernoulli, 100000, 2, 2, rng);
  assign_random_labels(batch, 10, rng);
  std::vector<double> counts(10, 0.0);
  for (int label : batch.labels) counts[static_cast<std::size_t>(label)] += 1.0;
  std::vector<double> expected(10, 10000.0);
  CHECK(chi2_test_passes(counts, expected, 0.01));
}

TEST_CASE("fixture looks like labeled binary digits after binarization") {
  RngStream rng(65);
  ImageBatch fx = make_fixture(200, rng);
  CHECK(fx.size() == 200);
  CHECK(fx.height() == 28);
  CHECK(fx.has_labels());
  ImageBatch bin = binarize_fixed(fx);
  double on = 0;
  for (double v : bin.images.data()) on += v;
  // digits should paint a nontrivial but sparse share of pixels
  CHECK(on / static_cast<double>(bin.images.numel()) > 0.05);
  CHECK(on / static_cast<double>(bin.images.numel()) < 0.5);
}

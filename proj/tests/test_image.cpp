#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "scenepose/image.hpp"
#include "scenepose/png_io.hpp"
#include "scenepose/rng.hpp"

using namespace scenepose;

namespace {

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("bilinear sampling is exact on a linear ramp", "[image]") {
  Image img(8, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.05f * x + 0.1f * y;
  // Interior sample points: bilinear reproduces the affine field.
  Rng rng(51);
  for (int t = 0; t < 50; ++t) {
    const double sx = rng.uniform(1.0, 7.0);
    const double sy = rng.uniform(1.0, 5.0);
    const auto v = sample_bilinear(img, sx, sy);
    const double expect = 0.05 * (sx - 0.5) + 0.1 * (sy - 0.5);
    CHECK(v[0] == Catch::Approx(expect).margin(1e-5));
  }
}

TEST_CASE("samples outside the image are exactly zero", "[image]") {
  Image img(4, 4, 1.0f);
  CHECK(sample_bilinear(img, -0.001, 2.0)[0] == 0.0f);
  CHECK(sample_bilinear(img, 2.0, 4.001)[1] == 0.0f);
  CHECK(sample_bilinear(img, 0.0, 0.0)[2] == 1.0f);  // boundary counts as inside
  CHECK(sample_bilinear(img, 4.0, 4.0)[0] == 1.0f);
}

TEST_CASE("sample_region with the full box at native size is the identity", "[image]") {
  Rng rng(52);
  const Image img = random_image(rng, 9, 7);
  const Image out = sample_region(img, BBox{0.0, 0.0, 9.0, 7.0}, 9, 7);
  CHECK(out == img);
}

TEST_CASE("sample_region rejects degenerate boxes", "[image]") {
  Image img(4, 4);
  CHECK_THROWS_AS(sample_region(img, BBox{1.0, 1.0, 1.0, 3.0}, 4, 4), std::invalid_argument);
}

TEST_CASE("image_to_tensor is planar CHW", "[image]") {
  Rng rng(53);
  const Image img = random_image(rng, 5, 4);
  const Tensor t = image_to_tensor(img);
  REQUIRE(t.shape == std::vector<int>{3, 4, 5});
  CHECK(t(0, 2, 3) == Catch::Approx(img.at(3, 2, 0)));
  CHECK(t(2, 0, 4) == Catch::Approx(img.at(4, 0, 2)));
}

TEST_CASE("drawing primitives stay in bounds and are deterministic", "[image]") {
  Image a(32, 32);
  Image b(32, 32);
  for (Image* img : {&a, &b}) {
    draw_disc(*img, 5.0, 5.0, 3.0, {1.0f, 0.0f, 0.0f});
    draw_line(*img, -5.0, -5.0, 40.0, 40.0, {0.0f, 1.0f, 0.0f}, 2.0);
    draw_score_text(*img, 2, 20, "0.97", {1.0f, 1.0f, 1.0f});
  }
  CHECK(a == b);
  CHECK(a.at(7, 4, 0) == 1.0f);  // inside the disc, off the line's path
}

TEST_CASE("png round trip preserves quantized pixel values", "[image]") {
  Rng rng(54);
  const Image img = random_image(rng, 17, 11);
  const auto path = std::filesystem::temp_directory_path() / "scenepose_png_test.png";
  write_png(img, path.string());
  const Image back = read_png(path.string());
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float quantized = static_cast<float>(std::lround(img.data[i] * 255.0f)) / 255.0f;
    CHECK(back.data[i] == Catch::Approx(quantized).margin(1e-6));
  }

  // A second read of the same file is bit-identical.
  const Image again = read_png(path.string());
  CHECK(again == back);
  std::filesystem::remove(path);
}

TEST_CASE("png writer output is byte-stable across calls", "[image]") {
  Rng rng(55);
  const Image img = random_image(rng, 23, 9);
  const auto p1 = std::filesystem::temp_directory_path() / "scenepose_png_a.png";
  const auto p2 = std::filesystem::temp_directory_path() / "scenepose_png_b.png";
  write_png(img, p1.string());
  write_png(img, p2.string());
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("png reader rejects non-png files", "[image]") {
  const auto path = std::filesystem::temp_directory_path() / "scenepose_not_a_png.png";
  {
    std::ofstream out(path);
    out << "definitely not a png";
  }
  CHECK_THROWS_AS(read_png(path.string()), std::runtime_error);
  CHECK_THROWS_AS(read_png("/nonexistent/nowhere.png"), std::runtime_error);
  std::filesystem::remove(path);
}

#include "tessera/image.hpp"

#include "test_support.hpp"

using namespace tessera;

namespace {

ImageTensor random_image(std::int64_t h, std::int64_t w, std::int64_t c, std::uint64_t seed) {
  ImageTensor img(h, w, c);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(ImageIo, RoundTripsWithinQuantization) {
  const auto dir = tessera::testing::temp_dir("image_io");
  const ImageTensor img = random_image(13, 21, 3, 1);
  for (auto [name, depth] : {std::pair{"a.png", 8}, std::pair{"b.png", 16}, std::pair{"c.tif", 16}, std::pair{"d.tiff", 8}}) {
    save_image(img, dir / name, depth);
    const ImageTensor back = load_image(dir / name);
    ASSERT_TRUE(back.same_dims(img)) << name;
    const double q = 0.5 / ((1 << depth) - 1) + 1e-7;
    for (std::size_t i = 0; i < img.data.size(); ++i) ASSERT_NEAR(back.data[i], img.data[i], q) << name;
  }
  const ImageTensor gray = random_image(5, 6, 1, 2);
  save_image(gray, dir / "g.png", 16);
  EXPECT_EQ(load_image(dir / "g.png").channels, 1);
}

TEST(ImageIo, ClampsAndRejects) {
  const auto dir = tessera::testing::temp_dir("image_clamp");
  ImageTensor img(1, 2, 1);
  img.data = {-0.5f, 1.5f};
  save_image(img, dir / "x.png");
  const ImageTensor back = load_image(dir / "x.png");
  EXPECT_EQ(back.data[0], 0.0f);
  EXPECT_EQ(back.data[1], 1.0f);
  EXPECT_THROW(load_image(dir / "missing.png"), ImageIOError);
  EXPECT_THROW(save_image(img, dir / "x.bmp"), ImageIOError);
  EXPECT_THROW(save_image(img, dir / "x.png", 12), ImageIOError);
}

TEST(ImageOps, RotationAndCrop) {
  ImageTensor img(2, 3, 1);
  img.data = {1, 2, 3, 4, 5, 6};
  const ImageTensor r = rot90(img, 1);
  EXPECT_EQ(r.height, 3);
  EXPECT_EQ(r.width, 2);
  EXPECT_EQ(r.data, (std::vector<float>{3, 6, 2, 5, 1, 4}));
  EXPECT_EQ(rot90(img, 4).data, img.data);
  EXPECT_EQ(rot90(rot90(img, 3), 1).data, img.data);
  EXPECT_EQ(rot90(img, 2).data, (std::vector<float>{6, 5, 4, 3, 2, 1}));
  const ImageTensor c = crop(img, 0, 1, 2, 2);
  EXPECT_EQ(c.data, (std::vector<float>{2, 3, 5, 6}));
  EXPECT_THROW(crop(img, 1, 1, 2, 2), std::out_of_range);
}

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "m3sr/data.hpp"
#include "m3sr/errors.hpp"
#include "test_util.hpp"

using namespace m3sr;
using namespace m3sr::test;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("m3sr_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::uint32_t u32_at(const std::string& b, std::size_t off) {
  return std::uint32_t(std::uint8_t(b[off])) | std::uint32_t(std::uint8_t(b[off + 1])) << 8 |
         std::uint32_t(std::uint8_t(b[off + 2])) << 16 | std::uint32_t(std::uint8_t(b[off + 3])) << 24;
}

HsiCube ramp_cube(std::size_t h, std::size_t w, std::size_t c) {
  Tensor<float> v({h, w, c});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i) / float(v.size());
  return make_hsi(std::move(v), 400, 10);
}

}  // namespace

TEST(CubeFile, HeaderBytes) {
  const fs::path dir = temp_dir("header");
  write_cube(ramp_cube(4, 5, 31), dir / "c.m3sr");
  const std::string b = slurp(dir / "c.m3sr");
  ASSERT_EQ(b.size(), 28u + 4 * 5 * 31 * 4);
  EXPECT_EQ(b.substr(0, 4), "M3SR");
  EXPECT_EQ(u32_at(b, 4), 1u);
  EXPECT_EQ(u32_at(b, 8), 4u);
  EXPECT_EQ(u32_at(b, 12), 5u);
  EXPECT_EQ(u32_at(b, 16), 31u);
  EXPECT_EQ(u32_at(b, 20), 400u);
  EXPECT_EQ(u32_at(b, 24), 10u);
  float second = 0;
  const std::uint32_t bits = u32_at(b, 32);
  std::memcpy(&second, &bits, 4);
  EXPECT_EQ(second, 1.0f / 620.0f);
}

TEST(CubeFile, RoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  Rng rng(1);
  const CubePair p = synth_pair(rng, 8, 12);
  write_cube(p.hsi, dir / "h.m3sr");
  write_cube(p.rgb, dir / "r.m3sr");
  const HsiCube h = read_cube(dir / "h.m3sr"), r = read_cube(dir / "r.m3sr");
  EXPECT_EQ(h.values.storage(), p.hsi.values.storage());
  EXPECT_EQ(h.values.shape(), p.hsi.values.shape());
  EXPECT_EQ(h.wavelength_start, p.hsi.wavelength_start);
  EXPECT_EQ(h.wavelength_step, p.hsi.wavelength_step);
  EXPECT_EQ(r.values.storage(), p.rgb.values.storage());
  EXPECT_EQ(r.bands(), 3u);
  EXPECT_EQ(r.wavelength_step, 0u);
}

TEST(CubeFile, Defects) {
  const fs::path dir = temp_dir("defects");
  write_cube(ramp_cube(4, 4, 3), dir / "ok.m3sr");
  const std::string good = slurp(dir / "ok.m3sr");

  std::string bad = good;
  bad[0] = 'X';
  spit(dir / "magic.m3sr", bad);
  EXPECT_THROW(read_cube(dir / "magic.m3sr"), BadMagicError);

  bad = good;
  bad[4] = 2;
  spit(dir / "version.m3sr", bad);
  EXPECT_THROW(read_cube(dir / "version.m3sr"), VersionMismatchError);

  spit(dir / "short.m3sr", good.substr(0, good.size() - 4));
  EXPECT_THROW(read_cube(dir / "short.m3sr"), TruncatedPayloadError);
  spit(dir / "header.m3sr", good.substr(0, 10));
  EXPECT_THROW(read_cube(dir / "header.m3sr"), FormatError);

  EXPECT_THROW(read_cube(dir / "missing.m3sr"), IoError);
}

TEST(Cube, Validation) {
  HsiCube c = ramp_cube(2, 2, 2);
  EXPECT_NO_THROW(c.validate());
  c.values[1] = 1.5f;
  EXPECT_THROW(c.validate(), DomainError);
  c.values[1] = std::nanf("");
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_EQ(ramp_cube(1, 1, 3).wavelengths(), (std::vector<double>{400, 410, 420}));
}

TEST(Srf, RowsNormalizedAndPeaked) {
  std::vector<double> wl;
  for (int k = 0; k < 31; ++k) wl.push_back(400 + 10 * k);
  const Srf s = Srf::gaussian(wl);
  ASSERT_EQ(s.weights.size(), 93u);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 31; ++k) {
      const double v = s.weights[r * 31 + k];
      EXPECT_GE(v, 0.0);
      total += v;
      if (v > s.weights[r * 31 + arg]) arg = k;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(wl[arg], kRgbCentersNm[r]);
  }
}

TEST(Srf, FlatSpectrumGivesEqualChannels) {
  std::vector<double> wl;
  for (int k = 0; k < 31; ++k) wl.push_back(400 + 10 * k);
  const Tensor<double> flat({2, 2, 31}, 0.37);
  const Tensor<double> rgb = Srf::gaussian(wl).project(flat);
  for (double v : rgb.data()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Srf, Linear) {
  std::vector<double> wl = {400, 500, 600, 700};
  const Srf s = Srf::gaussian(wl);
  Rng rng(2);
  const Tensor<double> a = uniform({3, 2, 4}, rng, 0, 1), b = uniform({3, 2, 4}, rng, 0, 1);
  Tensor<double> mix(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2 * a[i] - 0.5 * b[i];
  const Tensor<double> pa = s.project(a), pb = s.project(b), pm = s.project(mix);
  for (std::size_t i = 0; i < pm.size(); ++i) EXPECT_NEAR(pm[i], 2 * pa[i] - 0.5 * pb[i], 1e-12);
  EXPECT_THROW(s.project(Tensor<double>({1, 1, 3})), ShapeError);
}

TEST(Synth, RangesShapesDeterminism) {
  Rng a(7), b(7);
  const CubePair p = synth_pair(a, 16, 12), q = synth_pair(b, 16, 12);
  EXPECT_EQ(p.hsi.values.shape(), (Shape{16, 12, 31}));
  EXPECT_EQ(p.rgb.values.shape(), (Shape{16, 12, 3}));
  EXPECT_EQ(p.hsi.values.storage(), q.hsi.values.storage());
  EXPECT_EQ(p.rgb.values.storage(), q.rgb.values.storage());
  EXPECT_NO_THROW(p.hsi.validate());
  EXPECT_NO_THROW(p.rgb.validate());
  float peak = 0;
  for (float v : p.hsi.values.data()) peak = std::max(peak, v);
  EXPECT_GT(peak, 0.0f);
  Rng c(8);
  EXPECT_NE(synth_pair(c, 16, 12).hsi.values.storage(), p.hsi.values.storage());
  EXPECT_THROW(synth_pair(c, 6, 8), ShapeError);
}

TEST(Synth, RgbIsProjectedHsi) {
  Rng rng(9);
  const CubePair p = synth_pair(rng, 8, 8);
  const Tensor<double> rgb = Srf::gaussian(p.hsi.wavelengths()).project(p.hsi.values.cast<double>());
  for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_NEAR(p.rgb.values[i], std::clamp(rgb[i], 0.0, 1.0), 1e-6);
}

TEST(Crop, GridCount) {
  Rng rng(1);
  CubePair p{make_rgb(Tensor<float>({482, 512, 3})), make_hsi(Tensor<float>({482, 512, 2}))};
  const auto patches = crop_patches(p, 128, 128, CropMode::kGrid, rng);
  ASSERT_EQ(patches.size(), 12u);
  EXPECT_EQ(patches.back().y, 256u);
  EXPECT_EQ(patches.back().x, 384u);
  EXPECT_EQ(crop_patches(p, 128, 64, CropMode::kGrid, rng).size(), 6u * 7u);
}

TEST(Crop, AlignmentAndContent) {
  Rng rng(2);
  const CubePair p = synth_pair(rng, 16, 20);
  for (const Patch& q : crop_patches(p, 8, 4, CropMode::kGrid, rng)) {
    ASSERT_EQ(q.pair.hsi.values.shape(), (Shape{8, 8, 31}));
    ASSERT_EQ(q.pair.rgb.values.shape(), (Shape{8, 8, 3}));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_EQ(q.pair.hsi.values[(i * 8 + j) * 31 + 5], p.hsi.values[((q.y + i) * 20 + q.x + j) * 31 + 5]);
        EXPECT_EQ(q.pair.rgb.values[(i * 8 + j) * 3 + 2], p.rgb.values[((q.y + i) * 20 + q.x + j) * 3 + 2]);
      }
  }
}

TEST(Crop, RandomReproducible) {
  Rng data(3);
  const CubePair p = synth_pair(data, 16, 16);
  Rng a(5), b(5);
  const auto pa = crop_patches(p, 8, 0, CropMode::kRandom, a, 6);
  const auto pb = crop_patches(p, 8, 0, CropMode::kRandom, b, 6);
  ASSERT_EQ(pa.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(pa[i].y, pb[i].y);
    EXPECT_EQ(pa[i].x, pb[i].x);
    EXPECT_LE(pa[i].y + 8, 16u);
    EXPECT_LE(pa[i].x + 8, 16u);
  }
}

TEST(Crop, Errors) {
  Rng rng(4);
  const CubePair p = synth_pair(rng, 8, 8);
  EXPECT_THROW(crop_patches(p, 12, 4, CropMode::kGrid, rng), ShapeError);
  EXPECT_THROW(crop_patches(p, 6, 4, CropMode::kGrid, rng), ConfigError);
  EXPECT_THROW(crop_patches(p, 4, 0, CropMode::kGrid, rng), ConfigError);
}

TEST(Pgm, BytesAndScaling) {
  const fs::path dir = temp_dir("pgm");
  const Tensor<double> img({2, 3}, std::vector<double>{0, 0.5, 1, 2, -1, 0.25});
  write_pgm(dir / "a.pgm", img, 1.0);
  const std::string b = slurp(dir / "a.pgm");
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(b.size(), header.size() + 6);
  EXPECT_EQ(b.substr(0, header.size()), header);
  const std::vector<int> px = {0, 128, 255, 255, 0, 64};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(int(std::uint8_t(b[header.size() + i])), px[i]) << i;
  EXPECT_THROW(write_pgm(dir / "b.pgm", Tensor<double>({2, 2, 2}), 1.0), ShapeError);
}

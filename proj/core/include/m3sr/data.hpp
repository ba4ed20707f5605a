#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "m3sr/rng.hpp"
#include "m3sr/tensor.hpp"

namespace m3sr {

// Image cube in [0, 1], layout (h, w, c) row-major channel-last. Band k sits
// at wavelength_start + k * wavelength_step nm. RGB cubes use bands = 3 and
// step 0, with channels R, G, B at nominal 620, 550 and 450 nm.
struct HsiCube {
  std::uint32_t wavelength_start = 400;
  std::uint32_t wavelength_step = 10;
  Tensor<float> values;  // (H, W, bands)

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t bands() const { return values.dim(2); }
  std::vector<double> wavelengths() const;
  // Throws DomainError when a value lies outside [0, 1] or is not finite.
  void validate() const;
};

inline constexpr std::array<double, 3> kRgbCentersNm = {620.0, 550.0, 450.0};

HsiCube make_hsi(Tensor<float> values, std::uint32_t start = 400, std::uint32_t step = 10);
HsiCube make_rgb(Tensor<float> values);

// File layout, all little-endian: "M3SR", u32 version (1), u32 H, u32 W,
// u32 bands, u32 wavelength_start_nm, u32 wavelength_step_nm, then
// H * W * bands float32 in (h, w, c) order.
inline constexpr std::uint32_t kCubeVersion = 1;
void write_cube(const HsiCube& cube, const std::filesystem::path& path);
// Throws BadMagicError, VersionMismatchError or TruncatedPayloadError on the
// matching defect, IoError when the file cannot be opened.
HsiCube read_cube(const std::filesystem::path& path);

// 3 x bands response matrix, rows R, G, B, each non-negative and summing to 1.
struct Srf {
  std::vector<double> weights;  // row-major (3, bands)
  std::size_t bands = 0;

  // Gaussian responses centered at 620, 550 and 450 nm with sigma 40 nm,
  // sampled on `wavelengths` and row-normalized.
  static Srf gaussian(const std::vector<double>& wavelengths, double sigma = 40.0);
  // rgb (H, W, 3) = hsi (H, W, bands) projected per pixel; not clipped.
  Tensor<double> project(const Tensor<double>& hsi) const;
};

struct CubePair {
  HsiCube rgb;
  HsiCube hsi;
};

// 3-6 Gaussian blobs, each with a spectrum made of 1-3 Gaussian bumps over
// 400-700 nm; HSI clipped to [0, 1], RGB = default Srf projection.
// H and W must be >= 4 and divisible by 4.
CubePair synth_pair(Rng& rng, std::size_t h, std::size_t w, std::size_t bands = 31);

enum class CropMode { kGrid, kRandom };

// Grid mode takes every window at multiples of `stride` that fits; random mode
// draws `count` uniformly placed windows. Both cubes share coordinates.
struct Patch {
  std::size_t y = 0, x = 0;
  CubePair pair;
};
std::vector<Patch> crop_patches(const CubePair& pair, std::size_t patch, std::size_t stride, CropMode mode,
                                Rng& rng, std::size_t count = 1);
HsiCube crop_cube(const HsiCube& cube, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

// 8-bit binary PGM; values are scaled so `max_value` maps to 255 and clipped.
void write_pgm(const std::filesystem::path& path, const Tensor<double>& image, double max_value);

}  // namespace m3sr

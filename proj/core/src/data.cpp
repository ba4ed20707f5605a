#include "m3sr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "byte_io.hpp"
#include "m3sr/errors.hpp"

namespace m3sr {

namespace detail {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

std::vector<double> HsiCube::wavelengths() const {
  std::vector<double> wl(bands());
  if (bands() == 3 && wavelength_step == 0) return {kRgbCentersNm.begin(), kRgbCentersNm.end()};
  for (std::size_t k = 0; k < wl.size(); ++k) wl[k] = double(wavelength_start) + double(k) * wavelength_step;
  return wl;
}

void HsiCube::validate() const {
  if (values.rank() != 3) throw ShapeError("cube values must be (H, W, bands), got " + shape_str(values.shape()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DomainError("cube value " + std::to_string(v) + " at flat index " + std::to_string(i) +
                        " lies outside [0, 1]");
    }
  }
}

HsiCube make_hsi(Tensor<float> values, std::uint32_t start, std::uint32_t step) {
  if (values.rank() != 3) throw ShapeError("cube values must be (H, W, bands)");
  HsiCube c;
  c.wavelength_start = start;
  c.wavelength_step = step;
  c.values = std::move(values);
  return c;
}

HsiCube make_rgb(Tensor<float> values) {
  if (values.rank() != 3 || values.dim(2) != 3) throw ShapeError("RGB cube must be (H, W, 3)");
  return make_hsi(std::move(values), std::uint32_t(kRgbCentersNm[0]), 0);
}

void write_cube(const HsiCube& cube, const std::filesystem::path& path) {
  if (cube.values.rank() != 3) throw ShapeError("write_cube: values must be (H, W, bands)");
  detail::ByteWriter w;
  w.raw("M3SR");
  w.u32(kCubeVersion);
  w.u32(std::uint32_t(cube.height()));
  w.u32(std::uint32_t(cube.width()));
  w.u32(std::uint32_t(cube.bands()));
  w.u32(cube.wavelength_start);
  w.u32(cube.wavelength_step);
  for (float v : cube.values.data()) w.f32(v);
  detail::write_file(path.string(), w.bytes());
}

HsiCube read_cube(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes.data(), bytes.size());
  if (bytes.size() < 4 || std::string(bytes.data(), 4) != "M3SR") {
    throw BadMagicError("'" + path.string() + "' is not a cube file (bad magic)");
  }
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCubeVersion) {
    throw VersionMismatchError("'" + path.string() + "' has cube format version " + std::to_string(version) +
                               ", expected " + std::to_string(kCubeVersion));
  }
  const std::size_t h = r.u32(), w = r.u32(), b = r.u32();
  HsiCube c;
  c.wavelength_start = r.u32();
  c.wavelength_step = r.u32();
  if (h == 0 || w == 0 || b == 0) throw FormatError("'" + path.string() + "' declares an empty cube");
  const std::size_t n = h * w * b;
  if (r.remaining() < 4 * n) {
    throw TruncatedPayloadError("'" + path.string() + "' payload holds " + std::to_string(r.remaining() / 4) +
                                " of " + std::to_string(n) + " floats");
  }
  if (r.remaining() > 4 * n) throw FormatError("'" + path.string() + "' has trailing bytes after the payload");
  Tensor<float> v({h, w, b});
  for (auto& x : v.data()) x = r.f32();
  c.values = std::move(v);
  return c;
}

Srf Srf::gaussian(const std::vector<double>& wavelengths, double sigma) {
  if (wavelengths.empty()) throw ConfigError("Srf: empty wavelength grid");
  if (!(sigma > 0)) throw ConfigError("Srf: sigma must be positive");
  Srf s;
  s.bands = wavelengths.size();
  s.weights.resize(3 * s.bands);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0;
    for (std::size_t k = 0; k < s.bands; ++k) {
      const double d = (wavelengths[k] - kRgbCentersNm[r]) / sigma;
      s.weights[r * s.bands + k] = std::exp(-0.5 * d * d);
      total += s.weights[r * s.bands + k];
    }
    for (std::size_t k = 0; k < s.bands; ++k) s.weights[r * s.bands + k] /= total;
  }
  return s;
}

Tensor<double> Srf::project(const Tensor<double>& hsi) const {
  if (hsi.rank() != 3 || hsi.dim(2) != bands) {
    throw ShapeError("Srf::project: expected (H, W, " + std::to_string(bands) + "), got " + shape_str(hsi.shape()));
  }
  const std::size_t pixels = hsi.dim(0) * hsi.dim(1);
  Tensor<double> rgb({hsi.dim(0), hsi.dim(1), 3});
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0;
      for (std::size_t k = 0; k < bands; ++k) acc += weights[r * bands + k] * hsi[p * bands + k];
      rgb[p * 3 + r] = acc;
    }
  return rgb;
}

CubePair synth_pair(Rng& rng, std::size_t h, std::size_t w, std::size_t bands) {
  if (h < 4 || w < 4 || h % 4 || w % 4) {
    throw ShapeError("synth_pair: H and W must be >= 4 and divisible by 4, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  if (bands < 2) throw ConfigError("synth_pair: need at least 2 bands");
  const std::uint32_t start = 400, step = std::uint32_t(300 / (bands - 1));
  std::vector<double> wl(bands);
  for (std::size_t k = 0; k < bands; ++k) wl[k] = double(start) + double(k) * step;

  Tensor<double> hsi({h, w, bands});
  const std::size_t blobs = 3 + std::size_t(rng.below(4));
  std::vector<double> spectrum(bands);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0, double(h)), cx = rng.uniform(0, double(w));
    const double sy = rng.uniform(0.12, 0.35) * double(h), sx = rng.uniform(0.12, 0.35) * double(w);
    const double amp = rng.uniform(0.3, 0.8);
    std::fill(spectrum.begin(), spectrum.end(), 0.0);
    const std::size_t bumps = 1 + std::size_t(rng.below(3));
    for (std::size_t q = 0; q < bumps; ++q) {
      const double mu = rng.uniform(400, 700), width = rng.uniform(25, 90), weight = rng.uniform(0.3, 1.0);
      for (std::size_t k = 0; k < bands; ++k) {
        const double d = (wl[k] - mu) / width;
        spectrum[k] += weight * std::exp(-0.5 * d * d);
      }
    }
    const double peak = *std::max_element(spectrum.begin(), spectrum.end());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (double(y) - cy) / sy, dx = (double(x) - cx) / sx;
        const double s = amp * std::exp(-0.5 * (dy * dy + dx * dx)) / peak;
        double* px = &hsi[(y * w + x) * bands];
        for (std::size_t k = 0; k < bands; ++k) px[k] += s * spectrum[k];
      }
  }
  Tensor<float> hv({h, w, bands});
  for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = float(std::clamp(hsi[i], 0.0, 1.0));
  Tensor<double> clipped = hv.cast<double>();
  const Tensor<double> rgb = Srf::gaussian(wl).project(clipped);
  Tensor<float> rv({h, w, 3});
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] = float(std::clamp(rgb[i], 0.0, 1.0));
  return {make_rgb(std::move(rv)), make_hsi(std::move(hv), start, step)};
}

HsiCube crop_cube(const HsiCube& cube, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > cube.height() || x + w > cube.width()) throw ShapeError("crop_cube: window outside the cube");
  const std::size_t b = cube.bands(), sw = cube.width();
  Tensor<float> v({h, w, b});
  for (std::size_t i = 0; i < h; ++i)
    std::copy_n(&cube.values[((y + i) * sw + x) * b], w * b, &v[i * w * b]);
  HsiCube out = cube;
  out.values = std::move(v);
  return out;
}

std::vector<Patch> crop_patches(const CubePair& pair, std::size_t patch, std::size_t stride, CropMode mode,
                                Rng& rng, std::size_t count) {
  const std::size_t h = pair.hsi.height(), w = pair.hsi.width();
  if (pair.rgb.height() != h || pair.rgb.width() != w) throw ShapeError("crop_patches: rgb and hsi not aligned");
  if (patch == 0 || patch % 4) throw ConfigError("crop_patches: patch must be a positive multiple of 4");
  if (patch > std::min(h, w)) {
    throw ShapeError("crop_patches: patch " + std::to_string(patch) + " exceeds image " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  std::vector<Patch> out;
  auto take = [&](std::size_t y, std::size_t x) {
    out.push_back({y, x, {crop_cube(pair.rgb, y, x, patch, patch), crop_cube(pair.hsi, y, x, patch, patch)}});
  };
  if (mode == CropMode::kGrid) {
    if (stride == 0) throw ConfigError("crop_patches: stride must be >= 1");
    for (std::size_t y = 0; y + patch <= h; y += stride)
      for (std::size_t x = 0; x + patch <= w; x += stride) take(y, x);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t y = rng.below(h - patch + 1);
      const std::size_t x = rng.below(w - patch + 1);
      take(y, x);
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor<double>& image, double max_value) {
  if (image.rank() != 2) throw ShapeError("write_pgm: expected an (H, W) image");
  if (!(max_value > 0)) max_value = 1.0;
  detail::ByteWriter w;
  w.raw("P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n");
  std::string pixels(image.size(), '\0');
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i] / max_value, 0.0, 1.0);
    pixels[i] = char(std::uint8_t(std::lround(v * 255.0)));
  }
  w.raw(pixels);
  detail::write_file(path.string(), w.bytes());
}

}  // namespace m3sr

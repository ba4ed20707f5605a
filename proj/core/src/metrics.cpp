#include "m3sr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "m3sr/errors.hpp"

namespace m3sr {

namespace {

void require_cubes(const Tensor<double>& z, const Tensor<double>& zh, const char* what) {
  if (z.rank() != 3) throw ShapeError(std::string(what) + ": expected (H, W, C) cubes, got " + shape_str(z.shape()));
  require_same_shape(z.shape(), zh.shape(), what);
}

double mse(const Tensor<double>& z, const Tensor<double>& zh) {
  double acc = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - zh[i];
    acc += d * d;
  }
  return acc / double(z.size());
}

struct AngleSum {
  double sum = 0;
  std::size_t pixels = 0, excluded = 0;
};

AngleSum angle_sum(const Tensor<double>& z, const Tensor<double>& zh) {
  const std::size_t c = z.dim(2), pixels = z.dim(0) * z.dim(1);
  AngleSum a;
  for (std::size_t p = 0; p < pixels; ++p) {
    double dot = 0, nz = 0, nh = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double u = z[p * c + k], v = zh[p * c + k];
      dot += u * v;
      nz += u * u;
      nh += v * v;
    }
    if (nz == 0 || nh == 0) {
      ++a.excluded;
      continue;
    }
    const double cosine = std::clamp(dot / (std::sqrt(nz) * std::sqrt(nh)), -1.0, 1.0);
    a.sum += std::acos(cosine) * 180.0 / std::numbers::pi;
    ++a.pixels;
  }
  return a;
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> g(n * n);
  const double c = (double(n) - 1) / 2;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dy = double(i) - c, dx = double(j) - c;
      g[i * n + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      total += g[i * n + j];
    }
  for (auto& v : g) v /= total;
  return g;
}

}  // namespace

double rmse(const Tensor<double>& z, const Tensor<double>& zh) {
  require_cubes(z, zh, "rmse");
  return std::sqrt(mse(z, zh));
}

double psnr_from_mse(double m) {
  if (m < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / m);
}

double psnr(const Tensor<double>& z, const Tensor<double>& zh) {
  require_cubes(z, zh, "psnr");
  return psnr_from_mse(mse(z, zh));
}

SamResult sam_detail(const Tensor<double>& z, const Tensor<double>& zh) {
  require_cubes(z, zh, "sam");
  const AngleSum a = angle_sum(z, zh);
  if (a.pixels == 0) throw DomainError("sam: every pixel has a zero spectrum; the angle is undefined");
  return {a.sum / double(a.pixels), a.pixels, a.excluded};
}

double sam(const Tensor<double>& z, const Tensor<double>& zh) {
  return sam_detail(z, zh).degrees;
}

std::vector<SsimSum> ssim_band_sums(const Tensor<double>& z, const Tensor<double>& zh, const SsimOptions& opt) {
  require_cubes(z, zh, "mssim");
  const std::size_t h = z.dim(0), w = z.dim(1), c = z.dim(2), n = opt.window;
  if (n == 0 || h < n || w < n) {
    throw DomainError("mssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                      std::to_string(n) + "x" + std::to_string(n) + " window; configure a smaller window");
  }
  const std::vector<double> g = gaussian_window(n, opt.sigma);
  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
  const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  std::vector<SsimSum> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y + n <= h; ++y)
      for (std::size_t x = 0; x + n <= w; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double wt = g[i * n + j];
            const std::size_t idx = ((y + i) * w + (x + j)) * c + k;
            const double a = z[idx], b = zh[idx];
            mx += wt * a;
            my += wt * b;
            sxx += wt * a * a;
            syy += wt * b * b;
            sxy += wt * a * b;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        out[k].sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++out[k].windows;
      }
  }
  return out;
}

double mssim(const Tensor<double>& z, const Tensor<double>& zh, const SsimOptions& opt) {
  const auto sums = ssim_band_sums(z, zh, opt);
  double acc = 0;
  for (const auto& s : sums) acc += s.sum / double(s.windows);
  return acc / double(sums.size());
}

ImageMetrics image_metrics(const std::string& id, const Tensor<double>& z, const Tensor<double>& zh,
                           const SsimOptions& opt) {
  ImageMetrics m;
  m.id = id;
  m.rmse = rmse(z, zh);
  m.psnr_db = psnr(z, zh);
  m.sam_deg = sam(z, zh);
  m.mssim = mssim(z, zh, opt);
  return m;
}

MetricReport evaluate(const std::vector<EvalPair>& pairs, bool global_pooling, const SsimOptions& opt) {
  if (pairs.empty()) throw DomainError("evaluate: no image pairs");
  MetricReport r;
  for (const auto& p : pairs) r.per_image.push_back(image_metrics(p.id, p.reference, p.reconstruction, opt));
  r.mean.id = "mean";
  if (!global_pooling) {
    for (const auto& m : r.per_image) {
      r.mean.rmse += m.rmse;
      r.mean.psnr_db += m.psnr_db;
      r.mean.sam_deg += m.sam_deg;
      r.mean.mssim += m.mssim;
    }
    const double n = double(r.per_image.size());
    r.mean.rmse /= n;
    r.mean.psnr_db /= n;
    r.mean.sam_deg /= n;
    r.mean.mssim /= n;
    return r;
  }
  double sq = 0, angles = 0;
  std::size_t elements = 0, pixels = 0;
  std::vector<SsimSum> bands;
  for (const auto& p : pairs) {
    sq += mse(p.reference, p.reconstruction) * double(p.reference.size());
    elements += p.reference.size();
    const AngleSum a = angle_sum(p.reference, p.reconstruction);
    angles += a.sum;
    pixels += a.pixels;
    const auto s = ssim_band_sums(p.reference, p.reconstruction, opt);
    if (bands.empty()) bands.resize(s.size());
    if (s.size() != bands.size()) throw ShapeError("evaluate: band counts differ between images");
    for (std::size_t k = 0; k < s.size(); ++k) {
      bands[k].sum += s[k].sum;
      bands[k].windows += s[k].windows;
    }
  }
  const double m = sq / double(elements);
  r.mean.rmse = std::sqrt(m);
  r.mean.psnr_db = psnr_from_mse(m);
  if (pixels == 0) throw DomainError("evaluate: every pixel has a zero spectrum");
  r.mean.sam_deg = angles / double(pixels);
  double acc = 0;
  for (const auto& b : bands) acc += b.sum / double(b.windows);
  r.mean.mssim = acc / double(bands.size());
  return r;
}

}  // namespace m3sr

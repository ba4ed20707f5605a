#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "m3sr/tensor.hpp"

// Image-quality metrics on (H, W, C) cubes with data range [0, 1]. Z is the
// reference, Zh the reconstruction.
namespace m3sr {

double rmse(const Tensor<double>& z, const Tensor<double>& zh);
// 10 log10(1 / MSE), 100 dB when MSE < 1e-10.
double psnr(const Tensor<double>& z, const Tensor<double>& zh);
double psnr_from_mse(double mse);

struct SamResult {
  double degrees = 0;
  std::size_t pixels = 0;    // pixels that entered the mean
  std::size_t excluded = 0;  // pixels with a zero spectrum on either side
};
// Mean spectral angle in degrees; DomainError when every pixel is excluded.
SamResult sam_detail(const Tensor<double>& z, const Tensor<double>& zh);
double sam(const Tensor<double>& z, const Tensor<double>& zh);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};
// Per band SSIM averaged over all valid window positions, then over bands.
double mssim(const Tensor<double>& z, const Tensor<double>& zh, const SsimOptions& opt = {});
// Per-band SSIM map sums and window counts, for pooled aggregation.
struct SsimSum {
  double sum = 0;
  std::size_t windows = 0;
};
std::vector<SsimSum> ssim_band_sums(const Tensor<double>& z, const Tensor<double>& zh, const SsimOptions& opt = {});

struct ImageMetrics {
  std::string id;
  double rmse = 0, psnr_db = 0, sam_deg = 0, mssim = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;  // id "mean"
};

struct EvalPair {
  std::string id;
  Tensor<double> reference;
  Tensor<double> reconstruction;
};

// Default: metrics per image, then arithmetic mean. With `global_pooling`
// the aggregate instead pools squared errors, spectral angles and SSIM
// windows over the whole set.
MetricReport evaluate(const std::vector<EvalPair>& pairs, bool global_pooling = false,
                      const SsimOptions& opt = {});
ImageMetrics image_metrics(const std::string& id, const Tensor<double>& z, const Tensor<double>& zh,
                           const SsimOptions& opt = {});

}  // namespace m3sr

#include "m3sr/scan2d.hpp"

#include "m3sr/errors.hpp"
#include "m3sr/ops.hpp"

namespace m3sr {

std::vector<std::size_t> scan_order(std::size_t h, std::size_t w, ScanDirection d) {
  if (h == 0 || w == 0) throw ShapeError("scan_order: empty grid");
  const std::size_t len = h * w;
  std::vector<std::size_t> order(len);
  const bool column = d == ScanDirection::kColumnForward || d == ScanDirection::kColumnReverse;
  for (std::size_t i = 0; i < len; ++i) order[i] = column ? (i % h) * w + i / h : i;
  if (d == ScanDirection::kRowReverse || d == ScanDirection::kColumnReverse) {
    std::vector<std::size_t> rev(order.rbegin(), order.rend());
    order.swap(rev);
  }
  return order;
}

namespace {

std::vector<std::size_t> inverse(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

// Repeats a per-image permutation over a batch of nb images.
std::vector<std::size_t> batched(const std::vector<std::size_t>& perm, std::size_t nb) {
  const std::size_t len = perm.size();
  std::vector<std::size_t> out(nb * len);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < len; ++i) out[b * len + i] = b * len + perm[i];
  return out;
}

}  // namespace

template <typename T>
Var<T> grid_to_sequence(const Var<T>& grid, ScanDirection d) {
  if (grid.shape().size() != 4) throw ShapeError("grid_to_sequence: expected (B, H, W, C)");
  const std::size_t nb = grid.dim(0), h = grid.dim(1), w = grid.dim(2), c = grid.dim(3);
  auto rows = reshape(grid, {nb * h * w, c});
  auto seq = gather_rows(rows, batched(scan_order(h, w, d), nb));
  return reshape(seq, {nb, h * w, c});
}

template <typename T>
Var<T> sequence_to_grid(const Var<T>& seq, ScanDirection d, std::size_t h, std::size_t w) {
  if (seq.shape().size() != 3 || seq.dim(1) != h * w) {
    throw ShapeError("sequence_to_grid: expected (B, " + std::to_string(h * w) + ", C), got " +
                     shape_str(seq.shape()));
  }
  const std::size_t nb = seq.dim(0), c = seq.dim(2);
  auto rows = reshape(seq, {nb * h * w, c});
  auto grid = gather_rows(rows, batched(inverse(scan_order(h, w, d)), nb));
  return reshape(grid, {nb, h, w, c});
}

template <typename T>
Var<T> flatten_direction(const Var<T>& f, ScanDirection d) {
  if (f.shape().size() != 3) throw ShapeError("flatten_direction: expected (C, H, W), got " + shape_str(f.shape()));
  auto seq = grid_to_sequence(chw_to_grid(f), d);
  return reshape(seq, {seq.dim(1), seq.dim(2)});
}

template <typename T>
Var<T> unflatten_direction(const Var<T>& seq, ScanDirection d, std::size_t h, std::size_t w) {
  if (seq.shape().size() != 2) throw ShapeError("unflatten_direction: expected (L, C)");
  auto grid = sequence_to_grid(reshape(seq, {1, seq.dim(0), seq.dim(1)}), d, h, w);
  return grid_to_chw(grid);
}

template <typename T>
Ss2dParams<T> init_ss2d(std::size_t channels, std::size_t state, Rng& rng, bool skip) {
  Ss2dParams<T> p;
  for (int i = 0; i < 4; ++i) p.push_back(SelectiveParams<T>::init(channels, state, rng, skip));
  return p;
}

template <typename T>
Var<T> ss2d_grid(const Var<T>& grid, const Ss2dParams<T>& params) {
  if (params.size() != 4) {
    throw ConfigError("ss2d: expected 4 directional parameter sets, got " + std::to_string(params.size()));
  }
  if (grid.shape().size() != 4) throw ShapeError("ss2d: expected (B, H, W, C)");
  const std::size_t h = grid.dim(1), w = grid.dim(2);
  std::vector<Var<T>> parts;
  for (int i = 0; i < 4; ++i) {
    const ScanDirection d = kScanDirections[i];
    parts.push_back(sequence_to_grid(s6_forward(grid_to_sequence(grid, d), params[i]), d, h, w));
  }
  return add_n(parts);
}

template <typename T>
Var<T> ss2d(const Var<T>& f, const Ss2dParams<T>& params) {
  return grid_to_chw(ss2d_grid(chw_to_grid(f), params));
}

#define M3SR_INSTANTIATE_SCAN2D(T)                                                            \
  template Var<T> grid_to_sequence(const Var<T>&, ScanDirection);                             \
  template Var<T> sequence_to_grid(const Var<T>&, ScanDirection, std::size_t, std::size_t);   \
  template Var<T> flatten_direction(const Var<T>&, ScanDirection);                            \
  template Var<T> unflatten_direction(const Var<T>&, ScanDirection, std::size_t, std::size_t); \
  template Ss2dParams<T> init_ss2d(std::size_t, std::size_t, Rng&, bool);                      \
  template Var<T> ss2d_grid(const Var<T>&, const Ss2dParams<T>&);                             \
  template Var<T> ss2d(const Var<T>&, const Ss2dParams<T>&);

M3SR_INSTANTIATE_SCAN2D(float)
M3SR_INSTANTIATE_SCAN2D(double)

}  // namespace m3sr

#include "zigma/model/embeddings.hpp"

#include <cmath>
#include <vector>

#include "zigma/diffkit/ops.hpp"

namespace zigma::model {

using diffkit::Tensor;

namespace {

// Flat index map between an image and its patch tokens; entry i is the image
// offset of token element i.
std::vector<std::size_t> patch_map(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                                   std::size_t p) {
  const std::size_t gw = width / p, gh = height / p, feat = channels * p * p;
  std::vector<std::size_t> map(batch * gh * gw * feat);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t py = 0; py < p; ++py) {
            for (std::size_t px = 0; px < p; ++px) {
              map[i++] = ((b * channels + c) * height + gy * p + py) * width + gx * p + px;
            }
          }
        }
      }
    }
  }
  return map;
}

void check_divisible(std::size_t height, std::size_t width, std::size_t p) {
  if (p == 0 || height % p != 0 || width % p != 0) {
    throw diffkit::ShapeError("patch size " + std::to_string(p) + " does not divide image " + std::to_string(height) +
                              "x" + std::to_string(width));
  }
}

}  // namespace

Tensor patchify(const Tensor& img, std::size_t p) {
  if (img.rank() != 4) throw diffkit::ShapeError("patchify: expected [B,C,H,W], got " + diffkit::to_string(img.shape()));
  const std::size_t b = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  check_divisible(h, w, p);
  const auto map = patch_map(b, c, h, w, p);
  return diffkit::gather_flat(img, {b, (h / p) * (w / p), c * p * p}, map);
}

Tensor unpatchify(const Tensor& tokens, std::size_t p, std::size_t channels, std::size_t height, std::size_t width) {
  check_divisible(height, width, p);
  const std::size_t m = (height / p) * (width / p);
  if (tokens.rank() != 3 || tokens.dim(1) != m || tokens.dim(2) != channels * p * p) {
    throw diffkit::ShapeError("unpatchify: tokens " + diffkit::to_string(tokens.shape()) + " do not match a " +
                              std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width) +
                              " image with patch " + std::to_string(p));
  }
  const std::size_t b = tokens.dim(0);
  const auto forward = patch_map(b, channels, height, width, p);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return diffkit::gather_flat(tokens, {b, channels, height, width}, inverse);
}

Tensor timestep_features(std::span<const double> t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw diffkit::ShapeError("timestep_features: dim must be even and >= 2");
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = 1000.0 * t[b] * freq;
      out[b * dim + i] = std::cos(arg);
      out[b * dim + half + i] = std::sin(arg);
    }
  }
  return Tensor::from({t.size(), dim}, std::move(out));
}

Tensor sincos_pos_embed_2d(std::size_t grid_w, std::size_t grid_h, std::size_t dim) {
  if (dim % 4 != 0) throw diffkit::ShapeError("sincos_pos_embed_2d: dim must be a multiple of 4");
  const std::size_t quarter = dim / 4;
  std::vector<double> out(grid_w * grid_h * dim);
  for (std::size_t y = 0; y < grid_h; ++y) {
    for (std::size_t x = 0; x < grid_w; ++x) {
      double* row = out.data() + (y * grid_w + x) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = std::sin(static_cast<double>(x) * omega);
        row[quarter + i] = std::cos(static_cast<double>(x) * omega);
        row[2 * quarter + i] = std::sin(static_cast<double>(y) * omega);
        row[3 * quarter + i] = std::cos(static_cast<double>(y) * omega);
      }
    }
  }
  return Tensor::from({grid_w * grid_h, dim}, std::move(out));
}

}  // namespace zigma::model

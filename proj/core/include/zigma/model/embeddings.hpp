#pragma once

#include <cstddef>
#include <span>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::model {

// img [B, C, H, W] -> [B, (H/p)(W/p), C p p]. Token index gy * (W/p) + gx,
// features ordered (c, py, px).
diffkit::Tensor patchify(const diffkit::Tensor& img, std::size_t p);
diffkit::Tensor unpatchify(const diffkit::Tensor& tokens, std::size_t p, std::size_t channels, std::size_t height,
                           std::size_t width);

// Sinusoidal features of 1000 * t: dim/2 cosines followed by dim/2 sines,
// frequencies 10000^(-i / (dim/2)). Returns [t.size(), dim].
diffkit::Tensor timestep_features(std::span<const double> t, std::size_t dim);

// Fixed 2-D sin-cos table [grid_h * grid_w, dim]: first half encodes the
// column, second half the row. dim must be a multiple of 4.
diffkit::Tensor sincos_pos_embed_2d(std::size_t grid_w, std::size_t grid_h, std::size_t dim);

}  // namespace zigma::model

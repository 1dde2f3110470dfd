#pragma once

#include <filesystem>
#include <string>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::diffkit {

enum class Dtype { float32, float64 };

std::string dtype_name(Dtype dtype);
Dtype parse_dtype(const std::string& name);

// Writes `<base>.bin` (raw little-endian values) and `<base>.json`
// ({"dtype","shape","byte_order":"LE"}).
void save_tensor(const std::filesystem::path& base, const Tensor& tensor, Dtype dtype = Dtype::float32);
Tensor load_tensor(const std::filesystem::path& base);

}  // namespace zigma::diffkit

#include "zigma/diffkit/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace zigma::diffkit {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
  auto p = base;
  p += suffix;
  return p;
}

template <class UInt>
UInt to_le(UInt v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    UInt out = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) out |= ((v >> (8 * i)) & 0xFF) << (8 * (sizeof(UInt) - 1 - i));
    return out;
  }
}

}  // namespace

std::string dtype_name(Dtype dtype) { return dtype == Dtype::float32 ? "float32" : "float64"; }

Dtype parse_dtype(const std::string& name) {
  if (name == "float32") return Dtype::float32;
  if (name == "float64") return Dtype::float64;
  throw std::invalid_argument("unsupported tensor dtype: " + name);
}

void save_tensor(const std::filesystem::path& base, const Tensor& tensor, Dtype dtype) {
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  const auto values = tensor.data();
  std::ofstream bin(with_suffix(base, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + with_suffix(base, ".bin").string());
  if (dtype == Dtype::float32) {
    std::vector<std::uint32_t> raw(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) raw[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    bin.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  } else {
    std::vector<std::uint64_t> raw(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) raw[i] = to_le(std::bit_cast<std::uint64_t>(values[i]));
    bin.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
  }
  if (!bin) throw std::runtime_error("short write to " + with_suffix(base, ".bin").string());

  nlohmann::ordered_json meta;
  meta["dtype"] = dtype_name(dtype);
  meta["shape"] = tensor.shape();
  meta["byte_order"] = "LE";
  std::ofstream js(with_suffix(base, ".json"), std::ios::trunc);
  js << meta.dump() << '\n';
}

Tensor load_tensor(const std::filesystem::path& base) {
  std::ifstream js(with_suffix(base, ".json"));
  if (!js) throw std::runtime_error("missing tensor sidecar " + with_suffix(base, ".json").string());
  const auto meta = nlohmann::json::parse(js);
  if (meta.at("byte_order").get<std::string>() != "LE") throw std::runtime_error("only LE tensor dumps are supported");
  const Dtype dtype = parse_dtype(meta.at("dtype").get<std::string>());
  const Shape shape = meta.at("shape").get<Shape>();
  const std::size_t n = numel_of(shape);

  std::ifstream bin(with_suffix(base, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("missing tensor data " + with_suffix(base, ".bin").string());
  std::vector<double> values(n);
  if (dtype == Dtype::float32) {
    std::vector<std::uint32_t> raw(n);
    bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
    if (bin.gcount() != static_cast<std::streamsize>(n * 4)) throw std::runtime_error("truncated tensor data");
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(to_le(raw[i]));
  } else {
    std::vector<std::uint64_t> raw(n);
    bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
    if (bin.gcount() != static_cast<std::streamsize>(n * 8)) throw std::runtime_error("truncated tensor data");
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(to_le(raw[i]));
  }
  return Tensor::from(shape, std::move(values));
}

}  // namespace zigma::diffkit

#include "drivecap/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "drivecap/errors.hpp"

namespace drivecap {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_tensor_file(const std::string& path, const Shape& shape,
                       const std::vector<float>& values) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("write_tensor_file: payload size does not match " + shape_str(shape));
  std::string header;
  header.append(kMagic, 4);
  put_u32(header, kVersion);
  put_u32(header, static_cast<uint32_t>(shape.size()));
  for (size_t e : shape) put_u32(header, static_cast<uint32_t>(e));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (float v : values) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    std::string w;
    put_u32(w, bits);
    out.write(w.data(), 4);
  }
  if (!out) throw IoError("short write to " + path);
}

void write_tensor_file(const std::string& path, const Tensor& tensor) {
  std::vector<float> values(tensor.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(tensor.data()[i]);
  write_tensor_file(path, tensor.shape(), values);
}

StoredTensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw IoError(path + ": not an ADPT tensor file");
  if (get_u32(p + 4) != kVersion)
    throw IoError(path + ": unsupported version " + std::to_string(get_u32(p + 4)));
  const uint32_t rank = get_u32(p + 8);
  const size_t header = 12 + 4ull * rank;
  if (bytes.size() < header) throw IoError(path + ": truncated header");
  StoredTensor t;
  t.shape.resize(rank);
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    t.shape[i] = get_u32(p + 12 + 4ull * i);
    numel *= t.shape[i];
  }
  const size_t expected = header + 4ull * numel;
  if (bytes.size() != expected)
    throw IoError(path + ": expected " + std::to_string(expected) + " bytes, found " +
                  std::to_string(bytes.size()));
  t.values.resize(numel);
  for (size_t i = 0; i < numel; ++i) {
    const uint32_t bits = get_u32(p + header + 4 * i);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    t.values[i] = v;
  }
  return t;
}

Tensor read_tensor_as_f64(const std::string& path, bool requires_grad) {
  StoredTensor st = read_tensor_file(path);
  std::vector<double> values(st.values.begin(), st.values.end());
  return Tensor::leaf(std::move(st.shape), std::move(values), requires_grad);
}

void quantize_to_f32(Tensor& tensor) {
  for (double& v : tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace drivecap

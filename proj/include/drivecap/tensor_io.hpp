#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivecap/tensor.hpp"

namespace drivecap {

// Shared binary tensor container: magic "ADPT", u32 version=1, u32 rank,
// rank u32 extents, little-endian f32 payload. Storage is f32; compute is
// f64. Used for clips and checkpoint parameters; bit-exact by contract.

void write_tensor_file(const std::string& path, const Shape& shape,
                       const std::vector<float>& values);
void write_tensor_file(const std::string& path, const Tensor& tensor);

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

StoredTensor read_tensor_file(const std::string& path);
Tensor read_tensor_as_f64(const std::string& path, bool requires_grad = false);

// Round every value to the nearest f32. Applied to parameters when a
// checkpoint is written so that the in-memory model matches what a reload
// produces, bit for bit.
void quantize_to_f32(Tensor& tensor);

}  // namespace drivecap

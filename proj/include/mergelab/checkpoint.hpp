#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mergelab/dtype.hpp"

namespace mergelab {

// One named tensor: dtype, shape and the raw little-endian element buffer.
// The name lives as the key of Checkpoint::tensors.
struct TensorData {
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> data;

    // Product of dims; the empty product is 1, a zero dim gives 0.
    std::int64_t num_elements() const;
    std::size_t byte_size() const { return data.size(); }
};

// An ordered collection of named tensors plus string metadata. std::map
// keeps iteration lexicographic by name, which is the canonical order.
struct Checkpoint {
    std::map<std::string, TensorData> tensors;
    std::map<std::string, std::string> metadata;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    // Throws UnknownTensor.
    const TensorData& at(const std::string& name) const;

    // Recomputes metadata["arch_fingerprint"] from the current tensors.
    void refresh_fingerprint();
};

// Hash of the sorted (name, dtype, shape) list. Invariant under value
// changes, sensitive to any structural change.
std::string arch_fingerprint(const Checkpoint& cp);

// Element decode, widened to 64-bit. I64 values are cast to double here;
// use tensor_values_i64 for exact integer access.
std::vector<double> tensor_values(const Checkpoint& cp, const std::string& name);
std::vector<std::int64_t> tensor_values_i64(const Checkpoint& cp, const std::string& name);

// Typed constructors encoding values little-endian.
TensorData make_tensor_f32(std::vector<std::int64_t> shape, std::span<const float> values);
TensorData make_tensor_f64(std::vector<std::int64_t> shape, std::span<const double> values);
TensorData make_tensor_i64(std::vector<std::int64_t> shape, std::span<const std::int64_t> values);

// Single-element accessors on raw buffers (index in elements, not bytes).
float load_f32(const std::uint8_t* p);
double load_f64(const std::uint8_t* p);
std::int64_t load_i64(const std::uint8_t* p);
void store_f32(std::uint8_t* p, float v);
void store_f64(std::uint8_t* p, double v);
void store_i64(std::uint8_t* p, std::int64_t v);

}  // namespace mergelab

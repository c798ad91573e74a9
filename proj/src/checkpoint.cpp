#include "mergelab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "mergelab/errors.hpp"

namespace mergelab {

std::int64_t TensorData::num_elements() const {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

const TensorData& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw UnknownTensor("unknown tensor \"" + name + "\"");
    return it->second;
}

void Checkpoint::refresh_fingerprint() {
    metadata["arch_fingerprint"] = arch_fingerprint(*this);
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

void fnv_feed(std::uint64_t& h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
}

}  // namespace

std::string arch_fingerprint(const Checkpoint& cp) {
    std::uint64_t h = kFnvOffset;
    char buf[32];
    for (const auto& [name, t] : cp.tensors) {
        fnv_feed(h, name);
        fnv_feed(h, "\x1f");
        fnv_feed(h, dtype_name(t.dtype));
        fnv_feed(h, "\x1f");
        for (std::int64_t d : t.shape) {
            std::snprintf(buf, sizeof buf, "%lld,", static_cast<long long>(d));
            fnv_feed(h, buf);
        }
        fnv_feed(h, "\x1e");
    }
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

float load_f32(const std::uint8_t* p) {
    std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                      std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    return std::bit_cast<float>(u);
}

double load_f64(const std::uint8_t* p) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = u << 8 | p[i];
    return std::bit_cast<double>(u);
}

std::int64_t load_i64(const std::uint8_t* p) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = u << 8 | p[i];
    return std::bit_cast<std::int64_t>(u);
}

void store_f32(std::uint8_t* p, float v) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) p[i] = std::uint8_t(u >> 8 * i);
}

void store_f64(std::uint8_t* p, double v) {
    auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) p[i] = std::uint8_t(u >> 8 * i);
}

void store_i64(std::uint8_t* p, std::int64_t v) {
    auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) p[i] = std::uint8_t(u >> 8 * i);
}

std::vector<double> tensor_values(const Checkpoint& cp, const std::string& name) {
    const TensorData& t = cp.at(name);
    const std::size_t n = static_cast<std::size_t>(t.num_elements());
    std::vector<double> out(n);
    const std::uint8_t* p = t.data.data();
    switch (t.dtype) {
        case DType::F32:
            for (std::size_t i = 0; i < n; ++i) out[i] = load_f32(p + 4 * i);
            break;
        case DType::F64:
            for (std::size_t i = 0; i < n; ++i) out[i] = load_f64(p + 8 * i);
            break;
        case DType::I64:
            for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(load_i64(p + 8 * i));
            break;
    }
    return out;
}

std::vector<std::int64_t> tensor_values_i64(const Checkpoint& cp, const std::string& name) {
    const TensorData& t = cp.at(name);
    if (t.dtype != DType::I64)
        throw UnknownTensor("tensor \"" + name + "\" is not I64");
    const std::size_t n = static_cast<std::size_t>(t.num_elements());
    std::vector<std::int64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = load_i64(t.data.data() + 8 * i);
    return out;
}

TensorData make_tensor_f32(std::vector<std::int64_t> shape, std::span<const float> values) {
    TensorData t;
    t.dtype = DType::F32;
    t.shape = std::move(shape);
    t.data.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) store_f32(t.data.data() + 4 * i, values[i]);
    return t;
}

TensorData make_tensor_f64(std::vector<std::int64_t> shape, std::span<const double> values) {
    TensorData t;
    t.dtype = DType::F64;
    t.shape = std::move(shape);
    t.data.resize(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) store_f64(t.data.data() + 8 * i, values[i]);
    return t;
}

TensorData make_tensor_i64(std::vector<std::int64_t> shape, std::span<const std::int64_t> values) {
    TensorData t;
    t.dtype = DType::I64;
    t.shape = std::move(shape);
    t.data.resize(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) store_i64(t.data.data() + 8 * i, values[i]);
    return t;
}

}  // namespace mergelab

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace mergelab {

enum class DType { F32, F64, I64 };

constexpr std::size_t element_size(DType dt) {
    switch (dt) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::I64: return 8;
    }
    return 0;  // unreachable
}

constexpr bool is_float_dtype(DType dt) {
    return dt == DType::F32 || dt == DType::F64;
}

constexpr std::string_view dtype_name(DType dt) {
    switch (dt) {
        case DType::F32: return "F32";
        case DType::F64: return "F64";
        case DType::I64: return "I64";
    }
    return "";  // unreachable
}

inline std::optional<DType> dtype_from_name(std::string_view s) {
    if (s == "F32") return DType::F32;
    if (s == "F64") return DType::F64;
    if (s == "I64") return DType::I64;
    return std::nullopt;
}

}  // namespace mergelab

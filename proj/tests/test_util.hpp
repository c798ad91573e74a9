#pragma once

#include <unistd.h>

#include <atomic>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mergelab/checkpoint.hpp"

namespace testutil {

// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("mergelab_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// Distance in units of representable values; 0 means bit-identical up to
// the sign of zero.
inline std::uint64_t ulp_diff(double a, double b) {
    auto key = [](double x) {
        const auto u = std::bit_cast<std::uint64_t>(x);
        return (u & 0x8000000000000000ull) ? ~u : (u | 0x8000000000000000ull);
    };
    const std::uint64_t ka = key(a), kb = key(b);
    return ka > kb ? ka - kb : kb - ka;
}

inline std::uint32_t ulp_diff(float a, float b) {
    auto key = [](float x) {
        const auto u = std::bit_cast<std::uint32_t>(x);
        return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
    };
    const std::uint32_t ka = key(a), kb = key(b);
    return ka > kb ? ka - kb : kb - ka;
}

// Reference interpolation evaluated in quad precision, an independent
// route from the library's compensated double arithmetic.
inline double lerp_oracle(double a, double b, double alpha) {
    const __float128 v = (__float128(1.0) - __float128(alpha)) * __float128(a) +
                         __float128(alpha) * __float128(b);
    return double(v);
}

inline float lerp_oracle(float a, float b, double alpha) {
    const __float128 v = (__float128(1.0) - __float128(alpha)) * __float128(a) +
                         __float128(alpha) * __float128(b);
    return float(v);
}

// Random well-formed checkpoints for round-trip and merge property tests.
class CheckpointGen {
  public:
    explicit CheckpointGen(std::uint64_t seed) : rng_(seed) {}

    mergelab::Checkpoint random_checkpoint(int max_tensors, bool allow_int = true,
                                           bool allow_zero_dim = true) {
        mergelab::Checkpoint cp;
        const int n = 1 + int(rng_() % std::uint64_t(max_tensors));
        while (int(cp.tensors.size()) < n) {
            const std::string name = random_name();
            if (cp.tensors.count(name)) continue;
            cp.tensors.emplace(name, random_tensor(allow_int, allow_zero_dim));
        }
        if (rng_() % 2) cp.metadata["note"] = random_name();
        cp.refresh_fingerprint();
        return cp;
    }

    // Same structure as the given checkpoint, fresh values.
    mergelab::Checkpoint like(const mergelab::Checkpoint& other) {
        mergelab::Checkpoint cp;
        for (const auto& [name, t] : other.tensors) {
            mergelab::TensorData fresh;
            fresh.dtype = t.dtype;
            fresh.shape = t.shape;
            fresh.data.resize(t.data.size());
            fill_values(fresh);
            cp.tensors.emplace(name, std::move(fresh));
        }
        cp.refresh_fingerprint();
        return cp;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * (double(rng_() >> 11) * 0x1.0p-53);
    }
    std::uint64_t below(std::uint64_t n) { return rng_() % n; }

  private:
    std::string random_name() {
        static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789_.";
        const int len = 1 + int(rng_() % 12);
        std::string s;
        for (int i = 0; i < len; ++i) s += alphabet[rng_() % (sizeof alphabet - 1)];
        return s;
    }

    std::vector<std::int64_t> random_shape(bool allow_zero_dim) {
        const int rank = int(rng_() % 3);  // 0..2
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = 1 + std::int64_t(rng_() % 6);
        if (allow_zero_dim && rank > 0 && rng_() % 8 == 0) shape[rng_() % rank] = 0;
        return shape;
    }

    void fill_values(mergelab::TensorData& t) {
        const auto n = std::size_t(t.num_elements());
        switch (t.dtype) {
            case mergelab::DType::F32:
                for (std::size_t i = 0; i < n; ++i)
                    mergelab::store_f32(t.data.data() + 4 * i, float(uniform(-2.0, 2.0)));
                break;
            case mergelab::DType::F64:
                for (std::size_t i = 0; i < n; ++i)
                    mergelab::store_f64(t.data.data() + 8 * i, uniform(-2.0, 2.0));
                break;
            case mergelab::DType::I64:
                for (std::size_t i = 0; i < n; ++i)
                    mergelab::store_i64(t.data.data() + 8 * i, std::int64_t(rng_() % 1000));
                break;
        }
    }

    mergelab::TensorData random_tensor(bool allow_int, bool allow_zero_dim) {
        mergelab::TensorData t;
        const int pick = int(rng_() % (allow_int ? 3 : 2));
        t.dtype = pick == 0   ? mergelab::DType::F32
                  : pick == 1 ? mergelab::DType::F64
                              : mergelab::DType::I64;
        t.shape = random_shape(allow_zero_dim);
        t.data.resize(std::size_t(t.num_elements()) * element_size(t.dtype));
        fill_values(t);
        return t;
    }

    std::mt19937_64 rng_;
};

}  // namespace testutil

#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mergelab/checkpoint.hpp"

namespace mergelab {

enum class KeyMismatch { Strict, Intersect };
enum class IntTensorPolicy { RequireEqual, TakeFirst };

struct MergePolicy {
    double alpha = 0.5;
    bool extrapolate = false;
    KeyMismatch key_mismatch = KeyMismatch::Strict;
    IntTensorPolicy int_tensor = IntTensorPolicy::RequireEqual;
};

struct ShapeConflict {
    std::string name;
    std::vector<std::int64_t> shape_a, shape_b;
};

struct DTypeConflict {
    std::string name;
    DType dtype_a, dtype_b;
};

struct CompatReport {
    std::vector<std::string> missing_in_a, missing_in_b;
    std::vector<ShapeConflict> shape_conflicts;
    std::vector<DTypeConflict> dtype_conflicts;

    bool compatible() const {
        return missing_in_a.empty() && missing_in_b.empty() && shape_conflicts.empty() &&
               dtype_conflicts.empty();
    }
    // One-line diff summary for error messages and the CLI.
    std::string describe() const;
};

// Exhaustive diff of key sets, shapes and dtypes. Incompatibility is data,
// not an error.
CompatReport check_compatibility(const Checkpoint& a, const Checkpoint& b);

// Element-wise a + alpha * (b - a), accumulated in 64-bit and rounded once
// to the common input dtype. alpha in {0, 1} copies the corresponding
// payload bitwise, as do element positions where both inputs carry the
// same bits; this keeps endpoint and idempotence identities exact even for
// NaN payloads and signed zeros. Integer tensors follow policy.int_tensor.
Checkpoint merge_pair(const Checkpoint& a, const Checkpoint& b, const MergePolicy& policy);

// Uniform soup: element-wise arithmetic mean of k models, 64-bit
// accumulation in list order, single rounding. Strict compatibility only.
Checkpoint merge_soup(std::span<const Checkpoint> models, IntTensorPolicy int_tensor);

// Strictly increasing merging coefficients covering [0, 1] endpoint to
// endpoint.
class SweepSpec {
  public:
    // Evenly stepped grid; the step must divide 1 exactly (within 1e-9).
    static SweepSpec by_step(double step);
    static SweepSpec from_list(std::vector<double> alphas);

    const std::vector<double>& alphas() const { return alphas_; }

  private:
    std::vector<double> alphas_;
};

// One merged checkpoint per alpha, delivered through the sink in spec
// order so the full family need not be resident at once.
void sweep(const Checkpoint& a, const Checkpoint& b, const SweepSpec& spec,
           const MergePolicy& policy,
           const std::function<void(double, Checkpoint)>& sink);

std::vector<std::pair<double, Checkpoint>> sweep_all(const Checkpoint& a, const Checkpoint& b,
                                                     const SweepSpec& spec,
                                                     const MergePolicy& policy);

}  // namespace mergelab

#include <cmath>
#include <limits>

#include "doctest.h"
#include "mergelab/errors.hpp"
#include "mergelab/merge.hpp"
#include "mergelab/tensor_store.hpp"
#include "test_util.hpp"

using namespace mergelab;

namespace {

Checkpoint scalar_ckpt(std::initializer_list<double> values, DType dtype = DType::F64) {
    Checkpoint cp;
    if (dtype == DType::F64) {
        cp.tensors.emplace("w", make_tensor_f64({std::int64_t(values.size())},
                                                std::vector<double>(values)));
    } else {
        std::vector<float> fv;
        for (double v : values) fv.push_back(float(v));
        cp.tensors.emplace("w", make_tensor_f32({std::int64_t(values.size())}, fv));
    }
    cp.refresh_fingerprint();
    return cp;
}

bool float_payloads_equal(const Checkpoint& x, const Checkpoint& y) {
    for (const auto& [name, t] : x.tensors) {
        if (!is_float_dtype(t.dtype)) continue;
        if (!y.has(name) || y.at(name).data != t.data) return false;
    }
    return true;
}

// Independent scalar-loop oracle: (1 - alpha) * a + alpha * b, rounded
// once to the output dtype.
void check_against_oracle(const Checkpoint& a, const Checkpoint& b, const Checkpoint& merged,
                          double alpha) {
    for (const auto& [name, ta] : a.tensors) {
        if (!is_float_dtype(ta.dtype)) continue;
        const TensorData& tb = b.at(name);
        const TensorData& tm = merged.at(name);
        const auto n = std::size_t(ta.num_elements());
        for (std::size_t i = 0; i < n; ++i) {
            if (ta.dtype == DType::F32) {
                const float expect = testutil::lerp_oracle(load_f32(ta.data.data() + 4 * i),
                                                           load_f32(tb.data.data() + 4 * i), alpha);
                REQUIRE(testutil::ulp_diff(load_f32(tm.data.data() + 4 * i), expect) <= 1);
            } else {
                const double expect = testutil::lerp_oracle(load_f64(ta.data.data() + 8 * i),
                                                            load_f64(tb.data.data() + 8 * i), alpha);
                REQUIRE(testutil::ulp_diff(load_f64(tm.data.data() + 8 * i), expect) <= 1);
            }
        }
    }
}

}  // namespace

TEST_CASE("compatibility: identical structure") {
    testutil::CheckpointGen gen(0xc0);
    const Checkpoint a = gen.random_checkpoint(6);
    const Checkpoint b = gen.like(a);
    const CompatReport r = check_compatibility(a, b);
    CHECK(r.compatible());
    CHECK(r.missing_in_a.empty());
    CHECK(r.missing_in_b.empty());
    CHECK(r.shape_conflicts.empty());
    CHECK(r.dtype_conflicts.empty());
}

TEST_CASE("compatibility: missing tensor, shape and dtype conflicts") {
    testutil::CheckpointGen gen(0xc1);
    Checkpoint a = gen.random_checkpoint(4, /*allow_int=*/false, /*allow_zero_dim=*/false);
    Checkpoint b = gen.like(a);
    const double w2[1] = {0.5};

    SUBCASE("missing in b") {
        a.tensors.emplace("w2", make_tensor_f64({1}, w2));
        const CompatReport r = check_compatibility(a, b);
        CHECK_FALSE(r.compatible());
        CHECK(r.missing_in_b == std::vector<std::string>{"w2"});
        CHECK(check_compatibility(b, a).missing_in_a == std::vector<std::string>{"w2"});
    }
    SUBCASE("shape conflict 3x4 vs 4x3") {
        std::vector<double> v(12, 1.0);
        a.tensors.emplace("m", make_tensor_f64({3, 4}, v));
        b.tensors.emplace("m", make_tensor_f64({4, 3}, v));
        const CompatReport r = check_compatibility(a, b);
        CHECK_FALSE(r.compatible());
        REQUIRE(r.shape_conflicts.size() == 1);
        CHECK(r.shape_conflicts[0].name == "m");
        CHECK(r.shape_conflicts[0].shape_a == std::vector<std::int64_t>{3, 4});
        CHECK(r.shape_conflicts[0].shape_b == std::vector<std::int64_t>{4, 3});
    }
    SUBCASE("dtype conflict") {
        const float f1[1] = {1.0f};
        a.tensors.emplace("d", make_tensor_f32({1}, f1));
        b.tensors.emplace("d", make_tensor_f64({1}, w2));
        const CompatReport r = check_compatibility(a, b);
        CHECK_FALSE(r.compatible());
        REQUIRE(r.dtype_conflicts.size() == 1);
        CHECK(r.dtype_conflicts[0].name == "d");
        CHECK(r.dtype_conflicts[0].dtype_a == DType::F32);
        CHECK(r.dtype_conflicts[0].dtype_b == DType::F64);
    }
}

TEST_CASE("merge_pair: midpoint of the linear formula") {
    const Checkpoint a = scalar_ckpt({1.0, 2.0});
    const Checkpoint b = scalar_ckpt({3.0, 6.0});
    MergePolicy p;
    p.alpha = 0.5;
    const Checkpoint m = merge_pair(a, b, p);
    CHECK(tensor_values(m, "w") == std::vector<double>{2.0, 4.0});
    CHECK(m.metadata.at("merge.alpha") == "0.5");
    CHECK(m.metadata.at("merge.base_a") == arch_fingerprint(a));
    CHECK(m.metadata.at("merge.base_b") == arch_fingerprint(b));
    CHECK(m.metadata.at("merge.nonfinite_warnings") == "0");
}

TEST_CASE("merge_pair: endpoints are byte-identical, including odd values") {
    const Checkpoint a =
        scalar_ckpt({-0.0, std::numeric_limits<double>::quiet_NaN(), 1e300, -3.5});
    const Checkpoint b = scalar_ckpt({7.0, 2.0, 1.0, std::numeric_limits<double>::infinity()});
    MergePolicy p;
    p.alpha = 0.0;
    CHECK(float_payloads_equal(merge_pair(a, b, p), a));
    p.alpha = 1.0;
    CHECK(float_payloads_equal(merge_pair(a, b, p), b));
}

TEST_CASE("merge_pair: idempotence for random checkpoints and alphas") {
    testutil::CheckpointGen gen(0x1de);
    for (int i = 0; i < 25; ++i) {
        const Checkpoint a = gen.random_checkpoint(4);
        MergePolicy p;
        p.alpha = gen.uniform(0.0, 1.0);
        const Checkpoint m = merge_pair(a, a, p);
        CHECK(float_payloads_equal(m, a));
        for (const auto& [name, t] : a.tensors)
            if (t.dtype == DType::I64) CHECK(m.at(name).data == t.data);
    }
}

TEST_CASE("merge_pair: matches the scalar oracle within 1 ulp") {
    testutil::CheckpointGen gen(0x0c1e);
    for (int i = 0; i < 50; ++i) {
        const Checkpoint a = gen.random_checkpoint(10, /*allow_int=*/false);
        const Checkpoint b = gen.like(a);
        MergePolicy p;
        p.alpha = 0.3;
        check_against_oracle(a, b, merge_pair(a, b, p), 0.3);
        p.alpha = gen.uniform(0.0, 1.0);
        check_against_oracle(a, b, merge_pair(a, b, p), p.alpha);
    }
}

TEST_CASE("merge_pair: symmetry within 1 ulp") {
    testutil::CheckpointGen gen(0x55);
    for (int i = 0; i < 30; ++i) {
        const Checkpoint a = gen.random_checkpoint(5, /*allow_int=*/false);
        const Checkpoint b = gen.like(a);
        // dyadic grid keeps 1 - alpha exact, so both orders interpolate at
        // the same point
        const double alpha = double(gen.below(4097)) / 4096.0;
        MergePolicy p;
        p.alpha = alpha;
        const Checkpoint m1 = merge_pair(a, b, p);
        p.alpha = 1.0 - alpha;
        const Checkpoint m2 = merge_pair(b, a, p);
        for (const auto& [name, t1] : m1.tensors) {
            const TensorData& t2 = m2.at(name);
            const auto n = std::size_t(t1.num_elements());
            for (std::size_t j = 0; j < n; ++j) {
                if (t1.dtype == DType::F32)
                    CHECK(testutil::ulp_diff(load_f32(t1.data.data() + 4 * j),
                                             load_f32(t2.data.data() + 4 * j)) <= 1);
                else
                    CHECK(testutil::ulp_diff(load_f64(t1.data.data() + 8 * j),
                                             load_f64(t2.data.data() + 8 * j)) <= 1);
            }
        }
    }
}

TEST_CASE("merge_pair: result is affine in alpha") {
    const Checkpoint a = scalar_ckpt({0.7305});
    const Checkpoint b = scalar_ckpt({-1.1875});
    auto value_at = [&](double alpha) {
        MergePolicy p;
        p.alpha = alpha;
        return tensor_values(merge_pair(a, b, p), "w")[0];
    };
    const double v1 = value_at(0.2), v2 = value_at(0.5), v3 = value_at(0.8);
    const double slope = (v3 - v1) / 0.6;
    CHECK(std::abs(v2 - (v1 + slope * 0.3)) < 1e-12);
    CHECK(std::abs(value_at(0.35) - (v1 + slope * 0.15)) < 1e-12);
}

TEST_CASE("merge_pair: alpha validation and extrapolation") {
    const Checkpoint a = scalar_ckpt({1.0});
    const Checkpoint b = scalar_ckpt({2.0});
    MergePolicy p;
    p.alpha = 1.5;
    CHECK_THROWS_AS(merge_pair(a, b, p), AlphaOutOfRange);
    p.alpha = -0.1;
    CHECK_THROWS_AS(merge_pair(a, b, p), AlphaOutOfRange);
    p.alpha = std::numeric_limits<double>::quiet_NaN();
    p.extrapolate = true;
    CHECK_THROWS_AS(merge_pair(a, b, p), AlphaOutOfRange);
    p.alpha = 1.5;
    CHECK(tensor_values(merge_pair(a, b, p), "w")[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("merge_pair: strict mode rejects any diff and names the tensor") {
    testutil::CheckpointGen gen(0x5c);
    Checkpoint a = gen.random_checkpoint(3, false, false);
    Checkpoint b = gen.like(a);
    const double extra[1] = {1.0};
    a.tensors.emplace("only_in_a", make_tensor_f64({1}, extra));
    CHECK_THROWS_WITH_AS(merge_pair(a, b, MergePolicy{}), doctest::Contains("only_in_a"),
                         IncompatibleCheckpoints);
}

TEST_CASE("merge_pair: intersect mode merges the common subset") {
    Checkpoint a = scalar_ckpt({1.0, 3.0});
    Checkpoint b = scalar_ckpt({3.0, 5.0});
    const double xa[1] = {9.0};
    a.tensors.emplace("only_a", make_tensor_f64({1}, xa));
    b.tensors.emplace("only_b", make_tensor_f64({1}, xa));
    // shared but shape-conflicting tensors are dropped as well
    const double c2[2] = {1.0, 2.0};
    a.tensors.emplace("clash", make_tensor_f64({2}, c2));
    b.tensors.emplace("clash", make_tensor_f64({2, 1}, c2));

    MergePolicy p;
    p.alpha = 0.5;
    p.key_mismatch = KeyMismatch::Intersect;
    const Checkpoint m = merge_pair(a, b, p);
    CHECK(m.tensors.size() == 1);
    CHECK(tensor_values(m, "w") == std::vector<double>{2.0, 4.0});
    CHECK(m.metadata.at("merge.dropped_keys") == "3");
}

TEST_CASE("merge_pair: non-finite inputs propagate and are counted") {
    const double inf = std::numeric_limits<double>::infinity();
    const Checkpoint a = scalar_ckpt({1.0, std::numeric_limits<double>::quiet_NaN(), inf, 2.0});
    const Checkpoint b = scalar_ckpt({2.0, 1.0, 5.0, -inf});
    MergePolicy p;
    p.alpha = 0.25;
    const Checkpoint m = merge_pair(a, b, p);
    const auto v = tensor_values(m, "w");
    CHECK(v[0] == doctest::Approx(1.25));
    CHECK(std::isnan(v[1]));
    CHECK(std::isnan(v[2]));  // inf + alpha * (finite - inf)
    CHECK(v[3] == -std::numeric_limits<double>::infinity());
    CHECK(m.metadata.at("merge.nonfinite_warnings") == "3");
}

TEST_CASE("integer tensor policies in merge_pair and merge_soup") {
    Checkpoint a = scalar_ckpt({1.0});
    Checkpoint b = scalar_ckpt({2.0});
    const std::int64_t sa[1] = {100}, sb[1] = {200};
    a.tensors.emplace("step_count", make_tensor_i64({1}, sa));
    b.tensors.emplace("step_count", make_tensor_i64({1}, sb));

    MergePolicy p;
    p.alpha = 0.5;
    CHECK_THROWS_WITH_AS(merge_pair(a, b, p), doctest::Contains("step_count"), IntTensorMismatch);

    p.int_tensor = IntTensorPolicy::TakeFirst;
    const Checkpoint m = merge_pair(a, b, p);
    CHECK(tensor_values_i64(m, "step_count") == std::vector<std::int64_t>{100});

    std::vector<Checkpoint> models{a, b};
    CHECK_THROWS_AS(merge_soup(models, IntTensorPolicy::RequireEqual), IntTensorMismatch);
    const Checkpoint s = merge_soup(models, IntTensorPolicy::TakeFirst);
    CHECK(tensor_values_i64(s, "step_count") == std::vector<std::int64_t>{100});

    // equal integer buffers pass require-equal
    Checkpoint b2 = b;
    b2.tensors.at("step_count") = a.tensors.at("step_count");
    p.int_tensor = IntTensorPolicy::RequireEqual;
    CHECK_NOTHROW(merge_pair(a, b2, p));
}

TEST_CASE("merge_soup: empty list, k=1, k=2 and exact k=3 mean") {
    CHECK_THROWS_AS(merge_soup({}, IntTensorPolicy::RequireEqual), EmptyModelList);

    testutil::CheckpointGen gen(0x50f);
    const Checkpoint a = gen.random_checkpoint(5);
    std::vector<Checkpoint> one{a};
    CHECK(float_payloads_equal(merge_soup(one, IntTensorPolicy::RequireEqual), a));

    const Checkpoint b = gen.like(a);
    std::vector<Checkpoint> two{a, b};
    MergePolicy p;
    p.alpha = 0.5;
    p.int_tensor = IntTensorPolicy::TakeFirst;
    const Checkpoint pair = merge_pair(a, b, p);
    const Checkpoint soup2 = merge_soup(two, IntTensorPolicy::TakeFirst);
    for (const auto& [name, ts] : soup2.tensors) {
        if (!is_float_dtype(ts.dtype)) continue;
        const TensorData& tp = pair.at(name);
        const auto n = std::size_t(ts.num_elements());
        for (std::size_t i = 0; i < n; ++i) {
            if (ts.dtype == DType::F32)
                CHECK(testutil::ulp_diff(load_f32(ts.data.data() + 4 * i),
                                         load_f32(tp.data.data() + 4 * i)) <= 1);
            else
                CHECK(testutil::ulp_diff(load_f64(ts.data.data() + 8 * i),
                                         load_f64(tp.data.data() + 8 * i)) <= 1);
        }
    }

    std::vector<Checkpoint> three{scalar_ckpt({0.0}), scalar_ckpt({3.0}), scalar_ckpt({6.0})};
    CHECK(tensor_values(merge_soup(three, IntTensorPolicy::RequireEqual), "w") ==
          std::vector<double>{3.0});
    CHECK(merge_soup(three, IntTensorPolicy::RequireEqual).metadata.at("merge.soup_k") == "3");

    std::vector<Checkpoint> mixed{a, scalar_ckpt({1.0})};
    CHECK_THROWS_AS(merge_soup(mixed, IntTensorPolicy::RequireEqual), IncompatibleCheckpoints);
}

TEST_CASE("sweep spec: cardinality and validation") {
    CHECK(SweepSpec::by_step(0.1).alphas().size() == 11);
    CHECK(SweepSpec::by_step(0.25).alphas().size() == 5);
    CHECK(SweepSpec::by_step(1.0).alphas() == std::vector<double>{0.0, 1.0});

    const auto alphas = SweepSpec::by_step(0.1).alphas();
    CHECK(alphas.front() == 0.0);
    CHECK(alphas.back() == 1.0);
    for (std::size_t i = 0; i < alphas.size(); ++i)
        CHECK(std::abs(alphas[i] - double(i) / 10.0) <= 1e-12);

    CHECK_THROWS_AS(SweepSpec::by_step(0.3), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::by_step(0.0), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::by_step(-0.1), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::by_step(1.5), InvalidSweepSpec);

    CHECK(SweepSpec::from_list({0.0, 0.5, 1.0}).alphas().size() == 3);
    CHECK_THROWS_AS(SweepSpec::from_list({0.0}), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::from_list({0.1, 1.0}), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::from_list({0.0, 0.9}), InvalidSweepSpec);
    CHECK_THROWS_AS(SweepSpec::from_list({0.0, 0.5, 0.5, 1.0}), InvalidSweepSpec);
}

TEST_CASE("sweep: endpoint checkpoints are payload-identical to the bases") {
    testutil::CheckpointGen gen(0x5eef);
    const Checkpoint a = gen.random_checkpoint(4, /*allow_int=*/false);
    const Checkpoint b = gen.like(a);
    const auto family = sweep_all(a, b, SweepSpec::from_list({0.0, 1.0}), MergePolicy{});
    REQUIRE(family.size() == 2);
    CHECK(family[0].first == 0.0);
    CHECK(float_payloads_equal(family[0].second, a));
    CHECK(float_payloads_equal(family[1].second, b));

    // lazily producible: the sink sees points in spec order
    std::vector<double> seen;
    sweep(a, b, SweepSpec::by_step(0.25), MergePolicy{},
          [&](double alpha, Checkpoint) { seen.push_back(alpha); });
    CHECK(seen == SweepSpec::by_step(0.25).alphas());
}

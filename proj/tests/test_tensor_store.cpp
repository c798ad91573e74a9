#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "mergelab/errors.hpp"
#include "mergelab/tensor_store.hpp"
#include "test_util.hpp"

using namespace mergelab;

namespace {

// Hand-assembled file: 8-byte length + header text + data bytes.
std::vector<std::uint8_t> raw_file(const std::string& header,
                                   const std::vector<std::uint8_t>& data = {}) {
    std::vector<std::uint8_t> out;
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(n >> 8 * i));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

std::vector<std::uint8_t> f32_bytes(std::initializer_list<float> values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    std::size_t i = 0;
    for (float v : values) store_f32(out.data() + 4 * i++, v);
    return out;
}

}  // namespace

TEST_CASE("parse: minimal single-tensor file") {
    const auto bytes = raw_file(
        R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", f32_bytes({1.0f, 2.0f}));
    const Checkpoint cp = parse_checkpoint(bytes);
    REQUIRE(cp.tensors.size() == 1);
    const auto vals = tensor_values(cp, "w");
    CHECK(vals == std::vector<double>{1.0, 2.0});
    CHECK(cp.at("w").data.size() == 8);
    CHECK(cp.metadata.at("arch_fingerprint") == arch_fingerprint(cp));
}

TEST_CASE("parse: overlapping ranges are an OffsetError") {
    const auto bytes = raw_file(
        R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
        R"("b":{"dtype":"F64","shape":[1],"data_offsets":[4,12]}})",
        std::vector<std::uint8_t>(12, 0));
    CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
}

TEST_CASE("parse: malformed header corpus") {
    SUBCASE("file shorter than the length field") {
        std::vector<std::uint8_t> bytes{1, 2, 3};
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("declared length beyond end of file") {
        auto bytes = raw_file("{}");
        bytes[0] = 200;
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("header is not JSON") {
        CHECK_THROWS_AS(parse_checkpoint(raw_file("not json at all")), MalformedHeader);
    }
    SUBCASE("header root is not an object") {
        CHECK_THROWS_AS(parse_checkpoint(raw_file("[1,2]")), MalformedHeader);
    }
    SUBCASE("unknown dtype") {
        const auto bytes = raw_file(
            R"({"w":{"dtype":"BF16","shape":[2],"data_offsets":[0,4]}})",
            std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("missing field") {
        const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[1]}})",
                                    std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("unknown field") {
        const auto bytes = raw_file(
            R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4],"extra":1}})",
            std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("negative shape entry") {
        const auto bytes = raw_file(
            R"({"w":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})",
            std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("fractional shape entry") {
        const auto bytes = raw_file(
            R"({"w":{"dtype":"F32","shape":[1.5],"data_offsets":[0,4]}})",
            std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("empty tensor name") {
        const auto bytes = raw_file(R"({"":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                                    std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
    SUBCASE("metadata value is not a string") {
        const auto bytes = raw_file(R"({"__metadata__":{"k":1}})");
        CHECK_THROWS_AS(parse_checkpoint(bytes), MalformedHeader);
    }
}

TEST_CASE("parse: offset errors") {
    SUBCASE("range length does not match shape") {
        const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})",
                                    std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
    }
    SUBCASE("range out of bounds") {
        const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})",
                                    std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
    }
    SUBCASE("gap between ranges") {
        const auto bytes = raw_file(
            R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
            R"("b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})",
            std::vector<std::uint8_t>(12, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
    }
    SUBCASE("trailing bytes after the last range") {
        const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                                    std::vector<std::uint8_t>(8, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
    }
    SUBCASE("end before begin") {
        const auto bytes = raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[4,0]}})",
                                    std::vector<std::uint8_t>(4, 0));
        CHECK_THROWS_AS(parse_checkpoint(bytes), OffsetError);
    }
}

TEST_CASE("parse: duplicate tensor name") {
    const auto bytes = raw_file(
        R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
        R"("w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
        std::vector<std::uint8_t>(8, 0));
    CHECK_THROWS_AS(parse_checkpoint(bytes), DuplicateName);
}

TEST_CASE("write: empty checkpoint is a valid metadata-only file") {
    Checkpoint cp;
    cp.metadata["source"] = "unit-test";
    const auto bytes = write_checkpoint(cp);
    const Checkpoint back = parse_checkpoint(bytes);
    CHECK(back.tensors.empty());
    CHECK(back.metadata.at("source") == "unit-test");
    // data region is empty
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = n << 8 | bytes[i];
    CHECK(bytes.size() == 8 + n);
}

TEST_CASE("write: canonical bytes are independent of insertion order") {
    const float va[2] = {1.5f, -2.0f};
    const double vb[1] = {3.25};
    Checkpoint first;
    first.tensors.emplace("alpha", make_tensor_f32({2}, va));
    first.tensors.emplace("beta", make_tensor_f64({1}, vb));
    Checkpoint second;
    second.tensors.emplace("beta", make_tensor_f64({1}, vb));
    second.tensors.emplace("alpha", make_tensor_f32({2}, va));
    CHECK(write_checkpoint(first) == write_checkpoint(second));
}

TEST_CASE("round-trip: write(parse(b)) == b over random canonical files") {
    testutil::CheckpointGen gen(0xad5eed01);
    for (int i = 0; i < 220; ++i) {
        const Checkpoint cp = gen.random_checkpoint(i % 40 == 0 ? 50 : 8);
        const auto bytes = write_checkpoint(cp);
        const Checkpoint parsed = parse_checkpoint(bytes);
        REQUIRE(write_checkpoint(parsed) == bytes);
    }
}

TEST_CASE("canonicalization: valid but non-canonical input becomes canonical") {
    // Header lists names out of order and packs data in reverse name order.
    const auto data_b = f32_bytes({7.0f});
    const auto data_a = f32_bytes({1.0f, 2.0f});
    std::vector<std::uint8_t> data = data_b;
    data.insert(data.end(), data_a.begin(), data_a.end());
    const auto bytes = raw_file(
        R"({"zed":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
        R"("abc":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
        data);
    const Checkpoint cp = parse_checkpoint(bytes);
    const auto canonical = write_checkpoint(cp);
    CHECK(canonical != bytes);
    // Re-parsing the canonical bytes is a fixed point.
    CHECK(write_checkpoint(parse_checkpoint(canonical)) == canonical);
    CHECK(tensor_values(cp, "zed") == std::vector<double>{7.0});
    CHECK(tensor_values(cp, "abc") == std::vector<double>{1.0, 2.0});
}

TEST_CASE("fingerprint: value-invariant, structure-sensitive") {
    testutil::CheckpointGen gen(0xf1f2f3);
    const Checkpoint cp = gen.random_checkpoint(6, /*allow_int=*/true, /*allow_zero_dim=*/false);
    const std::string fp = arch_fingerprint(cp);

    Checkpoint same_structure = gen.like(cp);
    CHECK(arch_fingerprint(same_structure) == fp);

    Checkpoint renamed = cp;
    auto node = renamed.tensors.extract(renamed.tensors.begin()->first);
    node.key() += "_renamed";
    renamed.tensors.insert(std::move(node));
    CHECK(arch_fingerprint(renamed) != fp);

    Checkpoint reshaped = cp;
    auto& t = reshaped.tensors.begin()->second;
    t.shape.insert(t.shape.begin(), 1);
    CHECK(arch_fingerprint(reshaped) != fp);
}

TEST_CASE("tensor_values: decoding and unknown names") {
    Checkpoint cp;
    const float f[1] = {1.5f};
    cp.tensors.emplace("f", make_tensor_f32({1}, f));
    const std::int64_t i[2] = {-3, 9};
    cp.tensors.emplace("i", make_tensor_i64({2}, i));
    const double d[3] = {0.1, -2.5, 1e-9};
    cp.tensors.emplace("d", make_tensor_f64({3}, d));
    cp.tensors.emplace("z", make_tensor_f64({0, 3}, std::span<const double>{}));
    cp.refresh_fingerprint();

    CHECK(tensor_values(cp, "f") == std::vector<double>{1.5});
    CHECK(tensor_values(cp, "d") == std::vector<double>{0.1, -2.5, 1e-9});
    CHECK(tensor_values(cp, "i") == std::vector<double>{-3.0, 9.0});
    CHECK(tensor_values_i64(cp, "i") == std::vector<std::int64_t>{-3, 9});
    CHECK(tensor_values(cp, "z").empty());
    CHECK_THROWS_AS(tensor_values(cp, "missing"), UnknownTensor);

    const auto bytes = write_checkpoint(cp);
    CHECK(write_checkpoint(parse_checkpoint(bytes)) == bytes);
}

TEST_CASE("zero-dimension tensors occupy no bytes but keep their slot") {
    const auto bytes = raw_file(
        R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
        R"("empty":{"dtype":"F64","shape":[0,3],"data_offsets":[4,4]},)"
        R"("b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
        std::vector<std::uint8_t>(8, 0));
    const Checkpoint cp = parse_checkpoint(bytes);
    CHECK(cp.at("empty").data.empty());
    CHECK(cp.at("empty").num_elements() == 0);
}

TEST_CASE("load/save round-trip through the filesystem") {
    testutil::TempDir dir("store");
    testutil::CheckpointGen gen(0xfeed);
    const Checkpoint cp = gen.random_checkpoint(5);
    const auto path = dir.path / "model.ckpt";
    save_checkpoint(cp, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(write_checkpoint(back) == write_checkpoint(cp));
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), IoError);
}

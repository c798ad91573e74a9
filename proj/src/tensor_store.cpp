#include "mergelab/tensor_store.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <utility>

#include "json.hpp"
#include "mergelab/errors.hpp"

namespace mergelab {

namespace {

using json = nlohmann::json;

struct RawEntry {
    std::string name;
    DType dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

std::int64_t checked_num_elements(const std::vector<std::int64_t>& shape, const std::string& name) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d == 0) return 0;
        if (n > (std::int64_t(1) << 56) / d)
            throw MalformedHeader("tensor \"" + name + "\": shape product overflows");
        n *= d;
    }
    return n;
}

std::vector<std::int64_t> parse_shape(const json& j, const std::string& name) {
    if (!j.is_array())
        throw MalformedHeader("tensor \"" + name + "\": shape is not an array");
    std::vector<std::int64_t> shape;
    shape.reserve(j.size());
    for (const auto& d : j) {
        if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
            throw MalformedHeader("tensor \"" + name + "\": shape entries must be non-negative integers");
        shape.push_back(d.get<std::int64_t>());
    }
    return shape;
}

RawEntry parse_entry(const std::string& name, const json& j) {
    if (name.empty()) throw MalformedHeader("empty tensor name");
    if (!j.is_object())
        throw MalformedHeader("tensor \"" + name + "\": entry is not an object");
    for (const auto& [key, _] : j.items()) {
        if (key != "dtype" && key != "shape" && key != "data_offsets")
            throw MalformedHeader("tensor \"" + name + "\": unknown header field \"" + key + "\"");
    }
    if (!j.contains("dtype") || !j.contains("shape") || !j.contains("data_offsets"))
        throw MalformedHeader("tensor \"" + name + "\": missing dtype, shape or data_offsets");

    RawEntry e;
    e.name = name;
    if (!j["dtype"].is_string())
        throw MalformedHeader("tensor \"" + name + "\": dtype is not a string");
    auto dt = dtype_from_name(j["dtype"].get<std::string>());
    if (!dt)
        throw MalformedHeader("tensor \"" + name + "\": unknown dtype \"" +
                              j["dtype"].get<std::string>() + "\"");
    e.dtype = *dt;
    e.shape = parse_shape(j["shape"], name);

    const auto& off = j["data_offsets"];
    if (!off.is_array() || off.size() != 2 || !off[0].is_number_integer() ||
        !off[1].is_number_integer() || off[0].get<std::int64_t>() < 0 ||
        off[1].get<std::int64_t>() < 0)
        throw MalformedHeader("tensor \"" + name + "\": data_offsets must be [begin, end]");
    e.begin = off[0].get<std::uint64_t>();
    e.end = off[1].get<std::uint64_t>();
    return e;
}

}  // namespace

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw MalformedHeader("file shorter than the 8-byte header length");
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = header_len << 8 | bytes[i];
    if (header_len > bytes.size() - 8)
        throw MalformedHeader("header length exceeds file size");

    const char* header_begin = reinterpret_cast<const char*>(bytes.data()) + 8;

    // The callback sees every key of the root object (depth 1) before the
    // value map deduplicates them, which is the only place a duplicate
    // tensor name is still visible.
    std::vector<std::string> root_keys;
    auto cb = [&](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key)
            root_keys.push_back(parsed.get<std::string>());
        return true;
    };
    json header;
    try {
        header = json::parse(header_begin, header_begin + header_len, cb);
    } catch (const json::exception& e) {
        throw MalformedHeader(std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) throw MalformedHeader("header root is not an object");

    {
        std::set<std::string> seen;
        for (const auto& k : root_keys)
            if (!seen.insert(k).second)
                throw DuplicateName("duplicate header key \"" + k + "\"");
    }

    Checkpoint cp;
    std::vector<RawEntry> entries;
    for (const auto& [name, value] : header.items()) {
        if (name == "__metadata__") {
            if (!value.is_object())
                throw MalformedHeader("__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string())
                    throw MalformedHeader("__metadata__ value for \"" + mk + "\" is not a string");
                cp.metadata[mk] = mv.get<std::string>();
            }
            continue;
        }
        entries.push_back(parse_entry(name, value));
    }

    const std::uint64_t data_size = bytes.size() - 8 - header_len;
    const std::uint8_t* data = bytes.data() + 8 + header_len;

    for (const auto& e : entries) {
        if (e.end < e.begin)
            throw OffsetError("tensor \"" + e.name + "\": data_offsets end before begin");
        if (e.end > data_size)
            throw OffsetError("tensor \"" + e.name + "\": data_offsets out of bounds");
        const std::uint64_t need =
            std::uint64_t(checked_num_elements(e.shape, e.name)) * element_size(e.dtype);
        if (e.end - e.begin != need)
            throw OffsetError("tensor \"" + e.name + "\": range length " +
                              std::to_string(e.end - e.begin) + " does not match shape (" +
                              std::to_string(need) + " bytes)");
    }

    // Sorted by begin the ranges must tile [0, data_size) exactly.
    std::vector<const RawEntry*> by_begin;
    by_begin.reserve(entries.size());
    for (const auto& e : entries) by_begin.push_back(&e);
    std::sort(by_begin.begin(), by_begin.end(), [](const RawEntry* a, const RawEntry* b) {
        return std::pair(a->begin, a->end) < std::pair(b->begin, b->end);
    });
    std::uint64_t cursor = 0;
    for (const RawEntry* e : by_begin) {
        if (e->begin < cursor)
            throw OffsetError("tensor \"" + e->name + "\": range overlaps the previous tensor");
        if (e->begin > cursor)
            throw OffsetError("tensor \"" + e->name + "\": gap before range at offset " +
                              std::to_string(e->begin));
        cursor = e->end;
    }
    if (cursor != data_size)
        throw OffsetError("data region has " + std::to_string(data_size - cursor) +
                          " trailing bytes not covered by any tensor");

    for (auto& e : entries) {
        TensorData t;
        t.dtype = e.dtype;
        t.shape = std::move(e.shape);
        t.data.assign(data + e.begin, data + e.end);
        cp.tensors.emplace(std::move(e.name), std::move(t));
    }
    cp.refresh_fingerprint();
    return cp;
}

std::vector<std::uint8_t> write_checkpoint(const Checkpoint& cp) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : cp.tensors) {
        if (name.empty()) throw MalformedHeader("empty tensor name");
        if (name == "__metadata__")
            throw MalformedHeader("tensor name \"__metadata__\" is reserved");
        json entry;
        entry["dtype"] = std::string(dtype_name(t.dtype));
        entry["shape"] = t.shape;
        entry["data_offsets"] = {offset, offset + t.data.size()};
        header[name] = std::move(entry);
        offset += t.data.size();
    }

    json meta = json::object();
    for (const auto& [k, v] : cp.metadata) meta[k] = v;
    meta["arch_fingerprint"] = arch_fingerprint(cp);
    header["__metadata__"] = std::move(meta);

    const std::string text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + offset);
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(std::uint64_t(text.size()) >> 8 * i));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : cp.tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open \"" + path.string() + "\" for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on \"" + path.string() + "\"");
    return parse_checkpoint(bytes);
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = write_checkpoint(cp);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path.string() + "\" for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on \"" + path.string() + "\"");
}

}  // namespace mergelab

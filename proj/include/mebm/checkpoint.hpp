#pragma once

// Checkpoint files.
//
//   "MEBM"            4 bytes magic
//   version           u32 (= 1)
//   config digest     u64
//   record count      u32
//   records           u32 name length, name bytes, u32 rank, u64 extents[rank],
//                     f32 values (row-major)
//   checksum          u64 FNV-1a of every preceding byte
//
// All integers and floats are little-endian. Records hold every trainable
// tensor followed by the running normalization statistics.

#include "mebm/binary_io.hpp"
#include "mebm/model.hpp"

namespace mebm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
std::string encode_checkpoint(const Model<T>& model) {
    ByteWriter w;
    w.bytes("MEBM");
    w.u32(kCheckpointVersion);
    w.u64(model.digest());
    const auto entries = model.parameters().all();
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(tensor.rank()));
        for (auto e : tensor.shape()) w.u64(e);
        w.f32_array(tensor.data());
    }
    w.u64(fnv1a64(w.buffer()));
    return w.buffer();
}

template <class T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(model));
}

/// Loads values into a model built with the matching configuration.
template <class T>
void decode_checkpoint(Model<T>& model, std::span<const char> data, const std::string& context) {
    if (data.size() < 8) throw FormatError(context + ": truncated file");
    ByteReader trailer(data.subspan(data.size() - 8), context);
    const std::uint64_t stored = trailer.u64();
    const std::string_view body(data.data(), data.size() - 8);
    ByteReader r(data.first(data.size() - 8), context);
    if (r.bytes(4) != "MEBM") r.fail("bad magic (expected \"MEBM\")");
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        r.fail("unsupported version " + std::to_string(version));
    }
    if (fnv1a64(body) != stored) r.fail("checksum mismatch");
    const std::uint64_t digest = r.u64();
    const auto entries = model.parameters().all();
    const std::uint32_t count = r.u32();
    std::vector<std::vector<T>> values;
    for (std::size_t i = 0; i < std::max<std::size_t>(count, entries.size()); ++i) {
        if (i >= count) r.fail("parameter " + entries[i].first + " missing from checkpoint");
        const std::uint32_t name_len = r.u32();
        const std::string name(r.bytes(name_len));
        if (i >= entries.size()) r.fail("unexpected parameter " + name + " not present in model");
        Shape shape(r.u32());
        for (auto& e : shape) e = r.u64();
        const auto& [expected_name, tensor] = entries[i];
        if (name != expected_name || shape != tensor.shape()) {
            r.fail("parameter " + expected_name + " " + to_string(tensor.shape()) +
                   " does not match checkpoint record " + name + " " + to_string(shape));
        }
        std::vector<T> v(numel(shape));
        r.f32_array(std::span<T>(v));
        values.push_back(std::move(v));
    }
    if (r.remaining() != 0) r.fail("trailing bytes after last record");
    if (digest != model.digest()) r.fail("configuration digest mismatch");
    model.restore(values);
}

template <class T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& path) {
    const auto data = read_file(path);
    decode_checkpoint(model, std::span<const char>(data), path.string());
}

}  // namespace mebm

#pragma once

// Little-endian byte buffers for the binary file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace mebm {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.append(raw); }

    template <class U>
    void scalar(U value) {
        static_assert(std::is_arithmetic_v<U>);
        char raw[sizeof(U)];
        std::memcpy(raw, &value, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
        buf_.append(raw, sizeof(U));
    }

    void u16(std::uint16_t v) { scalar(v); }
    void u32(std::uint32_t v) { scalar(v); }
    void u64(std::uint64_t v) { scalar(v); }
    void f64(double v) { scalar(v); }

    /// Appends values converted to 32-bit floats.
    template <class U>
    void f32_array(std::span<const U> values) {
        const std::size_t start = buf_.size();
        buf_.resize(start + values.size() * sizeof(float));
        char* dst = buf_.data() + start;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const float f = static_cast<float>(values[i]);
            std::memcpy(dst + i * sizeof(float), &f, sizeof(float));
            if constexpr (std::endian::native == std::endian::big) {
                std::reverse(dst + i * sizeof(float), dst + (i + 1) * sizeof(float));
            }
        }
    }

    const std::string& buffer() const { return buf_; }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const char> data, std::string context)
        : data_(data), context_(std::move(context)) {}

    std::string_view bytes(std::size_t n) {
        require(n);
        std::string_view out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    template <class U>
    U scalar() {
        require(sizeof(U));
        char raw[sizeof(U)];
        std::memcpy(raw, data_.data() + pos_, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
        pos_ += sizeof(U);
        U value;
        std::memcpy(&value, raw, sizeof(U));
        return value;
    }

    std::uint16_t u16() { return scalar<std::uint16_t>(); }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    double f64() { return scalar<double>(); }

    template <class U>
    void f32_array(std::span<U> out) {
        if (out.size() > remaining() / sizeof(float)) fail("truncated payload");
        const char* src = data_.data() + pos_;
        for (std::size_t i = 0; i < out.size(); ++i) {
            char raw[sizeof(float)];
            std::memcpy(raw, src + i * sizeof(float), sizeof(float));
            if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(float));
            float f;
            std::memcpy(&f, raw, sizeof(float));
            out[i] = static_cast<U>(f);
        }
        pos_ += out.size() * sizeof(float);
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    [[noreturn]] void fail(const std::string& what) const { throw FormatError(context_ + ": " + what); }

private:
    void require(std::size_t n) const {
        if (n > remaining()) fail("truncated file");
    }

    std::span<const char> data_;
    std::size_t pos_ = 0;
    std::string context_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> data(size);
    if (size && !in.read(data.data(), static_cast<std::streamsize>(size))) {
        throw std::runtime_error("cannot read " + path.string());
    }
    return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace mebm

#pragma once

// Raw float32 array files: "F32A" magic, u32 rank, u32 dims[rank], then
// row-major float32 payload. Every integer and float is little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

struct FloatArray {
    std::vector<std::uint32_t> shape;
    std::vector<float> values;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_f32(const FloatArray& a) {
    require(a.element_count() == a.values.size(), "array shape does not match payload size");
    std::vector<unsigned char> out{'F', '3', '2', 'A'};
    out.reserve(8 + 4 * a.shape.size() + 4 * a.values.size());
    detail::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put_u32(out, d);
    for (float f : a.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

inline FloatArray decode_f32(std::span<const unsigned char> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "F32A", 4) != 0)
        throw Error("not an F32A array (bad magic)");
    FloatArray a;
    const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
    std::size_t off = 8;
    if (bytes.size() < off + 4ull * rank) throw Error("truncated F32A header");
    for (std::uint32_t i = 0; i < rank; ++i, off += 4) a.shape.push_back(detail::get_u32(bytes.data() + off));
    const std::size_t n = a.element_count();
    if (bytes.size() != off + 4 * n) throw Error("F32A payload size does not match shape");
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i, off += 4) a.values[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + off));
    return a;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_f32(const std::filesystem::path& path, const FloatArray& a) { write_bytes(path, encode_f32(a)); }
inline FloatArray read_f32(const std::filesystem::path& path) { return decode_f32(read_bytes(path)); }

// Stacks equally-shaped matrices into [count, rows, cols], row-major.
inline FloatArray stack_matrices(std::span<const Matrix> mats) {
    FloatArray a;
    if (mats.empty()) return a;
    const auto rows = static_cast<std::uint32_t>(mats[0].rows());
    const auto cols = static_cast<std::uint32_t>(mats[0].cols());
    a.shape = {static_cast<std::uint32_t>(mats.size()), rows, cols};
    a.values.reserve(mats.size() * rows * cols);
    for (const auto& m : mats) {
        require(m.rows() == rows && m.cols() == cols, "cannot stack matrices of different shapes");
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) a.values.push_back(m(r, c));
    }
    return a;
}

inline std::vector<Matrix> unstack_matrices(const FloatArray& a) {
    require(a.shape.size() == 3, "expected a rank-3 array");
    std::vector<Matrix> out;
    std::size_t k = 0;
    for (std::uint32_t i = 0; i < a.shape[0]; ++i) {
        Matrix m(a.shape[1], a.shape[2]);
        for (std::uint32_t r = 0; r < a.shape[1]; ++r)
            for (std::uint32_t c = 0; c < a.shape[2]; ++c) m(r, c) = a.values[k++];
        out.push_back(std::move(m));
    }
    return out;
}

inline FloatArray latent_array(const Latent& z) {
    return {{static_cast<std::uint32_t>(z.channels), static_cast<std::uint32_t>(z.height),
             static_cast<std::uint32_t>(z.width)},
            z.data};
}

inline Latent array_latent(const FloatArray& a) {
    require(a.shape.size() == 3, "latent array must be rank 3");
    Latent z(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2]));
    z.data = a.values;
    return z;
}

}  // namespace chromalign

#ifndef MLWT_TENSOR_HPP
#define MLWT_TENSOR_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlwt {

// Dense row-major tensor. Rank 4 (B,C,H,W) for feature maps, rank 1 for
// filters and scalars. Values are plain data; autodiff bookkeeping lives
// in Tape.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), data(count(shape), T(0)) {}
    Tensor(std::vector<std::size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count(shape))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // rank-4 accessors
    std::size_t b() const { return shape[0]; }
    std::size_t c() const { return shape[1]; }
    std::size_t h() const { return shape[2]; }
    std::size_t w() const { return shape[3]; }

    T& at(std::size_t ib, std::size_t ic, std::size_t iy, std::size_t ix) {
        return data[((ib * shape[1] + ic) * shape[2] + iy) * shape[3] + ix];
    }
    const T& at(std::size_t ib, std::size_t ic, std::size_t iy, std::size_t ix) const {
        return data[((ib * shape[1] + ic) * shape[2] + iy) * shape[3] + ix];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
template <typename T> constexpr unsigned char dtype_byte();
template <> constexpr unsigned char dtype_byte<float>() { return 0x00; }
template <> constexpr unsigned char dtype_byte<double>() { return 0x01; }
}  // namespace detail

// Raised on malformed files and bad user input (CLI maps it to exit code 2).
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary tensor file: "MLWT", version 0x01, dtype byte, rank byte,
// rank x u32 little-endian dims, row-major little-endian payload.
template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("MLWT", 4);
    unsigned char hdr[3] = {0x01, detail::dtype_byte<T>(),
                            static_cast<unsigned char>(t.rank())};
    os.write(reinterpret_cast<const char*>(hdr), 3);
    for (auto d : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MLWT", 4) != 0)
        throw format_error("not a tensor file (bad magic): " + path);
    unsigned char hdr[3];
    is.read(reinterpret_cast<char*>(hdr), 3);
    if (!is || hdr[0] != 0x01) throw format_error("unsupported tensor file version: " + path);
    if (hdr[1] != detail::dtype_byte<T>())
        throw format_error("tensor dtype mismatch: " + path);
    std::vector<std::size_t> shape(hdr[2]);
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!is) throw format_error("truncated tensor file: " + path);
    return t;
}

}  // namespace mlwt

#endif

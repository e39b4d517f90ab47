#pragma once

// Flat binary parameter files:
//   "AGLA" | version u32 | repeated { name_len u32 | name bytes | rank u32 | dims u64[rank] | f64[numel] }
// All integers and floats little-endian. Records run to end of file.

#include "agla/error.hpp"
#include "agla/nets.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace agla {

inline constexpr std::uint32_t kParamFileVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    out.insert(out.end(), std::begin(bytes), std::end(bytes));
}

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t offset() const { return pos_; }

    template <class T>
    T get_le() {
        need(sizeof(T));
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("truncated parameter file", pos_);
    }

    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_parameters(const NamedTensors& tensors) {
    std::vector<unsigned char> out{'A', 'G', 'L', 'A'};
    detail::put_le<std::uint32_t>(out, kParamFileVersion);
    for (const auto& [name, t] : tensors) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double v : t.data()) detail::put_le<double>(out, v);
    }
    return out;
}

inline NamedTensors decode_parameters(std::vector<unsigned char> bytes) {
    detail::ByteReader in(std::move(bytes));
    if (in.get_string(4) != "AGLA") throw FormatError("bad magic, expected \"AGLA\"", 0);
    const auto version = in.get_le<std::uint32_t>();
    if (version != kParamFileVersion)
        throw FormatError("unsupported parameter file version " + std::to_string(version), 4);
    NamedTensors out;
    while (!in.done()) {
        const auto name_len = in.get_le<std::uint32_t>();
        std::string name = in.get_string(name_len);
        const std::size_t rank_at = in.offset();
        const auto rank = in.get_le<std::uint32_t>();
        if (rank == 0 || rank > 8) throw FormatError("invalid rank " + std::to_string(rank), rank_at);
        Shape shape(rank);
        for (auto& d : shape) {
            const std::size_t at = in.offset();
            d = static_cast<std::size_t>(in.get_le<std::uint64_t>());
            if (d == 0 || d > (std::size_t{1} << 32)) throw FormatError("invalid dimension", at);
        }
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = in.get_le<double>();
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

inline void save_parameters(const std::string& path, const NamedTensors& tensors) {
    const auto bytes = encode_parameters(tensors);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline NamedTensors load_parameters(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_parameters(std::move(bytes));
}

}  // namespace agla

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/tensor.hpp"

namespace mogen {

// MGN1 checkpoint container: a flat, ordered name -> tensor map.
//
// Layout (little-endian):
//   magic "MGN1" | u32 version | u64 tensor count
//   then per tensor:
//   u32 name length | name bytes | u32 ndim | u64 dims[ndim] | f64 data[numel]
//
// Scalar configuration rides along as 1-element tensors under a "meta/"
// name prefix, so one file captures both weights and the settings they
// were trained with.

using TensorMap = std::map<std::string, Tensor>;

namespace detail {

inline constexpr char kMagic[4] = {'M', 'G', 'N', '1'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(buf, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    char buf[sizeof(T)];
    is.read(buf, sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const TensorMap& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(detail::kMagic, 4);
    detail::write_pod<std::uint32_t>(os, detail::kVersion);
    detail::write_pod<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape()) detail::write_pod<std::uint64_t>(os, d);
        for (double v : t.data()) detail::write_pod<double>(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline TensorMap load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != detail::kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = detail::read_pod<std::uint64_t>(is);
    TensorMap out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("checkpoint: truncated file");
        const auto ndim = detail::read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const auto dim = detail::read_pod<std::uint64_t>(is);
            shape.push_back(static_cast<std::size_t>(dim));
            numel *= static_cast<std::size_t>(dim);
        }
        std::vector<double> data(numel);
        for (double& v : data) v = detail::read_pod<double>(is);
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

// Scalar helpers for the "meta/" convention.
inline void put_meta(TensorMap& m, const std::string& key, double value) {
    m.insert_or_assign("meta/" + key, Tensor::scalar(value));
}

inline double get_meta(const TensorMap& m, const std::string& key) {
    auto it = m.find("meta/" + key);
    if (it == m.end()) throw std::runtime_error("checkpoint: missing meta/" + key);
    return it->second.scalar_value();
}

inline bool has_meta(const TensorMap& m, const std::string& key) {
    return m.count("meta/" + key) != 0;
}

} // namespace mogen

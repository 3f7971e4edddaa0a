#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "segnas/ops.hpp"

namespace segnas {

// Flat binary weight checkpoint, little-endian:
//   magic "SGNW1\n", uint32 tensor count, then per tensor (in store order):
//   uint32 name length, name bytes, uint32 ndims, int32 dims..., then
//   numel float32 values (64-bit runs are narrowed to float32 on save).
// Round trips are bit-exact in 32-bit mode.

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write("SGNW1\n", 6);
    const std::uint32_t count = static_cast<std::uint32_t>(store.names().size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& name : store.names()) {
        const auto& t = store.at(name);
        const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&nlen), 4);
        f.write(name.data(), nlen);
        const std::uint32_t nd = static_cast<std::uint32_t>(t.shape().size());
        f.write(reinterpret_cast<const char*>(&nd), 4);
        for (int d : t.shape()) {
            const std::int32_t d32 = d;
            f.write(reinterpret_cast<const char*>(&d32), 4);
        }
        for (const T& v : t.values()) {
            const float fv = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&fv), 4);
        }
    }
}

template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "SGNW1\n", 6) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    std::uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = 0;
        f.read(reinterpret_cast<char*>(&nlen), 4);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        std::uint32_t nd = 0;
        f.read(reinterpret_cast<char*>(&nd), 4);
        Shape shape(nd);
        for (std::uint32_t d = 0; d < nd; ++d) {
            std::int32_t d32 = 0;
            f.read(reinterpret_cast<char*>(&d32), 4);
            shape[d] = d32;
        }
        Tensor<T>& t = store.get_or_create(name, shape, "zeros");
        for (T& v : t.values()) {
            float fv = 0;
            f.read(reinterpret_cast<char*>(&fv), 4);
            v = static_cast<T>(fv);
        }
        if (!f) throw std::runtime_error("truncated checkpoint " + path);
    }
}

}  // namespace segnas

#ifndef AULLMXX_CORE_CHECKPOINT_HPP
#define AULLMXX_CORE_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "aullmxx/core/params.hpp"

namespace aullmxx {

// Named-tensor archive shared by every module. Little-endian, entries in
// registration order.
namespace checkpoint_detail {

inline constexpr char kMagic[8] = {'A', 'X', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated file");
    return v;
}

template <typename Real>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<Real, float>) return 0;
    else if constexpr (std::is_same_v<Real, double>) return 1;
    else static_assert(sizeof(Real) == 0, "unsupported checkpoint scalar");
}

}  // namespace checkpoint_detail

template <typename Real>
void save_checkpoint(const ParamStore<Real>& store, const std::string& path) {
    using namespace checkpoint_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, store.entries().size());
    for (const auto& e : store.entries()) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod<std::uint8_t>(out, dtype_code<Real>());
        const auto& t = e.var->value;
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

// Loads values into an already-constructed registry; names, shapes and dtype
// must match exactly.
template <typename Real>
void load_checkpoint(ParamStore<Real>& store, const std::string& path) {
    using namespace checkpoint_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint: bad magic in " + path);
    }
    const auto count = read_pod<std::uint64_t>(in);
    if (count != store.entries().size()) {
        throw DataError("checkpoint: entry count mismatch (archive " + std::to_string(count) +
                        ", model " + std::to_string(store.entries().size()) + ")");
    }
    std::size_t loaded = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto dtype = read_pod<std::uint8_t>(in);
        if (dtype != dtype_code<Real>()) throw DataError("checkpoint: dtype mismatch for " + name);
        const auto rank = read_pod<std::uint32_t>(in);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
        if (!store.has(name)) throw DataError("checkpoint: unknown tensor " + name);
        auto v = store.get(name);
        if (v->value.shape() != shape) throw DataError("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(v->value.ptr()),
                static_cast<std::streamsize>(v->value.size() * sizeof(Real)));
        if (!in) throw DataError("checkpoint: truncated tensor " + name);
        ++loaded;
    }
    if (loaded != store.entries().size()) throw DataError("checkpoint: incomplete load");
}

}  // namespace aullmxx

#endif  // AULLMXX_CORE_CHECKPOINT_HPP

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "heliomc/common.hpp"
#include "heliomc/mlp.hpp"

namespace heliomc {

// Model file layout (little-endian):
//   magic   "HMLPMODL"          8 bytes
//   version u32                 currently 1
//   payload_size u64            bytes of payload
//   payload:
//     n_layers+1 u32, layer_dims (u32 each), activation u8,
//     input_center, input_half, output_offset, output_scale (f64 arrays),
//     per layer: weights row-major then biases (f64 arrays)
//   checksum u64                FNV-1a over the payload bytes
inline constexpr char kModelMagic[8] = {'H', 'M', 'L', 'P', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct ByteWriter {
    std::vector<std::uint8_t> bytes;
    template <typename T>
    void put(T v) {
        std::uint8_t buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes.insert(bytes.end(), buf, buf + sizeof(T));
    }
    void put_f64s(const double* p, std::size_t n) {
        const std::uint8_t* b = reinterpret_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n * sizeof(double));
    }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t n, pos = 0;
    template <typename T>
    T get() {
        if (pos + sizeof(T) > n) throw IoError("model file payload truncated");
        T v;
        std::memcpy(&v, p + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    void get_f64s(double* out, std::size_t count) {
        if (pos + count * sizeof(double) > n) throw IoError("model file payload truncated");
        std::memcpy(out, p + pos, count * sizeof(double));
        pos += count * sizeof(double);
    }
};

}  // namespace detail

inline void save_model(const MlpModel& m, const std::string& path) {
    validate_model(m);
    detail::ByteWriter w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.layer_dims.size()));
    for (auto d : m.layer_dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.activation));
    w.put_f64s(m.input_center.data(), m.input_center.size());
    w.put_f64s(m.input_half.data(), m.input_half.size());
    w.put_f64s(m.output_offset.data(), m.output_offset.size());
    w.put_f64s(m.output_scale.data(), m.output_scale.size());
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        w.put_f64s(m.weights[l].data.data(), m.weights[l].data.size());
        w.put_f64s(m.biases[l].data(), m.biases[l].size());
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(kModelMagic, sizeof(kModelMagic));
    std::uint32_t version = kModelVersion;
    f.write(reinterpret_cast<const char*>(&version), sizeof(version));
    std::uint64_t payload_size = w.bytes.size();
    f.write(reinterpret_cast<const char*>(&payload_size), sizeof(payload_size));
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    std::uint64_t checksum = detail::fnv1a(w.bytes.data(), w.bytes.size());
    f.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!f) throw IoError("write failed: " + path);
}

inline MlpModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open model file " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw IoError("not a model file (bad magic): " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!f) throw IoError("model file truncated: " + path);
    if (version != kModelVersion)
        throw IoError("model file version " + std::to_string(version) + " unsupported, expected " +
                      std::to_string(kModelVersion) + ": " + path);
    std::uint64_t payload_size = 0;
    f.read(reinterpret_cast<char*>(&payload_size), sizeof(payload_size));
    if (!f) throw IoError("model file truncated: " + path);
    std::vector<std::uint8_t> payload(payload_size);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_size));
    if (!f || static_cast<std::uint64_t>(f.gcount()) != payload_size)
        throw IoError("model file truncated: " + path);
    std::uint64_t stored_checksum = 0;
    f.read(reinterpret_cast<char*>(&stored_checksum), sizeof(stored_checksum));
    if (!f) throw IoError("model file truncated (missing checksum): " + path);
    if (stored_checksum != detail::fnv1a(payload.data(), payload.size()))
        throw IoError("model file checksum mismatch (corrupted): " + path);

    detail::ByteReader r{payload.data(), payload.size()};
    std::uint32_t n_dims = r.get<std::uint32_t>();
    if (n_dims < 2 || n_dims > 64) throw IoError("model file has implausible layer count: " + path);
    std::vector<std::size_t> dims(n_dims);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    std::uint8_t act = r.get<std::uint8_t>();
    if (act > 1) throw IoError("model file has unknown activation tag: " + path);
    MlpModel m = make_mlp(dims, static_cast<Activation>(act));
    r.get_f64s(m.input_center.data(), m.input_center.size());
    r.get_f64s(m.input_half.data(), m.input_half.size());
    r.get_f64s(m.output_offset.data(), m.output_offset.size());
    r.get_f64s(m.output_scale.data(), m.output_scale.size());
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        r.get_f64s(m.weights[l].data.data(), m.weights[l].data.size());
        r.get_f64s(m.biases[l].data(), m.biases[l].size());
    }
    if (r.pos != r.n) throw IoError("model file has trailing payload bytes: " + path);
    validate_model(m);
    return m;
}

}  // namespace heliomc

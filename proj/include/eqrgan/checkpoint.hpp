#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "eqrgan/nets.hpp"

#include <json.hpp>

namespace eqrgan::model {

// Versioned binary checkpoint: a JSON header describing shapes and modes,
// then raw tensor data for the generator and discriminator stores, then the
// per-net standardization vectors. Loading validates the header against the
// expected architecture and fails with a description of any mismatch.
namespace checkpoint {

constexpr char kMagic[4] = {'E', 'Q', 'R', 'C'};
constexpr uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

template <typename T>
void write_store(std::ofstream& os, const diffcore::ParamStore<T>& store) {
    write_pod(os, static_cast<uint32_t>(store.size()));
    for (const auto& m : store.tensors) {
        write_pod(os, static_cast<uint32_t>(m.rows));
        write_pod(os, static_cast<uint32_t>(m.cols));
        os.write(reinterpret_cast<const char*>(m.a.data()), m.size() * sizeof(T));
    }
}

template <typename T>
void read_store(std::ifstream& is, diffcore::ParamStore<T>& store) {
    const uint32_t count = read_pod<uint32_t>(is);
    if (count != static_cast<uint32_t>(store.size()))
        throw IoError("checkpoint: tensor count mismatch (" + std::to_string(count) +
                      " stored, " + std::to_string(store.size()) + " expected)");
    for (auto& m : store.tensors) {
        const uint32_t rows = read_pod<uint32_t>(is);
        const uint32_t cols = read_pod<uint32_t>(is);
        if (rows != static_cast<uint32_t>(m.rows) || cols != static_cast<uint32_t>(m.cols))
            throw IoError("checkpoint: tensor shape mismatch");
        is.read(reinterpret_cast<char*>(m.a.data()), m.size() * sizeof(T));
        if (!is) throw IoError("checkpoint: truncated tensor data");
    }
}

template <typename T>
void write_standardization(std::ofstream& os, const diffcore::Mlp<T>& net) {
    write_pod(os, static_cast<uint8_t>(net.standardized() ? 1 : 0));
    if (!net.standardized()) return;
    for (const T& v : net.in_mean) write_pod(os, v);
    for (const T& v : net.in_inv_std) write_pod(os, v);
}

template <typename T>
void read_standardization(std::ifstream& is, diffcore::Mlp<T>& net) {
    const uint8_t has = read_pod<uint8_t>(is);
    if (!has) {
        net.in_mean.clear();
        net.in_inv_std.clear();
        return;
    }
    std::vector<T> mean(net.in_dim()), inv_std(net.in_dim());
    for (T& v : mean) v = read_pod<T>(is);
    for (T& v : inv_std) v = read_pod<T>(is);
    net.set_standardization(std::move(mean), std::move(inv_std));
}

}  // namespace detail

template <typename T>
nlohmann::json architecture_header(const GeneratorParams<T>& gen,
                                   const DiscriminatorParams<T>& dis) {
    nlohmann::json j;
    j["precision"] = sizeof(T) == 4 ? "f32" : "f64";
    j["agents"] = gen.N;
    j["steps"] = gen.K;
    j["preference"] = gen.preference == Preference::Lq ? "lq" : "general";
    j["mu_mode"] = dis.mode == MuMode::Implicit
                       ? "implicit"
                       : (dis.mode == MuMode::KnownQuadratic ? "known_quadratic"
                                                             : "known_two_agent_power");
    j["gen_widths"] = gen.nets.at(0).at(0).widths;
    j["dis_widths"] = dis.sigma_nets.at(0).widths;
    j["skip"] = gen.nets.at(0).at(0).has_skip();
    return j;
}

template <typename T>
void save(const std::string& file, const GeneratorParams<T>& gen,
          const DiscriminatorParams<T>& dis) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + file + " for writing");
    os.write(kMagic, 4);
    detail::write_pod(os, kVersion);
    const std::string header = architecture_header(gen, dis).dump();
    detail::write_pod(os, static_cast<uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::write_store(os, gen.store);
    detail::write_store(os, dis.store);
    for (const auto& per_agent : gen.nets)
        for (const auto& net : per_agent) detail::write_standardization(os, net);
    for (const auto& net : dis.mu_nets) detail::write_standardization(os, net);
    for (const auto& net : dis.sigma_nets) detail::write_standardization(os, net);
    if (!os) throw IoError("checkpoint: write failed for " + file);
}

// Loads into freshly created parameter bundles whose architecture must match.
template <typename T>
void load(const std::string& file, GeneratorParams<T>& gen, DiscriminatorParams<T>& dis) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + file);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + file);
    const uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t hlen = detail::read_pod<uint32_t>(is);
    std::string header(hlen, '\0');
    is.read(header.data(), hlen);
    if (!is) throw IoError("checkpoint: truncated header");
    nlohmann::json stored = nlohmann::json::parse(header, nullptr, false);
    if (stored.is_discarded()) throw IoError("checkpoint: corrupt header json");
    const nlohmann::json expected = architecture_header(gen, dis);
    for (const auto& [key, value] : expected.items()) {
        if (!stored.contains(key) || stored[key] != value)
            throw IoError("checkpoint: architecture mismatch on '" + key + "' (stored " +
                          (stored.contains(key) ? stored[key].dump() : "<missing>") +
                          ", expected " + value.dump() + ")");
    }
    detail::read_store(is, gen.store);
    detail::read_store(is, dis.store);
    for (auto& per_agent : gen.nets)
        for (auto& net : per_agent) {
            net.in_mean.clear();
            net.in_inv_std.clear();
            detail::read_standardization(is, net);
        }
    for (auto& net : dis.mu_nets) {
        net.in_mean.clear();
        net.in_inv_std.clear();
        detail::read_standardization(is, net);
    }
    for (auto& net : dis.sigma_nets) {
        net.in_mean.clear();
        net.in_inv_std.clear();
        detail::read_standardization(is, net);
    }
}

}  // namespace checkpoint

}  // namespace eqrgan::model

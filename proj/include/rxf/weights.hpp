#pragma once

#include "rxf/network.hpp"

#include <cstdint>

namespace rxf {

struct RawTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

// Binary little-endian weight file:
//   magic "RXFW", format version u32, tensor count u32, then per tensor:
//   name length u16 + UTF-8 name, rank u8, dims u32 x rank, raw 32-bit floats.
void write_weight_file(const std::string& path, const std::vector<RawTensor>& tensors);
std::vector<RawTensor> read_weight_file(const std::string& path);

inline constexpr uint32_t kWeightFormatVersion = 1;

// Model checkpoints append the model configuration as reserved "config.*"
// entries so a weight file is self-describing.
template <typename T>
void save_model(const std::string& path, const ParameterStore<T>& store, const ModelConfig& cfg) {
    std::vector<RawTensor> raw;
    raw.reserve(store.count() + 6);
    for (const auto& [name, t] : store.entries()) {
        RawTensor r;
        r.name = name;
        r.shape = t.shape;
        r.data.resize(static_cast<size_t>(t.size()));
        for (long long i = 0; i < t.size(); ++i) r.data[static_cast<size_t>(i)] = static_cast<float>((*t.values)[i]);
        raw.push_back(std::move(r));
    }
    raw.push_back({"config.base_channels", {1}, {static_cast<float>(cfg.base_channels)}});
    raw.push_back({"config.heads",
                   {3},
                   {static_cast<float>(cfg.heads[0]), static_cast<float>(cfg.heads[1]),
                    static_cast<float>(cfg.heads[2])}});
    raw.push_back({"config.igabs",
                   {3},
                   {static_cast<float>(cfg.igabs[0]), static_cast<float>(cfg.igabs[1]),
                    static_cast<float>(cfg.igabs[2])}});
    raw.push_back({"config.crop_size", {1}, {static_cast<float>(cfg.crop_size)}});
    raw.push_back({"config.mode", {1}, {static_cast<float>(static_cast<int>(cfg.mode))}});
    raw.push_back({"config.pos_mode", {1}, {static_cast<float>(static_cast<int>(cfg.pos_mode))}});
    write_weight_file(path, raw);
}

template <typename T>
struct LoadedModel {
    ParameterStore<T> store;
    ModelConfig config;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
    std::vector<RawTensor> raw = read_weight_file(path);
    LoadedModel<T> out;
    bool have_c = false;
    for (auto& r : raw) {
        if (r.name.rfind("config.", 0) == 0) {
            if (r.name == "config.base_channels") {
                out.config.base_channels = static_cast<int>(r.data.at(0));
                have_c = true;
            } else if (r.name == "config.heads") {
                for (int i = 0; i < 3; ++i) out.config.heads[static_cast<size_t>(i)] = static_cast<int>(r.data.at(i));
            } else if (r.name == "config.igabs") {
                for (int i = 0; i < 3; ++i) out.config.igabs[static_cast<size_t>(i)] = static_cast<int>(r.data.at(i));
            } else if (r.name == "config.crop_size") {
                out.config.crop_size = static_cast<int>(r.data.at(0));
            } else if (r.name == "config.mode") {
                out.config.mode = static_cast<OrfMode>(static_cast<int>(r.data.at(0)));
            } else if (r.name == "config.pos_mode") {
                out.config.pos_mode = static_cast<PosEncMode>(static_cast<int>(r.data.at(0)));
            }
            continue;
        }
        Tensor<T> t = Tensor<T>::zeros(r.shape);
        for (size_t i = 0; i < r.data.size(); ++i) (*t.values)[i] = static_cast<T>(r.data[i]);
        out.store.add(r.name, std::move(t));
    }
    if (!have_c) throw CorruptError("weight file missing field config.base_channels");
    out.config.validate();
    if (out.store.total_scalars() != count_parameters(out.config))
        throw CorruptError("weight file tensor payload does not match its config field");
    return out;
}

} // namespace rxf

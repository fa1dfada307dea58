// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint format: <name>.json manifest plus <name>.bin little-endian blob.
// The manifest lists format version, dtype, and per-entry name/shape/offset;
// the blob holds the raw tensor values in manifest order.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stip/params.hpp"

namespace stip::nn {

inline constexpr int kCheckpointVersion = 1;

template <typename T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4)
        return "f32";
    else
        return "f64";
}

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path_base) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["dtype"] = dtype_name<T>();
    manifest["entries"] = nlohmann::json::array();
    std::ofstream blob(path_base + ".bin", std::ios::binary);
    if (!blob) throw IoError("cannot write " + path_base + ".bin");
    std::uint64_t offset = 0;
    for (const ParamEntry<T>* e : store.entries()) {
        nlohmann::json je;
        je["name"] = e->name;
        je["shape"] = e->value.shape;
        je["offset"] = offset;
        je["trainable"] = e->trainable;
        manifest["entries"].push_back(je);
        const auto bytes = e->value.data.size() * sizeof(T);
        blob.write(reinterpret_cast<const char*>(e->value.data.data()),
                   static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    blob.close();
    std::ofstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot write " + path_base + ".json");
    mf << manifest.dump(2) << "\n";
}

// Loads a checkpoint into a freshly initialized store. Every manifest entry
// must exist in the store with an identical shape; mismatches are reported by
// tensor name.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path_base) {
    std::ifstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot read " + path_base + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (!manifest.contains("format_version"))
        throw IoError("checkpoint manifest missing format_version: " + path_base);
    if (manifest["format_version"].get<int>() != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path_base);
    const std::string dtype = manifest["dtype"].get<std::string>();
    const bool same_dtype = dtype == dtype_name<T>();
    if (!same_dtype && dtype != "f32" && dtype != "f64")
        throw IoError("unknown dtype '" + dtype + "' in " + path_base);

    std::ifstream blob(path_base + ".bin", std::ios::binary);
    if (!blob) throw IoError("cannot read " + path_base + ".bin");

    std::vector<std::string> mismatched;
    for (const auto& je : manifest["entries"]) {
        const std::string name = je["name"].get<std::string>();
        const Shape shape = je["shape"].get<Shape>();
        if (!store.has(name)) {
            mismatched.push_back(name + " (missing)");
            continue;
        }
        ParamEntry<T>& e = store.at(name);
        if (e.value.shape != shape) {
            mismatched.push_back(name + " (checkpoint " + shape_str(shape) + " vs model " +
                                 shape_str(e.value.shape) + ")");
            continue;
        }
        const std::int64_t n = shape_numel(shape);
        blob.seekg(static_cast<std::streamoff>(je["offset"].get<std::uint64_t>()));
        if (same_dtype) {
            blob.read(reinterpret_cast<char*>(e.value.data.data()),
                      static_cast<std::streamsize>(n * sizeof(T)));
        } else if (dtype == "f32") {
            std::vector<float> tmp(static_cast<std::size_t>(n));
            blob.read(reinterpret_cast<char*>(tmp.data()),
                      static_cast<std::streamsize>(n * sizeof(float)));
            for (std::int64_t i = 0; i < n; ++i) e.value.data[i] = static_cast<T>(tmp[i]);
        } else {
            std::vector<double> tmp(static_cast<std::size_t>(n));
            blob.read(reinterpret_cast<char*>(tmp.data()),
                      static_cast<std::streamsize>(n * sizeof(double)));
            for (std::int64_t i = 0; i < n; ++i) e.value.data[i] = static_cast<T>(tmp[i]);
        }
        if (!blob) throw IoError("truncated checkpoint blob: " + path_base);
    }
    if (!mismatched.empty()) {
        std::string msg = "checkpoint/model mismatch:";
        for (const auto& m : mismatched) msg += " " + m;
        throw ShapeError(msg);
    }
}

}  // namespace stip::nn

#ifndef IUF_CONFIG_HPP
#define IUF_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "iuf/losses.hpp"
#include "iuf/model.hpp"
#include "iuf/optimizer.hpp"

namespace iuf {

// Flat `section.key = value` text. Sorted by key, which makes the snapshot
// and its hash independent of input ordering.
struct FlatConfig {
    std::map<std::string, std::string> kv;

    void set(const std::string& key, const std::string& value) { kv[key] = value; }
    std::string canonical_text() const;
};

FlatConfig parse_config_text(const std::string& text);
FlatConfig load_config_file(const std::filesystem::path& path);

// FNV-1a over the canonical text.
std::uint64_t config_hash(const FlatConfig& cfg);
std::string config_hash_hex(const FlatConfig& cfg);

struct RunConfig {
    std::string protocol = "3x2";
    std::uint64_t seed = 1;

    std::string data_source = "synthetic";  // synthetic | mvtec
    std::string mvtec_root;
    int objects = 6;
    int train_per_object = 40;
    int test_normal_per_object = 10;
    int test_defective_per_object = 10;

    ModelConfig model;

    int epochs_per_step = 30;
    int batch_size = 8;
    UpdateConfig update;
    LossWeights loss;

    bool ablate_oasa = false;
    bool ablate_scl = false;
    bool ablate_us = false;

    double smooth_sigma = 0.5;
    int threads = 2;

    // Throws ConfigError naming the first unknown or malformed key.
    static RunConfig from_flat(const FlatConfig& flat);
    FlatConfig to_flat() const;
};

}  // namespace iuf

#endif

#ifndef IUF_CHECKPOINT_HPP
#define IUF_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "iuf/model.hpp"
#include "iuf/optimizer.hpp"

namespace iuf {

// Single file: magic, little-endian u32 header length, JSON header (format
// version, config hash, step index, parameter shapes), then raw little-endian
// float32 blobs in registration order.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& config_hash_hex, int step_index);

// Loads parameters into a model built from the same config. Shape or hash
// mismatch raises ConfigError.
int load_checkpoint(const std::filesystem::path& path, Model& model,
                    const std::string& expected_config_hash_hex);

// Same scheme for the semantic basis: Vt_old, S_old and theta_old blobs.
void save_basis(const std::filesystem::path& path, const SemanticBasis& basis,
                const std::string& config_hash_hex, int step_index);

SemanticBasis load_basis(const std::filesystem::path& path, const Model& model,
                         const std::string& expected_config_hash_hex);

}  // namespace iuf

#endif

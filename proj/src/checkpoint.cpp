#include "iuf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "iuf/common.hpp"

namespace iuf {

namespace {

constexpr char kCkptMagic[8] = {'I', 'U', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr char kBasisMagic[8] = {'I', 'U', 'F', 'B', 'A', 'S', 'I', '1'};
constexpr int kFormatVersion = 1;

void write_f32_blob(std::ofstream& out, const double* data, size_t count) {
    std::vector<float> buf(count);
    for (size_t i = 0; i < count; ++i) buf[i] = static_cast<float>(data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(count * 4));
}

void read_f32_blob(std::ifstream& in, double* data, size_t count, const std::filesystem::path& path) {
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (!in) throw ConfigError("truncated parameter blob in " + path.string());
    for (size_t i = 0; i < count; ++i) data[i] = static_cast<double>(buf[i]);
}

void write_header(std::ofstream& out, const char magic[8], const nlohmann::json& header) {
    out.write(magic, 8);
    std::string text = header.dump();
    auto len = static_cast<std::uint32_t>(text.size());
    char lenbuf[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                      static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
    out.write(lenbuf, 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

nlohmann::json read_header(std::ifstream& in, const char magic[8], const std::filesystem::path& path) {
    char got[8];
    in.read(got, 8);
    if (!in || std::memcmp(got, magic, 8) != 0) throw ConfigError("bad file magic in " + path.string());
    unsigned char lenbuf[4];
    in.read(reinterpret_cast<char*>(lenbuf), 4);
    std::uint32_t len = lenbuf[0] | (lenbuf[1] << 8) | (lenbuf[2] << 16) | (static_cast<std::uint32_t>(lenbuf[3]) << 24);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw ConfigError("truncated header in " + path.string());
    return nlohmann::json::parse(text);
}

nlohmann::json shapes_json(const Model& model) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const ParamInfo& p : model.param_infos())
        shapes.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}});
    return shapes;
}

void check_common(const nlohmann::json& header, const Model& model, const std::string& expected_hash,
                  const std::filesystem::path& path) {
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw ConfigError("unsupported format version in " + path.string());
    if (!expected_hash.empty() && header.at("config_hash").get<std::string>() != expected_hash)
        throw ConfigError("config hash mismatch in " + path.string());
    nlohmann::json shapes = shapes_json(model);
    if (header.at("params") != shapes) throw ConfigError("parameter shape mismatch in " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& config_hash_hex, int step_index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
    nlohmann::json header = {{"format_version", kFormatVersion},
                             {"config_hash", config_hash_hex},
                             {"step_index", step_index},
                             {"params", shapes_json(model)}};
    write_header(out, kCkptMagic, header);
    write_f32_blob(out, model.params().data(), model.params().size());
}

int load_checkpoint(const std::filesystem::path& path, Model& model,
                    const std::string& expected_config_hash_hex) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing checkpoint: " + path.string());
    nlohmann::json header = read_header(in, kCkptMagic, path);
    check_common(header, model, expected_config_hash_hex, path);
    read_f32_blob(in, model.params().data(), model.params().size(), path);
    return header.at("step_index").get<int>();
}

void save_basis(const std::filesystem::path& path, const SemanticBasis& basis,
                const std::string& config_hash_hex, int step_index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write basis: " + path.string());
    const auto c = static_cast<int>(basis.vt_old.rows());
    nlohmann::json header = {{"format_version", kFormatVersion},
                             {"config_hash", config_hash_hex},
                             {"step_index", step_index},
                             {"channels", c},
                             {"theta_count", basis.theta_old.size()}};
    write_header(out, kBasisMagic, header);
    write_f32_blob(out, basis.vt_old.data(), static_cast<size_t>(c) * c);
    write_f32_blob(out, basis.s_old.data(), static_cast<size_t>(c));
    write_f32_blob(out, basis.theta_old.data(), basis.theta_old.size());
}

SemanticBasis load_basis(const std::filesystem::path& path, const Model& model,
                         const std::string& expected_config_hash_hex) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing basis: " + path.string());
    nlohmann::json header = read_header(in, kBasisMagic, path);
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw ConfigError("unsupported format version in " + path.string());
    if (!expected_config_hash_hex.empty() &&
        header.at("config_hash").get<std::string>() != expected_config_hash_hex)
        throw ConfigError("config hash mismatch in " + path.string());
    const int c = header.at("channels").get<int>();
    if (c != model.config().latent_channels)
        throw ConfigError("basis channel count mismatch in " + path.string());
    if (header.at("theta_count").get<size_t>() != model.params().size())
        throw ConfigError("basis theta size mismatch in " + path.string());

    SemanticBasis basis;
    basis.vt_old.resize(c, c);
    basis.s_old.resize(c);
    basis.theta_old.resize(model.params().size());
    read_f32_blob(in, basis.vt_old.data(), static_cast<size_t>(c) * c, path);
    read_f32_blob(in, basis.s_old.data(), static_cast<size_t>(c), path);
    read_f32_blob(in, basis.theta_old.data(), basis.theta_old.size(), path);
    return basis;
}

}  // namespace iuf

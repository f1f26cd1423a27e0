#include "iuf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "iuf/common.hpp"
#include "iuf/rng.hpp"

namespace iuf {

std::string FlatConfig::canonical_text() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
    return out.str();
}

FlatConfig parse_config_text(const std::string& text) {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string stripped = strip(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: '" + stripped + "'");
        std::string key = strip(stripped.substr(0, eq));
        std::string value = strip(stripped.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has an empty key");
        cfg.kv[key] = value;
    }
    return cfg;
}

FlatConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::uint64_t config_hash(const FlatConfig& cfg) {
    // runtime.* keys steer execution, not results; they stay out of the hash
    std::string text;
    for (const auto& [k, v] : cfg.kv) {
        if (k.rfind("runtime.", 0) == 0) continue;
        text += k + " = " + v + "\n";
    }
    return fnv1a64(text);
}

std::string config_hash_hex(const FlatConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "protocol",
        "seed",
        "data.source",
        "data.mvtec_root",
        "data.objects",
        "data.image_size",
        "data.train_per_object",
        "data.test_normal_per_object",
        "data.test_defective_per_object",
        "model.n_max",
        "model.patch",
        "model.embed_dim",
        "model.latent_channels",
        "model.mlp_hidden",
        "model.target",
        "model.target_dim",
        "train.epochs_per_step",
        "train.batch_size",
        "train.lr",
        "loss.lambda0",
        "loss.lambda1",
        "loss.lambda2",
        "loss.scl_keep_ratio",
        "update.beta",
        "update.kappa",
        "update.retain_mode",
        "ablate.oasa",
        "ablate.scl",
        "ablate.us",
        "eval.smooth_sigma",
        "runtime.threads",
    };
    return keys;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-numeric value: '" + v + "'");
    }
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-integer value: '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-integer value: '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config key '" + key + "' has a non-boolean value: '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

RunConfig RunConfig::from_flat(const FlatConfig& flat) {
    for (const auto& [k, _] : flat.kv) {
        if (!known_keys().count(k)) throw ConfigError("unknown config key: " + k);
    }
    RunConfig rc;
    bool beta_given = false;
    for (const auto& [k, v] : flat.kv) {
        if (k == "protocol") rc.protocol = v;
        else if (k == "seed") rc.seed = parse_u64(k, v);
        else if (k == "data.source") {
            if (v != "synthetic" && v != "mvtec")
                throw ConfigError("config key 'data.source' must be synthetic or mvtec");
            rc.data_source = v;
        } else if (k == "data.mvtec_root") rc.mvtec_root = v;
        else if (k == "data.objects") rc.objects = static_cast<int>(parse_long(k, v));
        else if (k == "data.image_size") rc.model.image_size = static_cast<int>(parse_long(k, v));
        else if (k == "data.train_per_object") rc.train_per_object = static_cast<int>(parse_long(k, v));
        else if (k == "data.test_normal_per_object") rc.test_normal_per_object = static_cast<int>(parse_long(k, v));
        else if (k == "data.test_defective_per_object") rc.test_defective_per_object = static_cast<int>(parse_long(k, v));
        else if (k == "model.n_max") rc.model.n_max = static_cast<int>(parse_long(k, v));
        else if (k == "model.patch") rc.model.patch = static_cast<int>(parse_long(k, v));
        else if (k == "model.embed_dim") rc.model.embed_dim = static_cast<int>(parse_long(k, v));
        else if (k == "model.latent_channels") rc.model.latent_channels = static_cast<int>(parse_long(k, v));
        else if (k == "model.mlp_hidden") rc.model.mlp_hidden = static_cast<int>(parse_long(k, v));
        else if (k == "model.target") {
            if (v == "features") rc.model.target = ModelConfig::Target::features;
            else if (v == "pixels") rc.model.target = ModelConfig::Target::pixels;
            else throw ConfigError("config key 'model.target' must be features or pixels");
        } else if (k == "model.target_dim") rc.model.target_dim = static_cast<int>(parse_long(k, v));
        else if (k == "train.epochs_per_step") rc.epochs_per_step = static_cast<int>(parse_long(k, v));
        else if (k == "train.batch_size") rc.batch_size = static_cast<int>(parse_long(k, v));
        else if (k == "train.lr") rc.update.alpha = parse_double(k, v);
        else if (k == "loss.lambda0") rc.loss.lambda0 = parse_double(k, v);
        else if (k == "loss.lambda1") rc.loss.lambda1 = parse_double(k, v);
        else if (k == "loss.lambda2") rc.loss.lambda2 = parse_double(k, v);
        else if (k == "loss.scl_keep_ratio") rc.loss.scl_keep_ratio = parse_double(k, v);
        else if (k == "update.beta") {
            rc.update.beta = parse_double(k, v);
            beta_given = true;
        } else if (k == "update.kappa") rc.update.kappa = parse_double(k, v);
        else if (k == "update.retain_mode") {
            if (v == "pull") rc.update.retain_mode = RetainMode::pull;
            else if (v == "literal") rc.update.retain_mode = RetainMode::literal;
            else throw ConfigError("config key 'update.retain_mode' must be pull or literal");
        } else if (k == "ablate.oasa") rc.ablate_oasa = parse_bool(k, v);
        else if (k == "ablate.scl") rc.ablate_scl = parse_bool(k, v);
        else if (k == "ablate.us") rc.ablate_us = parse_bool(k, v);
        else if (k == "eval.smooth_sigma") rc.smooth_sigma = parse_double(k, v);
        else if (k == "runtime.threads") rc.threads = static_cast<int>(parse_long(k, v));
    }
    // literal retention diverges quickly; default beta differs per mode
    if (!beta_given && rc.update.retain_mode == RetainMode::literal) rc.update.beta = 1e-4;

    if (rc.update.alpha <= 0) throw ConfigError("config key 'train.lr' must be positive");
    if (rc.update.kappa <= 0) throw ConfigError("config key 'update.kappa' must be positive");
    if (rc.update.beta < 0) throw ConfigError("config key 'update.beta' must be nonnegative");
    if (rc.batch_size < 1) throw ConfigError("config key 'train.batch_size' must be >= 1");
    if (rc.epochs_per_step < 1) throw ConfigError("config key 'train.epochs_per_step' must be >= 1");
    if (rc.objects < 1) throw ConfigError("config key 'data.objects' must be >= 1");
    if (rc.threads < 1) throw ConfigError("config key 'runtime.threads' must be >= 1");
    if (rc.loss.lambda0 < 0 || rc.loss.lambda1 < 0 || rc.loss.lambda2 < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (rc.loss.scl_keep_ratio < 0 || rc.loss.scl_keep_ratio >= 1)
        throw ConfigError("config key 'loss.scl_keep_ratio' must be in [0, 1)");
    return rc;
}

FlatConfig RunConfig::to_flat() const {
    FlatConfig f;
    f.set("protocol", protocol);
    f.set("seed", std::to_string(seed));
    f.set("data.source", data_source);
    f.set("data.mvtec_root", mvtec_root);
    f.set("data.objects", std::to_string(objects));
    f.set("data.image_size", std::to_string(model.image_size));
    f.set("data.train_per_object", std::to_string(train_per_object));
    f.set("data.test_normal_per_object", std::to_string(test_normal_per_object));
    f.set("data.test_defective_per_object", std::to_string(test_defective_per_object));
    f.set("model.n_max", std::to_string(model.n_max));
    f.set("model.patch", std::to_string(model.patch));
    f.set("model.embed_dim", std::to_string(model.embed_dim));
    f.set("model.latent_channels", std::to_string(model.latent_channels));
    f.set("model.mlp_hidden", std::to_string(model.mlp_hidden));
    f.set("model.target", model.target == ModelConfig::Target::pixels ? "pixels" : "features");
    f.set("model.target_dim", std::to_string(model.target_dim));
    f.set("train.epochs_per_step", std::to_string(epochs_per_step));
    f.set("train.batch_size", std::to_string(batch_size));
    f.set("train.lr", fmt_double(update.alpha));
    f.set("loss.lambda0", fmt_double(loss.lambda0));
    f.set("loss.lambda1", fmt_double(loss.lambda1));
    f.set("loss.lambda2", fmt_double(loss.lambda2));
    f.set("loss.scl_keep_ratio", fmt_double(loss.scl_keep_ratio));
    f.set("update.beta", fmt_double(update.beta));
    f.set("update.kappa", fmt_double(update.kappa));
    f.set("update.retain_mode", update.retain_mode == RetainMode::pull ? "pull" : "literal");
    f.set("ablate.oasa", ablate_oasa ? "1" : "0");
    f.set("ablate.scl", ablate_scl ? "1" : "0");
    f.set("ablate.us", ablate_us ? "1" : "0");
    f.set("eval.smooth_sigma", fmt_double(smooth_sigma));
    f.set("runtime.threads", std::to_string(threads));
    return f;
}

}  // namespace iuf

#include "iuf.h"

#include <functional>

#include <cstring>
#include <string>

#include "iuf/common.hpp"
#include "iuf/config.hpp"
#include "iuf/trainer.hpp"

struct iuf_config {
    iuf::FlatConfig flat;
    std::string get_scratch;
};

namespace {

thread_local std::string g_last_error;

iuf_status guard(const std::function<void()>& fn) {
    try {
        fn();
        g_last_error.clear();
        return IUF_OK;
    } catch (const iuf::NumericError& e) {
        g_last_error = e.what();
        return IUF_ERR_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return IUF_ERR_CONFIG;
    }
}

}  // namespace

extern "C" {

const char* iuf_version(void) { return iuf::kArtifactVersion; }

const char* iuf_last_error(void) { return g_last_error.c_str(); }

iuf_status iuf_config_create(iuf_config** out) {
    return guard([&]() {
        if (!out) throw iuf::ConfigError("iuf_config_create: out is null");
        *out = new iuf_config{};
    });
}

iuf_status iuf_config_load(const char* path, iuf_config** out) {
    return guard([&]() {
        if (!path || !out) throw iuf::ConfigError("iuf_config_load: null argument");
        iuf::FlatConfig flat = iuf::load_config_file(path);
        (void)iuf::RunConfig::from_flat(flat);  // validate keys now
        *out = new iuf_config{std::move(flat), {}};
    });
}

iuf_status iuf_config_set(iuf_config* cfg, const char* key, const char* value) {
    return guard([&]() {
        if (!cfg || !key || !value) throw iuf::ConfigError("iuf_config_set: null argument");
        iuf::FlatConfig candidate = cfg->flat;
        candidate.set(key, value);
        (void)iuf::RunConfig::from_flat(candidate);  // reject unknown keys / bad values
        cfg->flat = std::move(candidate);
    });
}

iuf_status iuf_config_get(iuf_config* cfg, const char* key, const char** out_value) {
    return guard([&]() {
        if (!cfg || !key || !out_value) throw iuf::ConfigError("iuf_config_get: null argument");
        iuf::FlatConfig resolved = iuf::RunConfig::from_flat(cfg->flat).to_flat();
        auto it = resolved.kv.find(key);
        if (it == resolved.kv.end()) throw iuf::ConfigError(std::string("unknown config key: ") + key);
        cfg->get_scratch = it->second;
        *out_value = cfg->get_scratch.c_str();
    });
}

void iuf_config_destroy(iuf_config* cfg) { delete cfg; }

iuf_status iuf_train(const iuf_config* cfg, const char* out_dir) {
    return guard([&]() {
        if (!cfg || !out_dir) throw iuf::ConfigError("iuf_train: null argument");
        iuf::RunConfig rc = iuf::RunConfig::from_flat(cfg->flat);
        iuf::run_incremental(rc, out_dir);
    });
}

iuf_status iuf_eval_step(const char* run_dir, int step) {
    return guard([&]() {
        if (!run_dir) throw iuf::ConfigError("iuf_eval_step: null argument");
        iuf::reevaluate_step(run_dir, step);
    });
}

iuf_status iuf_report(const char* const* run_dirs, size_t n_runs, char** out_json) {
    return guard([&]() {
        if (!run_dirs || !out_json) throw iuf::ConfigError("iuf_report: null argument");
        std::vector<std::filesystem::path> dirs;
        for (size_t i = 0; i < n_runs; ++i) dirs.emplace_back(run_dirs[i]);
        std::string json = iuf::combine_reports(dirs);
        char* buf = new char[json.size() + 1];
        std::memcpy(buf, json.c_str(), json.size() + 1);
        *out_json = buf;
    });
}

void iuf_string_free(char* s) { delete[] s; }

}  // extern "C"

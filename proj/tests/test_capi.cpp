// Exercises the shared-library surface exactly as an embedding client would.

#include <cassert>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "iuf.h"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

#define CHECK_TRUE(cond)                                                    \
    do {                                                                    \
        if (!(cond)) {                                                      \
            std::printf("FAIL %s:%d: %s\n", __FILE__, __LINE__, #cond);     \
            ++g_failures;                                                   \
        }                                                                   \
    } while (0)

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

void set_tiny(iuf_config* cfg) {
    struct KV {
        const char* k;
        const char* v;
    };
    const KV pairs[] = {
        {"protocol", "2-1"},          {"data.objects", "3"},
        {"seed", "7"},                {"train.epochs_per_step", "2"},
        {"data.train_per_object", "6"}, {"data.test_normal_per_object", "2"},
        {"data.test_defective_per_object", "2"}, {"train.batch_size", "4"},
        {"data.image_size", "32"},    {"model.embed_dim", "16"},
        {"model.latent_channels", "12"}, {"model.mlp_hidden", "24"},
        {"model.target_dim", "20"},   {"model.n_max", "8"},
        {"runtime.threads", "2"},
    };
    for (const KV& kv : pairs) CHECK_TRUE(iuf_config_set(cfg, kv.k, kv.v) == IUF_OK);
}

}  // namespace

int main() {
    CHECK_TRUE(std::strlen(iuf_version()) > 0);

    // config handle basics
    iuf_config* cfg = nullptr;
    CHECK_TRUE(iuf_config_create(&cfg) == IUF_OK);
    CHECK_TRUE(iuf_config_set(cfg, "seed", "42") == IUF_OK);
    const char* value = nullptr;
    CHECK_TRUE(iuf_config_get(cfg, "seed", &value) == IUF_OK);
    CHECK_TRUE(value && std::string(value) == "42");
    CHECK_TRUE(iuf_config_get(cfg, "train.lr", &value) == IUF_OK);  // default visible

    // unknown keys and bad values are config errors naming the key
    CHECK_TRUE(iuf_config_set(cfg, "bogus.key", "1") == IUF_ERR_CONFIG);
    CHECK_TRUE(std::strstr(iuf_last_error(), "bogus.key") != nullptr);
    CHECK_TRUE(iuf_config_set(cfg, "train.lr", "banana") == IUF_ERR_CONFIG);
    CHECK_TRUE(std::strstr(iuf_last_error(), "train.lr") != nullptr);

    // train a tiny run through the C surface
    set_tiny(cfg);
    fs::path run_a = fresh_dir("iuf_capi_a");
    CHECK_TRUE(iuf_train(cfg, run_a.string().c_str()) == IUF_OK);
    CHECK_TRUE(fs::exists(run_a / "metrics.csv"));
    CHECK_TRUE(fs::exists(run_a / "manifest.json"));
    CHECK_TRUE(fs::exists(run_a / "step_2" / "checkpoint"));

    // ablation recorded in the manifest
    iuf_config* cfg_ablate = nullptr;
    CHECK_TRUE(iuf_config_create(&cfg_ablate) == IUF_OK);
    set_tiny(cfg_ablate);
    CHECK_TRUE(iuf_config_set(cfg_ablate, "ablate.us", "1") == IUF_OK);
    fs::path run_b = fresh_dir("iuf_capi_b");
    CHECK_TRUE(iuf_train(cfg_ablate, run_b.string().c_str()) == IUF_OK);
    CHECK_TRUE(read_text(run_b / "manifest.json").find("\"us\": true") != std::string::npos);

    // re-evaluation is exact and bounded by the step count
    std::string metrics_before = read_text(run_a / "metrics.csv");
    CHECK_TRUE(iuf_eval_step(run_a.string().c_str(), 2) == IUF_OK);
    CHECK_TRUE(read_text(run_a / "metrics.csv") == metrics_before);
    CHECK_TRUE(iuf_eval_step(run_a.string().c_str(), 99) == IUF_ERR_CONFIG);
    CHECK_TRUE(iuf_eval_step("/nonexistent/run", 1) == IUF_ERR_CONFIG);

    // report: single run then side-by-side, empty list rejected
    const char* single[] = {run_a.c_str()};
    char* json = nullptr;
    CHECK_TRUE(iuf_report(single, 1, &json) == IUF_OK);
    CHECK_TRUE(json && std::strstr(json, "\"acc\"") != nullptr);
    CHECK_TRUE(std::strstr(json, "\"fm\"") != nullptr);
    iuf_string_free(json);

    std::string a_str = run_a.string(), b_str = run_b.string();
    const char* pair[] = {a_str.c_str(), b_str.c_str()};
    json = nullptr;
    CHECK_TRUE(iuf_report(pair, 2, &json) == IUF_OK);
    CHECK_TRUE(json && std::strstr(json, b_str.c_str()) != nullptr);
    iuf_string_free(json);

    json = nullptr;
    CHECK_TRUE(iuf_report(pair, 0, &json) == IUF_ERR_CONFIG);

    // numeric failures surface as exit-code 3 material
    iuf_config* cfg_blow = nullptr;
    CHECK_TRUE(iuf_config_create(&cfg_blow) == IUF_OK);
    set_tiny(cfg_blow);
    CHECK_TRUE(iuf_config_set(cfg_blow, "train.lr", "1e14") == IUF_OK);
    CHECK_TRUE(iuf_config_set(cfg_blow, "train.epochs_per_step", "4") == IUF_OK);
    fs::path run_c = fresh_dir("iuf_capi_c");
    CHECK_TRUE(iuf_train(cfg_blow, run_c.string().c_str()) == IUF_ERR_NUMERIC);

    iuf_config_destroy(cfg);
    iuf_config_destroy(cfg_ablate);
    iuf_config_destroy(cfg_blow);

    if (g_failures == 0) {
        std::printf("c api tests passed\n");
        return 0;
    }
    std::printf("%d c api checks failed\n", g_failures);
    return 1;
}

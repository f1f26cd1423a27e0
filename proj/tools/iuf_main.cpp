// Command-line front end. Everything goes through the C API in iuf.h; this
// binary only parses arguments and renders the report table.

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iuf.h"

namespace {

int fail(iuf_status status) {
    std::fprintf(stderr, "error: %s\n", iuf_last_error());
    return static_cast<int>(status);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

struct ConfigHandle {
    iuf_config* cfg = nullptr;
    ~ConfigHandle() { iuf_config_destroy(cfg); }
};

std::string fmt_metric(const nlohmann::json& v) {
    if (v.is_null()) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v.get<double>());
    return buf;
}

void print_report_table(const nlohmann::json& doc) {
    std::printf("protocol: %s\n\n", doc.at("protocol").get<std::string>().c_str());
    std::printf("%-28s %-6s %-12s %-12s %-12s %-12s\n", "run", "seed", "pixel ACC^", "pixel FM v",
                "image ACC^", "image FM v");
    for (const auto& run : doc.at("runs")) {
        std::string name = run.at("dir").get<std::string>();
        if (auto pos = name.find_last_of('/'); pos != std::string::npos && pos + 1 < name.size())
            name = name.substr(pos + 1);
        const auto& ab = run.at("ablations");
        std::string tags;
        if (ab.at("oasa").get<bool>()) tags += " w/o OASA";
        if (ab.at("scl").get<bool>()) tags += " w/o SCL";
        if (ab.at("us").get<bool>()) tags += " w/o US";
        if (!tags.empty()) name += " (" + tags.substr(1) + ")";
        const auto& px = run.at("metrics").at("pixel");
        const auto& im = run.at("metrics").at("image");
        std::printf("%-28s %-6llu %-12s %-12s %-12s %-12s\n", name.c_str(),
                    static_cast<unsigned long long>(run.at("seed").get<std::uint64_t>()),
                    fmt_metric(px.at("acc")).c_str(), fmt_metric(px.at("fm")).c_str(),
                    fmt_metric(im.at("acc")).c_str(), fmt_metric(im.at("fm")).c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"incremental unified small-defect inspection"};
    app.set_version_flag("--version", iuf_version());
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "run the incremental protocol");
    std::string config_path, protocol, seed, ablate_list, out_dir;
    std::vector<std::string> overrides;
    train->add_option("--config", config_path, "config file (key = value lines)");
    train->add_option("--protocol", protocol, "protocol override, e.g. 3-1 or 10-1x5");
    train->add_option("--seed", seed, "master seed override");
    train->add_option("--ablate", ablate_list, "comma list of oasa,scl,us");
    train->add_option("--set", overrides, "extra key=value overrides")->take_all();
    train->add_option("--out", out_dir, "output run directory (default $IUF_OUT/run)");

    // eval
    auto* eval = app.add_subcommand("eval", "re-evaluate a finished step");
    std::string run_dir;
    int step = 0;
    eval->add_option("--run", run_dir, "run directory")->required();
    eval->add_option("--step", step, "step index (1-based)")->required();

    // report
    auto* report = app.add_subcommand("report", "ACC/FM summary across runs");
    std::vector<std::string> run_dirs;
    std::string json_out = "iuf_report.json";
    report->add_option("runs", run_dirs, "run directories");
    report->add_option("--json-out", json_out, "summary JSON path (default iuf_report.json)");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        ConfigHandle h;
        iuf_status st = config_path.empty() ? iuf_config_create(&h.cfg) : iuf_config_load(config_path.c_str(), &h.cfg);
        if (st != IUF_OK) return fail(st);
        if (!protocol.empty() && (st = iuf_config_set(h.cfg, "protocol", protocol.c_str())) != IUF_OK)
            return fail(st);
        if (!seed.empty() && (st = iuf_config_set(h.cfg, "seed", seed.c_str())) != IUF_OK) return fail(st);
        for (const std::string& flag : split_csv(ablate_list)) {
            if (flag != "oasa" && flag != "scl" && flag != "us") {
                std::fprintf(stderr, "error: unknown ablation flag: %s\n", flag.c_str());
                return 2;
            }
            std::string key = "ablate." + flag;
            if ((st = iuf_config_set(h.cfg, key.c_str(), "1")) != IUF_OK) return fail(st);
        }
        for (const std::string& kv : overrides) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) {
                std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
                return 2;
            }
            std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
            if ((st = iuf_config_set(h.cfg, key.c_str(), value.c_str())) != IUF_OK) return fail(st);
        }
        if (out_dir.empty()) {
            const char* root = std::getenv("IUF_OUT");
            out_dir = std::string(root ? root : ".") + "/run";
        }
        if ((st = iuf_train(h.cfg, out_dir.c_str())) != IUF_OK) return fail(st);
        std::printf("run written to %s\n", out_dir.c_str());
        return 0;
    }

    if (eval->parsed()) {
        iuf_status st = iuf_eval_step(run_dir.c_str(), step);
        if (st != IUF_OK) return fail(st);
        std::printf("step %d re-evaluated in %s\n", step, run_dir.c_str());
        return 0;
    }

    if (report->parsed()) {
        if (run_dirs.empty()) {
            std::fprintf(stderr, "error: report needs at least one run directory\n");
            return 2;
        }
        std::vector<const char*> dirs;
        for (const auto& d : run_dirs) dirs.push_back(d.c_str());
        char* json = nullptr;
        iuf_status st = iuf_report(dirs.data(), dirs.size(), &json);
        if (st != IUF_OK) return fail(st);
        nlohmann::json doc = nlohmann::json::parse(json);
        iuf_string_free(json);
        print_report_table(doc);
        if (!json_out.empty()) {
            FILE* f = std::fopen(json_out.c_str(), "w");
            if (!f) {
                std::fprintf(stderr, "error: cannot write %s\n", json_out.c_str());
                return 2;
            }
            std::fputs(doc.dump(2).c_str(), f);
            std::fputc('\n', f);
            std::fclose(f);
        }
        return 0;
    }
    return 0;
}

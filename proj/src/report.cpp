#include "iuf/report.hpp"

#include <ctime>
#include <fstream>

#include <json.hpp>

#include "iuf/common.hpp"
#include "iuf/eval.hpp"
#include "iuf/trainer.hpp"

namespace iuf {

namespace {

using nlohmann::json;

std::string iso_utc(std::chrono::system_clock::time_point tp) {
    std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json matrix_json(const std::vector<std::vector<std::optional<double>>>& m) {
    json rows = json::array();
    for (const auto& row : m) {
        json r = json::array();
        for (const auto& cell : row) {
            if (cell) r.push_back(*cell);
            else r.push_back(nullptr);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

json level_metrics(const ScoreMatrix& scores, Level level) {
    json out;
    const auto& m = scores.at(level);
    out["acc"] = acc(m.back());
    if (scores.n_steps() >= 2) out["fm"] = fm(scores, level);
    else out["fm"] = nullptr;
    return out;
}

}  // namespace

void write_report_json(const std::filesystem::path& path, const RunConfig& cfg, const RunResult& result,
                       const std::vector<std::string>& object_names) {
    json doc;
    doc["artifact_version"] = kArtifactVersion;
    doc["protocol"] = cfg.protocol;
    doc["seed"] = cfg.seed;
    doc["objects"] = object_names;
    doc["ablations"] = {{"oasa", cfg.ablate_oasa}, {"scl", cfg.ablate_scl}, {"us", cfg.ablate_us}};

    json steps = json::array();
    for (const StepRecord& rec : result.steps) {
        steps.push_back({{"index", rec.step_index},
                         {"objects", rec.object_ids},
                         {"final_loss",
                          {{"l1", rec.final_l1}, {"ce", rec.final_ce}, {"scl", rec.final_scl}, {"total", rec.final_total}}},
                         {"reinforced_used", rec.reinforced_used},
                         {"checkpoint", rec.checkpoint_path},
                         {"basis", rec.basis_path},
                         {"wall_seconds", rec.wall_seconds}});
    }
    doc["steps"] = std::move(steps);
    doc["score_matrix"] = {{"pixel", matrix_json(result.scores.pixel)}, {"image", matrix_json(result.scores.image)}};
    doc["metrics"] = {{"pixel", level_metrics(result.scores, Level::pixel)},
                      {"image", level_metrics(result.scores, Level::image)}};

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report: " + path.string());
    out << doc.dump(2) << "\n";
}

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::string& config_hash_hex,
                    std::chrono::system_clock::time_point started,
                    const std::vector<std::string>& files) {
    json doc;
    doc["artifact_version"] = kArtifactVersion;
    doc["config_hash"] = config_hash_hex;
    doc["seed"] = cfg.seed;
    doc["seed_scheme"] = "splitmix-fnv1a/1";
    doc["protocol"] = cfg.protocol;
    doc["ablations"] = {{"oasa", cfg.ablate_oasa}, {"scl", cfg.ablate_scl}, {"us", cfg.ablate_us}};
    doc["started_utc"] = iso_utc(started);
    doc["finished_utc"] = iso_utc(std::chrono::system_clock::now());
    std::vector<std::string> all_files = files;
    all_files.push_back("manifest.json");
    std::sort(all_files.begin(), all_files.end());
    doc["files"] = all_files;

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write manifest: " + path.string());
    out << doc.dump(2) << "\n";
}

std::string combine_reports(const std::vector<std::filesystem::path>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("no run directories given");
    json combined;
    combined["runs"] = json::array();
    std::string protocol;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir / "report.json");
        if (!in) throw ConfigError("missing report.json in " + dir.string());
        json doc = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (doc.is_discarded()) throw ConfigError("malformed report.json in " + dir.string());
        std::string p = doc.at("protocol").get<std::string>();
        if (protocol.empty()) protocol = p;
        else if (p != protocol)
            throw ConfigError("inconsistent protocols across runs: '" + protocol + "' vs '" + p + "' in " +
                              dir.string());
        json entry;
        entry["dir"] = dir.string();
        entry["seed"] = doc.at("seed");
        entry["ablations"] = doc.at("ablations");
        entry["metrics"] = doc.at("metrics");
        combined["runs"].push_back(std::move(entry));
    }
    combined["protocol"] = protocol;
    return combined.dump(2);
}

}  // namespace iuf

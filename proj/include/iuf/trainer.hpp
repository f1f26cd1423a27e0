#ifndef IUF_TRAINER_HPP
#define IUF_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "iuf/config.hpp"
#include "iuf/data_synth.hpp"
#include "iuf/eval.hpp"
#include "iuf/losses.hpp"

namespace iuf {

struct StepRecord {
    int step_index = 0;  // 1-based
    std::vector<int> object_ids;
    double final_l1 = 0.0, final_ce = 0.0, final_scl = 0.0, final_total = 0.0;
    bool reinforced_used = false;  // channel-projected updates active this step
    std::string checkpoint_path;   // relative to the run directory
    std::string basis_path;
    double wall_seconds = 0.0;
};

struct RunResult {
    std::vector<StepRecord> steps;
    ScoreMatrix scores;  // [step][object id]
    std::filesystem::path run_dir;
};

// Test instrumentation; every callback is optional.
struct TrainerHooks {
    std::function<void(int step, const Sample&)> on_train_sample;
    std::function<void(int step, int epoch, int iter, const TotalLossValue&)> on_iteration;
};

struct DatasetBundle {
    std::vector<ObjectDataset> objects;
    std::vector<std::string> names;
};

DatasetBundle build_dataset(const RunConfig& cfg);

// Returns a config with one component disabled: "oasa" pins gates to 1,
// "scl" zeroes lambda2, "us" replaces the reinforced update with plain
// descent at every step. Idempotent.
RunConfig ablate(RunConfig cfg, const std::string& which);

// Runs the object-incremental protocol end to end and writes the run
// directory (config.snapshot, step_<n>/{checkpoint,basis}, metrics.csv,
// train_log.csv, report.json, heatmaps/, manifest.json).
RunResult run_incremental(const RunConfig& cfg, const std::filesystem::path& out_dir,
                          const TrainerHooks* hooks = nullptr);

// Re-evaluates a finished step from its checkpoint: rewrites that step's
// metrics.csv rows and regenerates heatmaps for the objects seen by then.
void reevaluate_step(const std::filesystem::path& run_dir, int step_index);

// Combined ACC/FM summary across runs; throws ConfigError when run protocols
// disagree. Returns a JSON document as text.
std::string combine_reports(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace iuf

#endif

#ifndef IUF_EVAL_HPP
#define IUF_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iuf/data_synth.hpp"
#include "iuf/linalg.hpp"
#include "iuf/model.hpp"

namespace iuf {

// Probability a random positive outscores a random negative, ties counted 1/2.
// Throws NumericError when only one class is present.
double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

enum class Level { pixel, image };

// A[b][i]: AUROC of task i measured after step b. A cell exists iff task i
// was introduced at or before step b.
struct ScoreMatrix {
    std::vector<std::vector<std::optional<double>>> pixel;  // [step][task]
    std::vector<std::vector<std::optional<double>>> image;

    int n_steps() const { return static_cast<int>(pixel.size()); }
    const std::vector<std::vector<std::optional<double>>>& at(Level level) const {
        return level == Level::pixel ? pixel : image;
    }
};

// Mean of the final row. Throws ContractError when a task cell is absent.
double acc(const std::vector<std::optional<double>>& final_row);

// Mean over tasks introduced before the final step of
// max_b (A[b][i] - A[final][i]). Negative output is legal.
double fm(const ScoreMatrix& matrix, Level level);

struct ObjectEval {
    int object_id = 0;
    std::optional<double> pixel_auroc;
    std::optional<double> image_auroc;
};

struct EvalConfig {
    double smooth_sigma = 0.5;
};

// Scores every test sample of each seen object through
// discriminate -> reconstruct -> anomaly_map (gates always come from the test
// image itself). Objects without both labels in their test split come back
// with absent cells and a warning on the diagnostic stream.
std::vector<ObjectEval> evaluate_step(const Model& model, const std::vector<int>& seen_objects,
                                      const std::vector<const ObjectDataset*>& datasets,
                                      const EvalConfig& cfg, int threads = 1);

// Min-max normalized scores through a blue->red colormap, written as 8-bit PNG.
// A constant map normalizes to all zeros.
void export_heatmap(const Mat& pixel_scores, const std::filesystem::path& path);

// t in [0,1] -> (r, g, b); t=0 is the bluest entry, t=1 the reddest.
void heatmap_color(double t, std::uint8_t rgb[3]);

}  // namespace iuf

#endif

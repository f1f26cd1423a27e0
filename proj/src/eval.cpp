#include "iuf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "iuf/common.hpp"
#include "iuf/image_io.hpp"

namespace iuf {

double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) throw ContractError("auroc: size mismatch");
    size_t n_pos = 0;
    for (auto l : labels) n_pos += l ? 1 : 0;
    const size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NumericError("auroc: needs both classes");

    // rank statistic with average ranks for ties
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double acc(const std::vector<std::optional<double>>& final_row) {
    if (final_row.empty()) throw ContractError("acc: empty row");
    double sum = 0.0;
    for (const auto& v : final_row) {
        if (!v) throw ContractError("acc: incomplete final row");
        sum += *v;
    }
    return sum / static_cast<double>(final_row.size());
}

double fm(const ScoreMatrix& matrix, Level level) {
    const auto& a = matrix.at(level);
    const int n_steps = matrix.n_steps();
    if (n_steps < 2) throw NumericError("fm: undefined for fewer than 2 steps");
    const auto& final_row = a[n_steps - 1];
    const auto n_tasks = static_cast<int>(final_row.size());

    double sum = 0.0;
    int counted = 0;
    for (int task = 0; task < n_tasks; ++task) {
        // tasks introduced before the final step: present in some earlier row
        double best_prior = -1.0;
        bool seen_before = false;
        for (int b = 0; b < n_steps - 1; ++b) {
            if (task < static_cast<int>(a[b].size()) && a[b][task]) {
                seen_before = true;
                best_prior = std::max(best_prior, *a[b][task]);
            }
        }
        if (!seen_before) continue;
        if (!final_row[task]) throw ContractError("fm: final row missing a seen task");
        sum += best_prior - *final_row[task];
        ++counted;
    }
    if (counted == 0) throw NumericError("fm: no task was introduced before the final step");
    return sum / counted;
}

namespace {

ObjectEval evaluate_object(const Model& model, int object_id, const ObjectDataset& ds,
                           const EvalConfig& cfg) {
    ObjectEval out;
    out.object_id = object_id;

    bool has_normal = false, has_defective = false;
    for (const Sample& s : ds.test) {
        (s.label == Label::defective ? has_defective : has_normal) = true;
    }
    if (!has_normal || !has_defective) {
        std::cerr << "warning: object " << object_id
                  << " lacks a two-class test split; AUROC cells marked absent\n";
        return out;
    }

    std::vector<double> pixel_scores, image_scores;
    std::vector<std::uint8_t> pixel_labels, image_labels;
    for (const Sample& s : ds.test) {
        DiscriminateResult disc = model.discriminate(s.image);
        ReconstructResult rec = model.reconstruct(s.image, disc.gates);
        Mat target = model.target_tokens(s.image);
        AnomalyMap am = anomaly_map(target, rec.x_hat.values, rec.x_hat.grid_h, rec.x_hat.grid_w,
                                    s.image.height, s.image.width, cfg.smooth_sigma);
        image_scores.push_back(am.image_score);
        image_labels.push_back(s.label == Label::defective ? 1 : 0);
        for (int y = 0; y < s.mask.height; ++y)
            for (int x = 0; x < s.mask.width; ++x) {
                pixel_scores.push_back(am.pixel_scores(y, x));
                pixel_labels.push_back(s.mask.at(y, x));
            }
    }

    out.image_auroc = auroc(image_scores, image_labels);
    // a defective sample guarantees positive pixels; negatives always exist
    out.pixel_auroc = auroc(pixel_scores, pixel_labels);
    return out;
}

}  // namespace

std::vector<ObjectEval> evaluate_step(const Model& model, const std::vector<int>& seen_objects,
                                      const std::vector<const ObjectDataset*>& datasets,
                                      const EvalConfig& cfg, int threads) {
    std::vector<ObjectEval> results(seen_objects.size());
    auto work = [&](size_t idx) {
        results[idx] = evaluate_object(model, seen_objects[idx], *datasets[idx], cfg);
    };
    if (threads <= 1 || seen_objects.size() <= 1) {
        for (size_t i = 0; i < seen_objects.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t n = seen_objects.size();
        std::size_t t_count = std::min<std::size_t>(threads, n);
        for (size_t t = 0; t < t_count; ++t) {
            pool.emplace_back([&, t]() {
                for (size_t i = t; i < n; i += t_count) work(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    return results;
}

void heatmap_color(double t, std::uint8_t rgb[3]) {
    // five-stop blue -> cyan -> green -> yellow -> red ramp
    static const double stops[5][3] = {
        {0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {0.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
    t = std::clamp(t, 0.0, 1.0);
    double pos = t * 4.0;
    int seg = std::min(3, static_cast<int>(pos));
    double f = pos - seg;
    for (int c = 0; c < 3; ++c) {
        double v = stops[seg][c] * (1.0 - f) + stops[seg + 1][c] * f;
        rgb[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
}

void export_heatmap(const Mat& pixel_scores, const std::filesystem::path& path) {
    if (!pixel_scores.allFinite()) throw NumericError("export_heatmap: non-finite scores");
    const double lo = pixel_scores.minCoeff();
    const double hi = pixel_scores.maxCoeff();
    const double range = hi - lo;

    Rgb8 img(static_cast<int>(pixel_scores.rows()), static_cast<int>(pixel_scores.cols()));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double t = range > 0.0 ? (pixel_scores(y, x) - lo) / range : 0.0;
            heatmap_color(t, &img.data[(static_cast<size_t>(y) * img.width + x) * 3]);
        }
    std::filesystem::create_directories(path.parent_path());
    write_png_rgb8(path, img);
}

}  // namespace iuf

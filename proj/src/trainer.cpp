#include "iuf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "iuf/checkpoint.hpp"
#include "iuf/common.hpp"
#include "iuf/optimizer.hpp"
#include "iuf/report.hpp"
#include "iuf/rng.hpp"

namespace iuf {

namespace {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int t_count = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(t_count);
    for (int t = 0; t < t_count; ++t) {
        pool.emplace_back([&, t]() {
            for (int i = t; i < n; i += t_count) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

GateFeatures unit_gates(const ModelConfig& cfg) {
    GateFeatures g;
    for (int i = 0; i < ModelConfig::kGatedLayers; ++i) g.per_layer.push_back(Mat::Ones(1, cfg.embed_dim));
    return g;
}

// per-sample aggregated latent row (mean over tokens)
Vec latent_row(const Mat& latent_tokens) {
    return latent_tokens.colwise().mean().transpose();
}

std::string step_dir_name(int step) { return "step_" + std::to_string(step); }

}  // namespace

DatasetBundle build_dataset(const RunConfig& cfg) {
    DatasetBundle bundle;
    if (cfg.data_source == "mvtec") {
        if (cfg.mvtec_root.empty()) throw ConfigError("data.mvtec_root is required for data.source=mvtec");
        MvtecDataset ds = load_mvtec_layout(cfg.mvtec_root, cfg.model.image_size);
        bundle.objects = std::move(ds.objects);
        bundle.names = std::move(ds.object_names);
    } else {
        std::uint64_t data_seed = derive_seed(cfg.seed, "data");
        for (int id = 0; id < cfg.objects; ++id) {
            ObjectSpec spec = default_object_spec(id, data_seed, cfg.model.image_size);
            bundle.objects.push_back(generate_dataset(spec, cfg.train_per_object,
                                                      cfg.test_normal_per_object,
                                                      cfg.test_defective_per_object));
            bundle.names.push_back("object_" + std::to_string(id));
        }
    }
    return bundle;
}

RunConfig ablate(RunConfig cfg, const std::string& which) {
    if (which == "oasa") {
        cfg.ablate_oasa = true;
    } else if (which == "scl") {
        cfg.ablate_scl = true;
        cfg.loss.lambda2 = 0.0;
    } else if (which == "us") {
        cfg.ablate_us = true;
    } else {
        throw ConfigError("unknown ablation flag: " + which + " (expected oasa, scl or us)");
    }
    return cfg;
}

namespace {

struct MetricsRow {
    int step;
    int object_id;
    std::optional<double> pixel;
    std::optional<double> image;
};

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", *v);
    return buf;
}

std::string format_metrics_row(const MetricsRow& r) {
    return std::to_string(r.step) + "," + std::to_string(r.object_id) + "," + format_metric(r.pixel) +
           "," + format_metric(r.image) + "\n";
}

class RunWriter {
public:
    explicit RunWriter(std::filesystem::path root) : root_(std::move(root)) {
        std::filesystem::create_directories(root_);
    }

    std::filesystem::path abs(const std::string& rel) {
        std::filesystem::path p = root_ / rel;
        std::filesystem::create_directories(p.parent_path());
        note(rel);
        return p;
    }

    void note(const std::string& rel) {
        if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
    }

    std::vector<std::string> sorted_files() const {
        std::vector<std::string> out = files_;
        std::sort(out.begin(), out.end());
        return out;
    }

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::vector<std::string> files_;
};

struct StepContext {
    std::vector<const Sample*> samples;
    std::vector<const Mat*> targets;
};

void write_heatmaps(const Model& model, const std::vector<int>& seen, const DatasetBundle& data,
                    double smooth_sigma, bool oasa_enabled, RunWriter& writer) {
    for (int id : seen) {
        const ObjectDataset& ds = data.objects[id];
        for (size_t k = 0; k < ds.test.size(); ++k) {
            const Sample& s = ds.test[k];
            GateFeatures gates =
                oasa_enabled ? model.discriminate(s.image).gates : unit_gates(model.config());
            ReconstructResult rec = model.reconstruct(s.image, gates);
            Mat target = model.target_tokens(s.image);
            AnomalyMap am = anomaly_map(target, rec.x_hat.values, rec.x_hat.grid_h, rec.x_hat.grid_w,
                                        s.image.height, s.image.width, smooth_sigma);
            std::string rel = "heatmaps/object_" + std::to_string(id) + "/test_" + std::to_string(k) + ".png";
            export_heatmap(am.pixel_scores, writer.abs(rel));
        }
    }
}

std::vector<ObjectEval> evaluate_seen(const Model& model, const std::vector<int>& seen,
                                      const DatasetBundle& data, const RunConfig& cfg) {
    std::vector<const ObjectDataset*> sets;
    sets.reserve(seen.size());
    for (int id : seen) sets.push_back(&data.objects[id]);
    EvalConfig ecfg;
    ecfg.smooth_sigma = cfg.smooth_sigma;
    return evaluate_step(model, seen, sets, ecfg, cfg.threads);
}

}  // namespace

RunResult run_incremental(const RunConfig& cfg, const std::filesystem::path& out_dir,
                          const TrainerHooks* hooks) {
    const auto started = std::chrono::system_clock::now();

    DatasetBundle data = build_dataset(cfg);
    const int n_objects = static_cast<int>(data.objects.size());
    if (cfg.data_source == "synthetic" && n_objects != cfg.objects)
        throw ConfigError("internal: dataset object count mismatch");
    if (n_objects > cfg.model.n_max)
        throw ConfigError("dataset has " + std::to_string(n_objects) + " objects but model.n_max is " +
                          std::to_string(cfg.model.n_max));
    StepPlan plan = parse_protocol(cfg.protocol, n_objects);

    Model model(cfg.model, derive_seed(cfg.seed, "model"));
    const FlatConfig flat = cfg.to_flat();
    const std::string hash_hex = config_hash_hex(flat);

    RunWriter writer(out_dir);
    {
        std::ofstream snap(writer.abs("config.snapshot"));
        snap << flat.canonical_text();
    }
    std::ofstream train_log(writer.abs("train_log.csv"));
    train_log << "step,epoch,iter,l1,ce,scl,total,scl_skipped\n";
    std::vector<MetricsRow> metrics_rows;

    LossWeights weights = cfg.loss;
    if (cfg.ablate_scl) weights.lambda2 = 0.0;
    const bool oasa_enabled = !cfg.ablate_oasa;

    RunResult result;
    result.run_dir = out_dir;
    SemanticBasis basis;
    bool have_basis = false;

    const int grid = cfg.model.grid();
    std::vector<ForwardCache> caches(cfg.batch_size);
    std::vector<std::vector<double>> slot_grads(cfg.batch_size);
    std::vector<double> grad(model.params().size(), 0.0);

    std::vector<int> seen;
    for (size_t step_i = 0; step_i < plan.steps.size(); ++step_i) {
        const int step = static_cast<int>(step_i) + 1;
        const auto step_start = std::chrono::steady_clock::now();
        const bool use_reinforced = !cfg.ablate_us && have_basis;

        StepContext ctx;
        std::vector<Mat> target_store;
        for (int id : plan.steps[step_i]) {
            for (const Sample& s : data.objects[id].train) {
                if (s.label != Label::normal)
                    throw ContractError("training split contains a defective sample");
                ctx.samples.push_back(&s);
            }
        }
        target_store.reserve(ctx.samples.size());
        for (const Sample* s : ctx.samples) target_store.push_back(model.target_tokens(s->image));
        for (const Mat& t : target_store) ctx.targets.push_back(&t);

        const auto n_samples = static_cast<int>(ctx.samples.size());
        if (n_samples == 0) throw ConfigError("step " + std::to_string(step) + " has no training samples");

        TotalLossValue last_loss;
        int iter = 0;
        for (int epoch = 1; epoch <= cfg.epochs_per_step; ++epoch) {
            std::vector<int> order(n_samples);
            std::iota(order.begin(), order.end(), 0);
            Rng shuffle_rng(derive_seed(cfg.seed, "shuffle.s" + std::to_string(step) + ".e" + std::to_string(epoch)));
            for (int i = n_samples - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

            for (int b0 = 0; b0 < n_samples; b0 += cfg.batch_size) {
                const int bc = std::min(cfg.batch_size, n_samples - b0);
                if (hooks && hooks->on_train_sample)
                    for (int i = 0; i < bc; ++i) hooks->on_train_sample(step, *ctx.samples[order[b0 + i]]);

                parallel_for(bc, cfg.threads, [&](int i) {
                    model.forward(ctx.samples[order[b0 + i]]->image, oasa_enabled, caches[i]);
                });

                std::vector<Mat> x_hat(bc), targets(bc);
                Mat logits(bc, cfg.model.n_max);
                std::vector<int> labels(bc);
                Latent latent(bc, cfg.model.latent_channels, grid, grid);
                for (int i = 0; i < bc; ++i) {
                    x_hat[i] = caches[i].x_hat;
                    targets[i] = *ctx.targets[order[b0 + i]];
                    logits.row(i) = caches[i].disc.logits.transpose();
                    labels[i] = ctx.samples[order[b0 + i]]->object_id;
                    const Mat& z = caches[i].z_latent;
                    for (int c = 0; c < cfg.model.latent_channels; ++c)
                        for (int y = 0; y < grid; ++y)
                            for (int x = 0; x < grid; ++x) latent.at(i, c, y, x) = z(y * grid + x, c);
                }

                TotalLossGrads lgrads;
                TotalLossValue v;
                try {
                    v = total_loss(x_hat, targets, logits, labels, latent, weights, &lgrads);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                                       ", iteration " + std::to_string(iter));
                }
                if (!std::isfinite(v.total))
                    throw NumericError("non-finite loss at step " + std::to_string(step) + ", iteration " +
                                       std::to_string(iter));
                last_loss = v;
                train_log << step << "," << epoch << "," << iter << "," << v.l1 << "," << v.ce << ","
                          << v.scl << "," << v.total << "," << (v.scl_skipped ? 1 : 0) << "\n";
                if (hooks && hooks->on_iteration) hooks->on_iteration(step, epoch, iter, v);

                parallel_for(bc, cfg.threads, [&](int i) {
                    slot_grads[i].assign(model.params().size(), 0.0);
                    Mat d_latent_tokens(grid * grid, cfg.model.latent_channels);
                    for (int c = 0; c < cfg.model.latent_channels; ++c)
                        for (int y = 0; y < grid; ++y)
                            for (int x = 0; x < grid; ++x)
                                d_latent_tokens(y * grid + x, c) = lgrads.d_latent.at(i, c, y, x);
                    model.backward(caches[i], lgrads.d_x_hat[i], lgrads.d_logits.row(i).transpose(),
                                   d_latent_tokens, slot_grads[i]);
                });

                std::fill(grad.begin(), grad.end(), 0.0);
                for (int i = 0; i < bc; ++i)
                    for (size_t j = 0; j < grad.size(); ++j) grad[j] += slot_grads[i][j];

                apply_update(model, grad, use_reinforced ? &basis : nullptr, cfg.update);
                ++iter;
            }
        }

        // Step boundary: snap to float32 so evaluation matches a reloaded
        // checkpoint bit for bit, then capture the semantic memory.
        model.round_params_to_f32();

        Mat rows(n_samples, cfg.model.latent_channels);
        for (int i = 0; i < n_samples; ++i) {
            GateFeatures gates = oasa_enabled ? model.discriminate(ctx.samples[i]->image).gates
                                              : unit_gates(cfg.model);
            rows.row(i) = latent_row(model.reconstruct(ctx.samples[i]->image, gates).latent_tokens).transpose();
        }
        basis = capture_basis(rows, have_basis ? &basis : nullptr, model.params(), cfg.model.latent_channels);
        have_basis = true;

        StepRecord rec;
        rec.step_index = step;
        rec.object_ids = plan.steps[step_i];
        rec.final_l1 = last_loss.l1;
        rec.final_ce = last_loss.ce;
        rec.final_scl = last_loss.scl;
        rec.final_total = last_loss.total;
        rec.reinforced_used = use_reinforced;
        rec.checkpoint_path = step_dir_name(step) + "/checkpoint";
        rec.basis_path = step_dir_name(step) + "/basis";
        save_checkpoint(writer.abs(rec.checkpoint_path), model, hash_hex, step);
        save_basis(writer.abs(rec.basis_path), basis, hash_hex, step);

        for (int id : plan.steps[step_i]) seen.push_back(id);
        std::sort(seen.begin(), seen.end());

        std::vector<ObjectEval> evals = evaluate_seen(model, seen, data, cfg);
        std::vector<std::optional<double>> pixel_row(n_objects), image_row(n_objects);
        for (const ObjectEval& e : evals) {
            pixel_row[e.object_id] = e.pixel_auroc;
            image_row[e.object_id] = e.image_auroc;
            metrics_rows.push_back({step, e.object_id, e.pixel_auroc, e.image_auroc});
        }
        result.scores.pixel.push_back(std::move(pixel_row));
        result.scores.image.push_back(std::move(image_row));

        if (step_i + 1 == plan.steps.size())
            write_heatmaps(model, seen, data, cfg.smooth_sigma, oasa_enabled, writer);

        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - step_start).count();
        result.steps.push_back(std::move(rec));
    }

    {
        std::ofstream metrics(writer.abs("metrics.csv"));
        metrics << "step,object_id,pixel_auroc,image_auroc\n";
        for (const MetricsRow& r : metrics_rows) metrics << format_metrics_row(r);
    }
    train_log.close();

    write_report_json(writer.abs("report.json"), cfg, result, data.names);
    write_manifest(writer.abs("manifest.json"), cfg, hash_hex, started, writer.sorted_files());
    return result;
}

void reevaluate_step(const std::filesystem::path& run_dir, int step_index) {
    RunConfig cfg = RunConfig::from_flat(load_config_file(run_dir / "config.snapshot"));
    DatasetBundle data = build_dataset(cfg);
    StepPlan plan = parse_protocol(cfg.protocol, static_cast<int>(data.objects.size()));
    if (step_index < 1 || step_index > static_cast<int>(plan.steps.size()))
        throw ConfigError("step " + std::to_string(step_index) + " is outside the run's " +
                          std::to_string(plan.steps.size()) + " steps");

    Model model(cfg.model, derive_seed(cfg.seed, "model"));
    const std::string hash_hex = config_hash_hex(cfg.to_flat());
    load_checkpoint(run_dir / step_dir_name(step_index) / "checkpoint", model, hash_hex);

    std::vector<int> seen;
    for (int i = 0; i < step_index; ++i)
        for (int id : plan.steps[i]) seen.push_back(id);
    std::sort(seen.begin(), seen.end());

    std::vector<ObjectEval> evals = evaluate_seen(model, seen, data, cfg);

    // splice this step's rows into metrics.csv, leaving other rows untouched
    std::ifstream in(run_dir / "metrics.csv");
    if (!in) throw ConfigError("missing metrics.csv in " + run_dir.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();

    const std::string prefix = std::to_string(step_index) + ",";
    std::ofstream out(run_dir / "metrics.csv");
    bool replaced = false;
    for (const std::string& l : lines) {
        if (l.rfind(prefix, 0) == 0) {
            if (!replaced) {
                for (const ObjectEval& e : evals)
                    out << format_metrics_row({step_index, e.object_id, e.pixel_auroc, e.image_auroc});
                replaced = true;
            }
            continue;
        }
        out << l << "\n";
    }
    if (!replaced) {
        for (const ObjectEval& e : evals)
            out << format_metrics_row({step_index, e.object_id, e.pixel_auroc, e.image_auroc});
    }

    RunWriter writer(run_dir);
    write_heatmaps(model, seen, data, cfg.smooth_sigma, !cfg.ablate_oasa, writer);
}

}  // namespace iuf

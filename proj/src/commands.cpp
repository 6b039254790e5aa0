#include "palora/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "palora/analysis.hpp"
#include "palora/io.hpp"
#include "palora/rng.hpp"

namespace palora::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hash8(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf).substr(0, 8);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    io::write_file(path, text);
}

struct SplitData {
    data::Dataset d_t;
    data::Dataset d_val;
    data::Dataset test;
};

SplitData make_splits(const ExperimentConfig& config) {
    const DataConfig& dc = need_data(config);
    const DeriveConfig& dv = need_derive(config);
    const data::TaskSpec& task = config.downstream_task();
    const data::Dataset pool = data::generate(task, dc.pool_per_class, dc.pool_seed);
    auto [d_t, d_val] = train::few_shot_sample(pool, dv.shots, dv.shot_seed);
    SplitData out;
    out.d_t = std::move(d_t);
    out.d_val = std::move(d_val);
    out.test = data::generate(task, dc.test_per_class, dc.test_seed);
    return out;
}

std::vector<importance::ImportanceScores> profile_scores(
    const ExperimentConfig& config, const model::BaseModel& m,
    const sparsity::SparsityProfile& profile, const data::Dataset& d_t) {
    const DeriveConfig& dv = need_derive(config);
    sparsity::DeriveOptions opts;
    opts.tau = profile.tau;
    opts.step = dv.step;
    opts.k_energy = dv.k_energy;
    opts.fixed_k = dv.fixed_k;
    std::vector<importance::ImportanceScores> scores;
    for (size_t l = 0; l < m.layers.size(); ++l)
        scores.push_back(sparsity::layer_row_col_scores(m, l, d_t, profile.method, opts));
    return scores;
}

}  // namespace

std::string resolve_run_dir(const ExperimentConfig& config, const std::string& out_override) {
    if (!out_override.empty()) {
        ensure_dir(out_override);
        return out_override;
    }
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", &tm_utc);
    std::string base =
        config.output_dir + "/" + stamp + "-" + hash8(config.config_hash);
    std::string dir = base;
    int suffix = 1;
    while (fs::exists(dir)) dir = base + "-" + std::to_string(suffix++);
    ensure_dir(dir);
    return dir;
}

std::string run_pretrain(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_dir(out_dir);
    const model::PretrainResult result =
        model::pretrain(config.task, config.hidden, config.pretrain,
                        config.hidden_activation);
    const std::string ckpt = out_dir + "/checkpoint.plra";
    model::save_checkpoint(ckpt, result.model);

    json prov;
    prov["task"] = {{"kind", data::to_string(config.task.kind)},
                    {"classes", config.task.classes},
                    {"input_dim", config.task.input_dim},
                    {"noise", config.task.noise},
                    {"seed", config.task.seed}};
    prov["arch"] = config.hidden;
    prov["activation"] = model::to_string(config.hidden_activation);
    prov["pretrain_seed"] = config.pretrain.seed;
    prov["train_accuracy"] = result.train_accuracy;
    prov["holdout_accuracy"] = result.holdout_accuracy;
    prov["config_hash"] = hash8(config.config_hash);
    write_text(out_dir + "/provenance.json", prov.dump(2) + "\n");

    std::printf("pretrained: depth %zu, train acc %.4f, holdout acc %.4f\n",
                result.model.depth(), result.train_accuracy, result.holdout_accuracy);
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return out_dir;
}

std::string run_derive(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& out_dir) {
    ensure_dir(out_dir);
    const DeriveConfig& dv = need_derive(config);
    const model::BaseModel m = model::load_checkpoint(checkpoint_path);
    const SplitData splits = make_splits(config);

    sparsity::DeriveOptions opts;
    opts.tau = dv.tau;
    opts.step = dv.step;
    opts.k_energy = dv.k_energy;
    opts.fixed_k = dv.fixed_k;
    const sparsity::SparsityProfile profile =
        sparsity::derive_profile(m, splits.d_t, dv.method, opts);

    const std::string profile_path = out_dir + "/profile.txt";
    sparsity::save_profile(profile_path, profile);
    importance::write_scores_csv(out_dir + "/scores.csv",
                                 profile_scores(config, m, profile, splits.d_t));

    std::printf("derived profile (method %s, tau %.2f, mu %.4f):\n",
                importance::to_string(profile.method).c_str(), profile.tau,
                profile.baseline_accuracy);
    std::printf("layer   m    n  keep_r keep_c  p_row  p_col  rate\n");
    for (const sparsity::LayerSparsity& l : profile.layers)
        std::printf("%5zu %4zu %4zu %6zu %6zu  %.3f  %.3f  %.3f\n", l.layer, l.m, l.n,
                    l.retained_rows, l.retained_cols, l.p_row, l.p_col, l.element_rate);
    std::printf("profile: %s\n", profile_path.c_str());
    return out_dir;
}

namespace {

struct TrainContext {
    const ExperimentConfig& config;
    const model::BaseModel& m;
    const SplitData& splits;
    std::string mode;
    const sparsity::SparsityProfile* profile = nullptr;
    const std::vector<importance::ImportanceScores>* scores = nullptr;
    std::string out_dir;
};

adapters::AdapterSet build_adapter_set(const TrainContext& ctx, const train::TrainConfig& cfg) {
    const AdapterConfig& ac = need_adapter(ctx.config);
    const MaskConfig& mc = need_mask(ctx.config);
    adapters::AdapterSet set = adapters::make_adapter_set(
        ctx.m, ac.rank, ac.alpha, mix_seed(ac.init_seed, cfg.seed));
    const uint64_t mask_seed = mix_seed(mc.seed, cfg.seed);

    std::vector<std::pair<size_t, size_t>> dims;
    for (const model::FrozenLayer& fl : ctx.m.layers) dims.emplace_back(fl.W.rows, fl.W.cols);

    if (ctx.mode == "lora") {
        set.masking = adapters::MaskingMode::none;
    } else if (ctx.mode == "partial") {
        set.masking = adapters::MaskingMode::pair;
        set.masks = sparsity::profile_to_masks(*ctx.profile, sparsity::MaskMode::partial,
                                               nullptr, mask_seed);
    } else if (ctx.mode == "targeted") {
        set.masking = adapters::MaskingMode::pair;
        set.masks = sparsity::profile_to_masks(*ctx.profile, sparsity::MaskMode::targeted,
                                               ctx.scores, mask_seed);
    } else if (ctx.mode == "stochastic") {
        set.masking = adapters::MaskingMode::pair;
        set.masks = sparsity::profile_to_masks(*ctx.profile, sparsity::MaskMode::stochastic,
                                               ctx.scores, mask_seed, mc.temperature);
    } else if (ctx.mode == "inverted") {
        set.masking = adapters::MaskingMode::pair;
        set.masks = sparsity::profile_to_masks(*ctx.profile, sparsity::MaskMode::inverted,
                                               ctx.scores, mask_seed);
    } else if (ctx.mode == "pyramidal" || ctx.mode == "balanced") {
        const sparsity::SparsityProfile base =
            ctx.mode == "pyramidal"
                ? sparsity::pyramidal_profile(mc.p, dims.size(), dims)
                : sparsity::balanced_profile(mc.p, dims.size(), dims);
        set.masking = adapters::MaskingMode::pair;
        set.masks = sparsity::profile_to_masks(base, sparsity::MaskMode::partial, nullptr,
                                               mask_seed);
    } else {
        throw ConfigError("unknown train mode: " + ctx.mode);
    }
    return set;
}

train::RunRecord run_single(const TrainContext& ctx, const train::TrainConfig& cfg,
                            size_t run_index) {
    adapters::AdapterSet set = build_adapter_set(ctx, cfg);
    train::RunRecord rec =
        train::train_adapters(ctx.m, set, ctx.splits.d_t, ctx.splits.d_val, cfg,
                              &ctx.splits.test);
    rec.mode = ctx.mode;
    train::save_run_record(
        ctx.out_dir + "/record-" + ctx.mode + "-" + std::to_string(run_index) + ".json", rec);
    if (set.masking == adapters::MaskingMode::pair)
        adapters::save_masks(ctx.out_dir + "/masks-" + ctx.mode + "-" +
                                 std::to_string(run_index) + ".plra",
                             set.masks);
    return rec;
}

std::string run_multi(const ExperimentConfig& config, const model::BaseModel& m,
                      const std::string& profile_path, const std::string& out_dir) {
    if (!config.multi_tasks) throw ConfigError("mode multi needs a 'multi' task list");
    const DataConfig& dc = need_data(config);
    const DeriveConfig& dv = need_derive(config);
    const AdapterConfig& ac = need_adapter(config);
    const MaskConfig& mc = need_mask(config);
    const train::TrainConfig cfg = need_train(config);

    std::vector<data::Dataset> trains, vals, tests;
    for (const data::TaskSpec& task : *config.multi_tasks) {
        const data::Dataset pool = data::generate(task, dc.pool_per_class, dc.pool_seed);
        auto [d_t, d_val] = train::few_shot_sample(pool, dv.shots, dv.shot_seed);
        trains.push_back(std::move(d_t));
        vals.push_back(std::move(d_val));
        tests.push_back(data::generate(task, dc.test_per_class, dc.test_seed));
    }

    adapters::AdapterBank bank;
    for (size_t t = 0; t < trains.size(); ++t) {
        bank.names.push_back("task" + std::to_string(t));
        adapters::AdapterSet set =
            adapters::make_adapter_set(m, ac.rank, ac.alpha, mix_seed(ac.init_seed, cfg.seed));
        if (!profile_path.empty()) {
            const sparsity::SparsityProfile profile = sparsity::load_profile(profile_path);
            set.masking = adapters::MaskingMode::pair;
            set.masks = sparsity::profile_to_masks(profile, sparsity::MaskMode::partial,
                                                   nullptr, mix_seed(mc.seed, t));
        }
        bank.sets.push_back(std::move(set));
    }

    const std::vector<train::RunRecord> records =
        train::multi_task_train(m, bank, trains, vals, cfg, &tests);
    for (size_t t = 0; t < records.size(); ++t) {
        train::save_run_record(out_dir + "/record-multi-task" + std::to_string(t) + ".json",
                               records[t]);
        std::printf("task %zu: val %.4f test %.4f params %zu\n", t,
                    records[t].final_val_accuracy, records[t].final_test_accuracy,
                    records[t].trainable_parameters);
    }
    return out_dir;
}

}  // namespace

std::string run_train(const ExperimentConfig& config, const std::string& checkpoint_path,
                      const std::string& profile_path, const std::string& mode_override,
                      const std::string& out_dir) {
    ensure_dir(out_dir);
    const model::BaseModel m = model::load_checkpoint(checkpoint_path);
    const MaskConfig& mc = need_mask(config);
    const std::string mode = mode_override.empty() ? mc.mode : mode_override;

    if (mode == "multi") return run_multi(config, m, profile_path, out_dir);

    const SplitData splits = make_splits(config);
    const bool needs_profile = mode == "partial" || mode == "targeted" ||
                               mode == "stochastic" || mode == "inverted";
    sparsity::SparsityProfile profile;
    std::vector<importance::ImportanceScores> scores;
    if (needs_profile) {
        if (profile_path.empty())
            throw ConfigError("mode " + mode + " requires --profile");
        profile = sparsity::load_profile(profile_path);
        if (profile.layers.size() != m.layers.size())
            throw ConfigError("profile depth does not match checkpoint");
        if (mode != "partial") scores = profile_scores(config, m, profile, splits.d_t);
    } else if (!profile_path.empty()) {
        std::fprintf(stderr, "warning: mode %s ignores --profile %s\n", mode.c_str(),
                     profile_path.c_str());
    }

    TrainContext ctx{config, m, splits, mode,
                     needs_profile ? &profile : nullptr,
                     scores.empty() ? nullptr : &scores, out_dir};

    const train::TrainConfig base_cfg = need_train(config);
    if (config.sweep) {
        std::vector<train::TrainConfig> grid;
        for (double lr : config.sweep->learning_rates) {
            train::TrainConfig c = base_cfg;
            c.learning_rate = lr;
            grid.push_back(c);
        }
        size_t counter = 0;
        std::map<std::pair<double, uint64_t>, size_t> run_ids;
        for (const train::TrainConfig& c : grid)
            for (uint64_t s : config.sweep->seeds)
                run_ids[{c.learning_rate, s}] = counter++;
        const train::SweepSummary summary = train::sweep(
            grid, config.sweep->seeds, config.sweep->top_k,
            [&](const train::TrainConfig& c) {
                return run_single(ctx, c, run_ids.at({c.learning_rate, c.seed}));
            });
        train::write_sweep_csv(out_dir + "/sweep.csv", mode,
                               data::to_string(config.downstream_task().kind), summary);
        std::printf("sweep %s: top-%zu mean test acc %.4f (std %.4f), mean params %.0f\n",
                    mode.c_str(), config.sweep->top_k, summary.mean_top_test_accuracy,
                    summary.std_top_test_accuracy, summary.mean_top_parameters);
    } else {
        const train::RunRecord rec = run_single(ctx, base_cfg, 0);
        std::printf("%s: val %.4f test %.4f params %zu%s\n", mode.c_str(),
                    rec.final_val_accuracy, rec.final_test_accuracy,
                    rec.trainable_parameters, rec.diverged ? " (diverged)" : "");
        if (rec.diverged) throw NumericError("training diverged (non-finite loss)");
    }
    return out_dir;
}

std::string run_slt_check(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_dir(out_dir);
    const SltCheckConfig& sc = need_slt(config);
    const std::vector<slt::HarnessRow> rows = slt::run_width_sweep(sc.harness);
    slt::write_harness_csv(out_dir + "/harness.csv", rows);

    // Bound calculators on the configured quantities.
    json bounds;
    if (!sc.bound.p_l.empty() && !sc.bound.n_target.empty()) {
        double min_p = sc.bound.p_l[0];
        for (double p : sc.bound.p_l) min_p = std::min(min_p, p);
        const size_t L = std::max<size_t>(sc.bound.n_target.size(), 2);
        double n_total = 0.0;
        for (size_t n : sc.bound.n_target) n_total += static_cast<double>(n);
        const double eps_last =
            slt::epsilon_l(sc.bound.epsilon, sc.bound.n_target.back(), L, 0.0, {});
        const double rho_value = slt::rho(sc.bound.C, n_total, min_p, sc.bound.gamma,
                                          eps_last, sc.bound.delta);
        bounds["rho"] = rho_value;
        bounds["epsilon_l"] = eps_last;
        json widths = json::array();
        for (size_t l = 0; l + 1 < sc.bound.n_target.size(); ++l)
            widths.push_back(slt::width_bound(sc.bound.n_target[l], sc.bound.p_l[l + 1],
                                              eps_last, sc.bound.delta, rho_value,
                                              sc.bound.C));
        bounds["width_bounds"] = widths;
    }
    write_text(out_dir + "/bounds.json", bounds.dump(2) + "\n");

    for (size_t width : sc.harness.widths)
        std::printf("width %3zu: median best error %.6f\n", width,
                    slt::median_error(rows, width));
    return out_dir;
}

std::string run_report(const std::string& run_dir, const std::string& out_dir) {
    if (!fs::exists(run_dir)) throw IoError("run directory does not exist: " + run_dir);
    ensure_dir(out_dir);

    struct ModeStats {
        std::vector<train::RunRecord> records;
    };
    std::map<std::string, ModeStats> modes;
    std::vector<std::pair<std::string, std::vector<adapters::MaskPair>>> mask_files;

    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir))
        if (entry.is_regular_file()) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());

    for (const fs::path& p : paths) {
        const std::string name = p.filename().string();
        if (name.rfind("record-", 0) == 0 && p.extension() == ".json") {
            train::RunRecord rec = train::load_run_record(p.string());
            modes[rec.mode].records.push_back(std::move(rec));
        } else if (name.rfind("masks-", 0) == 0 && p.extension() == ".plra") {
            mask_files.emplace_back(name, adapters::load_masks(p.string()));
        }
    }
    if (modes.empty()) throw IoError("no run records found in " + run_dir);

    std::ostringstream csv;
    csv << "mode,runs,mean_test_acc,std_test_acc,mean_val_acc,mean_params\n";
    json bundle;
    char buf[64];
    auto g = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [mode, stats] : modes) {
        const size_t n = stats.records.size();
        double mean_test = 0.0, mean_val = 0.0, mean_params = 0.0;
        for (const train::RunRecord& r : stats.records) {
            mean_test += r.final_test_accuracy;
            mean_val += r.final_val_accuracy;
            mean_params += static_cast<double>(r.trainable_parameters);
        }
        mean_test /= static_cast<double>(n);
        mean_val /= static_cast<double>(n);
        mean_params /= static_cast<double>(n);
        double var = 0.0;
        for (const train::RunRecord& r : stats.records) {
            const double d = r.final_test_accuracy - mean_test;
            var += d * d;
        }
        const double std_test = n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
        csv << mode << ',' << n << ',' << g(mean_test) << ',' << g(std_test) << ','
            << g(mean_val) << ',' << g(mean_params) << '\n';

        json jm;
        jm["runs"] = n;
        jm["mean_test_accuracy"] = mean_test;
        jm["std_test_accuracy"] = std_test;
        jm["mean_val_accuracy"] = mean_val;
        jm["mean_parameters"] = mean_params;
        std::vector<double> norm_sum;
        for (const train::RunRecord& r : stats.records) {
            norm_sum.resize(std::max(norm_sum.size(), r.residual_norms.size()), 0.0);
            for (size_t l = 0; l < r.residual_norms.size(); ++l)
                norm_sum[l] += r.residual_norms[l];
        }
        for (double& v : norm_sum) v /= static_cast<double>(n);
        jm["mean_residual_norms"] = norm_sum;
        bundle["modes"][mode] = jm;
    }

    json overlaps = json::array();
    for (size_t i = 0; i < mask_files.size(); ++i)
        for (size_t j = i + 1; j < mask_files.size(); ++j) {
            const auto& [na, ma] = mask_files[i];
            const auto& [nb, mb] = mask_files[j];
            if (ma.size() != mb.size()) continue;
            double mean_overlap = 0.0;
            bool comparable = true;
            for (size_t l = 0; l < ma.size() && comparable; ++l) {
                if (ma[l].u_row.size() != mb[l].u_row.size() ||
                    ma[l].u_col.size() != mb[l].u_col.size()) {
                    comparable = false;
                    break;
                }
                mean_overlap += analysis::mask_overlap(ma[l], mb[l]);
            }
            if (!comparable || ma.empty()) continue;
            mean_overlap /= static_cast<double>(ma.size());
            json jo;
            jo["a"] = na;
            jo["b"] = nb;
            jo["mean_overlap"] = mean_overlap;
            overlaps.push_back(jo);
        }
    bundle["overlaps"] = overlaps;

    write_text(out_dir + "/summary.csv", csv.str());
    write_text(out_dir + "/report.json", bundle.dump(2) + "\n");
    std::printf("%s", csv.str().c_str());
    return out_dir;
}

}  // namespace palora::cli

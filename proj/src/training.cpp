#include "palora/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "palora/rng.hpp"
#include "palora/tape.hpp"

namespace palora::train {

using nlohmann::json;

Scheduler scheduler_from_string(const std::string& s) {
    if (s == "cosine") return Scheduler::cosine;
    if (s == "constant") return Scheduler::constant;
    throw ConfigError("unknown scheduler: " + s);
}

std::string to_string(Scheduler s) {
    return s == Scheduler::cosine ? "cosine" : "constant";
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (early_stop_patience < 1) throw ConfigError("train: patience must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (rank < 1) throw ConfigError("train: rank must be >= 1");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("train: tau must be in (0,1)");
}

std::pair<data::Dataset, data::Dataset> few_shot_sample(const data::Dataset& dataset,
                                                        size_t shots_per_class,
                                                        uint64_t seed) {
    if (shots_per_class == 0) throw ConfigError("few_shot_sample: shots must be positive");
    int max_label = -1;
    for (int y : dataset.labels) max_label = std::max(max_label, y);
    if (max_label < 0) throw DimensionError("few_shot_sample: empty dataset");
    const size_t classes = static_cast<size_t>(max_label) + 1;

    std::vector<std::vector<size_t>> by_class(classes);
    for (size_t i = 0; i < dataset.size(); ++i)
        by_class[static_cast<size_t>(dataset.labels[i])].push_back(i);

    std::vector<size_t> train_idx, val_idx;
    for (size_t c = 0; c < classes; ++c) {
        if (by_class[c].size() < 2 * shots_per_class)
            throw ConfigError("few_shot_sample: class " + std::to_string(c) + " has " +
                              std::to_string(by_class[c].size()) + " samples, need " +
                              std::to_string(2 * shots_per_class));
        Rng rng(mix_seed(seed, c));
        rng.shuffle(by_class[c]);
        for (size_t s = 0; s < shots_per_class; ++s) train_idx.push_back(by_class[c][s]);
        for (size_t s = shots_per_class; s < 2 * shots_per_class; ++s)
            val_idx.push_back(by_class[c][s]);
    }
    data::Dataset d_t = dataset.select(train_idx);
    data::Dataset d_val = dataset.select(val_idx);
    d_t.provenance_seed = seed;
    d_val.provenance_seed = seed;
    return {std::move(d_t), std::move(d_val)};
}

namespace {

AdamConfig adam_config_of(const TrainConfig& c) {
    AdamConfig a;
    a.weight_decay = c.weight_decay;
    return a;
}

struct FactorSnapshot {
    std::vector<Matrix> b, a;
};

FactorSnapshot snapshot(const adapters::AdapterSet& set) {
    FactorSnapshot s;
    for (const adapters::LoraAdapter& ad : set.layers) {
        s.b.push_back(ad.B);
        s.a.push_back(ad.A);
    }
    return s;
}

void restore(adapters::AdapterSet& set, const FactorSnapshot& s) {
    for (size_t l = 0; l < set.layers.size(); ++l) {
        set.layers[l].B = s.b[l];
        set.layers[l].A = s.a[l];
    }
}

// Tape forward with the adapter residual added before each affine map.
// Returns per-layer (B, A) leaf ids for the optimizer.
NodeId adapted_forward(Tape& tape, const model::BaseModel& m,
                       const adapters::AdapterSet& set, const Matrix& x,
                       const std::vector<Matrix>& row_masks,
                       const std::vector<Matrix>& col_masks,
                       std::vector<NodeId>& b_nodes, std::vector<NodeId>& a_nodes) {
    NodeId h = tape.constant(x);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const model::FrozenLayer& fl = m.layers[l];
        const adapters::LoraAdapter& ad = set.layers[l];
        b_nodes[l] = tape.leaf(ad.B, true);
        a_nodes[l] = tape.leaf(ad.A, true);
        NodeId contrib;
        switch (set.masking) {
            case adapters::MaskingMode::pair: {
                NodeId bm = tape.hadamard(b_nodes[l], tape.constant(row_masks[l]));
                NodeId am = tape.hadamard(a_nodes[l], tape.constant(col_masks[l]));
                contrib = tape.scale(tape.matmul(bm, tape.matmul(am, h)), ad.scaling());
                break;
            }
            case adapters::MaskingMode::element: {
                NodeId delta = tape.hadamard(tape.matmul(b_nodes[l], a_nodes[l]),
                                             tape.constant(set.element_masks[l].U));
                contrib = tape.matmul(tape.scale(delta, ad.scaling()), h);
                break;
            }
            case adapters::MaskingMode::none:
                contrib =
                    tape.scale(tape.matmul(b_nodes[l], tape.matmul(a_nodes[l], h)),
                               ad.scaling());
                break;
            default:
                throw ConfigError("bad masking mode");
        }
        NodeId z = tape.add(tape.matmul(tape.constant(fl.W), h), contrib);
        z = tape.add_bias(z, tape.constant(fl.b));
        switch (fl.activation) {
            case model::Activation::relu: h = tape.relu(z); break;
            case model::Activation::gelu: h = tape.gelu(z); break;
            case model::Activation::identity: h = z; break;
        }
    }
    return h;
}

std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch_size,
                                              uint64_t epoch_seed) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (batch_size == 0 || batch_size >= n) return {idx};
    Rng rng(epoch_seed);
    rng.shuffle(idx);
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < n; start += batch_size) {
        const size_t end = std::min(n, start + batch_size);
        batches.emplace_back(idx.begin() + static_cast<long>(start),
                             idx.begin() + static_cast<long>(end));
    }
    return batches;
}

}  // namespace

RunRecord train_adapters(const model::BaseModel& m, adapters::AdapterSet& set,
                         const data::Dataset& d_train, const data::Dataset& d_val,
                         const TrainConfig& config, const data::Dataset* d_test) {
    config.validate();
    if (set.layers.size() != m.layers.size())
        throw DimensionError("train_adapters: adapter/layer count mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    const uint64_t frozen_hash = model::model_hash(m);

    std::vector<Matrix> row_masks(m.layers.size()), col_masks(m.layers.size());
    if (set.masking == adapters::MaskingMode::pair) {
        if (set.masks.size() != set.layers.size())
            throw DimensionError("train_adapters: mask/layer count mismatch");
        for (size_t l = 0; l < set.layers.size(); ++l) {
            row_masks[l] = adapters::row_factor_mask(set.masks[l], set.layers[l].rank);
            col_masks[l] = adapters::col_factor_mask(set.masks[l], set.layers[l].rank);
        }
    }

    RunRecord rec;
    rec.config = config;
    rec.seed = config.seed;
    rec.trainable_parameters = set.total_trainable_parameters();

    const AdamConfig adam = adam_config_of(config);
    std::vector<AdamState> b_state(set.layers.size()), a_state(set.layers.size());

    FactorSnapshot best = snapshot(set);
    double best_val = -1.0;
    size_t wait = 0;

    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.scheduler == Scheduler::cosine
                              ? cosine_lr(epoch, config.epochs, config.learning_rate, 0.0)
                              : config.learning_rate;
        const auto batches =
            make_batches(d_train.size(), config.batch_size, mix_seed(config.seed, epoch));
        double epoch_loss = 0.0;
        bool aborted = false;
        for (const std::vector<size_t>& batch : batches) {
            const data::Dataset sub =
                batch.size() == d_train.size() ? d_train : d_train.select(batch);
            try {
                Tape tape;
                std::vector<NodeId> b_nodes(set.layers.size()), a_nodes(set.layers.size());
                const NodeId logits = adapted_forward(tape, m, set, sub.inputs, row_masks,
                                                      col_masks, b_nodes, a_nodes);
                const NodeId loss =
                    tape.softmax_cross_entropy(logits, sub.labels, Reduction::mean);
                epoch_loss += tape.value(loss).at(0, 0) * static_cast<double>(sub.size());
                tape.backward(loss);
                const bool pair = set.masking == adapters::MaskingMode::pair;
                for (size_t l = 0; l < set.layers.size(); ++l) {
                    adapters::LoraAdapter& ad = set.layers[l];
                    adamw_step(ad.B, tape.grad(b_nodes[l]), b_state[l], adam, lr,
                               pair ? &row_masks[l] : nullptr);
                    adamw_step(ad.A, tape.grad(a_nodes[l]), a_state[l], adam, lr,
                               pair ? &col_masks[l] : nullptr);
                }
            } catch (const NumericError&) {
                rec.diverged = true;
                aborted = true;
                break;
            }
        }
        if (aborted) break;
        rec.train_loss.push_back(epoch_loss / static_cast<double>(d_train.size()));

        double val_acc;
        try {
            const adapters::LoraProvider provider(set);
            val_acc = model::accuracy(m, &provider, d_val);
        } catch (const NumericError&) {
            rec.diverged = true;
            break;
        }
        rec.val_accuracy.push_back(val_acc);
        if (val_acc > best_val) {
            best_val = val_acc;
            best = snapshot(set);
            rec.best_epoch = epoch;
            wait = 0;
        } else if (++wait >= config.early_stop_patience) {
            break;
        }
    }

    restore(set, best);
    const adapters::LoraProvider provider(set);
    rec.final_val_accuracy = best_val >= 0.0 ? best_val : model::accuracy(m, &provider, d_val);
    if (d_test) rec.final_test_accuracy = model::accuracy(m, &provider, *d_test);
    for (size_t l = 0; l < set.layers.size(); ++l)
        rec.residual_norms.push_back(frobenius_norm(adapters::layer_delta(set, l)));

    if (model::model_hash(m) != frozen_hash)
        throw NumericError("train_adapters: frozen model mutated");
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<RunRecord> multi_task_train(const model::BaseModel& m,
                                        adapters::AdapterBank& bank,
                                        const std::vector<data::Dataset>& train_sets,
                                        const std::vector<data::Dataset>& val_sets,
                                        const TrainConfig& config,
                                        const std::vector<data::Dataset>* test_sets) {
    config.validate();
    const size_t tasks = train_sets.size();
    if (bank.sets.size() != tasks || val_sets.size() != tasks)
        throw ConfigError("multi_task_train: task/adapter count mismatch");
    const uint64_t frozen_hash = model::model_hash(m);

    struct TaskState {
        std::vector<AdamState> b_state, a_state;
        std::vector<Matrix> row_masks, col_masks;
        FactorSnapshot best;
        double best_val = -1.0;
        size_t wait = 0;
        size_t best_epoch = 0;
        bool stopped = false;
        bool diverged = false;
        std::vector<double> losses, vals;
    };
    std::vector<TaskState> st(tasks);
    for (size_t t = 0; t < tasks; ++t) {
        adapters::AdapterSet& set = bank.sets[t];
        if (set.layers.size() != m.layers.size())
            throw DimensionError("multi_task_train: adapter depth mismatch");
        st[t].b_state.resize(set.layers.size());
        st[t].a_state.resize(set.layers.size());
        st[t].row_masks.resize(set.layers.size());
        st[t].col_masks.resize(set.layers.size());
        if (set.masking == adapters::MaskingMode::pair)
            for (size_t l = 0; l < set.layers.size(); ++l) {
                st[t].row_masks[l] = adapters::row_factor_mask(set.masks[l], set.layers[l].rank);
                st[t].col_masks[l] = adapters::col_factor_mask(set.masks[l], set.layers[l].rank);
            }
        st[t].best = snapshot(set);
    }

    // Batch slots interleave round-robin across tasks; each batch updates only
    // its task's adapter. Every task draws from the same derived stream so two
    // identical tasks follow identical trajectories.
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.scheduler == Scheduler::cosine
                              ? cosine_lr(epoch, config.epochs, config.learning_rate, 0.0)
                              : config.learning_rate;
        std::vector<std::vector<std::vector<size_t>>> batches(tasks);
        std::vector<double> epoch_loss(tasks, 0.0);
        size_t max_batches = 0;
        for (size_t t = 0; t < tasks; ++t) {
            if (st[t].stopped) continue;
            batches[t] = make_batches(train_sets[t].size(), config.batch_size,
                                      mix_seed(config.seed, epoch));
            max_batches = std::max(max_batches, batches[t].size());
        }
        for (size_t slot = 0; slot < max_batches; ++slot) {
            for (size_t t = 0; t < tasks; ++t) {
                if (st[t].stopped || slot >= batches[t].size()) continue;
                adapters::AdapterSet& set = bank.sets[t];
                const std::vector<size_t>& batch = batches[t][slot];
                try {
                    const data::Dataset sub = batch.size() == train_sets[t].size()
                                                  ? train_sets[t]
                                                  : train_sets[t].select(batch);
                    Tape tape;
                    std::vector<NodeId> b_nodes(set.layers.size()),
                        a_nodes(set.layers.size());
                    const NodeId logits =
                        adapted_forward(tape, m, set, sub.inputs, st[t].row_masks,
                                        st[t].col_masks, b_nodes, a_nodes);
                    const NodeId loss =
                        tape.softmax_cross_entropy(logits, sub.labels, Reduction::mean);
                    epoch_loss[t] +=
                        tape.value(loss).at(0, 0) * static_cast<double>(sub.size());
                    tape.backward(loss);
                    const bool pair = set.masking == adapters::MaskingMode::pair;
                    for (size_t l = 0; l < set.layers.size(); ++l) {
                        adamw_step(set.layers[l].B, tape.grad(b_nodes[l]), st[t].b_state[l],
                                   adam_config_of(config), lr,
                                   pair ? &st[t].row_masks[l] : nullptr);
                        adamw_step(set.layers[l].A, tape.grad(a_nodes[l]), st[t].a_state[l],
                                   adam_config_of(config), lr,
                                   pair ? &st[t].col_masks[l] : nullptr);
                    }
                } catch (const NumericError&) {
                    st[t].diverged = true;
                    st[t].stopped = true;
                }
            }
        }
        for (size_t t = 0; t < tasks; ++t) {
            if (st[t].stopped || batches[t].empty()) continue;
            adapters::AdapterSet& set = bank.sets[t];
            st[t].losses.push_back(epoch_loss[t] / static_cast<double>(train_sets[t].size()));
            double val_acc;
            try {
                const adapters::LoraProvider provider(set);
                val_acc = model::accuracy(m, &provider, val_sets[t]);
            } catch (const NumericError&) {
                st[t].diverged = true;
                st[t].stopped = true;
                continue;
            }
            st[t].vals.push_back(val_acc);
            if (val_acc > st[t].best_val) {
                st[t].best_val = val_acc;
                st[t].best = snapshot(set);
                st[t].best_epoch = epoch;
                st[t].wait = 0;
            } else if (++st[t].wait >= config.early_stop_patience) {
                st[t].stopped = true;
            }
        }
    }

    std::vector<RunRecord> records(tasks);
    for (size_t t = 0; t < tasks; ++t) {
        adapters::AdapterSet& set = bank.sets[t];
        restore(set, st[t].best);
        RunRecord& rec = records[t];
        rec.config = config;
        rec.seed = config.seed;
        rec.mode = "multi";
        rec.train_loss = st[t].losses;
        rec.val_accuracy = st[t].vals;
        rec.diverged = st[t].diverged;
        rec.best_epoch = st[t].best_epoch;
        rec.trainable_parameters = set.total_trainable_parameters();
        const adapters::LoraProvider provider(set);
        rec.final_val_accuracy =
            st[t].best_val >= 0.0 ? st[t].best_val : model::accuracy(m, &provider, val_sets[t]);
        if (test_sets)
            rec.final_test_accuracy = model::accuracy(m, &provider, (*test_sets)[t]);
        for (size_t l = 0; l < set.layers.size(); ++l)
            rec.residual_norms.push_back(frobenius_norm(adapters::layer_delta(set, l)));
    }
    if (model::model_hash(m) != frozen_hash)
        throw NumericError("multi_task_train: frozen model mutated");
    return records;
}

SweepSummary sweep(const std::vector<TrainConfig>& configs,
                   const std::vector<uint64_t>& seeds, size_t top_k,
                   const RunFactory& run) {
    if (configs.empty() || seeds.empty()) throw ConfigError("sweep: nothing to run");
    SweepSummary summary;
    std::vector<TrainConfig> grid;
    for (const TrainConfig& c : configs)
        for (uint64_t seed : seeds) {
            TrainConfig cfg = c;
            cfg.seed = seed;
            grid.push_back(cfg);
        }
    summary.runs.resize(grid.size());

    const size_t threads = std::min(thread_cap(), grid.size());
    if (threads <= 1) {
        for (size_t i = 0; i < grid.size(); ++i)
            summary.runs[i] = SweepRun{grid[i], run(grid[i])};
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (size_t i = w; i < grid.size(); i += threads)
                    summary.runs[i] = SweepRun{grid[i], run(grid[i])};
            });
        for (std::thread& th : pool) th.join();
    }

    std::vector<size_t> order;
    for (size_t i = 0; i < summary.runs.size(); ++i)
        if (!summary.runs[i].record.diverged) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return summary.runs[a].record.final_val_accuracy >
               summary.runs[b].record.final_val_accuracy;
    });
    const size_t k = std::min(top_k, order.size());
    summary.top_indices.assign(order.begin(), order.begin() + static_cast<long>(k));

    if (k > 0) {
        double mean = 0.0, params = 0.0;
        for (size_t i : summary.top_indices) {
            mean += summary.runs[i].record.final_test_accuracy;
            params += static_cast<double>(summary.runs[i].record.trainable_parameters);
        }
        mean /= static_cast<double>(k);
        params /= static_cast<double>(k);
        double var = 0.0;
        for (size_t i : summary.top_indices) {
            const double d = summary.runs[i].record.final_test_accuracy - mean;
            var += d * d;
        }
        summary.mean_top_test_accuracy = mean;
        summary.std_top_test_accuracy = k > 1 ? std::sqrt(var / static_cast<double>(k)) : 0.0;
        summary.mean_top_parameters = params;
    }
    return summary;
}

void write_sweep_csv(const std::string& path, const std::string& method,
                     const std::string& dataset, const SweepSummary& summary) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "method,dataset,seed,lr,val_acc,test_acc,params,runtime_s\n";
    char buf[64];
    auto g = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const SweepRun& r : summary.runs) {
        os << method << ',' << dataset << ',' << r.record.seed << ','
           << g(r.config.learning_rate) << ',' << g(r.record.final_val_accuracy) << ','
           << g(r.record.final_test_accuracy) << ',' << r.record.trainable_parameters << ','
           << g(r.record.wall_time_s) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

json run_record_to_json_obj(const RunRecord& r);

std::string run_record_to_json(const RunRecord& r) {
    return run_record_to_json_obj(r).dump(2) + "\n";
}

json run_record_to_json_obj(const RunRecord& r) {
    json j;
    j["config"] = {{"learning_rate", r.config.learning_rate},
                   {"weight_decay", r.config.weight_decay},
                   {"epochs", r.config.epochs},
                   {"batch_size", r.config.batch_size},
                   {"seed", r.config.seed},
                   {"scheduler", to_string(r.config.scheduler)},
                   {"early_stop_patience", r.config.early_stop_patience},
                   {"rank", r.config.rank},
                   {"alpha", r.config.alpha},
                   {"tau", r.config.tau}};
    j["mode"] = r.mode;
    j["train_loss"] = r.train_loss;
    j["val_accuracy"] = r.val_accuracy;
    j["final_val_accuracy"] = r.final_val_accuracy;
    j["final_test_accuracy"] = r.final_test_accuracy;
    j["trainable_parameters"] = r.trainable_parameters;
    j["residual_norms"] = r.residual_norms;
    j["wall_time_s"] = r.wall_time_s;
    j["seed"] = r.seed;
    j["diverged"] = r.diverged;
    j["best_epoch"] = r.best_epoch;
    return j;
}

RunRecord run_record_from_json(const std::string& text) {
    const json j = json::parse(text);
    RunRecord r;
    const json& c = j.at("config");
    r.config.learning_rate = c.at("learning_rate").get<double>();
    r.config.weight_decay = c.at("weight_decay").get<double>();
    r.config.epochs = c.at("epochs").get<size_t>();
    r.config.batch_size = c.at("batch_size").get<size_t>();
    r.config.seed = c.at("seed").get<uint64_t>();
    r.config.scheduler = scheduler_from_string(c.at("scheduler").get<std::string>());
    r.config.early_stop_patience = c.at("early_stop_patience").get<size_t>();
    r.config.rank = c.at("rank").get<size_t>();
    r.config.alpha = c.at("alpha").get<double>();
    r.config.tau = c.at("tau").get<double>();
    r.mode = j.at("mode").get<std::string>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
    r.final_val_accuracy = j.at("final_val_accuracy").get<double>();
    r.final_test_accuracy = j.at("final_test_accuracy").get<double>();
    r.trainable_parameters = j.at("trainable_parameters").get<size_t>();
    r.residual_norms = j.at("residual_norms").get<std::vector<double>>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    r.diverged = j.at("diverged").get<bool>();
    r.best_epoch = j.at("best_epoch").get<size_t>();
    return r;
}

void save_run_record(const std::string& path, const RunRecord& r) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << run_record_to_json(r);
    if (!os) throw IoError("write failed: " + path);
}

RunRecord load_run_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return run_record_from_json(text);
}

}  // namespace palora::train

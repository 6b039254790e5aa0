#include "palora/config.hpp"

#include <set>

#include "palora/io.hpp"

namespace palora::cli {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!ok.count(it.key()))
            throw ConfigError("config: unknown key '" + section + "." + it.key() + "'");
}

const json& require(const json& obj, const std::string& section, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw ConfigError("config: missing key '" + section + "." + key + "'");
    return *it;
}

template <typename T>
T get(const json& obj, const std::string& section, const char* key) {
    try {
        return require(obj, section, key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + section + "." + key + "'");
    }
}

data::TaskSpec parse_task(const json& obj, const std::string& section) {
    check_keys(obj, section,
               {"kind", "classes", "input_dim", "noise", "seed", "rotation", "label_shift",
                "separation"});
    data::TaskSpec t;
    t.kind = data::task_kind_from_string(get<std::string>(obj, section, "kind"));
    t.classes = get<size_t>(obj, section, "classes");
    t.input_dim = get<size_t>(obj, section, "input_dim");
    t.noise = get<double>(obj, section, "noise");
    t.seed = get<uint64_t>(obj, section, "seed");
    t.rotation = get<double>(obj, section, "rotation");
    t.label_shift = get<int>(obj, section, "label_shift");
    t.separation = get<double>(obj, section, "separation");
    t.validate();
    return t;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(root, "",
               {"task", "downstream", "arch", "pretrain", "data", "derive", "adapter",
                "mask", "train", "sweep", "slt", "multi", "output_dir"});

    ExperimentConfig c;
    c.task = parse_task(require(root, "", "task"), "task");
    if (root.contains("downstream"))
        c.downstream = parse_task(root["downstream"], "downstream");

    {
        const json& arch = require(root, "", "arch");
        check_keys(arch, "arch", {"hidden", "activation"});
        c.hidden = get<std::vector<size_t>>(arch, "arch", "hidden");
        if (c.hidden.empty()) throw ConfigError("config: arch.hidden must be non-empty");
        c.hidden_activation =
            model::activation_from_string(get<std::string>(arch, "arch", "activation"));
        if (c.hidden_activation == model::Activation::identity)
            throw ConfigError("config: arch.activation must be relu or gelu");
    }
    {
        const json& p = require(root, "", "pretrain");
        check_keys(p, "pretrain",
                   {"learning_rate", "weight_decay", "epochs", "seed", "samples_per_class",
                    "holdout_per_class"});
        c.pretrain.learning_rate = get<double>(p, "pretrain", "learning_rate");
        c.pretrain.weight_decay = get<double>(p, "pretrain", "weight_decay");
        c.pretrain.epochs = get<size_t>(p, "pretrain", "epochs");
        c.pretrain.seed = get<uint64_t>(p, "pretrain", "seed");
        c.pretrain.samples_per_class = get<size_t>(p, "pretrain", "samples_per_class");
        c.pretrain.holdout_per_class = get<size_t>(p, "pretrain", "holdout_per_class");
    }
    if (root.contains("data")) {
        const json& d = root["data"];
        check_keys(d, "data", {"pool_per_class", "test_per_class", "test_seed", "pool_seed"});
        DataConfig dc;
        dc.pool_per_class = get<size_t>(d, "data", "pool_per_class");
        dc.test_per_class = get<size_t>(d, "data", "test_per_class");
        dc.test_seed = get<uint64_t>(d, "data", "test_seed");
        dc.pool_seed = get<uint64_t>(d, "data", "pool_seed");
        c.dataconf = dc;
    }
    if (root.contains("derive")) {
        const json& d = root["derive"];
        check_keys(d, "derive",
                   {"method", "tau", "step", "k_energy", "fixed_k", "shots", "shot_seed"});
        DeriveConfig dc;
        dc.method = importance::method_from_string(get<std::string>(d, "derive", "method"));
        dc.tau = get<double>(d, "derive", "tau");
        dc.step = get<size_t>(d, "derive", "step");
        dc.k_energy = get<double>(d, "derive", "k_energy");
        dc.fixed_k = get<size_t>(d, "derive", "fixed_k");
        dc.shots = get<size_t>(d, "derive", "shots");
        dc.shot_seed = get<uint64_t>(d, "derive", "shot_seed");
        if (!(dc.tau > 0.0 && dc.tau < 1.0))
            throw ConfigError("config: derive.tau must be in (0,1)");
        c.derive = dc;
    }
    if (root.contains("adapter")) {
        const json& a = root["adapter"];
        check_keys(a, "adapter", {"rank", "alpha", "init_seed"});
        AdapterConfig ac;
        ac.rank = get<size_t>(a, "adapter", "rank");
        ac.alpha = get<double>(a, "adapter", "alpha");
        ac.init_seed = get<uint64_t>(a, "adapter", "init_seed");
        if (ac.rank < 1) throw ConfigError("config: adapter.rank must be >= 1");
        c.adapter = ac;
    }
    if (root.contains("mask")) {
        const json& m = root["mask"];
        check_keys(m, "mask", {"mode", "seed", "temperature", "p"});
        MaskConfig mc;
        mc.mode = get<std::string>(m, "mask", "mode");
        mc.seed = get<uint64_t>(m, "mask", "seed");
        mc.temperature = get<double>(m, "mask", "temperature");
        mc.p = get<double>(m, "mask", "p");
        c.mask = mc;
    }
    if (root.contains("train")) {
        const json& t = root["train"];
        check_keys(t, "train",
                   {"learning_rate", "weight_decay", "epochs", "batch_size", "seed",
                    "scheduler", "early_stop_patience"});
        train::TrainConfig tc;
        tc.learning_rate = get<double>(t, "train", "learning_rate");
        tc.weight_decay = get<double>(t, "train", "weight_decay");
        tc.epochs = get<size_t>(t, "train", "epochs");
        tc.batch_size = get<size_t>(t, "train", "batch_size");
        tc.seed = get<uint64_t>(t, "train", "seed");
        tc.scheduler = train::scheduler_from_string(get<std::string>(t, "train", "scheduler"));
        tc.early_stop_patience = get<size_t>(t, "train", "early_stop_patience");
        if (c.adapter) {
            tc.rank = c.adapter->rank;
            tc.alpha = c.adapter->alpha;
        }
        if (c.derive) tc.tau = c.derive->tau;
        tc.validate();
        c.trainconf = tc;
    }
    if (root.contains("sweep")) {
        const json& s = root["sweep"];
        check_keys(s, "sweep", {"learning_rates", "seeds", "top_k"});
        SweepConfig sc;
        sc.learning_rates = get<std::vector<double>>(s, "sweep", "learning_rates");
        sc.seeds = get<std::vector<uint64_t>>(s, "sweep", "seeds");
        sc.top_k = get<size_t>(s, "sweep", "top_k");
        if (sc.learning_rates.empty() || sc.seeds.empty() || sc.top_k == 0)
            throw ConfigError("config: sweep lists and top_k must be non-empty");
        c.sweep = sc;
    }
    if (root.contains("slt")) {
        const json& s = root["slt"];
        check_keys(s, "slt",
                   {"epsilon", "delta", "gamma", "C", "p_l", "n_target", "m", "n",
                    "target_rank", "widths", "trials", "sample_count", "search", "seed"});
        SltCheckConfig sc;
        sc.bound.epsilon = get<double>(s, "slt", "epsilon");
        sc.bound.delta = get<double>(s, "slt", "delta");
        sc.bound.gamma = get<double>(s, "slt", "gamma");
        sc.bound.C = get<double>(s, "slt", "C");
        sc.bound.p_l = get<std::vector<double>>(s, "slt", "p_l");
        sc.bound.n_target = get<std::vector<size_t>>(s, "slt", "n_target");
        sc.bound.validate();
        sc.harness.m = get<size_t>(s, "slt", "m");
        sc.harness.n = get<size_t>(s, "slt", "n");
        sc.harness.target_rank = get<size_t>(s, "slt", "target_rank");
        sc.harness.widths = get<std::vector<size_t>>(s, "slt", "widths");
        sc.harness.trials = get<size_t>(s, "slt", "trials");
        sc.harness.sample_count = get<size_t>(s, "slt", "sample_count");
        sc.harness.mode = slt::search_mode_from_string(get<std::string>(s, "slt", "search"));
        sc.harness.seed = get<uint64_t>(s, "slt", "seed");
        c.slt_check = sc;
    }
    if (root.contains("multi")) {
        const json& m = root["multi"];
        if (!m.is_array()) throw ConfigError("config: multi must be an array of tasks");
        std::vector<data::TaskSpec> tasks;
        for (size_t i = 0; i < m.size(); ++i)
            tasks.push_back(parse_task(m[i], "multi[" + std::to_string(i) + "]"));
        if (tasks.empty()) throw ConfigError("config: multi must be non-empty");
        c.multi_tasks = std::move(tasks);
    }
    c.output_dir = get<std::string>(root, "", "output_dir");

    const std::string canonical = root.dump();
    c.config_hash = fnv1a(canonical.data(), canonical.size());
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(io::read_file(path));
}

namespace {
[[noreturn]] void missing(const char* section) {
    throw ConfigError(std::string("config: section '") + section +
                      "' is required by this command");
}
}  // namespace

const DataConfig& need_data(const ExperimentConfig& c) {
    if (!c.dataconf) missing("data");
    return *c.dataconf;
}
const DeriveConfig& need_derive(const ExperimentConfig& c) {
    if (!c.derive) missing("derive");
    return *c.derive;
}
const AdapterConfig& need_adapter(const ExperimentConfig& c) {
    if (!c.adapter) missing("adapter");
    return *c.adapter;
}
const MaskConfig& need_mask(const ExperimentConfig& c) {
    if (!c.mask) missing("mask");
    return *c.mask;
}
const train::TrainConfig& need_train(const ExperimentConfig& c) {
    if (!c.trainconf) missing("train");
    return *c.trainconf;
}
const SltCheckConfig& need_slt(const ExperimentConfig& c) {
    if (!c.slt_check) missing("slt");
    return *c.slt_check;
}

}  // namespace palora::cli

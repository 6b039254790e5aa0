#include "palora/model.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "palora/io.hpp"
#include "palora/optim.hpp"
#include "palora/rng.hpp"
#include "palora/tape.hpp"

namespace palora::model {

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation: " + s);
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::identity: return "identity";
    }
    return "?";
}

void BaseModel::validate() const {
    if (layers.empty()) throw DimensionError("model: no layers");
    if (layers.front().W.cols != input_dim)
        throw DimensionError("model: first layer input dim mismatch");
    if (layers.back().W.rows != output_dim)
        throw DimensionError("model: last layer output dim mismatch");
    for (size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].b.rows != layers[l].W.rows || layers[l].b.cols != 1)
            throw DimensionError("model: bias shape mismatch at layer " + std::to_string(l));
        if (l + 1 < layers.size() && layers[l].W.rows != layers[l + 1].W.cols)
            throw DimensionError("model: layer shapes do not chain at layer " +
                                 std::to_string(l));
    }
}

uint64_t model_hash(const BaseModel& m) {
    uint64_t h = kFnvOffset;
    for (const FrozenLayer& layer : m.layers) {
        h = matrix_hash(layer.W, h);
        h = matrix_hash(layer.b, h);
        h = fnv1a_u64(static_cast<uint64_t>(layer.activation), h);
    }
    return h;
}

namespace {
Matrix apply_activation(Activation a, const Matrix& z) {
    switch (a) {
        case Activation::relu: return relu(z);
        case Activation::gelu: return gelu(z);
        case Activation::identity: return z;
    }
    throw ConfigError("bad activation");
}
}  // namespace

Matrix forward(const BaseModel& m, const Matrix& x, const DeltaProvider* adapters) {
    if (x.rows != m.input_dim)
        throw DimensionError("forward: input rows " + std::to_string(x.rows) +
                             " != input_dim " + std::to_string(m.input_dim));
    Matrix h = x;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const FrozenLayer& layer = m.layers[l];
        Matrix z = matmul(layer.W, h);
        if (adapters) {
            std::optional<Matrix> d = adapters->delta_times(l, h);
            if (d) z = add(z, *d);
        }
        z = add_bias(z, layer.b);
        h = apply_activation(layer.activation, z);
    }
    return h;
}

Matrix forward_with_layer_override(const BaseModel& m, const Matrix& x,
                                   size_t layer, const Matrix& w_override) {
    if (layer >= m.layers.size()) throw DimensionError("forward override: bad layer index");
    if (!w_override.same_shape(m.layers[layer].W))
        throw DimensionError("forward override: weight shape mismatch");
    Matrix h = x;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const FrozenLayer& fl = m.layers[l];
        const Matrix& w = (l == layer) ? w_override : fl.W;
        Matrix z = add_bias(matmul(w, h), fl.b);
        h = apply_activation(fl.activation, z);
    }
    return h;
}

int argmax_lowest(const Matrix& logits, size_t col) {
    int best = 0;
    double bv = logits.at(0, col);
    for (size_t i = 1; i < logits.rows; ++i) {
        if (logits.at(i, col) > bv) {
            bv = logits.at(i, col);
            best = static_cast<int>(i);
        }
    }
    return best;
}

double accuracy(const BaseModel& m, const DeltaProvider* adapters, const data::Dataset& ds) {
    if (ds.size() == 0) throw DimensionError("accuracy: empty dataset");
    const Matrix logits = forward(m, ds.inputs, adapters);
    size_t hits = 0;
    for (size_t j = 0; j < ds.size(); ++j)
        if (argmax_lowest(logits, j) == ds.labels[j]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

data::Dataset relabel(const BaseModel& m, Matrix inputs) {
    data::Dataset ds;
    const Matrix logits = forward(m, inputs);
    ds.labels.resize(inputs.cols);
    for (size_t j = 0; j < inputs.cols; ++j) ds.labels[j] = argmax_lowest(logits, j);
    ds.inputs = std::move(inputs);
    return ds;
}

PretrainResult pretrain(const data::TaskSpec& spec, const std::vector<size_t>& hidden,
                        const PretrainConfig& config, Activation hidden_activation) {
    spec.validate();
    const data::Dataset train =
        data::generate(spec, config.samples_per_class, mix_seed(config.seed, 0x7472ULL));
    const data::Dataset holdout =
        data::generate(spec, config.holdout_per_class, mix_seed(config.seed, 0x686FULL));

    // He-uniform init, relu hidden layers, identity head.
    BaseModel m;
    m.input_dim = spec.input_dim;
    m.output_dim = spec.classes;
    m.provenance_task = spec;
    m.pretrain_seed = config.seed;
    Rng rng(mix_seed(config.seed, 0x696E6974ULL));
    std::vector<size_t> dims;
    dims.push_back(spec.input_dim);
    for (size_t h : hidden) dims.push_back(h);
    dims.push_back(spec.classes);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        FrozenLayer layer;
        layer.W = Matrix(dims[l + 1], dims[l]);
        layer.b = Matrix(dims[l + 1], 1);
        const double bound = std::sqrt(6.0 / static_cast<double>(dims[l]));
        for (double& v : layer.W.data) v = rng.uniform(-bound, bound);
        layer.activation =
            (l + 2 == dims.size()) ? Activation::identity : hidden_activation;
        m.layers.push_back(std::move(layer));
    }
    m.validate();

    train::AdamConfig adam;
    adam.weight_decay = config.weight_decay;
    std::vector<train::AdamState> w_state(m.layers.size()), b_state(m.layers.size());
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr =
            train::cosine_lr(epoch, config.epochs, config.learning_rate, 0.0);
        Tape tape;
        std::vector<NodeId> w_nodes(m.layers.size()), b_nodes(m.layers.size());
        NodeId h = tape.constant(train.inputs);
        for (size_t l = 0; l < m.layers.size(); ++l) {
            w_nodes[l] = tape.leaf(m.layers[l].W, true);
            b_nodes[l] = tape.leaf(m.layers[l].b, true);
            NodeId z = tape.add_bias(tape.matmul(w_nodes[l], h), b_nodes[l]);
            switch (m.layers[l].activation) {
                case Activation::relu: h = tape.relu(z); break;
                case Activation::gelu: h = tape.gelu(z); break;
                case Activation::identity: h = z; break;
            }
        }
        NodeId loss = tape.softmax_cross_entropy(h, train.labels, Reduction::mean);
        if (!std::isfinite(tape.value(loss).at(0, 0)))
            throw NumericError("pretrain: loss diverged at epoch " + std::to_string(epoch));
        tape.backward(loss);
        for (size_t l = 0; l < m.layers.size(); ++l) {
            train::adamw_step(m.layers[l].W, tape.grad(w_nodes[l]), w_state[l], adam, lr);
            train::adamw_step(m.layers[l].b, tape.grad(b_nodes[l]), b_state[l], adam, lr);
        }
    }

    PretrainResult out;
    out.model = std::move(m);
    out.train_accuracy = accuracy(out.model, nullptr, train);
    out.holdout_accuracy = accuracy(out.model, nullptr, holdout);
    return out;
}

std::string encode_model_section(const BaseModel& m) {
    std::ostringstream os(std::ios::binary);
    io::write_u32(os, static_cast<uint32_t>(m.layers.size()));
    for (const FrozenLayer& layer : m.layers) {
        io::write_u32(os, static_cast<uint32_t>(layer.activation));
        io::write_matrix(os, layer.W);
        io::write_matrix(os, layer.b);
    }
    io::write_u64(os, m.pretrain_seed);
    io::write_u32(os, static_cast<uint32_t>(m.provenance_task.kind));
    io::write_u64(os, m.provenance_task.classes);
    io::write_u64(os, m.provenance_task.input_dim);
    io::write_f64(os, m.provenance_task.noise);
    io::write_u64(os, m.provenance_task.seed);
    io::write_f64(os, m.provenance_task.rotation);
    io::write_u32(os, static_cast<uint32_t>(m.provenance_task.label_shift));
    io::write_f64(os, m.provenance_task.separation);
    return os.str();
}

BaseModel decode_model_section(const std::string& payload) {
    std::istringstream is(payload, std::ios::binary);
    BaseModel m;
    const uint32_t n_layers = io::read_u32(is);
    for (uint32_t l = 0; l < n_layers; ++l) {
        FrozenLayer layer;
        layer.activation = static_cast<Activation>(io::read_u32(is));
        layer.W = io::read_matrix(is);
        layer.b = io::read_matrix(is);
        m.layers.push_back(std::move(layer));
    }
    m.pretrain_seed = io::read_u64(is);
    m.provenance_task.kind = static_cast<data::TaskKind>(io::read_u32(is));
    m.provenance_task.classes = io::read_u64(is);
    m.provenance_task.input_dim = io::read_u64(is);
    m.provenance_task.noise = io::read_f64(is);
    m.provenance_task.seed = io::read_u64(is);
    m.provenance_task.rotation = io::read_f64(is);
    m.provenance_task.label_shift = static_cast<int>(io::read_u32(is));
    m.provenance_task.separation = io::read_f64(is);
    if (!m.layers.empty()) {
        m.input_dim = m.layers.front().W.cols;
        m.output_dim = m.layers.back().W.rows;
    }
    m.validate();
    return m;
}

void save_checkpoint(const std::string& path, const BaseModel& m) {
    io::write_container(path, {{io::kSectionModel, encode_model_section(m)}});
}

BaseModel load_checkpoint(const std::string& path) {
    for (const io::Section& s : io::read_container(path))
        if (s.tag == io::kSectionModel) return decode_model_section(s.payload);
    throw IoError("checkpoint has no model section: " + path);
}

}  // namespace palora::model

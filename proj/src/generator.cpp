#include "wsvad/generator.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "wsvad/random.h"

namespace wsvad {

namespace fs = std::filesystem;

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_input(const MlpParams& params, const Matrix& feats, const char* op) {
    if (params.layers.empty()) throw ContractViolation(std::string(op) + ": network has no layers");
    if (static_cast<std::size_t>(feats.cols()) != params.input_dim()) {
        throw ContractViolation(std::string(op) + ": features have " + std::to_string(feats.cols()) +
                                " columns, network expects " + std::to_string(params.input_dim()));
    }
}

template <typename F>
void for_each_tensor(const ParamTensors& tensors, F&& f) {
    for (std::size_t l = 0; l < tensors.size(); ++l) {
        f(tensor_name(l, false), tensors[l].weight.data(), static_cast<std::size_t>(tensors[l].weight.size()));
        f(tensor_name(l, true), tensors[l].bias.data(), static_cast<std::size_t>(tensors[l].bias.size()));
    }
}

// Little-endian byte writer/reader for the model file.
class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void tensors(const ParamTensors& t) {
        for (const auto& layer : t) {
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) f64(layer.weight.data()[i]);
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) f64(layer.bias.data()[i]);
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    const std::uint8_t* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("model file truncated at byte " + std::to_string(pos_) + " (needed " +
                              std::to_string(n) + " more, file has " + std::to_string(bytes_.size()) + ")");
        }
        const auto* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    void tensors(ParamTensors& t) {
        for (auto& layer : t) {
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = f64();
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = f64();
        }
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

ParamTensors shaped_zeros(const std::vector<std::uint32_t>& dims) {
    ParamTensors t;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        t.push_back({Matrix::Zero(dims[l], dims[l + 1]), Vector::Zero(dims[l + 1])});
    }
    return t;
}

}  // namespace

std::vector<std::uint32_t> MlpParams::layer_dims() const {
    std::vector<std::uint32_t> dims;
    if (layers.empty()) return dims;
    dims.push_back(static_cast<std::uint32_t>(layers.front().weight.rows()));
    for (const auto& layer : layers) dims.push_back(static_cast<std::uint32_t>(layer.weight.cols()));
    return dims;
}

std::size_t MlpParams::input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows());
}

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
}

std::string tensor_name(std::size_t layer, bool bias) {
    return "layer" + std::to_string(layer + 1) + (bias ? ".bias" : ".weight");
}

MlpParams init_params(std::uint32_t d_in, std::uint64_t seed) {
    return init_params(default_layer_dims(d_in), seed);
}

MlpParams init_params(const std::vector<std::uint32_t>& layer_dims, std::uint64_t seed, double dropout_rate) {
    if (layer_dims.size() < 2) throw ContractViolation("init_params: need at least input and output widths");
    for (auto w : layer_dims) {
        if (w == 0) throw ContractViolation("init_params: layer widths must be positive");
    }
    if (layer_dims.back() != 1) throw ContractViolation("init_params: output layer must have one unit");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ContractViolation("init_params: dropout_rate must lie in [0, 1)");
    }

    Rng rng(seed, /*stream=*/0x1417);
    MlpParams params;
    params.dropout_rate = dropout_rate;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const auto fan_in = layer_dims[l];
        const auto fan_out = layer_dims[l + 1];
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        LayerParams layer{Matrix(fan_in, fan_out), Vector::Zero(fan_out)};
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-a, a);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

AdamState init_adam(const MlpParams& params, double lr) {
    AdamState state;
    state.lr = lr;
    state.first_moment = zeros_like(params);
    state.second_moment = zeros_like(params);
    return state;
}

ParamTensors zeros_like(const MlpParams& params) { return shaped_zeros(params.layer_dims()); }

void accumulate(ParamTensors& into, const ParamTensors& grads) {
    if (into.size() != grads.size()) throw ContractViolation("accumulate: layer count mismatch");
    for (std::size_t l = 0; l < into.size(); ++l) {
        into[l].weight += grads[l].weight;
        into[l].bias += grads[l].bias;
    }
}

ForwardResult forward(const MlpParams& params, const Matrix& feats, Mode mode, std::uint64_t rng_seed) {
    check_input(params, feats, "forward");
    const bool train = mode == Mode::train;
    const bool use_dropout = train && params.dropout_rate > 0.0;
    const double keep_scale = 1.0 / (1.0 - params.dropout_rate);

    ForwardTrace trace;
    std::optional<Rng> rng;
    if (use_dropout) rng.emplace(rng_seed, /*stream=*/0xD0);

    Matrix a = feats;
    const std::size_t n_layers = params.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = params.layers[l];
        Matrix z = a * layer.weight;
        z.rowwise() += layer.bias.transpose();
        if (l + 1 == n_layers) {
            Vector scores(z.rows());
            for (Eigen::Index i = 0; i < z.rows(); ++i) scores[i] = sigmoid(z(i, 0));
            if (!train) return {std::move(scores), std::nullopt};
            trace.pre_activations.push_back(std::move(z));
            trace.scores = scores;
            return {std::move(scores), std::move(trace)};
        }
        a = z.cwiseMax(0.0);
        if (train) {
            Matrix mask = Matrix::Ones(a.rows(), a.cols());
            if (use_dropout) {
                for (Eigen::Index i = 0; i < mask.size(); ++i) {
                    mask.data()[i] = rng->bernoulli(params.dropout_rate) ? 0.0 : keep_scale;
                }
                a = a.cwiseProduct(mask);
            }
            trace.pre_activations.push_back(std::move(z));
            trace.activations.push_back(a);
            trace.dropout_masks.push_back(std::move(mask));
        }
    }
    throw ContractViolation("forward: unreachable");
}

Vector score(const MlpParams& params, const Matrix& feats) {
    return forward(params, feats, Mode::infer).scores;
}

ParamTensors backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& feats,
                      const Vector& score_grads) {
    check_input(params, feats, "backward");
    const std::size_t n_layers = params.layers.size();
    const auto k = feats.rows();
    if (trace.pre_activations.size() != n_layers || trace.activations.size() + 1 != n_layers ||
        trace.dropout_masks.size() + 1 != n_layers || trace.scores.size() != k) {
        throw ContractViolation("backward: trace does not match the network or the batch (stale trace?)");
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (trace.pre_activations[l].rows() != k ||
            trace.pre_activations[l].cols() != params.layers[l].weight.cols()) {
            throw ContractViolation("backward: trace shape mismatch at " + tensor_name(l, false));
        }
    }
    if (score_grads.size() != k) {
        throw ContractViolation("backward: " + std::to_string(score_grads.size()) + " score gradients for " +
                                std::to_string(k) + " rows");
    }

    ParamTensors grads(n_layers);
    // d(loss)/d(z) at the output through the sigmoid.
    Matrix dz(k, 1);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double s = trace.scores[i];
        dz(i, 0) = score_grads[i] * s * (1.0 - s);
    }
    for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix& input = (l == 0) ? feats : trace.activations[l - 1];
        grads[l].weight = input.transpose() * dz;
        grads[l].bias = dz.colwise().sum().transpose();
        if (l == 0) break;
        Matrix da = dz * params.layers[l].weight.transpose();
        da = da.cwiseProduct(trace.dropout_masks[l - 1]);
        const Matrix& z = trace.pre_activations[l - 1];
        dz = (z.array() > 0.0).select(da, 0.0);
    }
    return grads;
}

void adam_step(MlpParams& params, AdamState& state, const ParamTensors& grads) {
    if (grads.size() != params.layers.size() || state.first_moment.size() != params.layers.size() ||
        state.second_moment.size() != params.layers.size()) {
        throw ContractViolation("adam_step: tensor count mismatch");
    }
    for (std::size_t l = 0; l < grads.size(); ++l) {
        const auto& p = params.layers[l];
        for (const LayerParams* t : std::initializer_list<const LayerParams*>{&grads[l], &state.first_moment[l], &state.second_moment[l]}) {
            if (t->weight.rows() != p.weight.rows() || t->weight.cols() != p.weight.cols() ||
                t->bias.size() != p.bias.size()) {
                throw ContractViolation("adam_step: shape mismatch at layer " + std::to_string(l + 1));
            }
        }
    }
    for_each_tensor(grads, [](const std::string& name, const double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(data[i])) throw TrainingError("non-finite gradient in " + name);
        }
    });

    ++state.step_count;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);

    auto update = [&](double* w, double* m, double* v, const double* g, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
        }
    };
    for (std::size_t l = 0; l < grads.size(); ++l) {
        auto& p = params.layers[l];
        auto& m = state.first_moment[l];
        auto& v = state.second_moment[l];
        update(p.weight.data(), m.weight.data(), v.weight.data(), grads[l].weight.data(),
               static_cast<std::size_t>(p.weight.size()));
        update(p.bias.data(), m.bias.data(), v.bias.data(), grads[l].bias.data(),
               static_cast<std::size_t>(p.bias.size()));
    }
}

std::vector<std::uint8_t> encode_model(const GeneratorModel& model) {
    const auto dims = model.params.layer_dims();
    ByteWriter w;
    w.raw("MDL1", 4);
    w.u32(kModelFormatVersion);
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) w.u32(d);
    w.f64(model.params.dropout_rate);
    w.tensors(model.params.layers);
    const auto& opt = model.optimizer;
    w.u64(opt.step_count);
    w.f64(opt.lr);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps_hat);
    w.tensors(opt.first_moment);
    w.tensors(opt.second_moment);
    return w.take();
}

GeneratorModel decode_model(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (std::memcmp(r.take(4), "MDL1", 4) != 0) throw FormatError("not a model file (bad magic)");
    const auto version = r.u32();
    if (version != kModelFormatVersion) {
        throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
    }
    const auto n_dims = r.u32();
    if (n_dims < 2 || n_dims > 64) throw FormatError("model file declares " + std::to_string(n_dims) + " layer widths");
    std::vector<std::uint32_t> dims(n_dims);
    std::uint64_t total = 0;
    for (auto& d : dims) {
        d = r.u32();
        if (d == 0) throw FormatError("model file declares a zero-width layer");
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) total += std::uint64_t{dims[l]} * dims[l + 1] + dims[l + 1];
    // Parameters plus two moment sets must fit in the remaining bytes before allocating.
    if (total * 3 * 8 > bytes.size()) throw FormatError("model file truncated: declared shapes exceed file size");

    GeneratorModel model;
    model.params.dropout_rate = r.f64();
    model.params.layers = shaped_zeros(dims);
    r.tensors(model.params.layers);
    auto& opt = model.optimizer;
    opt.step_count = r.u64();
    opt.lr = r.f64();
    opt.beta1 = r.f64();
    opt.beta2 = r.f64();
    opt.eps_hat = r.f64();
    opt.first_moment = shaped_zeros(dims);
    opt.second_moment = shaped_zeros(dims);
    r.tensors(opt.first_moment);
    r.tensors(opt.second_moment);
    if (!r.done()) throw FormatError("model file has trailing bytes");
    return model;
}

void save_model(const GeneratorModel& model, const fs::path& path) {
    const auto bytes = encode_model(model);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

GeneratorModel load_model(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_model(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace wsvad

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wsvad/core.h"

namespace wsvad {

/// One dense layer: y = x * weight + bias, weight is (fan_in x fan_out).
struct LayerParams {
    Matrix weight;
    Vector bias;
};

/// Same shapes as the network parameters; used for gradients and Adam moments.
using ParamTensors = std::vector<LayerParams>;

/// Clip-score generator: dense layers with ReLU between them and a sigmoid on the
/// single output unit. The default widths are D -> 512 -> 32 -> 1.
struct MlpParams {
    ParamTensors layers;
    double dropout_rate = 0.6;

    std::vector<std::uint32_t> layer_dims() const;
    std::size_t input_dim() const;
    std::size_t parameter_count() const;
};

inline std::vector<std::uint32_t> default_layer_dims(std::uint32_t d_in) { return {d_in, 512, 32, 1}; }

struct AdamState {
    std::uint64_t step_count = 0;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
    ParamTensors first_moment;
    ParamTensors second_moment;
};

/// Parameters plus the optimizer state that trains them.
struct GeneratorModel {
    MlpParams params;
    AdamState optimizer;
};

/// Cached values from a training-mode forward pass, consumed by backward().
struct ForwardTrace {
    std::vector<Matrix> pre_activations;  // z_l = a_{l-1} W_l + b_l, one per layer
    std::vector<Matrix> activations;      // hidden outputs after ReLU and dropout
    std::vector<Matrix> dropout_masks;    // scaled keep masks per hidden layer (1/(1-p) or 0)
    Vector scores;
};

enum class Mode { train, infer };

struct ForwardResult {
    Vector scores;
    std::optional<ForwardTrace> trace;  // present iff mode == train
};

/// Glorot-uniform weights, zero biases. Deterministic per seed.
MlpParams init_params(std::uint32_t d_in, std::uint64_t seed);
MlpParams init_params(const std::vector<std::uint32_t>& layer_dims, std::uint64_t seed,
                      double dropout_rate = 0.6);

/// Zero-initialized moments shaped like `params`.
AdamState init_adam(const MlpParams& params, double lr = 0.001);

ForwardResult forward(const MlpParams& params, const Matrix& feats, Mode mode,
                      std::uint64_t rng_seed = 0);

/// Scores only, no dropout and no trace. Safe to call concurrently.
Vector score(const MlpParams& params, const Matrix& feats);

/// Gradient of the loss with respect to every parameter, given d(loss)/d(scores).
ParamTensors backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& feats,
                      const Vector& score_grads);

ParamTensors zeros_like(const MlpParams& params);
void accumulate(ParamTensors& into, const ParamTensors& grads);

/// In-place Adam update with bias correction. Throws TrainingError naming the
/// offending tensor when a gradient is non-finite; nothing is modified in that case.
void adam_step(MlpParams& params, AdamState& state, const ParamTensors& grads);

/// Name of a parameter tensor, e.g. "layer2.weight".
std::string tensor_name(std::size_t layer, bool bias);

// Model file ("MDL1"): magic, u32 version, u32 layer count, u32 dims, f64 dropout,
// f64 parameters (W then b per layer, row-major), u64 step, f64 lr/beta1/beta2/eps,
// then first and second moments in the same order. All little-endian.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const GeneratorModel& model);
GeneratorModel decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const GeneratorModel& model, const std::filesystem::path& path);
GeneratorModel load_model(const std::filesystem::path& path);

}  // namespace wsvad

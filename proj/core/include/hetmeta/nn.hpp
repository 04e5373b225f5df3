#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hetmeta/params.hpp"
#include "hetmeta/rng.hpp"
#include "hetmeta/tensor.hpp"
#include "hetmeta/types.hpp"

namespace hetmeta::nn {

struct LinearParams {
    Tensor weight; // [out x in]
    Tensor bias;   // [out]
};

struct LSTMCellParams {
    Tensor w_f, w_i, w_o, w_c; // [H x F1]
    Tensor u_f, u_i, u_o, u_c; // [H x H]
    Tensor b_f, b_i, b_o, b_c; // [H]
};

struct TfanParams {
    LSTMCellParams fwd;
    LSTMCellParams bwd;
    // Task embedding g_phi: the config vector is zero-padded to length F3
    // and passed through a 2-layer tanh MLP F3 -> F3 -> F3. Padding keeps
    // the parameter count independent of the modality count (requires
    // M <= F3).
    std::vector<LinearParams> task_embed;
    Tensor attn_v; // [F3]
    Tensor attn_w; // [F3 x (F2+F3)]
};

struct BackboneParams {
    // channels[m] is the 2-layer MLP D_m -> F1 -> F1 for modality m.
    std::vector<std::vector<LinearParams>> channels;
};

struct HeadParams {
    std::vector<LinearParams> layers; // F2 -> F2 -> N_way
};

struct ModelDims {
    std::size_t modality_count = 0;
    std::vector<std::size_t> modality_dims;
    std::size_t f1 = 0;
    std::size_t f2 = 0;
    std::size_t f3 = 0;
    std::size_t n_way = 0;

    std::size_t hidden() const { return f2 / 2; }
    void validate() const;
};

// Forward operations. Inputs may be single samples (rank-1 vectors) or
// batches (rank-2, samples in rows); outputs match.

/// Per-modality encodings z^(m); masked channels produce exact zero
/// vectors and record nothing against their parameters.
std::vector<Tensor> backbone_forward(const BackboneParams& params,
                                     const std::vector<Tensor>& sample,
                                     const ConfigVector& config);

/// One LSTM step; returns (hidden, memory cell).
std::pair<Tensor, Tensor> lstm_cell(const LSTMCellParams& params, const Tensor& z,
                                    const Tensor& h_prev, const Tensor& cell_prev);

/// Bidirectional modality-by-modality aggregation; element m is the
/// concatenation of the forward state through m and the backward state
/// down to m. Initial states are zero.
std::vector<Tensor> iterative_aggregate(const TfanParams& params,
                                        const std::vector<Tensor>& z_seq);

/// Task embedding tau from the config vector (deterministic in config).
Tensor task_embed(const TfanParams& params, const ConfigVector& config, std::size_t f3);

/// Attention pooling over the aggregated states, conditioned on tau.
/// Returns (h_star, coefficients); coefficients sum to 1 per sample.
std::pair<Tensor, Tensor> attention_aggregate(const TfanParams& params,
                                              const std::vector<Tensor>& hidden,
                                              const Tensor& tau);

Tensor head_forward(const HeadParams& params, const Tensor& h_star);

// Parameter construction.

/// Adds a linear layer's weight and bias under `name.w` / `name.b`.
/// Weights are Xavier-uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
void add_linear(ParamSet& params, const std::string& name, std::size_t out_dim,
                std::size_t in_dim, Rng& rng, ParamTag tag);

/// Full HetMAML parameter set: backbone channels and the attention /
/// task-embedding networks are external, the aggregation LSTMs and the
/// head are internal. LSTM forget-gate biases start at 1, every other
/// bias at 0. Deterministic given the seed.
ParamSet init_params(const ModelDims& dims, std::uint64_t seed);

// Typed views over a parameter lookup (base set plus adapted overrides).
BackboneParams backbone_from(const ParamLookup& look, const ModelDims& dims);
TfanParams tfan_from(const ParamLookup& look, const ModelDims& dims);
HeadParams head_from(const ParamLookup& look, const ModelDims& dims);

LinearParams linear_from(const ParamLookup& look, const std::string& name);

/// Closed-form TFAN parameter count; independent of the modality count.
std::size_t tfan_param_count(std::size_t f1, std::size_t f2, std::size_t f3);

/// Sum of element counts over parameters whose name starts with prefix.
std::size_t count_elements_with_prefix(const ParamSet& params, const std::string& prefix);

} // namespace hetmeta::nn

#include "hetmeta/nn.hpp"

#include <cmath>

#include "hetmeta/error.hpp"
#include "hetmeta/ops.hpp"

namespace hetmeta::nn {

namespace {

Shape batched_shape(const Tensor& like, std::size_t feature_dim) {
    if (like.rank() == 2) return {like.shape()[0], feature_dim};
    return {feature_dim};
}

std::size_t last_axis(const Tensor& t) { return t.rank() - 1; }

Tensor mlp2_forward(const std::vector<LinearParams>& layers, const Tensor& x) {
    Tensor h = x;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        h = hetmeta::tanh(linear(h, layers[i].weight, layers[i].bias));
    }
    return linear(h, layers.back().weight, layers.back().bias);
}

} // namespace

void ModelDims::validate() const {
    if (modality_count == 0 || modality_dims.size() != modality_count) {
        throw ValueError("model dims: modality_dims must list all " +
                         std::to_string(modality_count) + " modalities");
    }
    for (std::size_t d : modality_dims) {
        if (d == 0) throw ValueError("model dims: modality dimensions must be positive");
    }
    if (f1 == 0 || f2 == 0 || f3 == 0 || n_way == 0) {
        throw ValueError("model dims: F1, F2, F3 and N_way must be positive");
    }
    if (f2 % 2 != 0) {
        throw ValueError("model dims: F2 must be even (per-direction hidden size is F2/2)");
    }
    if (modality_count > f3) {
        throw ValueError("model dims: M = " + std::to_string(modality_count) +
                         " exceeds F3 = " + std::to_string(f3) +
                         "; the config vector is zero-padded to F3");
    }
}

std::vector<Tensor> backbone_forward(const BackboneParams& params,
                                     const std::vector<Tensor>& sample,
                                     const ConfigVector& config) {
    const std::size_t m_count = params.channels.size();
    if (sample.size() != m_count || config.size() != m_count) {
        throw ValueError("backbone: got " + std::to_string(sample.size()) + " modalities and " +
                         std::to_string(config.size()) + " config entries for " +
                         std::to_string(m_count) + " channels");
    }
    std::vector<Tensor> out;
    out.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        const auto& layers = params.channels[m];
        const std::size_t f1 = layers.back().weight.shape()[0];
        const std::size_t d_m = layers.front().weight.shape()[1];
        if (sample[m].shape().back() != d_m) {
            throw ShapeError("backbone channel " + std::to_string(m) + ": input " +
                             shape_str(sample[m].shape()) + " does not end in D_m = " +
                             std::to_string(d_m));
        }
        if (config[m]) {
            out.push_back(mlp2_forward(layers, sample[m]));
        } else {
            // Absent modality: exact zero embedding, no tape entries
            // against this channel's parameters.
            out.push_back(Tensor::zeros(batched_shape(sample[m], f1)));
        }
    }
    return out;
}

std::pair<Tensor, Tensor> lstm_cell(const LSTMCellParams& params, const Tensor& z,
                                    const Tensor& h_prev, const Tensor& cell_prev) {
    auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
        return add(linear(z, w, b), linear(h_prev, u, Tensor{}));
    };
    Tensor v_f = sigmoid(gate(params.w_f, params.u_f, params.b_f));
    Tensor v_i = sigmoid(gate(params.w_i, params.u_i, params.b_i));
    Tensor v_o = sigmoid(gate(params.w_o, params.u_o, params.b_o));
    Tensor v_c_tilde = hetmeta::tanh(gate(params.w_c, params.u_c, params.b_c));
    Tensor cell = add(mul(v_f, cell_prev), mul(v_i, v_c_tilde));
    Tensor h = mul(v_o, hetmeta::tanh(cell));
    return {h, cell};
}

std::vector<Tensor> iterative_aggregate(const TfanParams& params,
                                        const std::vector<Tensor>& z_seq) {
    if (z_seq.empty()) throw ValueError("iterative_aggregate: empty modality sequence");
    const std::size_t m_count = z_seq.size();
    const std::size_t hidden = params.fwd.u_f.shape()[0];
    const Shape state_shape = batched_shape(z_seq[0], hidden);

    std::vector<Tensor> fwd_states(m_count);
    {
        Tensor h = Tensor::zeros(state_shape);
        Tensor cell = Tensor::zeros(state_shape);
        for (std::size_t m = 0; m < m_count; ++m) {
            std::tie(h, cell) = lstm_cell(params.fwd, z_seq[m], h, cell);
            fwd_states[m] = h;
        }
    }
    std::vector<Tensor> bwd_states(m_count);
    {
        Tensor h = Tensor::zeros(state_shape);
        Tensor cell = Tensor::zeros(state_shape);
        for (std::size_t m = m_count; m-- > 0;) {
            std::tie(h, cell) = lstm_cell(params.bwd, z_seq[m], h, cell);
            bwd_states[m] = h;
        }
    }
    std::vector<Tensor> out;
    out.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        out.push_back(concat({fwd_states[m], bwd_states[m]}, last_axis(fwd_states[m])));
    }
    return out;
}

Tensor task_embed(const TfanParams& params, const ConfigVector& config, std::size_t f3) {
    if (config.size() > f3) {
        throw ValueError("task_embed: config length " + std::to_string(config.size()) +
                         " exceeds F3 = " + std::to_string(f3));
    }
    std::vector<double> padded(f3, 0.0);
    for (std::size_t m = 0; m < config.size(); ++m) padded[m] = config[m] ? 1.0 : 0.0;
    Tensor c = Tensor::from_vector(std::move(padded));
    return mlp2_forward(params.task_embed, c);
}

std::pair<Tensor, Tensor> attention_aggregate(const TfanParams& params,
                                              const std::vector<Tensor>& hidden,
                                              const Tensor& tau) {
    if (hidden.empty()) throw ValueError("attention: empty hidden sequence");
    const std::size_t m_count = hidden.size();
    const bool batched = hidden[0].rank() == 2;

    Tensor tau_in = tau;
    if (batched) {
        tau_in = broadcast_to(tau, {hidden[0].shape()[0], tau.shape()[0]});
    }
    std::vector<Tensor> scores;
    scores.reserve(m_count);
    for (const Tensor& h : hidden) {
        Tensor u = hetmeta::tanh(
            linear(concat({h, tau_in}, last_axis(h)), params.attn_w, Tensor{}));
        scores.push_back(batched ? matvec(u, params.attn_v) : dot(params.attn_v, u));
    }

    Tensor coeffs; // [M] or [B x M]
    if (batched) {
        coeffs = softmax(transpose(stack(scores)));
    } else {
        coeffs = softmax(stack(scores));
    }

    Tensor h_star;
    for (std::size_t m = 0; m < m_count; ++m) {
        Tensor a_m;
        if (batched) {
            Tensor col = reshape(slice(coeffs, 1, m, 1), {coeffs.shape()[0]});
            a_m = broadcast_last(col, hidden[m].shape()[1]);
        } else {
            a_m = broadcast_to(index_leading(coeffs, m), hidden[m].shape());
        }
        Tensor term = mul(a_m, hidden[m]);
        h_star = h_star.defined() ? add(h_star, term) : term;
    }
    return {h_star, coeffs};
}

Tensor head_forward(const HeadParams& params, const Tensor& h_star) {
    return mlp2_forward(params.layers, h_star);
}

void add_linear(ParamSet& params, const std::string& name, std::size_t out_dim,
                std::size_t in_dim, Rng& rng, ParamTag tag) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    params.add(name + ".w", Tensor::uniform({out_dim, in_dim}, rng, -limit, limit), tag);
    params.add(name + ".b", Tensor::zeros({out_dim}), tag);
}

namespace {

void add_lstm_cell(ParamSet& params, const std::string& prefix, std::size_t hidden,
                   std::size_t f1, Rng& rng) {
    const char* gates[4] = {"f", "i", "o", "c"};
    for (const char* gname : gates) {
        const double wl = std::sqrt(6.0 / static_cast<double>(f1 + hidden));
        params.add(prefix + ".w_" + gname, Tensor::uniform({hidden, f1}, rng, -wl, wl),
                   ParamTag::Internal);
    }
    for (const char* gname : gates) {
        const double ul = std::sqrt(6.0 / static_cast<double>(hidden + hidden));
        params.add(prefix + ".u_" + gname, Tensor::uniform({hidden, hidden}, rng, -ul, ul),
                   ParamTag::Internal);
    }
    // Forget-gate biases start at 1, the rest at 0.
    params.add(prefix + ".b_f", Tensor::ones({hidden}), ParamTag::Internal);
    params.add(prefix + ".b_i", Tensor::zeros({hidden}), ParamTag::Internal);
    params.add(prefix + ".b_o", Tensor::zeros({hidden}), ParamTag::Internal);
    params.add(prefix + ".b_c", Tensor::zeros({hidden}), ParamTag::Internal);
}

LSTMCellParams lstm_from(const ParamLookup& look, const std::string& prefix) {
    LSTMCellParams p;
    p.w_f = look(prefix + ".w_f");
    p.w_i = look(prefix + ".w_i");
    p.w_o = look(prefix + ".w_o");
    p.w_c = look(prefix + ".w_c");
    p.u_f = look(prefix + ".u_f");
    p.u_i = look(prefix + ".u_i");
    p.u_o = look(prefix + ".u_o");
    p.u_c = look(prefix + ".u_c");
    p.b_f = look(prefix + ".b_f");
    p.b_i = look(prefix + ".b_i");
    p.b_o = look(prefix + ".b_o");
    p.b_c = look(prefix + ".b_c");
    return p;
}

} // namespace

ParamSet init_params(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    ParamSet params;

    for (std::size_t m = 0; m < dims.modality_count; ++m) {
        const std::string prefix = "backbone.ch" + std::to_string(m);
        add_linear(params, prefix + ".l0", dims.f1, dims.modality_dims[m], rng,
                   ParamTag::External);
        add_linear(params, prefix + ".l1", dims.f1, dims.f1, rng, ParamTag::External);
    }

    const std::size_t hidden = dims.hidden();
    add_lstm_cell(params, "tfan.fwd", hidden, dims.f1, rng);
    add_lstm_cell(params, "tfan.bwd", hidden, dims.f1, rng);

    add_linear(params, "tfan.embed.l0", dims.f3, dims.f3, rng, ParamTag::External);
    add_linear(params, "tfan.embed.l1", dims.f3, dims.f3, rng, ParamTag::External);

    {
        const double vl = std::sqrt(6.0 / static_cast<double>(dims.f3 + 1));
        params.add("tfan.attn.v", Tensor::uniform({dims.f3}, rng, -vl, vl),
                   ParamTag::External);
        const double wl = std::sqrt(6.0 / static_cast<double>(dims.f2 + dims.f3 + dims.f3));
        params.add("tfan.attn.w",
                   Tensor::uniform({dims.f3, dims.f2 + dims.f3}, rng, -wl, wl),
                   ParamTag::External);
    }

    add_linear(params, "head.l0", dims.f2, dims.f2, rng, ParamTag::Internal);
    add_linear(params, "head.l1", dims.n_way, dims.f2, rng, ParamTag::Internal);

    return params;
}

LinearParams linear_from(const ParamLookup& look, const std::string& name) {
    return LinearParams{look(name + ".w"), look(name + ".b")};
}

BackboneParams backbone_from(const ParamLookup& look, const ModelDims& dims) {
    BackboneParams out;
    out.channels.reserve(dims.modality_count);
    for (std::size_t m = 0; m < dims.modality_count; ++m) {
        const std::string prefix = "backbone.ch" + std::to_string(m);
        out.channels.push_back(
            {linear_from(look, prefix + ".l0"), linear_from(look, prefix + ".l1")});
    }
    return out;
}

TfanParams tfan_from(const ParamLookup& look, const ModelDims& dims) {
    (void)dims;
    TfanParams out;
    out.fwd = lstm_from(look, "tfan.fwd");
    out.bwd = lstm_from(look, "tfan.bwd");
    out.task_embed = {linear_from(look, "tfan.embed.l0"), linear_from(look, "tfan.embed.l1")};
    out.attn_v = look("tfan.attn.v");
    out.attn_w = look("tfan.attn.w");
    return out;
}

HeadParams head_from(const ParamLookup& look, const ModelDims& dims) {
    (void)dims;
    HeadParams out;
    out.layers = {linear_from(look, "head.l0"), linear_from(look, "head.l1")};
    return out;
}

std::size_t tfan_param_count(std::size_t f1, std::size_t f2, std::size_t f3) {
    const std::size_t h = f2 / 2;
    const std::size_t iter = 2 * 4 * (f1 * h + h * h + h);
    const std::size_t embed = 2 * (f3 * f3 + f3);
    const std::size_t attn = f3 + f3 * (f2 + f3);
    return iter + embed + attn;
}

std::size_t count_elements_with_prefix(const ParamSet& params, const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& e : params.entries()) {
        if (e.name.rfind(prefix, 0) == 0) n += e.tensor.size();
    }
    return n;
}

} // namespace hetmeta::nn

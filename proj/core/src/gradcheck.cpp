#include "hetmeta/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "hetmeta/error.hpp"
#include "hetmeta/maml.hpp"
#include "hetmeta/nn.hpp"
#include "hetmeta/ops.hpp"
#include "hetmeta/tape.hpp"

namespace hetmeta::gradcheck {

double relative_error(double a, double b, double floor) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

namespace {

Tensor with_coordinate(const Tensor& t, std::size_t j, double value) {
    std::vector<double> data(t.data().begin(), t.data().end());
    data[j] = value;
    return Tensor::from_data(t.shape(), std::move(data));
}

double eval_scalar(const LossFn& fn, const std::vector<Tensor>& at) {
    const Tensor out = fn(at);
    return out.value();
}

} // namespace

std::vector<Tensor> finite_diff_grads(const LossFn& fn, const std::vector<Tensor>& at,
                                      double step) {
    std::vector<Tensor> grads;
    grads.reserve(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) {
        std::vector<double> g(at[i].size());
        for (std::size_t j = 0; j < at[i].size(); ++j) {
            std::vector<Tensor> probe = at;
            const double x = at[i][j];
            probe[i] = with_coordinate(at[i], j, x + step);
            const double up = eval_scalar(fn, probe);
            probe[i] = with_coordinate(at[i], j, x - step);
            const double down = eval_scalar(fn, probe);
            g[j] = (up - down) / (2.0 * step);
        }
        grads.push_back(Tensor::from_data(at[i].shape(), std::move(g)));
    }
    return grads;
}

double max_grad_discrepancy(const LossFn& fn, const std::vector<Tensor>& at, double step) {
    GradMap grads;
    {
        Tape tape;
        for (const Tensor& t : at) tape.watch(t);
        Tensor loss = fn(at);
        grads = tape.gradient(loss);
    }
    const std::vector<Tensor> fd = finite_diff_grads(fn, at, step);
    double worst = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) {
        const Tensor& analytic = grads.at(at[i]);
        for (std::size_t j = 0; j < at[i].size(); ++j) {
            worst = std::max(worst, relative_error(analytic[j], fd[i][j]));
        }
    }
    return worst;
}

namespace {

constexpr std::size_t kM = 3;
constexpr std::size_t kF1 = 4;
constexpr std::size_t kF2 = 4;
constexpr std::size_t kF3 = 3;
constexpr std::size_t kH = kF2 / 2;
constexpr std::size_t kNWay = 2;

Tensor rnd(Shape shape, Rng& rng) { return Tensor::uniform(std::move(shape), rng, -0.8, 0.8); }

nn::LSTMCellParams lstm_slice(const std::vector<Tensor>& v, std::size_t base) {
    nn::LSTMCellParams p;
    p.w_f = v[base + 0];
    p.w_i = v[base + 1];
    p.w_o = v[base + 2];
    p.w_c = v[base + 3];
    p.u_f = v[base + 4];
    p.u_i = v[base + 5];
    p.u_o = v[base + 6];
    p.u_c = v[base + 7];
    p.b_f = v[base + 8];
    p.b_i = v[base + 9];
    p.b_o = v[base + 10];
    p.b_c = v[base + 11];
    return p;
}

std::vector<Tensor> lstm_tensors(Rng& rng, std::size_t in_dim) {
    std::vector<Tensor> v;
    for (int i = 0; i < 4; ++i) v.push_back(rnd({kH, in_dim}, rng));
    for (int i = 0; i < 4; ++i) v.push_back(rnd({kH, kH}, rng));
    for (int i = 0; i < 4; ++i) v.push_back(rnd({kH}, rng));
    return v;
}

double check_linear(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = {rnd({3, kF1}, rng), rnd({kF2, kF1}, rng), rnd({kF2}, rng)};
    const LossFn fn = [](const std::vector<Tensor>& v) {
        Tensor y = linear(v[0], v[1], v[2]);
        return mean_all(mul(y, y));
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_lstm(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = lstm_tensors(rng, kF1);
    at.push_back(rnd({kF1}, rng)); // z
    at.push_back(rnd({kH}, rng));  // h_prev
    at.push_back(rnd({kH}, rng));  // cell_prev
    const LossFn fn = [](const std::vector<Tensor>& v) {
        const nn::LSTMCellParams p = lstm_slice(v, 0);
        const auto [h, cell] = nn::lstm_cell(p, v[12], v[13], v[14]);
        return add(sum_all(mul(h, h)), sum_all(mul(cell, cell)));
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_bilstm(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = lstm_tensors(rng, kF1); // fwd
    {
        auto bwd = lstm_tensors(rng, kF1);
        at.insert(at.end(), bwd.begin(), bwd.end());
    }
    for (std::size_t m = 0; m < kM; ++m) at.push_back(rnd({kF1}, rng));
    const LossFn fn = [](const std::vector<Tensor>& v) {
        nn::TfanParams p;
        p.fwd = lstm_slice(v, 0);
        p.bwd = lstm_slice(v, 12);
        const std::vector<Tensor> z(v.begin() + 24, v.begin() + 24 + kM);
        const std::vector<Tensor> h = nn::iterative_aggregate(p, z);
        Tensor loss;
        for (const Tensor& hm : h) {
            Tensor term = sum_all(mul(hm, hm));
            loss = loss.defined() ? add(loss, term) : term;
        }
        return loss;
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_attention(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at;
    at.push_back(rnd({kF3}, rng));            // v
    at.push_back(rnd({kF3, kF2 + kF3}, rng)); // W_h
    at.push_back(rnd({kF3}, rng));            // tau
    for (std::size_t m = 0; m < kM; ++m) at.push_back(rnd({kF2}, rng));
    const LossFn fn = [](const std::vector<Tensor>& v) {
        nn::TfanParams p;
        p.attn_v = v[0];
        p.attn_w = v[1];
        const std::vector<Tensor> hidden(v.begin() + 3, v.begin() + 3 + kM);
        const auto [h_star, coeffs] = nn::attention_aggregate(p, hidden, v[2]);
        return add(sum_all(mul(h_star, h_star)), sum_all(mul(coeffs, coeffs)));
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_backbone(std::uint64_t seed) {
    Rng rng(seed);
    const std::vector<std::size_t> dims = {3, 2, 2};
    std::vector<Tensor> at;
    for (std::size_t m = 0; m < kM; ++m) {
        at.push_back(rnd({kF1, dims[m]}, rng));
        at.push_back(rnd({kF1}, rng));
        at.push_back(rnd({kF1, kF1}, rng));
        at.push_back(rnd({kF1}, rng));
    }
    for (std::size_t m = 0; m < kM; ++m) at.push_back(rnd({dims[m]}, rng));
    const LossFn fn = [](const std::vector<Tensor>& v) {
        nn::BackboneParams p;
        std::vector<Tensor> xs;
        for (std::size_t m = 0; m < kM; ++m) {
            p.channels.push_back({nn::LinearParams{v[4 * m], v[4 * m + 1]},
                                  nn::LinearParams{v[4 * m + 2], v[4 * m + 3]}});
            xs.push_back(v[4 * kM + m]);
        }
        const std::vector<Tensor> z = nn::backbone_forward(p, xs, ConfigVector(kM, 1));
        Tensor loss;
        for (const Tensor& zm : z) {
            Tensor term = sum_all(mul(zm, zm));
            loss = loss.defined() ? add(loss, term) : term;
        }
        return loss;
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_embed(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = {rnd({kF3, kF3}, rng), rnd({kF3}, rng), rnd({kF3, kF3}, rng),
                              rnd({kF3}, rng)};
    const LossFn fn = [](const std::vector<Tensor>& v) {
        nn::TfanParams p;
        p.task_embed = {nn::LinearParams{v[0], v[1]}, nn::LinearParams{v[2], v[3]}};
        const Tensor tau = nn::task_embed(p, ConfigVector{1, 0, 1}, kF3);
        return sum_all(mul(tau, tau));
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_head(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = {rnd({kF2, kF2}, rng), rnd({kF2}, rng), rnd({kNWay, kF2}, rng),
                              rnd({kNWay}, rng), rnd({kF2}, rng)};
    const LossFn fn = [](const std::vector<Tensor>& v) {
        nn::HeadParams p;
        p.layers = {nn::LinearParams{v[0], v[1]}, nn::LinearParams{v[2], v[3]}};
        const Tensor logits = nn::head_forward(p, v[4]);
        return cross_entropy_loss(logits, 0);
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

double check_cross_entropy(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> at = {Tensor::uniform({5}, rng, -3.0, 3.0)};
    const LossFn fn = [](const std::vector<Tensor>& v) {
        return cross_entropy_loss(v[0], 2);
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

struct TinySetup {
    nn::ModelDims dims;
    maml::HetMamlModel model;
    tasks::TaskInstance task;

    explicit TinySetup(std::uint64_t seed)
        : dims{make_dims()}, model(dims, seed), task(make_task(seed)) {}

    static nn::ModelDims make_dims() {
        nn::ModelDims d;
        d.modality_count = 2;
        d.modality_dims = {3, 2};
        d.f1 = kF1;
        d.f2 = kF2;
        d.f3 = kF3;
        d.n_way = kNWay;
        return d;
    }

    static tasks::TaskInstance make_task(std::uint64_t seed) {
        Rng rng(derive_seed(seed, 17));
        tasks::TaskInstance t;
        t.type_id = 0;
        t.config = {1, 1};
        auto make_sample = [&](std::size_t label) {
            tasks::LabeledSample s;
            s.label = label;
            s.modalities = {{rng.normal(), rng.normal(), rng.normal()},
                            {rng.normal(), rng.normal()}};
            return s;
        };
        for (std::size_t n = 0; n < kNWay; ++n) t.support.push_back(make_sample(n));
        for (std::size_t n = 0; n < kNWay; ++n) {
            t.query.push_back(make_sample(n));
            t.query.push_back(make_sample(n));
        }
        return t;
    }
};

double check_forward(std::uint64_t seed) {
    const TinySetup setup(seed);
    std::vector<Tensor> at;
    std::vector<std::string> names;
    for (const auto& e : setup.model.params().entries()) {
        names.push_back(e.name);
        at.push_back(e.tensor);
    }
    const LossFn fn = [&](const std::vector<Tensor>& v) {
        maml::AdaptedParams overrides;
        for (std::size_t i = 0; i < v.size(); ++i) overrides.emplace_back(names[i], v[i]);
        const ParamLookup look(setup.model.params(), overrides);
        const Tensor logits =
            maml::forward(setup.model, look, setup.task.support[0], setup.task.config);
        return cross_entropy_loss(logits, setup.task.support[0].label);
    };
    return max_grad_discrepancy(fn, at, 1e-6);
}

// Exact second-order meta-gradient versus finite differences of the full
// bilevel objective (one inner step).
double check_meta(std::uint64_t seed) {
    const TinySetup setup(seed);
    maml::TrainConfig cfg;
    cfg.alpha = 0.05;
    cfg.inner_steps = 1;
    cfg.second_order = true;

    std::vector<Tensor> at;
    std::vector<std::string> names;
    for (const std::string& name : setup.model.internal_names()) {
        names.push_back(name);
        at.push_back(setup.model.params().get(name));
    }
    const maml::PreparedTask prep = setup.model.prepare(setup.task, setup.task.config);
    const LossFn fn = [&](const std::vector<Tensor>& v) {
        maml::AdaptedParams theta;
        for (std::size_t i = 0; i < v.size(); ++i) theta.emplace_back(names[i], v[i]);
        for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
            theta = maml::inner_step(setup.model, prep, theta, cfg.alpha, cfg.second_order);
        }
        const Tensor logits =
            setup.model.logits(prep, true, ParamLookup(setup.model.params(), theta));
        return cross_entropy_mean(logits, prep.query_labels);
    };
    return max_grad_discrepancy(fn, at, 1e-5);
}

} // namespace

std::vector<CheckSpec> standard_checks() {
    return {
        {"linear", 1e-5, 1e-6, check_linear},
        {"lstm", 1e-5, 1e-6, check_lstm},
        {"bilstm", 1e-5, 1e-6, check_bilstm},
        {"attention", 1e-5, 1e-6, check_attention},
        {"backbone", 1e-5, 1e-6, check_backbone},
        {"task-embed", 1e-5, 1e-6, check_embed},
        {"head", 1e-5, 1e-6, check_head},
        {"cross-entropy", 1e-5, 1e-6, check_cross_entropy},
        {"forward", 1e-5, 1e-6, check_forward},
        {"meta-gradient", 1e-4, 1e-5, check_meta},
    };
}

std::vector<CheckResult> run_checks(const std::string& filter, std::size_t seeds) {
    const std::vector<CheckSpec> all = standard_checks();
    // An exact name wins; otherwise the filter is a substring.
    bool exact = false;
    for (const CheckSpec& spec : all) exact = exact || spec.name == filter;
    std::vector<CheckResult> results;
    for (const CheckSpec& spec : all) {
        if (!filter.empty() &&
            (exact ? spec.name != filter : spec.name.find(filter) == std::string::npos)) {
            continue;
        }
        CheckResult r;
        r.name = spec.name;
        r.tolerance = spec.tolerance;
        r.seeds = seeds;
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t s = 0; s < seeds; ++s) {
            r.max_rel_err = std::max(r.max_rel_err, spec.run(1000 + 7 * s));
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.pass = r.max_rel_err < r.tolerance;
        results.push_back(std::move(r));
    }
    if (results.empty()) {
        throw ValueError("gradcheck: no check matches filter '" + filter + "'");
    }
    return results;
}

} // namespace hetmeta::gradcheck

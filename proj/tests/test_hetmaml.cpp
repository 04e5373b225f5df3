#include <doctest.h>

#include <cmath>
#include <vector>

#include "hetmeta/error.hpp"
#include "hetmeta/gradcheck.hpp"
#include "hetmeta/maml.hpp"
#include "hetmeta/ops.hpp"

using namespace hetmeta;

namespace {

nn::ModelDims tiny_dims() {
    nn::ModelDims d;
    d.modality_count = 2;
    d.modality_dims = {3, 2};
    d.f1 = 4;
    d.f2 = 4;
    d.f3 = 3;
    d.n_way = 2;
    return d;
}

tasks::TaskInstance tiny_task(std::uint64_t seed, ConfigVector mask = {1, 1}) {
    Rng rng(seed);
    tasks::TaskInstance t;
    t.type_id = 0;
    t.config = mask;
    auto make_sample = [&](std::size_t label) {
        tasks::LabeledSample s;
        s.label = label;
        s.modalities = {{0, 0, 0}, {0, 0}};
        for (std::size_t m = 0; m < 2; ++m) {
            if (!mask[m]) continue;
            for (double& v : s.modalities[m]) v = rng.normal(label ? 1.5 : -1.5, 0.5);
        }
        return s;
    };
    for (std::size_t n = 0; n < 2; ++n) {
        t.support.push_back(make_sample(n));
        t.support.push_back(make_sample(n));
    }
    for (std::size_t n = 0; n < 2; ++n) {
        for (int k = 0; k < 3; ++k) t.query.push_back(make_sample(n));
    }
    return t;
}

// Raw-double straight-line evaluation of the full composition, coded
// independently of the tensor ops.
struct RawModel {
    const ParamSet& p;
    const nn::ModelDims dims;

    std::vector<double> linear_raw(const std::string& name,
                                   const std::vector<double>& x) const {
        const Tensor& w = p.get(name + ".w");
        const Tensor& b = p.get(name + ".b");
        std::vector<double> out(w.shape()[0]);
        for (std::size_t o = 0; o < out.size(); ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < x.size(); ++i) s += w.at(o, i) * x[i];
            out[o] = s;
        }
        return out;
    }

    std::vector<double> mlp2(const std::string& prefix, std::vector<double> x) const {
        x = linear_raw(prefix + ".l0", x);
        for (double& v : x) v = std::tanh(v);
        return linear_raw(prefix + ".l1", x);
    }

    struct State {
        std::vector<double> h, c;
    };

    State lstm(const std::string& prefix, const std::vector<double>& z,
               const State& prev) const {
        const std::size_t hd = dims.hidden();
        auto gate = [&](const char* g, std::size_t i) {
            const Tensor& w = p.get(prefix + ".w_" + g);
            const Tensor& u = p.get(prefix + ".u_" + g);
            const Tensor& b = p.get(prefix + ".b_" + g);
            double s = b[i];
            for (std::size_t j = 0; j < z.size(); ++j) s += w.at(i, j) * z[j];
            for (std::size_t j = 0; j < hd; ++j) s += u.at(i, j) * prev.h[j];
            return s;
        };
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        State next;
        next.h.resize(hd);
        next.c.resize(hd);
        for (std::size_t i = 0; i < hd; ++i) {
            const double vf = sig(gate("f", i));
            const double vi = sig(gate("i", i));
            const double vo = sig(gate("o", i));
            const double vc = std::tanh(gate("c", i));
            next.c[i] = vf * prev.c[i] + vi * vc;
            next.h[i] = vo * std::tanh(next.c[i]);
        }
        return next;
    }

    std::vector<double> logits(const tasks::LabeledSample& sample,
                               const ConfigVector& c) const {
        const std::size_t m_count = dims.modality_count;
        std::vector<std::vector<double>> z(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            if (c[m]) {
                z[m] = mlp2("backbone.ch" + std::to_string(m), sample.modalities[m]);
            } else {
                z[m].assign(dims.f1, 0.0);
            }
        }
        const std::size_t hd = dims.hidden();
        std::vector<State> fwd(m_count), bwd(m_count);
        State s{std::vector<double>(hd, 0.0), std::vector<double>(hd, 0.0)};
        for (std::size_t m = 0; m < m_count; ++m) {
            s = lstm("tfan.fwd", z[m], s);
            fwd[m] = s;
        }
        s = State{std::vector<double>(hd, 0.0), std::vector<double>(hd, 0.0)};
        for (std::size_t m = m_count; m-- > 0;) {
            s = lstm("tfan.bwd", z[m], s);
            bwd[m] = s;
        }
        std::vector<std::vector<double>> hcat(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            hcat[m] = fwd[m].h;
            hcat[m].insert(hcat[m].end(), bwd[m].h.begin(), bwd[m].h.end());
        }

        std::vector<double> cpad(dims.f3, 0.0);
        for (std::size_t m = 0; m < c.size(); ++m) cpad[m] = c[m];
        const std::vector<double> tau = mlp2("tfan.embed", cpad);

        const Tensor& v = p.get("tfan.attn.v");
        const Tensor& wh = p.get("tfan.attn.w");
        std::vector<double> scores(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            std::vector<double> cat = hcat[m];
            cat.insert(cat.end(), tau.begin(), tau.end());
            double sc = 0.0;
            for (std::size_t r = 0; r < dims.f3; ++r) {
                double u = 0.0;
                for (std::size_t cidx = 0; cidx < cat.size(); ++cidx) {
                    u += wh.at(r, cidx) * cat[cidx];
                }
                sc += v[r] * std::tanh(u);
            }
            scores[m] = sc;
        }
        double mx = scores[0];
        for (double sc : scores) mx = std::max(mx, sc);
        double denom = 0.0;
        std::vector<double> att(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            att[m] = std::exp(scores[m] - mx);
            denom += att[m];
        }
        for (double& a : att) a /= denom;

        std::vector<double> h_star(dims.f2, 0.0);
        for (std::size_t m = 0; m < m_count; ++m) {
            for (std::size_t j = 0; j < dims.f2; ++j) h_star[j] += att[m] * hcat[m][j];
        }
        return mlp2("head", h_star);
    }
};

void zero_all_params(ParamSet& params) {
    for (const auto& e : params.entries()) {
        params.set(e.name, Tensor::zeros(e.tensor.shape()));
    }
}

} // namespace

TEST_CASE("forward: all-zero parameters predict uniformly") {
    maml::HetMamlModel model(tiny_dims(), 1);
    zero_all_params(model.params());
    const tasks::TaskInstance task = tiny_task(2);
    Tensor logits = maml::forward(model, ParamLookup(model.params()), task.support[0],
                                  task.config);
    REQUIRE(logits.shape() == Shape{2});
    CHECK(logits[0] == 0.0);
    CHECK(logits[1] == 0.0);
}

TEST_CASE("forward: M=1 collapses to a single-token BiLSTM with A=[1]") {
    nn::ModelDims dims = tiny_dims();
    dims.modality_count = 1;
    dims.modality_dims = {3};
    maml::HetMamlModel model(dims, 3);

    tasks::LabeledSample sample;
    sample.label = 0;
    sample.modalities = {{0.4, -0.2, 0.9}};
    const ConfigVector c = {1};

    const ParamLookup look(model.params());
    const nn::TfanParams tfan = nn::tfan_from(look, dims);
    const auto z = nn::backbone_forward(nn::backbone_from(look, dims),
                                        {Tensor::from_vector(sample.modalities[0])}, c);
    const auto hidden = nn::iterative_aggregate(tfan, z);
    const auto [h_star, coeffs] =
        nn::attention_aggregate(tfan, hidden, nn::task_embed(tfan, c, dims.f3));
    CHECK(coeffs[0] == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t j = 0; j < dims.f2; ++j) {
        CHECK(h_star[j] == doctest::Approx(hidden[0][j]).epsilon(1e-15));
    }
}

TEST_CASE("forward matches the independent straight-line oracle") {
    maml::HetMamlModel model(tiny_dims(), 11);
    const RawModel oracle{model.params(), model.dims()};
    for (std::uint64_t s = 0; s < 5; ++s) {
        const tasks::TaskInstance task = tiny_task(100 + s);
        for (const ConfigVector c : {ConfigVector{1, 1}, ConfigVector{1, 0}}) {
            const Tensor got =
                maml::forward(model, ParamLookup(model.params()), task.query[0], c);
            const std::vector<double> want = oracle.logits(task.query[0], c);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) {
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batched logits equal per-sample forwards") {
    maml::HetMamlModel model(tiny_dims(), 13);
    const tasks::TaskInstance task = tiny_task(17);
    const maml::PreparedTask prep = model.prepare(task, task.config);
    const Tensor batched = model.logits(prep, true, ParamLookup(model.params()));
    for (std::size_t i = 0; i < task.query.size(); ++i) {
        const Tensor single =
            maml::forward(model, ParamLookup(model.params()), task.query[i], task.config);
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(batched.at(i, j) == doctest::Approx(single[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("inner adaptation") {
    maml::HetMamlModel model(tiny_dims(), 19);
    const tasks::TaskInstance task = tiny_task(23);
    const maml::PreparedTask prep = model.prepare(task, task.config);

    SUBCASE("alpha = 0 reproduces the initialization bit-exactly") {
        maml::TrainConfig cfg;
        cfg.alpha = 0.0;
        cfg.inner_steps = 3;
        const auto adapted = maml::inner_adapt(model, prep, cfg);
        for (const auto& [name, t] : adapted) {
            CHECK(bit_equal(t, model.params().get(name)));
        }
    }

    SUBCASE("zero steps returns the initialization") {
        maml::TrainConfig cfg;
        cfg.inner_steps = 0;
        const auto adapted = maml::inner_adapt(model, prep, cfg);
        for (const auto& [name, t] : adapted) {
            CHECK(t.id() == model.params().get(name).id());
        }
    }

    SUBCASE("one step is theta - alpha * g with g matching finite differences") {
        maml::TrainConfig cfg;
        cfg.alpha = 0.05;
        cfg.inner_steps = 1;
        const auto adapted = maml::inner_adapt(model, prep, cfg);

        std::vector<std::string> names;
        std::vector<Tensor> at;
        for (const auto& [name, t] : maml::initial_internal(model)) {
            names.push_back(name);
            at.push_back(t);
        }
        const gradcheck::LossFn support_loss = [&](const std::vector<Tensor>& v) {
            maml::AdaptedParams theta;
            for (std::size_t i = 0; i < v.size(); ++i) theta.emplace_back(names[i], v[i]);
            return cross_entropy_mean(
                model.logits(prep, false, ParamLookup(model.params(), theta)),
                prep.support_labels);
        };
        const std::vector<Tensor> fd = gradcheck::finite_diff_grads(support_loss, at, 1e-6);
        for (std::size_t i = 0; i < at.size(); ++i) {
            const Tensor& before = at[i];
            const Tensor& after = adapted[i].second;
            for (std::size_t j = 0; j < before.size(); ++j) {
                const double g_implied = (before[j] - after[j]) / cfg.alpha;
                CHECK(gradcheck::relative_error(g_implied, fd[i][j]) < 1e-4);
            }
        }
    }

    SUBCASE("external tensors stay untouched through adaptation") {
        maml::TrainConfig cfg;
        cfg.inner_steps = 4;
        std::vector<std::pair<std::string, Tensor>> before;
        for (const auto& name : model.params().names(ParamTag::External)) {
            before.emplace_back(name, model.params().get(name));
        }
        (void)maml::inner_adapt(model, prep, cfg);
        for (const auto& [name, t] : before) {
            const Tensor& now = model.params().get(name);
            CHECK(now.id() == t.id());
            CHECK(bit_equal(now, t));
        }
    }
}

TEST_CASE("outer step") {
    maml::HetMamlModel model(tiny_dims(), 29);
    std::vector<tasks::TaskInstance> batch = {tiny_task(31), tiny_task(37)};

    SUBCASE("beta = 0 leaves every parameter bit-identical") {
        maml::TrainConfig cfg;
        cfg.beta = 0.0;
        cfg.inner_steps = 2;
        std::vector<Tensor> before;
        for (const auto& e : model.params().entries()) before.push_back(e.tensor);
        (void)maml::outer_step(model, batch, cfg, 1);
        std::size_t i = 0;
        for (const auto& e : model.params().entries()) {
            CHECK(bit_equal(e.tensor, before[i++]));
        }
    }

    SUBCASE("first- and second-order agree when inner_steps = 0") {
        maml::TrainConfig cfg;
        cfg.inner_steps = 0;
        cfg.beta = 1e-2;

        maml::HetMamlModel a(tiny_dims(), 29), b(tiny_dims(), 29);
        maml::TrainConfig first = cfg;
        first.second_order = false;
        (void)maml::outer_step(a, batch, cfg, 1);
        (void)maml::outer_step(b, batch, first, 1);
        for (const auto& e : a.params().entries()) {
            CHECK(bit_equal(e.tensor, b.params().get(e.name)));
        }
    }

    SUBCASE("masked-channel meta-invariance") {
        // every task lacks modality 1: theta_1 must stay bit-identical
        std::vector<tasks::TaskInstance> masked = {tiny_task(41, {1, 0}),
                                                   tiny_task(43, {1, 0})};
        maml::TrainConfig cfg;
        cfg.inner_steps = 2;
        cfg.beta = 1e-2;
        std::vector<std::pair<std::string, Tensor>> before;
        for (const auto& e : model.params().entries()) {
            before.emplace_back(e.name, e.tensor);
        }
        (void)maml::outer_step(model, masked, cfg, 1);
        for (const auto& [name, t] : before) {
            if (name.rfind("backbone.ch1.", 0) == 0) {
                CHECK(bit_equal(model.params().get(name), t));
            }
        }
        // the present channel moved
        CHECK_FALSE(bit_equal(model.params().get("backbone.ch0.l0.w"),
                              before[0].second));
    }

    SUBCASE("serial and parallel execution produce identical updates") {
        maml::HetMamlModel a(tiny_dims(), 53), b(tiny_dims(), 53);
        std::vector<tasks::TaskInstance> big_batch;
        for (std::uint64_t s = 0; s < 6; ++s) big_batch.push_back(tiny_task(60 + s));
        maml::TrainConfig serial;
        serial.inner_steps = 2;
        serial.beta = 1e-2;
        maml::TrainConfig parallel = serial;
        parallel.workers = 4;
        const auto sa = maml::outer_step(a, big_batch, serial, 1);
        const auto sb = maml::outer_step(b, big_batch, parallel, 1);
        CHECK(sa.mean_query_loss == sb.mean_query_loss);
        for (const auto& e : a.params().entries()) {
            CHECK(bit_equal(e.tensor, b.params().get(e.name)));
        }
    }
}

TEST_CASE("meta_train") {
    nn::ModelDims dims = tiny_dims();

    SUBCASE("zero iterations returns the initialization unchanged") {
        maml::HetMamlModel model(dims, 59);
        std::vector<Tensor> before;
        for (const auto& e : model.params().entries()) before.push_back(e.tensor);
        tasks::FixedTaskSource source({tiny_task(61)});
        maml::TrainConfig cfg;
        cfg.iterations = 0;
        const auto result = maml::meta_train(model, source, cfg, 1);
        CHECK(result.log.empty());
        std::size_t i = 0;
        for (const auto& e : model.params().entries()) {
            CHECK(bit_equal(e.tensor, before[i++]));
        }
    }

    SUBCASE("identical seeds and streams give identical final parameters") {
        maml::TrainConfig cfg;
        cfg.iterations = 3;
        cfg.meta_batch = 2;
        cfg.inner_steps = 2;
        cfg.beta = 1e-3;
        auto run = [&] {
            maml::HetMamlModel model(dims, 67);
            tasks::FixedTaskSource source(
                {tiny_task(70), tiny_task(71), tiny_task(72), tiny_task(73)});
            const auto log = maml::meta_train(model, source, cfg, 1);
            return std::make_pair(std::move(model), log);
        };
        auto [ma, la] = run();
        auto [mb, lb] = run();
        for (const auto& e : ma.params().entries()) {
            CHECK(bit_equal(e.tensor, mb.params().get(e.name)));
        }
        REQUIRE(la.log.size() == lb.log.size());
        for (std::size_t i = 0; i < la.log.size(); ++i) {
            CHECK(la.log[i].mean_query_loss == lb.log[i].mean_query_loss);
        }
    }

    SUBCASE("all-zero-config tasks are skipped and counted") {
        maml::HetMamlModel model(dims, 71);
        tasks::TaskInstance degenerate = tiny_task(80);
        for (auto& s : degenerate.support) {
            s.modalities = {{0, 0, 0}, {0, 0}};
        }
        tasks::FixedTaskSource source({degenerate, tiny_task(81), tiny_task(82)});
        maml::TrainConfig cfg;
        cfg.iterations = 1;
        cfg.meta_batch = 2;
        const auto result = maml::meta_train(model, source, cfg, 1);
        CHECK(result.skipped_tasks == 1);
        CHECK(result.log.size() == 1);
    }
}

TEST_CASE("evaluation traces") {
    nn::ModelDims dims = tiny_dims();
    dims.n_way = 5;
    maml::HetMamlModel model(dims, 73);

    // untrained model on balanced 5-way tasks sits near chance at step 0
    tasks::HTDSpec spec;
    spec.modality_count = 2;
    spec.modality_dims = {3, 2};
    spec.task_types = {{1, 0}, {1, 1}};
    spec.n_way = 5;
    spec.k_shot = 1;
    spec.k_query = 6;
    Rng bank_rng(79);
    const auto bank = tasks::make_class_bank(2, spec.modality_dims, 24, 4.0, bank_rng);
    Rng rng(83);
    std::vector<tasks::TaskInstance> test_tasks;
    for (int i = 0; i < 40; ++i) {
        test_tasks.push_back(tasks::sample_synthetic_task(spec, bank, rng, true, 1.0, 1e-1));
    }

    maml::TrainConfig cfg;
    cfg.inner_steps = 3;
    const maml::AdaptationTrace trace = maml::evaluate(model, test_tasks, cfg);

    CHECK(trace.step_count() == cfg.inner_steps + 1);
    for (const auto& curve : trace.tasks) {
        CHECK(curve.acc.size() == cfg.inner_steps + 1);
        CHECK(curve.loss.size() == cfg.inner_steps + 1);
    }
    const std::vector<double> overall = trace.mean_acc();
    CHECK(overall[0] == doctest::Approx(0.2).epsilon(0.6)); // chance +- sampling noise

    // per-type averages recombine to the overall average, weighted by counts
    const auto per_type = trace.per_type_acc(spec.type_count());
    const auto counts = trace.type_counts(spec.type_count());
    for (std::size_t s = 0; s <= cfg.inner_steps; ++s) {
        double recombined = 0.0;
        for (std::size_t k = 0; k < spec.type_count(); ++k) {
            if (counts[k]) recombined += per_type[k][s] * static_cast<double>(counts[k]);
        }
        recombined /= static_cast<double>(trace.tasks.size());
        CHECK(recombined == doctest::Approx(overall[s]).epsilon(1e-9));
    }
}

TEST_CASE("type-conditioned determinism and argmax shift invariance") {
    maml::HetMamlModel model(tiny_dims(), 89);
    const tasks::TaskInstance task = tiny_task(97);
    maml::TrainConfig cfg;
    cfg.inner_steps = 3;

    const maml::PreparedTask prep_a = model.prepare(task, task.config);
    const maml::PreparedTask prep_b = model.prepare(task, task.config);
    const auto ta = maml::inner_adapt(model, prep_a, cfg);
    const auto tb = maml::inner_adapt(model, prep_b, cfg);
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(bit_equal(ta[i].second, tb[i].second));
    }
    const Tensor la = model.logits(prep_a, true, ParamLookup(model.params(), ta));
    const Tensor lb = model.logits(prep_b, true, ParamLookup(model.params(), tb));
    CHECK(bit_equal(la, lb));

    // adding a constant to all logits never changes predictions
    const Tensor shifted = add(la, Tensor::full(la.shape(), 3.25));
    CHECK(argmax_rows(la) == argmax_rows(shifted));
}

TEST_CASE("padded MAML baseline") {
    SUBCASE("homogenization: pad to D_max, multimodal samples sum elementwise") {
        tasks::LabeledSample s;
        s.modalities = {{1, 2, 3}, {10, 20}};
        const std::vector<double> h = maml::homogenize_sample(s, 3);
        CHECK(h == std::vector<double>{11, 22, 3});

        // unimodal largest modality: homogenized input equals the raw input
        tasks::LabeledSample uni;
        uni.modalities = {{1, 2, 3}, {0, 0}};
        CHECK(maml::homogenize_sample(uni, 3) == std::vector<double>{1, 2, 3});

        // smaller modality alone: suffix zeros
        tasks::LabeledSample small;
        small.modalities = {{0, 0, 0}, {7, 8}};
        CHECK(maml::homogenize_sample(small, 3) == std::vector<double>{7, 8, 0});
    }

    SUBCASE("forward equals a hand-composed MLP on the homogenized vector") {
        maml::PaddedMamlModel model({3, 2}, 4, 4, 2, 101);
        tasks::LabeledSample s;
        s.modalities = {{0.5, -1.0, 0.25}, {0.3, 0.9}};
        const Tensor got =
            maml::baseline_maml_forward(model, ParamLookup(model.params()), s);

        const std::vector<double> x = maml::homogenize_sample(s, 3);
        const ParamSet& p = model.params();
        auto layer = [&](const std::string& name, const std::vector<double>& in) {
            const Tensor& w = p.get(name + ".w");
            const Tensor& b = p.get(name + ".b");
            std::vector<double> out(w.shape()[0]);
            for (std::size_t o = 0; o < out.size(); ++o) {
                double acc = b[o];
                for (std::size_t i = 0; i < in.size(); ++i) acc += w.at(o, i) * in[i];
                out[o] = acc;
            }
            return out;
        };
        std::vector<double> h = layer("mlp.l0", x);
        for (double& v : h) v = std::tanh(v);
        h = layer("mlp.l1", h);
        for (double& v : h) v = std::tanh(v);
        h = layer("mlp.l2", h);
        for (std::size_t i = 0; i < h.size(); ++i) {
            CHECK(got[i] == doctest::Approx(h[i]).epsilon(1e-12));
        }
    }

    SUBCASE("every parameter is internal (standard MAML adapts everything)") {
        maml::PaddedMamlModel model({3, 2}, 4, 4, 2, 103);
        CHECK(model.internal_names().size() == model.params().size());
    }
}

TEST_CASE("multi-MAML (BF) baseline") {
    tasks::HTDSpec spec;
    spec.modality_count = 2;
    spec.modality_dims = {3, 2};
    spec.task_types = {{1, 0}, {0, 1}, {1, 1}};
    spec.n_way = 2;
    spec.k_shot = 1;
    spec.k_query = 3;

    maml::MultiMamlBF mm = maml::multi_maml_bf_init(spec, 4, 4, 3, 107);
    REQUIRE(mm.models.size() == 3);

    SUBCASE("per-type models restrict to their modalities, parameters disjoint") {
        CHECK(mm.models[0]->modality_selection() == std::vector<std::size_t>{0});
        CHECK(mm.models[1]->modality_selection() == std::vector<std::size_t>{1});
        CHECK(mm.models[2]->modality_selection() == std::vector<std::size_t>{0, 1});
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = a + 1; b < 3; ++b) {
                for (const auto& ea : mm.models[a]->params().entries()) {
                    if (!mm.models[b]->params().has(ea.name)) continue;
                    CHECK(ea.tensor.id() != mm.models[b]->params().get(ea.name).id());
                }
            }
        }
    }

    SUBCASE("total parameter count exceeds single-model HetMAML (duplicated modules)") {
        nn::ModelDims dims;
        dims.modality_count = 2;
        dims.modality_dims = {3, 2};
        dims.f1 = 4;
        dims.f2 = 4;
        dims.f3 = 3;
        dims.n_way = 2;
        maml::HetMamlModel het(dims, 109);
        CHECK(mm.total_elements() > het.params().total_elements());
    }

    SUBCASE("training streams stay type-pure and models train independently") {
        Rng bank_rng(113);
        const auto bank = tasks::make_class_bank(2, spec.modality_dims, 12, 4.0, bank_rng);
        std::vector<std::unique_ptr<tasks::TaskSource>> streams;
        for (std::size_t r = 0; r < 3; ++r) {
            streams.push_back(std::make_unique<tasks::FilteredTaskSource>(
                std::make_unique<tasks::SyntheticTaskSource>(spec, bank, 1000 + r, false,
                                                             1.0, 1e-1),
                r));
        }
        maml::TrainConfig cfg;
        cfg.iterations = 2;
        cfg.meta_batch = 2;
        cfg.inner_steps = 1;
        cfg.beta = 1e-3;
        const auto logs = maml::multi_maml_bf_train(mm, streams, cfg, 2);
        REQUIRE(logs.size() == 3);
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(logs[r].log.size() == 2);
            // each model only ever saw its own type
            for (const auto& row : logs[r].log) {
                for (std::size_t k = 0; k < row.acc_per_type.size(); ++k) {
                    if (k != r) CHECK(std::isnan(row.acc_per_type[k]));
                }
            }
        }
    }
}

#include "hetmeta/maml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "hetmeta/error.hpp"
#include "hetmeta/ops.hpp"
#include "hetmeta/tape.hpp"

namespace hetmeta::maml {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool all_zero(const ConfigVector& c) {
    return std::all_of(c.begin(), c.end(), [](std::uint8_t b) { return b == 0; });
}

} // namespace

void TrainConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0) {
        throw ValueError("train config: learning rates must be non-negative");
    }
    if (meta_batch == 0) throw ValueError("train config: meta_batch must be positive");
    if (config_epsilon <= 0.0) throw ValueError("train config: epsilon must be positive");
}

void EpisodicModel::set_params(const ParamSet& loaded) {
    if (loaded.size() != params_.size()) {
        throw ValueError("checkpoint holds " + std::to_string(loaded.size()) +
                         " parameters, model expects " + std::to_string(params_.size()));
    }
    for (const auto& e : params_.entries()) {
        if (!loaded.has(e.name)) {
            throw ValueError("checkpoint is missing parameter " + e.name);
        }
        const Tensor& t = loaded.get(e.name);
        if (t.shape() != e.tensor.shape()) {
            throw ShapeError("checkpoint parameter " + e.name + " has shape " +
                             shape_str(t.shape()) + ", model expects " +
                             shape_str(e.tensor.shape()));
        }
        if (loaded.tag(e.name) != e.tag) {
            throw ValueError("checkpoint parameter " + e.name + " has the wrong group tag");
        }
    }
    for (const auto& e : loaded.entries()) {
        params_.set(e.name, e.tensor);
    }
}

HetMamlModel::HetMamlModel(nn::ModelDims dims, std::uint64_t seed,
                           std::vector<std::size_t> modality_selection)
    : dims_(std::move(dims)), selection_(std::move(modality_selection)) {
    dims_.validate();
    if (selection_.empty()) {
        selection_.resize(dims_.modality_count);
        for (std::size_t m = 0; m < selection_.size(); ++m) selection_[m] = m;
    }
    if (selection_.size() != dims_.modality_count) {
        throw ValueError("model: modality selection must match the modality count");
    }
    params_ = nn::init_params(dims_, seed);
}

PreparedTask HetMamlModel::prepare(const tasks::TaskInstance& task,
                                   const ConfigVector& config) const {
    PreparedTask prep;
    prep.support_labels = tasks::labels_of(task.support);
    prep.query_labels = tasks::labels_of(task.query);
    prep.type_id = task.type_id;

    ConfigVector c_sel(selection_.size());
    for (std::size_t i = 0; i < selection_.size(); ++i) {
        if (selection_[i] >= config.size()) {
            throw ValueError("model consumes modality " + std::to_string(selection_[i]) +
                             " but the task only has " + std::to_string(config.size()));
        }
        c_sel[i] = config[selection_[i]];
    }
    prep.config = c_sel;

    std::vector<Tensor> support_x, query_x;
    support_x.reserve(selection_.size());
    query_x.reserve(selection_.size());
    for (std::size_t m : selection_) {
        support_x.push_back(tasks::modality_batch(task.support, m));
        query_x.push_back(tasks::modality_batch(task.query, m));
    }

    const ParamLookup look(params_);
    const nn::BackboneParams backbone = nn::backbone_from(look, dims_);
    const nn::TfanParams tfan = nn::tfan_from(look, dims_);
    prep.support_inputs = nn::backbone_forward(backbone, support_x, c_sel);
    prep.query_inputs = nn::backbone_forward(backbone, query_x, c_sel);
    prep.tau = nn::task_embed(tfan, c_sel, dims_.f3);
    return prep;
}

Tensor HetMamlModel::logits(const PreparedTask& prep, bool query,
                            const ParamLookup& look) const {
    const nn::TfanParams tfan = nn::tfan_from(look, dims_);
    const nn::HeadParams head = nn::head_from(look, dims_);
    const auto& inputs = query ? prep.query_inputs : prep.support_inputs;
    const std::vector<Tensor> hidden = nn::iterative_aggregate(tfan, inputs);
    const auto [h_star, coeffs] = nn::attention_aggregate(tfan, hidden, prep.tau);
    return nn::head_forward(head, h_star);
}

PaddedMamlModel::PaddedMamlModel(std::vector<std::size_t> modality_dims, std::size_t f1,
                                 std::size_t f2, std::size_t n_way, std::uint64_t seed)
    : modality_dims_(std::move(modality_dims)), n_way_(n_way) {
    if (modality_dims_.empty()) throw ValueError("padded maml: need at least one modality");
    if (f1 == 0 || f2 == 0 || n_way < 2) {
        throw ValueError("padded maml: invalid architecture dimensions");
    }
    d_max_ = *std::max_element(modality_dims_.begin(), modality_dims_.end());
    Rng rng(seed);
    nn::add_linear(params_, "mlp.l0", f1, d_max_, rng, ParamTag::Internal);
    nn::add_linear(params_, "mlp.l1", f2, f1, rng, ParamTag::Internal);
    nn::add_linear(params_, "mlp.l2", n_way, f2, rng, ParamTag::Internal);
}

std::vector<double> homogenize_sample(const tasks::LabeledSample& sample, std::size_t d_max) {
    std::vector<double> out(d_max, 0.0);
    for (const auto& x : sample.modalities) {
        if (x.size() > d_max) {
            throw ValueError("homogenize: modality of size " + std::to_string(x.size()) +
                             " exceeds the padded dimension " + std::to_string(d_max));
        }
        for (std::size_t j = 0; j < x.size(); ++j) out[j] += x[j];
    }
    return out;
}

namespace {

Tensor homogenized_batch(const std::vector<tasks::LabeledSample>& samples, std::size_t d_max) {
    std::vector<double> data;
    data.reserve(samples.size() * d_max);
    for (const auto& s : samples) {
        const std::vector<double> x = homogenize_sample(s, d_max);
        data.insert(data.end(), x.begin(), x.end());
    }
    return Tensor::from_matrix(samples.size(), d_max, std::move(data));
}

} // namespace

PreparedTask PaddedMamlModel::prepare(const tasks::TaskInstance& task,
                                      const ConfigVector& config) const {
    PreparedTask prep;
    prep.support_labels = tasks::labels_of(task.support);
    prep.query_labels = tasks::labels_of(task.query);
    prep.type_id = task.type_id;
    prep.config = config;
    prep.support_inputs = {homogenized_batch(task.support, d_max_)};
    prep.query_inputs = {homogenized_batch(task.query, d_max_)};
    return prep;
}

Tensor PaddedMamlModel::logits(const PreparedTask& prep, bool query,
                               const ParamLookup& look) const {
    const Tensor& x = (query ? prep.query_inputs : prep.support_inputs)[0];
    Tensor h = hetmeta::tanh(linear(x, look("mlp.l0.w"), look("mlp.l0.b")));
    h = hetmeta::tanh(linear(h, look("mlp.l1.w"), look("mlp.l1.b")));
    return linear(h, look("mlp.l2.w"), look("mlp.l2.b"));
}

Tensor forward(const HetMamlModel& model, const ParamLookup& look,
               const tasks::LabeledSample& sample, const ConfigVector& config) {
    const nn::ModelDims& dims = model.dims();
    ConfigVector c_sel(model.modality_selection().size());
    std::vector<Tensor> xs;
    xs.reserve(c_sel.size());
    for (std::size_t i = 0; i < model.modality_selection().size(); ++i) {
        const std::size_t m = model.modality_selection()[i];
        c_sel[i] = config.at(m);
        xs.push_back(Tensor::from_vector(sample.modalities.at(m)));
    }

    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const ShapeError& e) {
            throw ShapeError(std::string(name) + ": " + e.what());
        }
    };

    const nn::BackboneParams backbone = nn::backbone_from(look, dims);
    const nn::TfanParams tfan = nn::tfan_from(look, dims);
    const nn::HeadParams head = nn::head_from(look, dims);

    std::vector<Tensor> z =
        stage("backbone", [&] { return nn::backbone_forward(backbone, xs, c_sel); });
    std::vector<Tensor> hidden =
        stage("aggregation", [&] { return nn::iterative_aggregate(tfan, z); });
    Tensor tau = stage("task-embed", [&] { return nn::task_embed(tfan, c_sel, dims.f3); });
    auto pooled =
        stage("attention", [&] { return nn::attention_aggregate(tfan, hidden, tau); });
    return stage("head", [&] { return nn::head_forward(head, pooled.first); });
}

Tensor baseline_maml_forward(const PaddedMamlModel& model, const ParamLookup& look,
                             const tasks::LabeledSample& sample) {
    Tensor x = Tensor::from_vector(homogenize_sample(sample, model.input_dim()));
    Tensor h = hetmeta::tanh(linear(x, look("mlp.l0.w"), look("mlp.l0.b")));
    h = hetmeta::tanh(linear(h, look("mlp.l1.w"), look("mlp.l1.b")));
    return linear(h, look("mlp.l2.w"), look("mlp.l2.b"));
}

AdaptedParams initial_internal(const EpisodicModel& model) {
    AdaptedParams theta;
    for (const std::string& name : model.internal_names()) {
        theta.emplace_back(name, model.params().get(name));
    }
    return theta;
}

AdaptedParams inner_step(const EpisodicModel& model, const PreparedTask& prep,
                         const AdaptedParams& theta, double alpha, bool second_order) {
    GradMap grads;
    {
        Tape inner;
        for (const auto& [name, t] : theta) inner.watch(t);
        const Tensor logits = model.logits(prep, false, ParamLookup(model.params(), theta));
        const Tensor loss = cross_entropy_mean(logits, prep.support_labels);
        grads = inner.gradient(loss);
    }
    // The inner tape is gone; the update ops below land on any enclosing
    // tape, which is exactly what keeps theta' differentiable in Theta_0.
    AdaptedParams next;
    next.reserve(theta.size());
    for (const auto& [name, t] : theta) {
        Tensor g = grads.at(t);
        if (!second_order) g = detach(g);
        next.emplace_back(name, sub(t, scale(g, alpha)));
    }
    return next;
}

AdaptedParams inner_adapt(const EpisodicModel& model, const PreparedTask& prep,
                          const TrainConfig& cfg) {
    AdaptedParams theta = initial_internal(model);
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
        theta = inner_step(model, prep, theta, cfg.alpha, cfg.second_order);
    }
    return theta;
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::vector<std::size_t> preds = argmax_rows(logits);
    if (preds.size() != labels.size()) {
        throw ValueError("accuracy: prediction/label count mismatch");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

TaskResult process_task(const EpisodicModel& model, const tasks::TaskInstance& task,
                        const TrainConfig& cfg) {
    Tape tape;
    for (const auto& e : model.params().entries()) tape.watch(e.tensor);

    const ConfigVector c = tasks::compute_config_vector(task.support, cfg.config_epsilon);
    const PreparedTask prep = model.prepare(task, c);
    const AdaptedParams theta = inner_adapt(model, prep, cfg);

    const Tensor logits = model.logits(prep, true, ParamLookup(model.params(), theta));
    const Tensor loss = cross_entropy_mean(logits, prep.query_labels);

    TaskResult result;
    result.query_loss = loss.value();
    result.query_acc = accuracy(logits, prep.query_labels);
    result.type_id = task.type_id;
    result.grads = tape.gradient(loss);
    return result;
}

namespace {

std::vector<TaskResult> run_batch(const EpisodicModel& model,
                                  const std::vector<tasks::TaskInstance>& batch,
                                  const TrainConfig& cfg) {
    std::vector<TaskResult> results(batch.size());
    const std::size_t workers = std::max<std::size_t>(1, cfg.workers);
    if (workers == 1 || batch.size() == 1) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            results[i] = process_task(model, batch[i], cfg);
        }
        return results;
    }
    // Per-task adaptations are independent; each runs on its own tape in
    // its own thread against the read-only parameter snapshot. Results go
    // into fixed slots so the later reduction order never depends on the
    // worker count.
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(workers, batch.size());
    pool.reserve(n_threads);
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < batch.size(); i += n_threads) {
                    results[i] = process_task(model, batch[i], cfg);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

BatchStats summarize(const std::vector<TaskResult>& results, std::size_t n_types) {
    BatchStats stats;
    stats.type_acc.assign(n_types, 0.0);
    stats.type_count.assign(n_types, 0);
    for (const TaskResult& r : results) {
        stats.mean_query_loss += r.query_loss;
        stats.mean_query_acc += r.query_acc;
        if (r.type_id < n_types) {
            stats.type_acc[r.type_id] += r.query_acc;
            stats.type_count[r.type_id] += 1;
        }
    }
    const double n = static_cast<double>(results.size());
    stats.mean_query_loss /= n;
    stats.mean_query_acc /= n;
    for (std::size_t k = 0; k < n_types; ++k) {
        if (stats.type_count[k] > 0) {
            stats.type_acc[k] /= static_cast<double>(stats.type_count[k]);
        } else {
            stats.type_acc[k] = kNaN;
        }
    }
    return stats;
}

} // namespace

std::pair<BatchStats, std::vector<std::pair<std::string, Tensor>>> batch_gradients(
    const EpisodicModel& model, const std::vector<tasks::TaskInstance>& batch,
    const TrainConfig& cfg, std::size_t n_types) {
    if (batch.empty()) throw ValueError("outer step: empty task batch");
    cfg.validate();

    const std::vector<TaskResult> results = run_batch(model, batch, cfg);

    std::vector<std::pair<std::string, Tensor>> grads;
    grads.reserve(model.params().size());
    for (const auto& e : model.params().entries()) {
        Tensor sum;
        for (const TaskResult& r : results) {
            const Tensor& g = r.grads.at(e.tensor.id());
            sum = sum.defined() ? add(sum, g) : g;
        }
        grads.emplace_back(e.name, std::move(sum));
    }
    return {summarize(results, n_types), std::move(grads)};
}

BatchStats outer_step(EpisodicModel& model, const std::vector<tasks::TaskInstance>& batch,
                      const TrainConfig& cfg, std::size_t n_types) {
    auto [stats, grads] = batch_gradients(model, batch, cfg, n_types);
    // Both parameter groups step from the same pre-update snapshot.
    std::vector<std::pair<std::string, Tensor>> updates;
    updates.reserve(grads.size());
    for (const auto& [name, g] : grads) {
        updates.emplace_back(name, sub(model.params().get(name), scale(g, cfg.beta)));
    }
    for (auto& [name, tensor] : updates) {
        model.params().set(name, std::move(tensor));
    }
    return stats;
}

OuterOptimizer::OuterOptimizer(bool adaptive, double learning_rate)
    : adaptive_(adaptive), lr_(learning_rate) {}

void OuterOptimizer::apply(ParamSet& params,
                           const std::vector<std::pair<std::string, Tensor>>& grads) {
    if (!adaptive_) {
        std::vector<std::pair<std::string, Tensor>> updates;
        updates.reserve(grads.size());
        for (const auto& [name, g] : grads) {
            updates.emplace_back(name, sub(params.get(name), scale(g, lr_)));
        }
        for (auto& [name, tensor] : updates) params.set(name, std::move(tensor));
        return;
    }

    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    if (moments_.empty()) {
        for (const auto& [name, g] : grads) {
            moments_.emplace_back(name,
                                  std::make_pair(std::vector<double>(g.size(), 0.0),
                                                 std::vector<double>(g.size(), 0.0)));
        }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& [name, g] = grads[i];
        if (moments_[i].first != name) {
            throw ValueError("optimizer: gradient order changed between steps");
        }
        auto& [m, v] = moments_[i].second;
        const Tensor& p = params.get(name);
        std::vector<double> next(p.size());
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
            v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
            next[j] = p[j] - lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
        }
        params.set(name, Tensor::from_data(p.shape(), std::move(next)));
    }
}

TrainResult meta_train(EpisodicModel& model, tasks::TaskSource& source,
                       const TrainConfig& cfg, std::size_t n_types) {
    cfg.validate();
    TrainResult out;
    OuterOptimizer optimizer(cfg.adaptive, cfg.beta);
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<tasks::TaskInstance> batch;
        batch.reserve(cfg.meta_batch);
        std::size_t attempts = 0;
        while (batch.size() < cfg.meta_batch) {
            if (++attempts > cfg.meta_batch * 1000) {
                throw ValueError("meta_train: task source keeps yielding degenerate tasks");
            }
            tasks::TaskInstance task = source.next();
            const ConfigVector c =
                tasks::compute_config_vector(task.support, cfg.config_epsilon);
            if (all_zero(c)) {
                ++out.skipped_tasks; // no informative modality; nothing to adapt on
                continue;
            }
            batch.push_back(std::move(task));
        }
        auto [stats, grads] = batch_gradients(model, batch, cfg, n_types);
        optimizer.apply(model.params(), grads);
        TrainLogRow row;
        row.iteration = iter;
        row.mean_query_loss = stats.mean_query_loss;
        row.mean_query_acc = stats.mean_query_acc;
        row.acc_per_type = stats.type_acc;
        out.log.push_back(std::move(row));
    }
    return out;
}

namespace {

AdaptationTrace::TaskCurve evaluate_one(const EpisodicModel& model,
                                        const tasks::TaskInstance& task,
                                        const TrainConfig& cfg) {
    const ConfigVector c = tasks::compute_config_vector(task.support, cfg.config_epsilon);
    const PreparedTask prep = model.prepare(task, c);
    AdaptedParams theta = initial_internal(model);

    AdaptationTrace::TaskCurve curve;
    curve.type_id = task.type_id;
    auto record = [&]() {
        const Tensor logits = model.logits(prep, true, ParamLookup(model.params(), theta));
        curve.acc.push_back(accuracy(logits, prep.query_labels));
        curve.loss.push_back(cross_entropy_mean(logits, prep.query_labels).value());
    };
    record();
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
        // Evaluation never needs meta-gradients; detached updates give the
        // same numeric trajectory at a fraction of the cost.
        theta = inner_step(model, prep, theta, cfg.alpha, /*second_order=*/false);
        record();
    }
    return curve;
}

} // namespace

AdaptationTrace evaluate(const EpisodicModel& model,
                         const std::vector<tasks::TaskInstance>& task_list,
                         const TrainConfig& cfg) {
    cfg.validate();
    AdaptationTrace trace;
    trace.tasks.reserve(task_list.size());
    for (const auto& task : task_list) {
        trace.tasks.push_back(evaluate_one(model, task, cfg));
    }
    return trace;
}

std::vector<double> AdaptationTrace::mean_acc() const {
    std::vector<double> out(step_count(), 0.0);
    if (tasks.empty()) return out;
    for (const TaskCurve& curve : tasks) {
        for (std::size_t s = 0; s < out.size(); ++s) out[s] += curve.acc[s];
    }
    for (double& v : out) v /= static_cast<double>(tasks.size());
    return out;
}

std::vector<std::vector<double>> AdaptationTrace::per_type_acc(std::size_t n_types) const {
    std::vector<std::vector<double>> out(n_types, std::vector<double>(step_count(), 0.0));
    const std::vector<std::size_t> counts = type_counts(n_types);
    for (const TaskCurve& curve : tasks) {
        if (curve.type_id >= n_types) continue;
        for (std::size_t s = 0; s < curve.acc.size(); ++s) {
            out[curve.type_id][s] += curve.acc[s];
        }
    }
    for (std::size_t k = 0; k < n_types; ++k) {
        for (double& v : out[k]) {
            v = counts[k] ? v / static_cast<double>(counts[k]) : kNaN;
        }
    }
    return out;
}

std::vector<std::size_t> AdaptationTrace::type_counts(std::size_t n_types) const {
    std::vector<std::size_t> counts(n_types, 0);
    for (const TaskCurve& curve : tasks) {
        if (curve.type_id < n_types) counts[curve.type_id] += 1;
    }
    return counts;
}

std::size_t MultiMamlBF::total_elements() const {
    std::size_t n = 0;
    for (const auto& m : models) n += m->params().total_elements();
    return n;
}

MultiMamlBF multi_maml_bf_init(const tasks::HTDSpec& spec, std::size_t f1, std::size_t f2,
                               std::size_t f3, std::uint64_t seed) {
    spec.validate();
    MultiMamlBF mm;
    mm.spec = spec;
    for (std::size_t r = 0; r < spec.task_types.size(); ++r) {
        std::vector<std::size_t> selection;
        std::vector<std::size_t> dims;
        for (std::size_t m = 0; m < spec.modality_count; ++m) {
            if (spec.task_types[r][m]) {
                selection.push_back(m);
                dims.push_back(spec.modality_dims[m]);
            }
        }
        nn::ModelDims md;
        md.modality_count = selection.size();
        md.modality_dims = dims;
        md.f1 = f1;
        md.f2 = f2;
        md.f3 = f3;
        md.n_way = spec.n_way;
        mm.models.push_back(
            std::make_unique<HetMamlModel>(md, derive_seed(seed, r), selection));
    }
    return mm;
}

std::vector<TrainResult> multi_maml_bf_train(
    MultiMamlBF& mm, std::vector<std::unique_ptr<tasks::TaskSource>>& streams,
    const TrainConfig& cfg, std::size_t iterations_per_type) {
    if (streams.size() != mm.models.size()) {
        throw ValueError("multi-maml: need one task stream per type");
    }
    TrainConfig per_type = cfg;
    per_type.iterations = iterations_per_type;
    std::vector<TrainResult> out;
    out.reserve(mm.models.size());
    for (std::size_t r = 0; r < mm.models.size(); ++r) {
        out.push_back(
            meta_train(*mm.models[r], *streams[r], per_type, mm.spec.type_count()));
    }
    return out;
}

AdaptationTrace evaluate_multi(const MultiMamlBF& mm,
                               const std::vector<tasks::TaskInstance>& task_list,
                               const TrainConfig& cfg) {
    cfg.validate();
    AdaptationTrace trace;
    trace.tasks.reserve(task_list.size());
    for (const auto& task : task_list) {
        if (task.type_id >= mm.models.size()) {
            throw ValueError("multi-maml: task type " + std::to_string(task.type_id) +
                             " has no model");
        }
        trace.tasks.push_back(evaluate_one(*mm.models[task.type_id], task, cfg));
    }
    return trace;
}

} // namespace hetmeta::maml

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hetmeta/nn.hpp"
#include "hetmeta/params.hpp"
#include "hetmeta/tape.hpp"
#include "hetmeta/tasks.hpp"
#include "hetmeta/tensor.hpp"
#include "hetmeta/types.hpp"

namespace hetmeta::maml {

struct TrainConfig {
    double alpha = 1e-2;           // inner-loop learning rate
    double beta = 1e-4;            // outer-loop learning rate
    std::size_t inner_steps = 10;
    std::size_t meta_batch = 4;
    std::size_t iterations = 1000;
    bool second_order = true;      // exact meta-gradient through the inner loop
    bool adaptive = false;         // opt-in Adam outer updates; default is the
                                   // plain SGD the update equations write
    std::uint64_t seed = 0;
    std::size_t workers = 1;       // parallel per-task adaptation within a batch
    double config_epsilon = 1e-1;  // threshold for the config-vector rule

    void validate() const;
};

/// Everything about one episode that only depends on the task data and the
/// external parameters, computed once per task and reused across inner
/// steps (external parameters are frozen during adaptation).
struct PreparedTask {
    std::vector<std::size_t> support_labels;
    std::vector<std::size_t> query_labels;
    ConfigVector config;
    std::size_t type_id = 0;
    std::vector<Tensor> support_inputs;
    std::vector<Tensor> query_inputs;
    Tensor tau; // task embedding; undefined for models without one
};

/// A model trainable by the episodic meta-loop: a parameter set split into
/// internal (adapted per task) and external (frozen in the inner loop)
/// groups plus a batched forward pass.
class EpisodicModel {
public:
    virtual ~EpisodicModel() = default;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::vector<std::string> internal_names() const {
        return params_.names(ParamTag::Internal);
    }

    virtual PreparedTask prepare(const tasks::TaskInstance& task,
                                 const ConfigVector& config) const = 0;
    virtual Tensor logits(const PreparedTask& prep, bool query,
                          const ParamLookup& look) const = 0;

    /// Replaces the parameter values from a checkpoint; names, shapes and
    /// tags must match the model architecture.
    void set_params(const ParamSet& loaded);

protected:
    ParamSet params_;
};

/// The three-module HetMAML network: multi-channel backbone (external),
/// task-aware aggregation with BiLSTM + attention (LSTMs internal,
/// attention and task embedding external) and classifier head (internal).
/// An optional modality selection restricts the model to a subset of the
/// dataset's modalities (used by the per-type Multi-MAML baseline).
class HetMamlModel final : public EpisodicModel {
public:
    HetMamlModel(nn::ModelDims dims, std::uint64_t seed,
                 std::vector<std::size_t> modality_selection = {});

    const nn::ModelDims& dims() const { return dims_; }
    const std::vector<std::size_t>& modality_selection() const { return selection_; }

    PreparedTask prepare(const tasks::TaskInstance& task,
                         const ConfigVector& config) const override;
    Tensor logits(const PreparedTask& prep, bool query,
                  const ParamLookup& look) const override;

private:
    nn::ModelDims dims_;
    std::vector<std::size_t> selection_;
};

/// MAML baseline on homogenized inputs: every modality is zero-padded to
/// the largest modality dimension and the padded vectors are summed into
/// one input; a single-channel MLP D_max -> F1 -> F2 -> N_way classifies
/// it and every parameter adapts in the inner loop.
class PaddedMamlModel final : public EpisodicModel {
public:
    PaddedMamlModel(std::vector<std::size_t> modality_dims, std::size_t f1, std::size_t f2,
                    std::size_t n_way, std::uint64_t seed);

    std::size_t input_dim() const { return d_max_; }

    PreparedTask prepare(const tasks::TaskInstance& task,
                         const ConfigVector& config) const override;
    Tensor logits(const PreparedTask& prep, bool query,
                  const ParamLookup& look) const override;

private:
    std::vector<std::size_t> modality_dims_;
    std::size_t d_max_;
    std::size_t n_way_;
};

/// Pad-to-D_max-and-sum homogenization used by the MAML baseline.
std::vector<double> homogenize_sample(const tasks::LabeledSample& sample, std::size_t d_max);

/// Single-sample composed forward (backbone -> aggregation -> attention ->
/// head) for a HetMAML model.
Tensor forward(const HetMamlModel& model, const ParamLookup& look,
               const tasks::LabeledSample& sample, const ConfigVector& config);

/// Single-sample forward of the padded-MAML baseline.
Tensor baseline_maml_forward(const PaddedMamlModel& model, const ParamLookup& look,
                             const tasks::LabeledSample& sample);

// Inner loop.

using AdaptedParams = ParamLookup::Overrides;

/// Internal parameters at their meta-initialization, in declaration order.
AdaptedParams initial_internal(const EpisodicModel& model);

/// One full-batch gradient step on the support loss. With second_order the
/// update stays differentiable with respect to the incoming parameters;
/// otherwise the gradient is detached (first-order MAML).
AdaptedParams inner_step(const EpisodicModel& model, const PreparedTask& prep,
                         const AdaptedParams& theta, double alpha, bool second_order);

/// cfg.inner_steps updates of the internal parameters only; external
/// tensors are untouched.
AdaptedParams inner_adapt(const EpisodicModel& model, const PreparedTask& prep,
                          const TrainConfig& cfg);

// Outer loop.

struct TaskResult {
    GradMap grads; // d(query loss)/d(all meta-parameters)
    double query_loss = 0.0;
    double query_acc = 0.0;
    std::size_t type_id = 0;
};

/// Adapts on the support set and differentiates the query loss back to
/// the meta-parameters (through the adaptation when second_order).
TaskResult process_task(const EpisodicModel& model, const tasks::TaskInstance& task,
                        const TrainConfig& cfg);

struct BatchStats {
    double mean_query_loss = 0.0;
    double mean_query_acc = 0.0;
    std::vector<double> type_acc;          // NaN where a type is absent
    std::vector<std::size_t> type_count;
};

/// Summed query-loss gradients over a batch, accumulated in task order
/// (worker count never changes the result), plus batch statistics.
std::pair<BatchStats, std::vector<std::pair<std::string, Tensor>>> batch_gradients(
    const EpisodicModel& model, const std::vector<tasks::TaskInstance>& batch,
    const TrainConfig& cfg, std::size_t n_types);

/// One meta-update over a batch: both parameter groups step from the same
/// pre-update snapshot with plain SGD on the summed query losses.
BatchStats outer_step(EpisodicModel& model, const std::vector<tasks::TaskInstance>& batch,
                      const TrainConfig& cfg, std::size_t n_types);

/// Stateful outer-loop optimizer: plain SGD, or Adam when cfg.adaptive.
class OuterOptimizer {
public:
    OuterOptimizer(bool adaptive, double learning_rate);
    void apply(ParamSet& params,
               const std::vector<std::pair<std::string, Tensor>>& grads);

private:
    bool adaptive_;
    double lr_;
    std::size_t step_ = 0;
    std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>>
        moments_;
};

struct TrainLogRow {
    std::size_t iteration = 0;
    double mean_query_loss = 0.0;
    double mean_query_acc = 0.0;
    std::vector<double> acc_per_type;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::size_t skipped_tasks = 0; // tasks rejected for an all-zero config vector
};

TrainResult meta_train(EpisodicModel& model, tasks::TaskSource& source,
                       const TrainConfig& cfg, std::size_t n_types);

// Evaluation.

struct AdaptationTrace {
    struct TaskCurve {
        std::size_t type_id = 0;
        std::vector<double> acc;  // inner_steps + 1 entries, step 0 first
        std::vector<double> loss;
    };
    std::vector<TaskCurve> tasks;

    std::size_t step_count() const { return tasks.empty() ? 0 : tasks[0].acc.size(); }
    std::vector<double> mean_acc() const;
    /// Per-type mean accuracy curves; NaN where a type has no tasks.
    std::vector<std::vector<double>> per_type_acc(std::size_t n_types) const;
    std::vector<std::size_t> type_counts(std::size_t n_types) const;
};

/// Records query accuracy and loss after 0..inner_steps adaptation steps
/// per task. Predictions are argmax with ties toward the lowest index.
AdaptationTrace evaluate(const EpisodicModel& model,
                         const std::vector<tasks::TaskInstance>& task_list,
                         const TrainConfig& cfg);

/// Fraction of rows whose argmax matches the label.
double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

// Multi-MAML (BF) baseline: one independent HetMAML-architecture model per
// task type, restricted to the type's modalities, trained only on that
// type's stream.

struct MultiMamlBF {
    std::vector<std::unique_ptr<HetMamlModel>> models; // one per task type
    tasks::HTDSpec spec;

    std::size_t total_elements() const;
};

MultiMamlBF multi_maml_bf_init(const tasks::HTDSpec& spec, std::size_t f1, std::size_t f2,
                               std::size_t f3, std::uint64_t seed);

/// Trains each per-type model for iterations_per_type steps on its own
/// stream. streams[r] must yield only type-r tasks.
std::vector<TrainResult> multi_maml_bf_train(
    MultiMamlBF& mm, std::vector<std::unique_ptr<tasks::TaskSource>>& streams,
    const TrainConfig& cfg, std::size_t iterations_per_type);

/// Evaluates each task with its type's model and merges the curves.
AdaptationTrace evaluate_multi(const MultiMamlBF& mm,
                               const std::vector<tasks::TaskInstance>& task_list,
                               const TrainConfig& cfg);

} // namespace hetmeta::maml

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "hetmeta/rng.hpp"
#include "hetmeta/tensor.hpp"
#include "hetmeta/types.hpp"

namespace hetmeta::tasks {

/// Description of a heterogeneous task distribution: M modalities, a set
/// of task types (modality masks), and the episode shape.
struct HTDSpec {
    std::size_t modality_count = 0;              // M
    std::vector<std::size_t> modality_dims;      // D_m
    std::vector<ConfigVector> task_types;        // M' masks over modalities
    std::vector<double> type_weights;            // sampling probabilities
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t k_query = 12;

    void validate() const;
    std::size_t type_count() const { return task_types.size(); }
};

struct LabeledSample {
    std::vector<std::vector<double>> modalities; // length M, slot m has D_m entries
    std::size_t label = 0;                       // class index in [0, N)
};

/// One N-way K-shot episode.
struct TaskInstance {
    std::vector<LabeledSample> support;
    std::vector<LabeledSample> query;
    ConfigVector config;  // c_T
    std::size_t type_id = 0;
};

/// Support-set variance rule: c^(m) = 0 iff
/// sum_i ||x_i^(m) - mean^(m)||^2 / |support| < epsilon.
ConfigVector compute_config_vector(const std::vector<LabeledSample>& support, double epsilon);

/// Per-class, per-modality prototype vectors with a disjoint 3:1
/// train/test class split.
struct ClassBank {
    // prototypes[cls][m] has D_m entries.
    std::vector<std::vector<std::vector<double>>> prototypes;
    std::vector<std::size_t> train_classes;
    std::vector<std::size_t> test_classes;
    std::vector<std::size_t> modality_dims;
};

/// Prototypes drawn i.i.d. N(0, separation^2). With shared_latent, each
/// class instead owns one latent vector mapped into every modality by a
/// fixed random linear map, so modalities carry common semantics.
ClassBank make_class_bank(std::size_t modality_count,
                          const std::vector<std::size_t>& modality_dims,
                          std::size_t n_classes, double separation, Rng& rng,
                          bool shared_latent = false);

/// Draws one episode: N classes from the chosen split, K support and
/// K_query query samples per class as prototype + N(0, noise^2), absent
/// modalities zeroed per the sampled task type. The recomputed config
/// vector must reproduce the type mask or the draw is rejected.
TaskInstance sample_synthetic_task(const HTDSpec& spec, const ClassBank& bank, Rng& rng,
                                   bool test_split, double noise, double epsilon);

/// Stream of training tasks; each source owns its generator state.
class TaskSource {
public:
    virtual ~TaskSource() = default;
    virtual TaskInstance next() = 0;
};

class SyntheticTaskSource final : public TaskSource {
public:
    SyntheticTaskSource(HTDSpec spec, const ClassBank& bank, std::uint64_t seed,
                        bool test_split, double noise, double epsilon);
    TaskInstance next() override;

private:
    HTDSpec spec_;
    const ClassBank* bank_;
    Rng rng_;
    bool test_split_;
    double noise_;
    double epsilon_;
};

/// Cycles deterministically through an in-memory task list.
class FixedTaskSource final : public TaskSource {
public:
    explicit FixedTaskSource(std::vector<TaskInstance> tasks);
    TaskInstance next() override;

private:
    std::vector<TaskInstance> tasks_;
    std::size_t cursor_ = 0;
};

/// Draws from an underlying source until a task of the wanted type comes
/// up; used to feed per-type baseline training from a mixed stream.
class FilteredTaskSource final : public TaskSource {
public:
    FilteredTaskSource(std::unique_ptr<TaskSource> inner, std::size_t type_id);
    TaskInstance next() override;

private:
    std::unique_ptr<TaskSource> inner_;
    std::size_t type_id_;
};

/// Stacks one modality of a sample list into a constant [B x D_m] tensor.
Tensor modality_batch(const std::vector<LabeledSample>& samples, std::size_t modality);
/// All modalities, in order.
std::vector<Tensor> modality_batches(const std::vector<LabeledSample>& samples,
                                     std::size_t modality_count);
std::vector<std::size_t> labels_of(const std::vector<LabeledSample>& samples);

} // namespace hetmeta::tasks

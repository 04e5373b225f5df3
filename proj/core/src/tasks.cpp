#include "hetmeta/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "hetmeta/error.hpp"

namespace hetmeta::tasks {

void HTDSpec::validate() const {
    if (modality_count == 0 || modality_dims.size() != modality_count) {
        throw ValueError("HTD spec: modality_dims must list all modalities");
    }
    for (std::size_t d : modality_dims) {
        if (d == 0) throw ValueError("HTD spec: modality dimensions must be positive");
    }
    const std::size_t m_prime = task_types.size();
    const std::size_t max_types =
        modality_count >= 63 ? SIZE_MAX : (std::size_t{1} << modality_count) - 1;
    if (m_prime < 2 || m_prime > max_types) {
        throw ValueError("HTD spec: need 2 <= M' <= 2^M - 1 task types, got " +
                         std::to_string(m_prime));
    }
    for (const ConfigVector& mask : task_types) {
        if (mask.size() != modality_count) {
            throw ValueError("HTD spec: task-type mask length != M");
        }
        if (std::find(mask.begin(), mask.end(), std::uint8_t{1}) == mask.end()) {
            throw ValueError("HTD spec: every task type needs at least one modality");
        }
    }
    for (std::size_t i = 0; i < m_prime; ++i) {
        for (std::size_t j = i + 1; j < m_prime; ++j) {
            if (task_types[i] == task_types[j]) {
                throw ValueError("HTD spec: duplicate task-type masks");
            }
        }
    }
    if (!type_weights.empty()) {
        if (type_weights.size() != m_prime) {
            throw ValueError("HTD spec: type_weights length != M'");
        }
        double sum = 0.0;
        for (double w : type_weights) {
            if (w < 0.0) throw ValueError("HTD spec: negative type weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ValueError("HTD spec: type_weights must sum to 1");
        }
    }
    if (n_way < 2 || k_shot == 0 || k_query == 0) {
        throw ValueError("HTD spec: need N >= 2, K >= 1, K_query >= 1");
    }
}

ConfigVector compute_config_vector(const std::vector<LabeledSample>& support, double epsilon) {
    if (support.empty()) throw ValueError("config vector: empty support set");
    if (epsilon <= 0.0) throw ValueError("config vector: epsilon must be positive");
    const std::size_t m_count = support[0].modalities.size();
    const double inv_n = 1.0 / static_cast<double>(support.size());
    ConfigVector c(m_count, 0);
    for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t dim = support[0].modalities[m].size();
        std::vector<double> mean(dim, 0.0);
        for (const LabeledSample& s : support) {
            const auto& x = s.modalities[m];
            if (x.size() != dim) {
                throw ValueError("config vector: inconsistent modality sizes in support set");
            }
            for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
        }
        for (double& v : mean) v *= inv_n;
        double var = 0.0;
        for (const LabeledSample& s : support) {
            const auto& x = s.modalities[m];
            for (std::size_t j = 0; j < dim; ++j) {
                const double d = x[j] - mean[j];
                var += d * d;
            }
        }
        var *= inv_n;
        c[m] = var < epsilon ? 0 : 1;
    }
    return c;
}

ClassBank make_class_bank(std::size_t modality_count,
                          const std::vector<std::size_t>& modality_dims,
                          std::size_t n_classes, double separation, Rng& rng,
                          bool shared_latent) {
    if (separation <= 0.0) throw ValueError("class bank: separation must be positive");
    if (modality_dims.size() != modality_count) {
        throw ValueError("class bank: modality_dims must list all modalities");
    }
    if (n_classes < 2) throw ValueError("class bank: need at least 2 classes");

    ClassBank bank;
    bank.modality_dims = modality_dims;
    bank.prototypes.resize(n_classes);

    if (shared_latent) {
        const std::size_t latent_dim =
            *std::max_element(modality_dims.begin(), modality_dims.end());
        // Fixed per-modality maps from the shared latent space.
        std::vector<std::vector<double>> maps(modality_count);
        const double map_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
        for (std::size_t m = 0; m < modality_count; ++m) {
            maps[m].resize(modality_dims[m] * latent_dim);
            for (double& v : maps[m]) v = rng.normal(0.0, map_scale);
        }
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
            std::vector<double> latent(latent_dim);
            for (double& v : latent) v = rng.normal(0.0, separation);
            bank.prototypes[cls].resize(modality_count);
            for (std::size_t m = 0; m < modality_count; ++m) {
                auto& proto = bank.prototypes[cls][m];
                proto.assign(modality_dims[m], 0.0);
                for (std::size_t r = 0; r < modality_dims[m]; ++r) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < latent_dim; ++c) {
                        s += maps[m][r * latent_dim + c] * latent[c];
                    }
                    proto[r] = s;
                }
            }
        }
    } else {
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
            bank.prototypes[cls].resize(modality_count);
            for (std::size_t m = 0; m < modality_count; ++m) {
                auto& proto = bank.prototypes[cls][m];
                proto.resize(modality_dims[m]);
                for (double& v : proto) v = rng.normal(0.0, separation);
            }
        }
    }

    const std::size_t n_train = (3 * n_classes) / 4;
    for (std::size_t cls = 0; cls < n_classes; ++cls) {
        (cls < n_train ? bank.train_classes : bank.test_classes).push_back(cls);
    }
    return bank;
}

namespace {

std::size_t sample_type(const HTDSpec& spec, Rng& rng) {
    if (spec.type_weights.empty()) {
        return rng.uniform_index(spec.task_types.size());
    }
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < spec.type_weights.size(); ++i) {
        acc += spec.type_weights[i];
        if (u < acc) return i;
    }
    return spec.type_weights.size() - 1;
}

LabeledSample draw_sample(const ClassBank& bank, std::size_t cls, std::size_t label,
                          const ConfigVector& mask, double noise, Rng& rng) {
    LabeledSample s;
    s.label = label;
    s.modalities.resize(bank.modality_dims.size());
    for (std::size_t m = 0; m < bank.modality_dims.size(); ++m) {
        auto& x = s.modalities[m];
        x.assign(bank.modality_dims[m], 0.0);
        if (!mask[m]) continue; // absent modality stays an exact zero vector
        const auto& proto = bank.prototypes[cls][m];
        for (std::size_t j = 0; j < x.size(); ++j) {
            x[j] = noise > 0.0 ? proto[j] + rng.normal(0.0, noise) : proto[j];
        }
    }
    return s;
}

} // namespace

TaskInstance sample_synthetic_task(const HTDSpec& spec, const ClassBank& bank, Rng& rng,
                                   bool test_split, double noise, double epsilon) {
    spec.validate();
    const auto& pool = test_split ? bank.test_classes : bank.train_classes;
    if (pool.size() < spec.n_way) {
        throw ValueError("synthetic task: class split holds " + std::to_string(pool.size()) +
                         " classes, need N = " + std::to_string(spec.n_way));
    }

    TaskInstance task;
    task.type_id = sample_type(spec, rng);
    const ConfigVector& mask = spec.task_types[task.type_id];

    // Partial Fisher-Yates for N distinct classes.
    std::vector<std::size_t> indices(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) indices[i] = i;
    for (std::size_t i = 0; i < spec.n_way; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(indices[i], indices[j]);
    }

    for (std::size_t n = 0; n < spec.n_way; ++n) {
        const std::size_t cls = pool[indices[n]];
        for (std::size_t k = 0; k < spec.k_shot; ++k) {
            task.support.push_back(draw_sample(bank, cls, n, mask, noise, rng));
        }
    }
    for (std::size_t n = 0; n < spec.n_way; ++n) {
        const std::size_t cls = pool[indices[n]];
        for (std::size_t k = 0; k < spec.k_query; ++k) {
            task.query.push_back(draw_sample(bank, cls, n, mask, noise, rng));
        }
    }

    task.config = compute_config_vector(task.support, epsilon);
    if (task.config != mask) {
        throw ValueError("synthetic task: computed config vector disagrees with type mask; "
                         "separation/noise too small for epsilon");
    }
    return task;
}

SyntheticTaskSource::SyntheticTaskSource(HTDSpec spec, const ClassBank& bank,
                                         std::uint64_t seed, bool test_split, double noise,
                                         double epsilon)
    : spec_(std::move(spec)),
      bank_(&bank),
      rng_(seed),
      test_split_(test_split),
      noise_(noise),
      epsilon_(epsilon) {
    spec_.validate();
}

TaskInstance SyntheticTaskSource::next() {
    return sample_synthetic_task(spec_, *bank_, rng_, test_split_, noise_, epsilon_);
}

FixedTaskSource::FixedTaskSource(std::vector<TaskInstance> tasks) : tasks_(std::move(tasks)) {
    if (tasks_.empty()) throw ValueError("task source: empty task list");
}

TaskInstance FixedTaskSource::next() {
    TaskInstance t = tasks_[cursor_];
    cursor_ = (cursor_ + 1) % tasks_.size();
    return t;
}

FilteredTaskSource::FilteredTaskSource(std::unique_ptr<TaskSource> inner, std::size_t type_id)
    : inner_(std::move(inner)), type_id_(type_id) {
    if (!inner_) throw ValueError("filtered source: missing inner source");
}

TaskInstance FilteredTaskSource::next() {
    for (std::size_t attempts = 0; attempts < 100000; ++attempts) {
        TaskInstance t = inner_->next();
        if (t.type_id == type_id_) return t;
    }
    throw ValueError("filtered source: type " + std::to_string(type_id_) +
                     " never appears in the stream");
}

Tensor modality_batch(const std::vector<LabeledSample>& samples, std::size_t modality) {
    if (samples.empty()) throw ValueError("modality_batch: empty sample list");
    const std::size_t dim = samples[0].modalities.at(modality).size();
    std::vector<double> data;
    data.reserve(samples.size() * dim);
    for (const LabeledSample& s : samples) {
        const auto& x = s.modalities.at(modality);
        if (x.size() != dim) throw ValueError("modality_batch: ragged modality vectors");
        data.insert(data.end(), x.begin(), x.end());
    }
    return Tensor::from_matrix(samples.size(), dim, std::move(data));
}

std::vector<Tensor> modality_batches(const std::vector<LabeledSample>& samples,
                                     std::size_t modality_count) {
    std::vector<Tensor> out;
    out.reserve(modality_count);
    for (std::size_t m = 0; m < modality_count; ++m) {
        out.push_back(modality_batch(samples, m));
    }
    return out;
}

std::vector<std::size_t> labels_of(const std::vector<LabeledSample>& samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const LabeledSample& s : samples) out.push_back(s.label);
    return out;
}

} // namespace hetmeta::tasks

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetmeta/maml.hpp"
#include "hetmeta/tasks.hpp"
#include "hetmeta/types.hpp"

namespace hetmeta::cli {

/// Resolved experiment configuration. Defaults follow the reference
/// hyperparameters (F1=128, F2=64, F3=64, epsilon=1e-1, alpha=1e-2,
/// beta=1e-4, 10 inner steps); a JSON config file overrides defaults and
/// command-line flags override the file.
struct ExperimentConfig {
    std::string model = "hetmaml"; // hetmaml | maml | multi-maml-bf

    std::size_t f1 = 128;
    std::size_t f2 = 64;
    std::size_t f3 = 64;

    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t k_query = 12;
    double epsilon = 1e-1;

    maml::TrainConfig train;
    std::size_t mm_iterations_per_type = 0; // 0 = train.iterations / M'

    std::string dataset_path; // manifest.json; mutually exclusive with synthetic
    struct Synthetic {
        bool enabled = false;
        std::size_t classes = 40;
        std::vector<std::size_t> modality_dims = {16, 12};
        std::vector<std::string> types = {"X1", "X2", "X1+X2"};
        double separation = 4.0;
        double noise = 1.0;
        bool shared_latent = false;
        std::vector<double> type_weights; // empty = uniform
    } synthetic;

    std::string out_dir = ".";

    void validate() const;
};

/// Parses "X1+X2" style type labels into modality masks.
std::vector<ConfigVector> parse_type_masks(const std::vector<std::string>& labels,
                                           std::size_t modality_count);

/// Loads the JSON config file over the defaults in cfg.
void apply_config_file(const std::string& path, ExperimentConfig& cfg);

/// Entry point behind main(). Exit codes: 0 success, 1 usage error,
/// 2 validation failure, 3 check failure.
int run(int argc, const char* const* argv);

} // namespace hetmeta::cli

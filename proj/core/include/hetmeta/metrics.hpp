#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hetmeta/maml.hpp"

namespace hetmeta {

/// Locale-independent, shortest round-trip formatting; NaN prints "nan".
std::string format_double(double v);

/// metrics.csv: iteration,mean_query_loss,mean_query_acc,acc_type_0,...
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<maml::TrainLogRow>& rows, std::size_t n_types);

/// adaptation_curve.csv: step,overall_acc,acc_type_0,...
void write_adaptation_csv(const std::filesystem::path& path,
                          const maml::AdaptationTrace& trace, std::size_t n_types);

/// Joins per-type Multi-MAML training logs into one row stream: row i
/// averages the models' row-i loss/acc and takes each model's own-type
/// accuracy for its type column.
std::vector<maml::TrainLogRow> merge_multi_logs(const std::vector<maml::TrainResult>& logs,
                                                std::size_t n_types);

} // namespace hetmeta

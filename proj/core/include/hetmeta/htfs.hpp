#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "hetmeta/tasks.hpp"

namespace hetmeta::htfs {

// Meta-dataset format "HTFS v1".
//
// Manifest: UTF-8 JSON with keys version ("htfs-1"), M, modality_dims,
// n_way, k_shot, k_query, task_types (0/1 masks), tasks ({file, type_id}).
//
// Per-task tensor file, little-endian: magic "HTFS"; u32 M, N, K, KQ;
// M u32 modality dims; support tensors modality-major (for each m:
// N*K*D_m float32 values, class-major then shot), N*K u32 labels; then
// the query block in the same layout. Values are stored as float32 and
// upcast to float64 on load.

/// Writes manifest.json plus one tensor file per task into dir.
void save_meta_dataset(const std::filesystem::path& dir, const tasks::HTDSpec& spec,
                       const std::vector<tasks::TaskInstance>& task_list);

/// Loads a dataset; recomputes every task's config vector and rejects the
/// file when it disagrees with the manifest-declared type mask.
std::pair<tasks::HTDSpec, std::vector<tasks::TaskInstance>> load_meta_dataset(
    const std::filesystem::path& manifest_path, double epsilon = 1e-1);

} // namespace hetmeta::htfs

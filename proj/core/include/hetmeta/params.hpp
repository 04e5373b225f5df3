#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetmeta/tensor.hpp"

namespace hetmeta {

/// Internal parameters adapt in the inner loop; external parameters are
/// frozen during adaptation and only move in the outer meta-update.
enum class ParamTag : std::uint8_t { Internal = 0, External = 1 };

/// Named parameter collection with a stable insertion order. Tensors are
/// immutable values; updating a parameter rebinds its name to a new tensor.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        ParamTag tag;
    };

    void add(std::string name, Tensor tensor, ParamTag tag);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    ParamTag tag(const std::string& name) const;
    void set(const std::string& name, Tensor tensor);

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> names(std::optional<ParamTag> filter = std::nullopt) const;
    /// Total scalar element count, optionally restricted to one tag.
    std::size_t total_elements(std::optional<ParamTag> filter = std::nullopt) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Resolves a parameter name to a tensor, consulting adapted overrides
/// before the base set. The overrides list stays small (internal names
/// only), so linear search wins over a map.
class ParamLookup {
public:
    using Overrides = std::vector<std::pair<std::string, Tensor>>;

    explicit ParamLookup(const ParamSet& base) : base_(&base), overrides_(nullptr) {}
    ParamLookup(const ParamSet& base, const Overrides& overrides)
        : base_(&base), overrides_(&overrides) {}

    const Tensor& operator()(const std::string& name) const;

private:
    const ParamSet* base_;
    const Overrides* overrides_;
};

// Checkpoint container: magic "HMCK", version u32, then one record per
// parameter: name-length u32, name bytes, tag byte, rank u32, dims u32
// each, float64 payload. All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

} // namespace hetmeta

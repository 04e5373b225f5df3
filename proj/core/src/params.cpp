#include "hetmeta/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hetmeta/error.hpp"

namespace hetmeta {

void ParamSet::add(std::string name, Tensor tensor, ParamTag tag) {
    if (!tensor.defined()) throw ValueError("ParamSet: undefined tensor for " + name);
    if (index_.count(name)) throw ValueError("ParamSet: duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(tensor), tag});
}

const Tensor& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("ParamSet: unknown parameter " + name);
    return entries_[it->second].tensor;
}

ParamTag ParamSet::tag(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("ParamSet: unknown parameter " + name);
    return entries_[it->second].tag;
}

void ParamSet::set(const std::string& name, Tensor tensor) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("ParamSet: unknown parameter " + name);
    Entry& e = entries_[it->second];
    if (tensor.shape() != e.tensor.shape()) {
        throw ShapeError("ParamSet: cannot rebind " + name + " from " +
                         shape_str(e.tensor.shape()) + " to " + shape_str(tensor.shape()));
    }
    e.tensor = std::move(tensor);
}

std::vector<std::string> ParamSet::names(std::optional<ParamTag> filter) const {
    std::vector<std::string> out;
    for (const Entry& e : entries_) {
        if (!filter || e.tag == *filter) out.push_back(e.name);
    }
    return out;
}

std::size_t ParamSet::total_elements(std::optional<ParamTag> filter) const {
    std::size_t n = 0;
    for (const Entry& e : entries_) {
        if (!filter || e.tag == *filter) n += e.tensor.size();
    }
    return n;
}

const Tensor& ParamLookup::operator()(const std::string& name) const {
    if (overrides_) {
        for (const auto& [n, t] : *overrides_) {
            if (n == name) return t;
        }
    }
    return base_->get(name);
}

namespace {

constexpr char kMagic[4] = {'H', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw IoError("checkpoint: truncated while reading " + what);
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    for (const auto& e : params.entries()) {
        write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        const char tag = static_cast<char>(e.tag);
        os.write(&tag, 1);
        write_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape()) {
            write_u32(os, static_cast<std::uint32_t>(d));
        }
        os.write(reinterpret_cast<const char*>(e.tensor.data().data()),
                 static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != kVersion) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version) + " in " +
                      path.string());
    }
    ParamSet out;
    while (true) {
        std::uint32_t name_len = 0;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw IoError("checkpoint: truncated record header in " + path.string());
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        char tag = 0;
        is.read(&tag, 1);
        if (!is || (tag != 0 && tag != 1)) {
            throw IoError("checkpoint: corrupt record for '" + name + "' in " + path.string());
        }
        const std::uint32_t rank = read_u32(is, "rank of " + name);
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = read_u32(is, "dims of " + name);
        }
        std::vector<double> data(numel(shape));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated payload for '" + name + "' in " +
                               path.string());
        out.add(std::move(name), Tensor::from_data(std::move(shape), std::move(data)),
                static_cast<ParamTag>(tag));
    }
    return out;
}

} // namespace hetmeta

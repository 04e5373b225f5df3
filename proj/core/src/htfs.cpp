#include "hetmeta/htfs.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "hetmeta/error.hpp"

namespace hetmeta::htfs {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'H', 'T', 'F', 'S'};

static_assert(std::endian::native == std::endian::little,
              "HTFS writer assumes a little-endian host");

void put_u32(std::string& buf, std::uint32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_f32(std::string& buf, float v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::string task_file_name(std::size_t index) {
    char name[32];
    std::snprintf(name, sizeof(name), "task_%05zu.htfs", index);
    return name;
}

void append_block(std::string& buf, const std::vector<tasks::LabeledSample>& samples,
                  const std::vector<std::size_t>& dims) {
    for (std::size_t m = 0; m < dims.size(); ++m) {
        for (const auto& s : samples) {
            const auto& x = s.modalities[m];
            for (double v : x) put_f32(buf, static_cast<float>(v));
        }
    }
    for (const auto& s : samples) put_u32(buf, static_cast<std::uint32_t>(s.label));
}

std::size_t block_bytes(std::size_t n_samples, const std::vector<std::size_t>& dims) {
    std::size_t feat = 0;
    for (std::size_t d : dims) feat += d;
    return n_samples * feat * 4 + n_samples * 4;
}

std::uint32_t take_u32(const char*& p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
}

float take_f32(const char*& p) {
    float v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
}

std::vector<tasks::LabeledSample> read_block(const char*& p, std::size_t n_samples,
                                             const std::vector<std::size_t>& dims,
                                             const std::string& file) {
    std::vector<tasks::LabeledSample> out(n_samples);
    for (auto& s : out) s.modalities.resize(dims.size());
    for (std::size_t m = 0; m < dims.size(); ++m) {
        for (auto& s : out) {
            auto& x = s.modalities[m];
            x.resize(dims[m]);
            for (double& v : x) v = static_cast<double>(take_f32(p));
        }
    }
    for (auto& s : out) {
        s.label = take_u32(p);
    }
    (void)file;
    return out;
}

} // namespace

void save_meta_dataset(const std::filesystem::path& dir, const tasks::HTDSpec& spec,
                       const std::vector<tasks::TaskInstance>& task_list) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("dataset: cannot create directory " + dir.string());

    json manifest;
    manifest["version"] = "htfs-1";
    manifest["M"] = spec.modality_count;
    manifest["modality_dims"] = spec.modality_dims;
    manifest["n_way"] = spec.n_way;
    manifest["k_shot"] = spec.k_shot;
    manifest["k_query"] = spec.k_query;
    json types = json::array();
    for (const auto& mask : spec.task_types) {
        json row = json::array();
        for (std::uint8_t b : mask) row.push_back(static_cast<int>(b));
        types.push_back(row);
    }
    manifest["task_types"] = types;

    json entries = json::array();
    for (std::size_t i = 0; i < task_list.size(); ++i) {
        const tasks::TaskInstance& task = task_list[i];
        const std::string file = task_file_name(i);

        std::string buf;
        buf.append(kMagic, 4);
        put_u32(buf, static_cast<std::uint32_t>(spec.modality_count));
        put_u32(buf, static_cast<std::uint32_t>(spec.n_way));
        put_u32(buf, static_cast<std::uint32_t>(spec.k_shot));
        put_u32(buf, static_cast<std::uint32_t>(spec.k_query));
        for (std::size_t d : spec.modality_dims) put_u32(buf, static_cast<std::uint32_t>(d));
        append_block(buf, task.support, spec.modality_dims);
        append_block(buf, task.query, spec.modality_dims);

        std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("dataset: cannot open " + (dir / file).string());
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!os) throw IoError("dataset: write failed for " + (dir / file).string());

        entries.push_back(json{{"file", file}, {"type_id", task.type_id}});
    }
    manifest["tasks"] = entries;

    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("dataset: cannot open " + (dir / "manifest.json").string());
    os << manifest.dump(2) << "\n";
}

std::pair<tasks::HTDSpec, std::vector<tasks::TaskInstance>> load_meta_dataset(
    const std::filesystem::path& manifest_path, double epsilon) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("dataset: cannot open manifest " + manifest_path.string());
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw IoError("dataset: malformed manifest " + manifest_path.string() + ": " +
                      e.what());
    }

    if (manifest.value("version", "") != std::string("htfs-1")) {
        throw IoError("dataset: unsupported manifest version in " + manifest_path.string());
    }

    tasks::HTDSpec spec;
    try {
        spec.modality_count = manifest.at("M").get<std::size_t>();
        spec.modality_dims = manifest.at("modality_dims").get<std::vector<std::size_t>>();
        spec.n_way = manifest.at("n_way").get<std::size_t>();
        spec.k_shot = manifest.at("k_shot").get<std::size_t>();
        spec.k_query = manifest.at("k_query").get<std::size_t>();
        for (const auto& row : manifest.at("task_types")) {
            ConfigVector mask;
            for (const auto& v : row) mask.push_back(v.get<int>() ? 1 : 0);
            spec.task_types.push_back(std::move(mask));
        }
    } catch (const json::exception& e) {
        throw IoError("dataset: manifest missing required key: " + std::string(e.what()));
    }
    spec.validate();

    const std::filesystem::path dir = manifest_path.parent_path();
    std::vector<tasks::TaskInstance> out;
    for (const auto& entry : manifest.at("tasks")) {
        const std::string file = entry.at("file").get<std::string>();
        const std::size_t type_id = entry.at("type_id").get<std::size_t>();
        if (type_id >= spec.task_types.size()) {
            throw IoError("dataset: task " + file + " references unknown type " +
                          std::to_string(type_id));
        }
        const std::filesystem::path path = dir / file;

        std::ifstream ts(path, std::ios::binary);
        if (!ts) throw IoError("dataset: cannot open task file " + path.string());
        std::string buf((std::istreambuf_iterator<char>(ts)), std::istreambuf_iterator<char>());

        const std::size_t header = 4 + 4 * 4 + 4 * spec.modality_count;
        const std::size_t expected = header +
                                     block_bytes(spec.n_way * spec.k_shot, spec.modality_dims) +
                                     block_bytes(spec.n_way * spec.k_query, spec.modality_dims);
        if (buf.size() != expected) {
            throw IoError("dataset: " + path.string() + " holds " +
                          std::to_string(buf.size()) + " bytes, expected " +
                          std::to_string(expected));
        }
        if (std::memcmp(buf.data(), kMagic, 4) != 0) {
            throw IoError("dataset: bad magic in " + path.string());
        }

        const char* p = buf.data() + 4;
        const std::uint32_t m = take_u32(p);
        const std::uint32_t n = take_u32(p);
        const std::uint32_t k = take_u32(p);
        const std::uint32_t kq = take_u32(p);
        if (m != spec.modality_count || n != spec.n_way || k != spec.k_shot ||
            kq != spec.k_query) {
            throw IoError("dataset: " + path.string() + " episode shape disagrees with manifest");
        }
        for (std::size_t i = 0; i < spec.modality_count; ++i) {
            if (take_u32(p) != spec.modality_dims[i]) {
                throw IoError("dataset: " + path.string() + " modality dims disagree with manifest");
            }
        }

        tasks::TaskInstance task;
        task.type_id = type_id;
        task.support = read_block(p, spec.n_way * spec.k_shot, spec.modality_dims, file);
        task.query = read_block(p, spec.n_way * spec.k_query, spec.modality_dims, file);
        for (const auto& s : task.support) {
            if (s.label >= spec.n_way) {
                throw IoError("dataset: " + path.string() + " has out-of-range label");
            }
        }
        for (const auto& s : task.query) {
            if (s.label >= spec.n_way) {
                throw IoError("dataset: " + path.string() + " has out-of-range label");
            }
        }

        task.config = tasks::compute_config_vector(task.support, epsilon);
        if (task.config != spec.task_types[type_id]) {
            throw IoError("dataset: " + path.string() +
                          " computed config vector disagrees with declared type mask");
        }
        out.push_back(std::move(task));
    }
    return {std::move(spec), std::move(out)};
}

} // namespace hetmeta::htfs

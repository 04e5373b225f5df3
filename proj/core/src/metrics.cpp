#include "hetmeta/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "hetmeta/error.hpp"

namespace hetmeta {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("csv: cannot open " + path.string() + " for writing");
    return os;
}

} // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<maml::TrainLogRow>& rows, std::size_t n_types) {
    std::ofstream os = open_csv(path);
    os << "iteration,mean_query_loss,mean_query_acc";
    for (std::size_t k = 0; k < n_types; ++k) os << ",acc_type_" << k;
    os << "\n";
    for (const auto& row : rows) {
        os << row.iteration << "," << format_double(row.mean_query_loss) << ","
           << format_double(row.mean_query_acc);
        for (std::size_t k = 0; k < n_types; ++k) {
            const double v = k < row.acc_per_type.size()
                                 ? row.acc_per_type[k]
                                 : std::numeric_limits<double>::quiet_NaN();
            os << "," << format_double(v);
        }
        os << "\n";
    }
    if (!os) throw IoError("csv: write failed for " + path.string());
}

void write_adaptation_csv(const std::filesystem::path& path,
                          const maml::AdaptationTrace& trace, std::size_t n_types) {
    std::ofstream os = open_csv(path);
    os << "step,overall_acc";
    for (std::size_t k = 0; k < n_types; ++k) os << ",acc_type_" << k;
    os << "\n";
    const std::vector<double> overall = trace.mean_acc();
    const auto per_type = trace.per_type_acc(n_types);
    for (std::size_t s = 0; s < overall.size(); ++s) {
        os << s << "," << format_double(overall[s]);
        for (std::size_t k = 0; k < n_types; ++k) {
            os << "," << format_double(per_type[k][s]);
        }
        os << "\n";
    }
    if (!os) throw IoError("csv: write failed for " + path.string());
}

std::vector<maml::TrainLogRow> merge_multi_logs(const std::vector<maml::TrainResult>& logs,
                                                std::size_t n_types) {
    if (logs.empty()) return {};
    std::size_t rows = 0;
    for (const auto& l : logs) rows = std::max(rows, l.log.size());
    std::vector<maml::TrainLogRow> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        maml::TrainLogRow& row = out[i];
        row.iteration = i;
        row.acc_per_type.assign(n_types, std::numeric_limits<double>::quiet_NaN());
        double loss = 0.0, acc = 0.0;
        std::size_t present = 0;
        for (std::size_t r = 0; r < logs.size(); ++r) {
            if (i >= logs[r].log.size()) continue;
            const maml::TrainLogRow& src = logs[r].log[i];
            loss += src.mean_query_loss;
            acc += src.mean_query_acc;
            ++present;
            if (r < n_types && r < src.acc_per_type.size()) {
                row.acc_per_type[r] = src.acc_per_type[r];
            }
        }
        row.mean_query_loss = present ? loss / static_cast<double>(present) : 0.0;
        row.mean_query_acc = present ? acc / static_cast<double>(present) : 0.0;
    }
    return out;
}

} // namespace hetmeta

#include "layertime/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "layertime/rng.hpp"

namespace layertime {

void Dataset::validate() const {
    if (size() < 1) throw std::logic_error("Dataset: need at least one sample");
    if (labels.rows() != features.rows())
        throw std::logic_error("Dataset: feature/label row mismatch");
    if (!features.all_finite() || !labels.all_finite())
        throw std::logic_error("Dataset: non-finite entry");
    for (int k = 0; k < labels.rows(); ++k) {
        int ones = 0;
        for (int j = 0; j < labels.cols(); ++j) {
            const double v = labels(k, j);
            if (v == 1.0) ++ones;
            else if (v != 0.0)
                throw std::logic_error("Dataset: label row " + std::to_string(k) +
                                       " is not one-hot");
        }
        if (ones != 1)
            throw std::logic_error("Dataset: label row " + std::to_string(k) +
                                   " is not one-hot");
    }
    if (!class_names.empty() && static_cast<int>(class_names.size()) != labels.cols())
        throw std::logic_error("Dataset: class name count does not match label width");
}

Batch Dataset::to_batch() const {
    Batch batch;
    batch.features = features;
    batch.labels = labels;
    batch.ids.resize(features.rows());
    for (int k = 0; k < features.rows(); ++k) batch.ids[k] = k;
    return batch;
}

double peaks_value(double x, double y) {
    const double a = 3.0 * (1.0 - x) * (1.0 - x) * std::exp(-x * x - (y + 1.0) * (y + 1.0));
    const double b =
        -10.0 * (x / 5.0 - x * x * x - std::pow(y, 5)) * std::exp(-x * x - y * y);
    const double c = -(1.0 / 3.0) * std::exp(-(x + 1.0) * (x + 1.0) - y * y);
    return a + b + c;
}

std::array<double, 4> compute_peaks_thresholds() {
    constexpr int kGrid = 201;
    std::vector<double> values;
    values.reserve(kGrid * kGrid);
    for (int i = 0; i < kGrid; ++i) {
        const double x = -3.0 + 6.0 * i / (kGrid - 1);
        for (int j = 0; j < kGrid; ++j) {
            const double y = -3.0 + 6.0 * j / (kGrid - 1);
            values.push_back(peaks_value(x, y));
        }
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return {values[n / 5], values[2 * n / 5], values[3 * n / 5], values[4 * n / 5]};
}

const std::array<double, 4>& peaks_thresholds() {
    // Cached output of compute_peaks_thresholds(); regeneration is tested to
    // reproduce these bit for bit.
    static const std::array<double, 4> kThresholds = {
        -0.29696691388324242,
        0.0015050129845009216,
        0.14550863043375975,
        1.2911633881653015,
    };
    return kThresholds;
}

int peaks_class(double value) {
    const std::array<double, 4>& b = peaks_thresholds();
    int cls = 0;
    while (cls < 4 && value >= b[cls]) ++cls;
    return cls;
}

Dataset generate_peaks(int s, std::uint64_t seed) {
    if (s < 1) throw std::logic_error("generate_peaks: need at least one sample");
    Dataset ds;
    ds.features = Matrix(s, 2);
    ds.labels = Matrix(s, 5);
    Rng rng(seed);
    for (int k = 0; k < s; ++k) {
        const double x = rng.uniform(-3.0, 3.0);
        const double y = rng.uniform(-3.0, 3.0);
        ds.features(k, 0) = x;
        ds.features(k, 1) = y;
        ds.labels(k, peaks_class(peaks_value(x, y))) = 1.0;
    }
    for (int j = 0; j < 5; ++j) ds.class_names.push_back("quintile_" + std::to_string(j));
    ds.provenance.kind = DatasetProvenance::Kind::generated;
    ds.provenance.seed = seed;
    ds.provenance.params = "peaks s=" + std::to_string(s);
    ds.validate();
    return ds;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto first = field.find_first_not_of(" \t");
        const auto last = field.find_last_not_of(" \t");
        fields.push_back(first == std::string::npos ? "" : field.substr(first, last - first + 1));
    }
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

double parse_field(const std::string& field, int line_no, int column) {
    const char* begin = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw std::runtime_error("line " + std::to_string(line_no) + ": field " +
                                 std::to_string(column + 1) + " is not numeric: '" + field + "'");
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, int n_f, int n_c, LabelMode mode, bool normalize) {
    if (n_f < 1 || n_c < 2) throw std::logic_error("load_csv: invalid feature/class counts");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_csv: cannot open '" + path + "'");
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const int expected = n_f + (mode == LabelMode::index ? 1 : n_c);
    std::vector<std::vector<double>> feature_rows;
    std::vector<int> class_of_row;
    std::vector<std::vector<double>> onehot_rows;

    std::istringstream lines(contents);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_fields(line);
        if (static_cast<int>(fields.size()) != expected)
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(expected) + " fields, got " +
                                     std::to_string(fields.size()));
        if (line_no == 1) continue; // header
        std::vector<double> row(n_f);
        for (int j = 0; j < n_f; ++j) row[j] = parse_field(fields[j], line_no, j);
        feature_rows.push_back(std::move(row));
        if (mode == LabelMode::index) {
            const double raw = parse_field(fields[n_f], line_no, n_f);
            const int cls = static_cast<int>(raw);
            if (static_cast<double>(cls) != raw || cls < 0 || cls >= n_c)
                throw std::runtime_error("line " + std::to_string(line_no) + ": class index " +
                                         fields[n_f] + " out of range [0, " +
                                         std::to_string(n_c) + ")");
            class_of_row.push_back(cls);
        } else {
            std::vector<double> hot(n_c);
            int ones = 0;
            for (int j = 0; j < n_c; ++j) {
                hot[j] = parse_field(fields[n_f + j], line_no, n_f + j);
                if (hot[j] == 1.0) ++ones;
                else if (hot[j] != 0.0)
                    throw std::runtime_error("line " + std::to_string(line_no) +
                                             ": label fields are not one-hot");
            }
            if (ones != 1)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": label fields are not one-hot");
            onehot_rows.push_back(std::move(hot));
        }
    }
    if (line_no == 0) throw std::runtime_error("load_csv: '" + path + "' is empty");
    const int s = static_cast<int>(feature_rows.size());
    if (s == 0) throw std::runtime_error("load_csv: '" + path + "' has no data rows");

    Dataset ds;
    ds.features = Matrix(s, n_f);
    ds.labels = Matrix(s, n_c);
    for (int k = 0; k < s; ++k) {
        for (int j = 0; j < n_f; ++j) ds.features(k, j) = feature_rows[k][j];
        if (mode == LabelMode::index) ds.labels(k, class_of_row[k]) = 1.0;
        else
            for (int j = 0; j < n_c; ++j) ds.labels(k, j) = onehot_rows[k][j];
    }
    if (normalize) {
        for (int j = 0; j < n_f; ++j) {
            double lo = ds.features(0, j), hi = ds.features(0, j);
            for (int k = 1; k < s; ++k) {
                lo = std::min(lo, ds.features(k, j));
                hi = std::max(hi, ds.features(k, j));
            }
            const double span = hi - lo;
            for (int k = 0; k < s; ++k)
                ds.features(k, j) = span > 0.0 ? (ds.features(k, j) - lo) / span : 0.0;
        }
    }
    ds.provenance.kind = DatasetProvenance::Kind::loaded;
    ds.provenance.path = path;
    ds.provenance.hash = hex64(fnv1a_hash(contents));
    ds.validate();
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path, LabelMode mode) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_csv: cannot open '" + path + "' for writing");
    const int n_f = ds.features.cols();
    const int n_c = ds.labels.cols();
    for (int j = 0; j < n_f; ++j) out << 'f' << j << ',';
    if (mode == LabelMode::index) {
        out << "label\n";
    } else {
        for (int j = 0; j < n_c; ++j) out << 'c' << j << (j + 1 < n_c ? "," : "\n");
    }
    for (int k = 0; k < ds.size(); ++k) {
        for (int j = 0; j < n_f; ++j) out << format_double(ds.features(k, j)) << ',';
        if (mode == LabelMode::index) {
            int cls = 0;
            for (int j = 0; j < n_c; ++j)
                if (ds.labels(k, j) == 1.0) cls = j;
            out << cls << '\n';
        } else {
            for (int j = 0; j < n_c; ++j)
                out << (ds.labels(k, j) == 1.0 ? 1 : 0) << (j + 1 < n_c ? "," : "\n");
        }
    }
    if (!out) throw std::runtime_error("save_csv: write to '" + path + "' failed");
}

SplitResult split(const Dataset& ds, int train_count, int val_count, std::uint64_t seed) {
    ds.validate();
    if (train_count < 0 || val_count < 0)
        throw std::logic_error("split: counts must be non-negative");
    if (train_count + val_count > ds.size())
        throw std::logic_error("split: requested " + std::to_string(train_count + val_count) +
                               " rows from a dataset of " + std::to_string(ds.size()));

    std::vector<int> perm(ds.size());
    for (int i = 0; i < ds.size(); ++i) perm[i] = i;
    Rng rng(seed);
    for (int i = ds.size() - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }

    auto take = [&](int offset, int count) {
        Dataset part;
        part.features = Matrix(count, ds.features.cols());
        part.labels = Matrix(count, ds.labels.cols());
        for (int k = 0; k < count; ++k) {
            const int src = perm[offset + k];
            for (int j = 0; j < ds.features.cols(); ++j)
                part.features(k, j) = ds.features(src, j);
            for (int j = 0; j < ds.labels.cols(); ++j) part.labels(k, j) = ds.labels(src, j);
        }
        part.class_names = ds.class_names;
        part.provenance = ds.provenance;
        return part;
    };

    SplitResult result;
    result.train = take(0, train_count);
    result.validation = take(train_count, val_count);
    result.train_indices.assign(perm.begin(), perm.begin() + train_count);
    result.val_indices.assign(perm.begin() + train_count, perm.begin() + train_count + val_count);
    return result;
}

} // namespace layertime

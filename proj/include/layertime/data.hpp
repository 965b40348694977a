/// Dataset provisioning: the synthetic "peaks" classification benchmark,
/// tabular CSV ingestion and emission, and deterministic train/validation
/// splits. All construction is pure and seeded; a Dataset is immutable after
/// it is built.

#ifndef LAYERTIME_DATA_HPP
#define LAYERTIME_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "layertime/network.hpp"

namespace layertime {

/// Where a dataset came from, for run summaries and reproducibility.
struct DatasetProvenance {
    enum class Kind { generated, loaded };

    Kind kind = Kind::generated;
    std::uint64_t seed = 0;  // generated: the generator seed
    std::string params;      // generated: human-readable generator settings
    std::string path;        // loaded: source file
    std::string hash;        // loaded: FNV-1a 64-bit hash of the file bytes, hex
};

struct Dataset {
    Matrix features;  // s x n_f
    Matrix labels;    // s x n_c, every row exactly one-hot
    std::vector<std::string> class_names;  // optional, size n_c when present
    DatasetProvenance provenance;

    int size() const { return features.rows(); }
    /// s >= 1, labels exactly one-hot, all entries finite.
    void validate() const;
    /// View as a training batch; sample ids are the row indices.
    Batch to_batch() const;
};

/// The classical two-dimensional peaks surface:
/// 3(1-x)^2 e^(-x^2-(y+1)^2) - 10(x/5 - x^3 - y^5) e^(-x^2-y^2)
///   - (1/3) e^(-(x+1)^2-y^2).
double peaks_value(double x, double y);

/// Four strictly increasing class boundaries splitting the peaks surface
/// into five equally populated bins over [-3,3]^2. Returns cached constants;
/// compute_peaks_thresholds regenerates them from scratch.
const std::array<double, 4>& peaks_thresholds();

/// The documented boundary procedure: evaluate peaks_value on the 201x201
/// uniform grid over [-3,3]^2, sort the 40401 values, and take the entries
/// at the four interior quintile positions floor(k*40401/5), k = 1..4.
std::array<double, 4> compute_peaks_thresholds();

/// Class bin of one surface value: the number of boundaries lying at or
/// below it (0..4).
int peaks_class(double value);

/// s positions drawn uniformly from [-3,3]^2 (x then y per sample), labeled
/// with the one-hot quintile bin of the surface value. n_f = 2, n_c = 5.
Dataset generate_peaks(int s, std::uint64_t seed);

/// How the label columns of a CSV file are encoded.
enum class LabelMode {
    index,   // one integer column: the class index in [0, n_c)
    one_hot, // n_c columns forming an exact one-hot row
};

/// Reads `f0,...,f{n_f-1},label` or `f0,...,f{n_f-1},c0,...,c{n_c-1}` rows
/// (header line required). Parse problems name the offending 1-based file
/// line. normalize rescales each feature column to [0,1] by min-max
/// (constant columns map to 0).
Dataset load_csv(const std::string& path, int n_f, int n_c, LabelMode mode,
                 bool normalize = false);

/// Inverse of load_csv (without normalization): header plus one row per
/// sample, doubles printed so they round-trip bit for bit.
void save_csv(const Dataset& ds, const std::string& path, LabelMode mode);

struct SplitResult {
    Dataset train;
    Dataset validation;
    std::vector<int> train_indices;  // source rows, in permuted order
    std::vector<int> val_indices;
};

/// Seeded permutation split: the first train_count permuted rows train, the
/// next val_count validate. The two index sets are disjoint by construction.
SplitResult split(const Dataset& ds, int train_count, int val_count, std::uint64_t seed);

} // namespace layertime

#endif // LAYERTIME_DATA_HPP

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "layertime/data.hpp"
#include "layertime/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

using namespace layertime;

namespace {

namespace fs = std::filesystem;

/// Independent rearrangement of the peaks surface used as a duplicate-formula
/// oracle: same terms, different grouping and power evaluation.
double peaks_reference(double x, double y) {
    const double e1 = std::exp(-(x * x) - (y + 1.0) * (y + 1.0));
    const double e2 = std::exp(-(x * x) - y * y);
    const double e3 = std::exp(-((x + 1.0) * (x + 1.0)) - y * y);
    const double quad = std::pow(1.0 - x, 2);
    const double cubic = 0.2 * x - std::pow(x, 3) - std::pow(y, 5);
    return 3.0 * quad * e1 - 10.0 * cubic * e2 - e3 / 3.0;
}

std::uint64_t fnv1a(const std::string& bytes) {
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

/// Unique scratch file in the system temp directory, removed on destruction.
struct TempFile {
    fs::path path;

    explicit TempFile(const std::string& name)
        : path(fs::temp_directory_path() / ("layertime_test_" + name)) {
        fs::remove(path);
    }
    ~TempFile() { fs::remove(path); }

    void write(const std::string& contents) const {
        std::ofstream out(path, std::ios::binary);
        out << contents;
    }
    std::string read() const {
        std::ifstream in(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    }
};

bool matrices_identical(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c)
            if (a(r, c) != b(r, c)) return false;
    return true;
}

int label_class(const Dataset& ds, int row) {
    for (int j = 0; j < ds.labels.cols(); ++j)
        if (ds.labels(row, j) == 1.0) return j;
    return -1;
}

} // namespace

TEST_CASE("the peaks surface matches hand evaluations and decays far from the origin") {
    // At the origin only the first and third terms survive:
    // 3 e^{-1} - (1/3) e^{-1} = (8/3) e^{-1}.
    CHECK(peaks_value(0.0, 0.0) ==
          doctest::Approx((8.0 / 3.0) * std::exp(-1.0)).epsilon(1e-15));
    CHECK(std::abs(peaks_value(10.0, 10.0)) < 1e-30);
    CHECK(std::abs(peaks_value(-10.0, 10.0)) < 1e-30);

    Rng rng(2024);
    for (int i = 0; i < 100; ++i) {
        const double x = rng.uniform(-3.0, 3.0);
        const double y = rng.uniform(-3.0, 3.0);
        CHECK(std::abs(peaks_value(x, y) - peaks_reference(x, y)) <= 1e-14);
    }
}

TEST_CASE("class boundaries are increasing, regenerable, and quintile-balanced") {
    const std::array<double, 4>& cached = peaks_thresholds();
    for (int i = 0; i + 1 < 4; ++i) CHECK(cached[i] < cached[i + 1]);

    const std::array<double, 4> regenerated = compute_peaks_thresholds();
    for (int i = 0; i < 4; ++i) CHECK(regenerated[i] == cached[i]);

    // Classifying the defining grid itself puts 20% +- 0.5% in each bin.
    std::array<int, 5> counts{};
    constexpr int kGrid = 201;
    for (int i = 0; i < kGrid; ++i) {
        const double x = -3.0 + 6.0 * i / (kGrid - 1);
        for (int j = 0; j < kGrid; ++j) {
            const double y = -3.0 + 6.0 * j / (kGrid - 1);
            ++counts[peaks_class(peaks_value(x, y))];
        }
    }
    const double total = kGrid * kGrid;
    for (int cls = 0; cls < 5; ++cls) {
        const double freq = counts[cls] / total;
        CHECK(freq >= 0.195);
        CHECK(freq <= 0.205);
    }

    // Boundary membership rule: a value in bin k sits above exactly k bounds.
    CHECK(peaks_class(cached[0] - 1.0) == 0);
    CHECK(peaks_class(cached[0]) == 1);
    CHECK(peaks_class(cached[3]) == 4);
    CHECK(peaks_class(cached[3] + 1.0) == 4);
}

TEST_CASE("generated peaks datasets are deterministic, in-domain, and labeled by the surface") {
    const Dataset a = generate_peaks(500, 99);
    const Dataset b = generate_peaks(500, 99);
    CHECK(matrices_identical(a.features, b.features));
    CHECK(matrices_identical(a.labels, b.labels));

    const Dataset c = generate_peaks(500, 100);
    CHECK_FALSE(matrices_identical(a.features, c.features));

    CHECK(a.size() == 500);
    CHECK(a.features.cols() == 2);
    CHECK(a.labels.cols() == 5);
    CHECK(a.provenance.kind == DatasetProvenance::Kind::generated);
    CHECK(a.provenance.seed == 99);
    CHECK(a.class_names.size() == 5);

    for (int k = 0; k < a.size(); ++k) {
        const double x = a.features(k, 0);
        const double y = a.features(k, 1);
        CHECK(x >= -3.0);
        CHECK(x <= 3.0);
        CHECK(y >= -3.0);
        CHECK(y <= 3.0);
        CHECK(label_class(a, k) == peaks_class(peaks_value(x, y)));
    }

    CHECK_THROWS_AS(generate_peaks(0, 1), std::logic_error);
}

TEST_CASE("a large generated sample is class-balanced to within two points") {
    const Dataset ds = generate_peaks(10000, 7);
    std::array<int, 5> counts{};
    for (int k = 0; k < ds.size(); ++k) ++counts[label_class(ds, k)];
    for (int cls = 0; cls < 5; ++cls) {
        const double freq = counts[cls] / 10000.0;
        CHECK(freq >= 0.18);
        CHECK(freq <= 0.22);
    }
}

TEST_CASE("CSV round trips preserve every bit in both label modes") {
    const Dataset original = generate_peaks(40, 5);

    SUBCASE("index labels") {
        TempFile file("roundtrip_index.csv");
        save_csv(original, file.path.string(), LabelMode::index);
        const Dataset loaded = load_csv(file.path.string(), 2, 5, LabelMode::index);
        CHECK(matrices_identical(original.features, loaded.features));
        CHECK(matrices_identical(original.labels, loaded.labels));
        CHECK(loaded.provenance.kind == DatasetProvenance::Kind::loaded);
        CHECK(loaded.provenance.path == file.path.string());
        CHECK(loaded.provenance.hash == hex64(fnv1a(file.read())));

        // Saving the reloaded dataset reproduces the file byte for byte.
        TempFile second("roundtrip_index2.csv");
        save_csv(loaded, second.path.string(), LabelMode::index);
        CHECK(second.read() == file.read());
    }

    SUBCASE("one-hot labels") {
        TempFile file("roundtrip_onehot.csv");
        save_csv(original, file.path.string(), LabelMode::one_hot);
        const Dataset loaded = load_csv(file.path.string(), 2, 5, LabelMode::one_hot);
        CHECK(matrices_identical(original.features, loaded.features));
        CHECK(matrices_identical(original.labels, loaded.labels));
    }
}

TEST_CASE("a handcrafted index file loads the expected one-hot labels") {
    TempFile file("handcrafted.csv");
    file.write(
        "f0,f1,label\n"
        "0.5,1.25,0\n"
        "-2,0.125,2\n"
        "3.5,-0.75,1\n");
    const Dataset ds = load_csv(file.path.string(), 2, 3, LabelMode::index);
    REQUIRE(ds.size() == 3);
    CHECK(ds.features(0, 0) == 0.5);
    CHECK(ds.features(0, 1) == 1.25);
    CHECK(ds.features(1, 0) == -2.0);
    CHECK(ds.features(1, 1) == 0.125);
    CHECK(ds.features(2, 0) == 3.5);
    CHECK(ds.features(2, 1) == -0.75);
    CHECK(label_class(ds, 0) == 0);
    CHECK(label_class(ds, 1) == 2);
    CHECK(label_class(ds, 2) == 1);
}

TEST_CASE("malformed CSV input is rejected with the offending line number") {
    SUBCASE("class index out of range") {
        TempFile file("bad_class.csv");
        file.write("f0,f1,label\n0,0,1\n0,0,3\n");
        CHECK_THROWS_WITH_AS(load_csv(file.path.string(), 2, 3, LabelMode::index),
                             "line 3: class index 3 out of range [0, 3)", std::runtime_error);
    }
    SUBCASE("fractional class index") {
        TempFile file("frac_class.csv");
        file.write("f0,f1,label\n0,0,1.5\n");
        CHECK_THROWS_WITH_AS(load_csv(file.path.string(), 2, 3, LabelMode::index),
                             "line 2: class index 1.5 out of range [0, 3)", std::runtime_error);
    }
    SUBCASE("ragged row") {
        TempFile file("ragged.csv");
        file.write("f0,f1,label\n1,2\n");
        CHECK_THROWS_WITH_AS(load_csv(file.path.string(), 2, 3, LabelMode::index),
                             "line 2: expected 3 fields, got 2", std::runtime_error);
    }
    SUBCASE("non-numeric feature") {
        TempFile file("nonnum.csv");
        file.write("f0,f1,label\nabc,2,0\n");
        CHECK_THROWS_WITH_AS(load_csv(file.path.string(), 2, 3, LabelMode::index),
                             "line 2: field 1 is not numeric: 'abc'", std::runtime_error);
    }
    SUBCASE("broken one-hot row") {
        TempFile file("bad_onehot.csv");
        file.write("f0,f1,c0,c1,c2\n1,2,0.5,0.5,0\n");
        CHECK_THROWS_WITH_AS(load_csv(file.path.string(), 2, 3, LabelMode::one_hot),
                             "line 2: label fields are not one-hot", std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_csv("/nonexistent/nowhere.csv", 2, 3, LabelMode::index),
                        std::runtime_error);
    }
    SUBCASE("header but no rows") {
        TempFile file("header_only.csv");
        file.write("f0,f1,label\n");
        CHECK_THROWS_AS(load_csv(file.path.string(), 2, 3, LabelMode::index),
                        std::runtime_error);
    }
}

TEST_CASE("normalization maps each feature column onto the unit interval") {
    TempFile file("normalize.csv");
    file.write(
        "f0,f1,f2,label\n"
        "2,10,7,0\n"
        "4,30,7,1\n"
        "6,20,7,0\n");
    const Dataset ds = load_csv(file.path.string(), 3, 2, LabelMode::index, true);
    // Column 0 spans [2,6], column 1 spans [10,30], column 2 is constant.
    CHECK(ds.features(0, 0) == 0.0);
    CHECK(ds.features(1, 0) == 0.5);
    CHECK(ds.features(2, 0) == 1.0);
    CHECK(ds.features(0, 1) == 0.0);
    CHECK(ds.features(1, 1) == 1.0);
    CHECK(ds.features(2, 1) == 0.5);
    CHECK(ds.features(0, 2) == 0.0);
    CHECK(ds.features(1, 2) == 0.0);
    CHECK(ds.features(2, 2) == 0.0);

    const Dataset raw = load_csv(file.path.string(), 3, 2, LabelMode::index, false);
    CHECK(raw.features(0, 0) == 2.0);
    CHECK(raw.features(1, 1) == 30.0);
}

TEST_CASE("splits are deterministic, disjoint, and drawn from one permutation") {
    const Dataset ds = generate_peaks(100, 3);
    const SplitResult a = split(ds, 60, 25, 9);
    const SplitResult b = split(ds, 60, 25, 9);
    CHECK(a.train_indices == b.train_indices);
    CHECK(a.val_indices == b.val_indices);
    CHECK(matrices_identical(a.train.features, b.train.features));
    CHECK(matrices_identical(a.validation.features, b.validation.features));

    const SplitResult c = split(ds, 60, 25, 10);
    CHECK(a.train_indices != c.train_indices);

    REQUIRE(a.train.size() == 60);
    REQUIRE(a.validation.size() == 25);
    std::set<int> seen;
    for (int idx : a.train_indices) seen.insert(idx);
    for (int idx : a.val_indices) seen.insert(idx);
    CHECK(seen.size() == 85); // no duplicates across or within the parts
    for (int idx : seen) {
        CHECK(idx >= 0);
        CHECK(idx < 100);
    }

    // Each part's rows are the source rows named by its index list.
    for (int k = 0; k < a.train.size(); ++k)
        for (int j = 0; j < 2; ++j)
            CHECK(a.train.features(k, j) == ds.features(a.train_indices[k], j));
    for (int k = 0; k < a.validation.size(); ++k)
        for (int j = 0; j < 2; ++j)
            CHECK(a.validation.features(k, j) == ds.features(a.val_indices[k], j));
}

TEST_CASE("a split can consume the whole dataset and leave validation empty") {
    const Dataset ds = generate_peaks(20, 1);
    const SplitResult all = split(ds, 20, 0, 4);
    CHECK(all.train.size() == 20);
    CHECK(all.validation.size() == 0);
    CHECK(all.val_indices.empty());

    CHECK_THROWS_WITH_AS(split(ds, 15, 6, 4),
                         "split: requested 21 rows from a dataset of 20", std::logic_error);
}

TEST_CASE("dataset validation rejects rows that are not one-hot") {
    Dataset ds;
    ds.features = Matrix(2, 2);
    ds.labels = Matrix(2, 3);
    ds.labels(0, 1) = 1.0;
    ds.labels(1, 0) = 0.5;
    CHECK_THROWS_WITH_AS(ds.validate(), "Dataset: label row 1 is not one-hot",
                         std::logic_error);

    ds.labels(1, 0) = 1.0;
    CHECK_NOTHROW(ds.validate());

    const Batch batch = ds.to_batch();
    CHECK(batch.size() == 2);
    CHECK(batch.ids == std::vector<int>{0, 1});
}

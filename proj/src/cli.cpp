#include "layertime/cli.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace layertime {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    return parts;
}

double parse_double_value(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty()) throw ConfigError(key + ": expected a number, got an empty value");
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return d;
}

int parse_int_value(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty()) throw ConfigError(key + ": expected an integer, got an empty value");
    char* end = nullptr;
    const long n = std::strtol(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || n < std::numeric_limits<int>::min() ||
        n > std::numeric_limits<int>::max())
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return static_cast<int>(n);
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty() || v[0] == '-')
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    char* end = nullptr;
    const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size())
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::uint64_t>(n);
}

bool parse_bool_value(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list_value(const std::string& key, const std::string& value) {
    std::vector<int> out;
    if (trim(value).empty()) return out;
    for (const std::string& part : split_on(value, ','))
        out.push_back(parse_int_value(key, part));
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "data.label_mode",         "data.normalize",
        "data.path",               "data.samples",
        "data.seed",               "data.source",
        "hyper.eps_relu",          "hyper.gamma_ddt",
        "hyper.gamma_tik",         "hyper.initial_weight_scale",
        "hyper.opening_scale",     "mgrit.c",
        "mgrit.coarsest_max",      "mgrit.max_levels",
        "nested.coarsest_layers",  "nested.d_post_refine",
        "nested.d_steady",         "nested.interpolation",
        "nested.iterations",       "nested.levels",
        "nested.post_refine_span", "network.classes",
        "network.features",        "network.final_time",
        "network.layers",          "network.width",
        "optimizer.armijo_c",      "optimizer.max_backtracks",
        "optimizer.rel_tol",       "optimizer.serial_trials",
        "optimizer.shrink",        "optimizer.step_grow",
        "optimizer.step_init",     "run.iterations",
        "run.mode",                "run.out",
        "run.probe_iterations",    "run.seconds_per_unit",
        "run.seed",                "split.seed",
        "split.train",             "split.validation",
    };
    return keys;
}

OptimizerConfig::Mode parse_mode_value(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v == "nested") return OptimizerConfig::Mode::nested;
    if (v == "non-nested" || v == "non_nested") return OptimizerConfig::Mode::non_nested;
    throw ConfigError(key + ": expected nested or non-nested, got '" + v + "'");
}

void apply_entry(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "network.features") c.network.n_f = parse_int_value(key, value);
    else if (key == "network.width") c.network.w = parse_int_value(key, value);
    else if (key == "network.classes") c.network.n_c = parse_int_value(key, value);
    else if (key == "network.layers") c.network.n_layers = parse_int_value(key, value);
    else if (key == "network.final_time") c.network.final_time = parse_double_value(key, value);
    else if (key == "hyper.initial_weight_scale")
        c.hyper.initial_weight_scale = parse_double_value(key, value);
    else if (key == "hyper.gamma_tik") c.hyper.gamma_tik = parse_double_value(key, value);
    else if (key == "hyper.gamma_ddt") c.hyper.gamma_ddt = parse_double_value(key, value);
    else if (key == "hyper.eps_relu") c.hyper.eps_relu = parse_double_value(key, value);
    else if (key == "hyper.opening_scale") c.hyper.opening_scale = parse_double_value(key, value);
    else if (key == "nested.levels") c.schedule.levels = parse_int_value(key, value);
    else if (key == "nested.coarsest_layers") c.schedule.n_coarsest = parse_int_value(key, value);
    else if (key == "nested.iterations") c.schedule.iterations = parse_int_list_value(key, value);
    else if (key == "nested.interpolation") {
        const std::string v = trim(value);
        if (v == "constant") c.schedule.interpolation = NestedSchedule::Interpolation::constant;
        else if (v == "linear") c.schedule.interpolation = NestedSchedule::Interpolation::linear;
        else throw ConfigError(key + ": expected constant or linear, got '" + v + "'");
    } else if (key == "nested.d_post_refine")
        c.schedule.d_post_refine = parse_int_value(key, value);
    else if (key == "nested.post_refine_span")
        c.schedule.post_refine_span = parse_int_value(key, value);
    else if (key == "nested.d_steady") c.schedule.d_steady = parse_int_value(key, value);
    else if (key == "optimizer.step_init") c.optimizer.step_init = parse_double_value(key, value);
    else if (key == "optimizer.armijo_c") c.optimizer.armijo_c = parse_double_value(key, value);
    else if (key == "optimizer.shrink") c.optimizer.shrink = parse_double_value(key, value);
    else if (key == "optimizer.max_backtracks")
        c.optimizer.max_backtracks = parse_int_value(key, value);
    else if (key == "optimizer.step_grow") c.optimizer.step_grow = parse_double_value(key, value);
    else if (key == "optimizer.rel_tol") {
        const std::string v = trim(value);
        if (v == "none") c.optimizer.rel_tol_mgrit.reset();
        else c.optimizer.rel_tol_mgrit = parse_double_value(key, value);
    } else if (key == "optimizer.serial_trials")
        c.optimizer.serial_trial_objective = parse_bool_value(key, value);
    else if (key == "mgrit.c") c.mgrit.coarsening = parse_int_value(key, value);
    else if (key == "mgrit.max_levels") c.mgrit.max_levels = parse_int_value(key, value);
    else if (key == "mgrit.coarsest_max") c.mgrit.coarsest_max = parse_int_value(key, value);
    else if (key == "data.source") {
        const std::string v = trim(value);
        if (v == "generated") c.data.source = DataConfig::Source::generated;
        else if (v == "csv") c.data.source = DataConfig::Source::csv;
        else throw ConfigError(key + ": expected generated or csv, got '" + v + "'");
    } else if (key == "data.seed")
        c.data.seed = parse_u64_value(key, value);
    else if (key == "data.samples") c.data.samples = parse_int_value(key, value);
    else if (key == "data.path") c.data.path = trim(value);
    else if (key == "data.label_mode") {
        const std::string v = trim(value);
        if (v == "index") c.data.label_mode = LabelMode::index;
        else if (v == "one_hot") c.data.label_mode = LabelMode::one_hot;
        else throw ConfigError(key + ": expected index or one_hot, got '" + v + "'");
    } else if (key == "data.normalize")
        c.data.normalize = parse_bool_value(key, value);
    else if (key == "split.train") c.train_count = parse_int_value(key, value);
    else if (key == "split.validation") c.val_count = parse_int_value(key, value);
    else if (key == "split.seed") c.split_seed = parse_u64_value(key, value);
    else if (key == "run.seed") c.seed = parse_u64_value(key, value);
    else if (key == "run.mode") c.mode = parse_mode_value(key, value);
    else if (key == "run.iterations") c.non_nested_iterations = parse_int_value(key, value);
    else if (key == "run.probe_iterations") c.probe_iterations = parse_int_value(key, value);
    else if (key == "run.seconds_per_unit") {
        const std::string v = trim(value);
        if (v == "calibrate") c.seconds_per_unit.reset();
        else c.seconds_per_unit = parse_double_value(key, value);
    } else if (key == "run.out")
        c.out_dir = trim(value);
    else
        throw ConfigError("unknown key '" + key + "'");
}

/// Keys that are only meaningful for one data source; listing one under the
/// other source is treated as a typo, like any unknown key.
void check_source_conditionals(const RunConfig& c, const std::map<std::string, std::string>& kv) {
    const bool generated = c.data.source == DataConfig::Source::generated;
    const std::vector<std::string> csv_only = {"data.path", "data.label_mode", "data.normalize"};
    const std::vector<std::string> generated_only = {"data.seed", "data.samples"};
    for (const std::string& k : generated ? csv_only : generated_only)
        if (kv.count(k))
            throw ConfigError(k + ": only meaningful when data.source = " +
                              (generated ? "csv" : "generated"));
}

RunConfig config_from_entries(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    for (const auto& [key, value] : kv) apply_entry(c, key, value);
    check_source_conditionals(c, kv);
    // Recompute the derived step size; the network keys arrive one by one.
    try {
        c.network = NetworkShape::make(c.network.n_f, c.network.w, c.network.n_c,
                                       c.network.n_layers, c.network.final_time);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("network: ") + e.what());
    }
    return c;
}

void rethrow_as_config_error(const std::string& prefix, const std::exception& e) {
    throw ConfigError(prefix + ": " + e.what());
}

std::string atomic_temp_name(const fs::path& target) {
    return target.string() + ".tmp";
}

void atomic_write_text(const fs::path& target, const std::string& content) {
    const fs::path tmp = atomic_temp_name(target);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("failed while writing " + tmp.string());
    }
    fs::rename(tmp, target);
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<std::uint64_t>(d)); }

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string name;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw std::runtime_error(name + ": truncated controls file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * k);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * k);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

constexpr const char* kControlsMagic = "LTCT";
constexpr std::uint32_t kControlsVersion = 1;

constexpr const char* kLogHeader =
    "iteration,level,work_units,objective,train_acc,val_acc,d_used,fwd_residual,bwd_residual,"
    "step_size,wall_seconds,grad_norm,objective_before,stalled";

const char* const kLogFields[] = {"iteration",    "level",        "work_units",
                                  "objective",    "train_acc",    "val_acc",
                                  "d_used",       "fwd_residual", "bwd_residual",
                                  "step_size",    "wall_seconds", "grad_norm",
                                  "objective_before", "stalled"};

double parse_log_double(const std::string& name, int lineno, int field, const std::string& v) {
    const std::string t = trim(v);
    char* end = nullptr;
    const double d = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size())
        throw std::runtime_error(name + " line " + std::to_string(lineno) + ": field '" +
                                 kLogFields[field] + "' is not a number: '" + t + "'");
    return d;
}

int parse_log_int(const std::string& name, int lineno, int field, const std::string& v) {
    const std::string t = trim(v);
    char* end = nullptr;
    const long n = std::strtol(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size())
        throw std::runtime_error(name + " line " + std::to_string(lineno) + ": field '" +
                                 kLogFields[field] + "' is not an integer: '" + t + "'");
    return static_cast<int>(n);
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out.push_back(ch);
    }
    out += "\"";
    return out;
}

std::string sanitize_path_component(const std::string& s) {
    std::string out;
    for (char ch : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' ||
                        ch == '=' || ch == ',' || ch == '+' || ch == '-';
        out.push_back(ok ? ch : '_');
    }
    return out;
}

std::string read_whole_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Walks the coarsening that the multigrid hierarchy would perform on a grid
/// of n intervals and rejects configurations where a level fails to divide.
void check_hierarchy_divisibility(int n, const MgritSettings& mgrit) {
    int intervals = n;
    int built = 1;
    while (built < mgrit.max_levels && intervals > mgrit.coarsest_max) {
        if (intervals % mgrit.coarsening != 0)
            throw ConfigError("mgrit.c: a grid of " + std::to_string(intervals) +
                              " intervals in this run is not divisible by " +
                              std::to_string(mgrit.coarsening));
        intervals /= mgrit.coarsening;
        ++built;
    }
}

} // namespace

void RunConfig::validate() const {
    try {
        network.validate();
    } catch (const std::exception& e) {
        rethrow_as_config_error("network", e);
    }
    try {
        hyper.validate();
    } catch (const std::exception& e) {
        rethrow_as_config_error("hyper", e);
    }
    try {
        optimizer.validate();
    } catch (const std::exception& e) {
        rethrow_as_config_error("optimizer", e);
    }
    try {
        mgrit.validate();
    } catch (const std::exception& e) {
        rethrow_as_config_error("mgrit", e);
    }

    if (data.source == DataConfig::Source::generated) {
        if (data.samples < 1) throw ConfigError("data.samples must be >= 1");
        if (network.n_f != 2 || network.n_c != 5)
            throw ConfigError(
                "network.features/network.classes: generated peaks data has 2 features and 5 "
                "classes");
    } else if (data.path.empty()) {
        throw ConfigError("data.path is required when data.source = csv");
    }

    if (train_count < 1) throw ConfigError("split.train must be >= 1");
    if (val_count < 0) throw ConfigError("split.validation must be >= 0");
    if (data.source == DataConfig::Source::generated && train_count + val_count > data.samples)
        throw ConfigError("split.train + split.validation = " +
                          std::to_string(train_count + val_count) + " exceeds data.samples = " +
                          std::to_string(data.samples));

    if (!seconds_per_unit && probe_iterations < 3)
        throw ConfigError("run.probe_iterations must be >= 3 when calibrating");
    if (seconds_per_unit && !(*seconds_per_unit > 0.0))
        throw ConfigError("run.seconds_per_unit must be positive when given");
    if (out_dir.empty()) throw ConfigError("run.out must not be empty");

    if (mode == OptimizerConfig::Mode::nested) {
        try {
            schedule.validate();
        } catch (const std::exception& e) {
            rethrow_as_config_error("nested", e);
        }
        if (schedule.finest_layers() != network.n_layers)
            throw ConfigError("network.layers = " + std::to_string(network.n_layers) +
                              " but the nested schedule refines to " +
                              std::to_string(schedule.finest_layers()));
        for (int level = 0; level < schedule.levels; ++level)
            check_hierarchy_divisibility(schedule.n_coarsest << (schedule.levels - 1 - level),
                                         mgrit);
    } else {
        if (non_nested_iterations < 0) throw ConfigError("run.iterations must be >= 0");
        if (schedule.d_steady < 1) throw ConfigError("nested.d_steady must be >= 1");
        check_hierarchy_divisibility(network.n_layers, mgrit);
    }
}

std::map<std::string, std::string> RunConfig::to_flat_map() const {
    std::map<std::string, std::string> m;
    m["network.features"] = std::to_string(network.n_f);
    m["network.width"] = std::to_string(network.w);
    m["network.classes"] = std::to_string(network.n_c);
    m["network.layers"] = std::to_string(network.n_layers);
    m["network.final_time"] = fmt_double(network.final_time);

    m["hyper.initial_weight_scale"] = fmt_double(hyper.initial_weight_scale);
    m["hyper.gamma_tik"] = fmt_double(hyper.gamma_tik);
    m["hyper.gamma_ddt"] = fmt_double(hyper.gamma_ddt);
    m["hyper.eps_relu"] = fmt_double(hyper.eps_relu);
    m["hyper.opening_scale"] = fmt_double(hyper.opening_scale);

    m["nested.levels"] = std::to_string(schedule.levels);
    m["nested.coarsest_layers"] = std::to_string(schedule.n_coarsest);
    m["nested.iterations"] = join_ints(schedule.iterations);
    m["nested.interpolation"] =
        schedule.interpolation == NestedSchedule::Interpolation::constant ? "constant" : "linear";
    m["nested.d_post_refine"] = std::to_string(schedule.d_post_refine);
    m["nested.post_refine_span"] = std::to_string(schedule.post_refine_span);
    m["nested.d_steady"] = std::to_string(schedule.d_steady);

    m["optimizer.step_init"] = fmt_double(optimizer.step_init);
    m["optimizer.armijo_c"] = fmt_double(optimizer.armijo_c);
    m["optimizer.shrink"] = fmt_double(optimizer.shrink);
    m["optimizer.max_backtracks"] = std::to_string(optimizer.max_backtracks);
    m["optimizer.step_grow"] = fmt_double(optimizer.step_grow);
    m["optimizer.rel_tol"] =
        optimizer.rel_tol_mgrit ? fmt_double(*optimizer.rel_tol_mgrit) : std::string("none");
    m["optimizer.serial_trials"] = optimizer.serial_trial_objective ? "true" : "false";

    m["mgrit.c"] = std::to_string(mgrit.coarsening);
    m["mgrit.max_levels"] = std::to_string(mgrit.max_levels);
    m["mgrit.coarsest_max"] = std::to_string(mgrit.coarsest_max);

    if (data.source == DataConfig::Source::generated) {
        m["data.source"] = "generated";
        m["data.seed"] = std::to_string(data.seed);
        m["data.samples"] = std::to_string(data.samples);
    } else {
        m["data.source"] = "csv";
        m["data.path"] = data.path;
        m["data.label_mode"] = data.label_mode == LabelMode::index ? "index" : "one_hot";
        m["data.normalize"] = data.normalize ? "true" : "false";
    }

    m["split.train"] = std::to_string(train_count);
    m["split.validation"] = std::to_string(val_count);
    m["split.seed"] = std::to_string(split_seed);

    m["run.seed"] = std::to_string(seed);
    m["run.mode"] = mode == OptimizerConfig::Mode::nested ? "nested" : "non-nested";
    m["run.iterations"] = std::to_string(non_nested_iterations);
    m["run.probe_iterations"] = std::to_string(probe_iterations);
    m["run.seconds_per_unit"] =
        seconds_per_unit ? fmt_double(*seconds_per_unit) : std::string("calibrate");
    m["run.out"] = out_dir;
    return m;
}

RunConfig parse_run_config_text(const std::string& text, const std::string& source_name) {
    std::map<std::string, std::string> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source_name + " line " + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(source_name + " line " + std::to_string(lineno) + ": empty key");
        if (!known_config_keys().count(key))
            throw ConfigError(source_name + " line " + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
        if (entries.count(key))
            throw ConfigError(source_name + " line " + std::to_string(lineno) +
                              ": duplicate key '" + key + "'");
        entries[key] = value;
    }
    return config_from_entries(entries);
}

RunConfig load_run_config(const std::string& path) {
    std::string text;
    try {
        text = read_whole_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config_text(text, path);
}

RunConfig run_config_from_summary(const std::string& summary_path) {
    json j;
    try {
        j = json::parse(read_whole_file(summary_path));
    } catch (const std::exception& e) {
        throw ConfigError(summary_path + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object())
        throw ConfigError(summary_path + ": no 'config' object");
    std::map<std::string, std::string> entries;
    for (const auto& [key, value] : j["config"].items()) {
        if (!value.is_string())
            throw ConfigError(summary_path + ": config value for '" + key + "' is not a string");
        if (!known_config_keys().count(key))
            throw ConfigError(summary_path + ": unknown key '" + key + "'");
        entries[key] = value.get<std::string>();
    }
    return config_from_entries(entries);
}

void apply_overrides(RunConfig& config, const CliOverrides& overrides) {
    if (overrides.seed) config.seed = *overrides.seed;
    if (overrides.out_dir) config.out_dir = *overrides.out_dir;
    if (overrides.mode) config.mode = parse_mode_value("--mode", *overrides.mode);
    if (overrides.seconds_per_unit) config.seconds_per_unit = *overrides.seconds_per_unit;
}

RunResult execute_run(const RunConfig& config, WorkerPool& pool) {
    config.validate();

    Dataset ds;
    if (config.data.source == DataConfig::Source::generated) {
        ds = generate_peaks(config.data.samples, config.data.seed);
    } else {
        ds = load_csv(config.data.path, config.network.n_f, config.network.n_c,
                      config.data.label_mode, config.data.normalize);
        if (config.train_count + config.val_count > ds.size())
            throw ConfigError("split.train + split.validation = " +
                              std::to_string(config.train_count + config.val_count) +
                              " exceeds the " + std::to_string(ds.size()) + " rows of " +
                              config.data.path);
    }

    const SplitResult parts = split(ds, config.train_count, config.val_count, config.split_seed);
    TrainingData data;
    data.train = parts.train.to_batch();
    if (config.val_count > 0) data.validation = parts.validation.to_batch();

    OptimizerConfig opt = config.optimizer;
    opt.mode = config.mode;
    const double spu =
        config.seconds_per_unit
            ? *config.seconds_per_unit
            : calibrate_work_unit(config.network, config.hyper, data, opt, config.mgrit,
                                  config.schedule.d_steady, config.probe_iterations, config.seed,
                                  pool);
    opt.seconds_per_unit = spu;

    TrainRunResult trained =
        config.mode == OptimizerConfig::Mode::nested
            ? nested_train(config.network, config.schedule, config.hyper, data, opt, config.mgrit,
                           config.seed, pool)
            : train_non_nested(config.network, config.non_nested_iterations, config.hyper, data,
                               opt, config.mgrit, config.schedule.d_steady, config.seed, pool);

    RunResult result;
    result.theta = std::move(trained.theta);
    result.log = std::move(trained.log);
    result.seconds_per_unit = spu;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    result.final_objective = nan;
    result.final_train_acc = nan;
    result.final_val_acc = nan;
    if (!result.log.records.empty()) {
        const TrainingRecord& last = result.log.records.back();
        result.final_objective = last.objective;
        result.final_train_acc = last.train_acc;
        result.final_val_acc = last.val_acc;
    }
    return result;
}

void save_controls(const ControlTrajectory& theta, const std::string& path) {
    std::string buf;
    buf += kControlsMagic;
    put_u32(buf, kControlsVersion);
    put_u64(buf, static_cast<std::uint64_t>(theta.shape.n_f));
    put_u64(buf, static_cast<std::uint64_t>(theta.shape.w));
    put_u64(buf, static_cast<std::uint64_t>(theta.shape.n_c));
    put_u64(buf, static_cast<std::uint64_t>(theta.shape.n_layers));
    put_f64(buf, theta.shape.final_time);
    put_f64(buf, theta.shape.h);
    for (double v : theta.flatten()) put_f64(buf, v);
    atomic_write_text(path, buf);
}

ControlTrajectory load_controls(const std::string& path) {
    const std::string buf = read_whole_file(path);
    ByteReader r{buf, 0, path};
    r.need(4);
    if (buf.compare(0, 4, kControlsMagic) != 0)
        throw std::runtime_error(path + ": not a controls file (bad magic)");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kControlsVersion)
        throw std::runtime_error(path + ": unsupported controls version " +
                                 std::to_string(version));
    const auto n_f = static_cast<int>(r.u64());
    const auto w = static_cast<int>(r.u64());
    const auto n_c = static_cast<int>(r.u64());
    const auto n_layers = static_cast<int>(r.u64());
    const double final_time = r.f64();
    const double h = r.f64();

    NetworkShape shape;
    try {
        shape = NetworkShape::make(n_f, w, n_c, n_layers, final_time);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": invalid shape header: " + e.what());
    }
    if (h != shape.h)
        throw std::runtime_error(path + ": stored step size disagrees with the shape header");

    std::vector<double> values;
    const std::size_t count = ControlTrajectory::zeros(shape).parameter_count();
    values.reserve(count);
    for (std::size_t i = 0; i < count; ++i) values.push_back(r.f64());
    if (r.pos != buf.size())
        throw std::runtime_error(path + ": trailing bytes after the parameter blocks");
    return ControlTrajectory::unflatten(shape, values);
}

void write_curve_csv(const TrainingLog& log, std::ostream& out) {
    out << "work_units,objective,train_acc,val_acc,level\n";
    for (const TrainingRecord& r : log.records)
        out << fmt_double(r.work_units) << ',' << fmt_double(r.objective) << ','
            << fmt_double(r.train_acc) << ',' << fmt_double(r.val_acc) << ',' << r.level << '\n';
}

void write_run_artifacts(const RunConfig& config, const RunResult& result) {
    const fs::path dir = config.out_dir;
    fs::create_directories(dir);

    {
        std::ostringstream log;
        OptimizerConfig echoed = config.optimizer;
        echoed.mode = config.mode;
        echoed.seconds_per_unit = result.seconds_per_unit;
        write_training_log_csv(result.log, echoed, log);
        atomic_write_text(dir / "log.csv", log.str());
    }
    {
        std::ostringstream curve;
        write_curve_csv(result.log, curve);
        atomic_write_text(dir / "curve.csv", curve.str());
    }
    save_controls(result.theta, (dir / "controls.bin").string());

    json j;
    j["config"] = config.to_flat_map();
    j["seed"] = config.seed;
    j["seconds_per_unit"] = result.seconds_per_unit;
    j["final"]["objective"] = result.final_objective;
    j["final"]["train_accuracy"] = result.final_train_acc;
    j["final"]["validation_accuracy"] = result.final_val_acc;
    j["final"]["iterations"] = result.log.records.size();
    j["final"]["total_work_units"] = result.log.total_work_units();
    j["refinements"] = json::array();
    for (const RefinementEvent& ev : result.log.refinements) {
        json e;
        e["level"] = ev.level;
        e["layers"] = ev.n_layers;
        e["interpolation"] = ev.interpolation;
        e["wall_seconds"] = ev.wall_seconds;
        j["refinements"].push_back(e);
    }
    atomic_write_text(dir / "summary.json", j.dump(2) + "\n");
}

TrainingLog parse_training_log_csv(std::istream& in, const std::string& source_name) {
    TrainingLog log;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') continue;
        if (!header_seen) {
            if (line != kLogHeader)
                throw std::runtime_error(source_name + " line " + std::to_string(lineno) +
                                         ": unexpected header '" + line + "'");
            header_seen = true;
            continue;
        }
        const std::vector<std::string> fields = split_on(line, ',');
        if (fields.size() != 14)
            throw std::runtime_error(source_name + " line " + std::to_string(lineno) +
                                     ": expected 14 fields, got " +
                                     std::to_string(fields.size()));
        TrainingRecord r;
        r.iteration = parse_log_int(source_name, lineno, 0, fields[0]);
        r.level = parse_log_int(source_name, lineno, 1, fields[1]);
        r.work_units = parse_log_double(source_name, lineno, 2, fields[2]);
        r.objective = parse_log_double(source_name, lineno, 3, fields[3]);
        r.train_acc = parse_log_double(source_name, lineno, 4, fields[4]);
        r.val_acc = parse_log_double(source_name, lineno, 5, fields[5]);
        r.d_used = parse_log_int(source_name, lineno, 6, fields[6]);
        r.fwd_residual = parse_log_double(source_name, lineno, 7, fields[7]);
        r.bwd_residual = parse_log_double(source_name, lineno, 8, fields[8]);
        r.step_size = parse_log_double(source_name, lineno, 9, fields[9]);
        r.wall_seconds = parse_log_double(source_name, lineno, 10, fields[10]);
        r.grad_norm = parse_log_double(source_name, lineno, 11, fields[11]);
        r.objective_before = parse_log_double(source_name, lineno, 12, fields[12]);
        const int stalled = parse_log_int(source_name, lineno, 13, fields[13]);
        if (stalled != 0 && stalled != 1)
            throw std::runtime_error(source_name + " line " + std::to_string(lineno) +
                                     ": field 'stalled' must be 0 or 1");
        r.stalled = stalled == 1;
        log.records.push_back(r);
    }
    if (!header_seen)
        throw std::runtime_error(source_name + ": missing header line");
    return log;
}

void emit_curve(const std::string& log_path, const std::string& curve_path) {
    std::ifstream in(log_path);
    if (!in) throw std::runtime_error("cannot open " + log_path);
    const TrainingLog log = parse_training_log_csv(in, log_path);
    if (log.records.empty())
        throw std::runtime_error(log_path + ": log has no records to plot");
    std::ostringstream curve;
    write_curve_csv(log, curve);
    atomic_write_text(curve_path, curve.str());
}

SweepStats summarize(const std::vector<double>& values) {
    SweepStats stats;
    stats.n = static_cast<int>(values.size());
    if (values.empty()) return stats;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    stats.min = sorted.front();
    stats.max = sorted.back();
    const std::size_t n = sorted.size();
    stats.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double sum = 0.0;
    for (double v : sorted) sum += v;
    stats.mean = sum / static_cast<double>(n);
    if (n >= 2) {
        double ss = 0.0;
        for (double v : sorted) ss += (v - stats.mean) * (v - stats.mean);
        stats.stddev = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return stats;
}

SweepSummary execute_sweep(const RunConfig& base,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& grid,
                           const std::vector<std::uint64_t>& seeds, WorkerPool& pool, int jobs) {
    base.validate();
    if (grid.empty()) throw ConfigError("sweep: grid must not be empty");
    if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
    if (jobs < 1) throw ConfigError("sweep: jobs must be >= 1");
    if (base.val_count < 1)
        throw ConfigError("sweep: split.validation must be >= 1 so runs report an accuracy");
    for (const auto& [key, values] : grid) {
        if (!known_config_keys().count(key))
            throw ConfigError("sweep: unknown grid key '" + key + "'");
        if (values.empty())
            throw ConfigError("sweep: grid key '" + key + "' has no values");
    }

    std::vector<std::vector<std::pair<std::string, std::string>>> combos = {{}};
    for (const auto& [key, values] : grid) {
        std::vector<std::vector<std::pair<std::string, std::string>>> expanded;
        for (const auto& combo : combos)
            for (const std::string& v : values) {
                auto next = combo;
                next.emplace_back(key, v);
                expanded.push_back(std::move(next));
            }
        combos = std::move(expanded);
    }

    struct PlannedRun {
        std::string label;
        std::uint64_t seed = 0;
        RunConfig config;
    };
    const std::map<std::string, std::string> base_map = base.to_flat_map();
    std::vector<PlannedRun> planned;
    std::vector<std::string> labels; // combo order, for the per-config tables
    for (const auto& combo : combos) {
        std::string label;
        for (const auto& [key, value] : combo) {
            if (!label.empty()) label += ",";
            label += key + "=" + value;
        }
        labels.push_back(label);
        for (std::uint64_t seed : seeds) {
            std::map<std::string, std::string> entries = base_map;
            for (const auto& [key, value] : combo) entries[key] = value;
            entries["run.seed"] = std::to_string(seed);
            entries["run.out"] = base.out_dir + "/" + sanitize_path_component(label) + "/seed_" +
                                 std::to_string(seed);
            PlannedRun run;
            run.label = label;
            run.seed = seed;
            try {
                run.config = config_from_entries(entries);
                run.config.validate();
            } catch (const ConfigError& e) {
                throw ConfigError("sweep combination '" + label + "': " + e.what());
            }
            planned.push_back(std::move(run));
        }
    }

    SweepSummary summary;
    summary.cells.resize(planned.size());
    const auto run_one = [&](std::size_t i, WorkerPool& run_pool) {
        const PlannedRun& run = planned[i];
        SweepCell cell;
        cell.label = run.label;
        cell.seed = run.seed;
        try {
            const RunResult result = execute_run(run.config, run_pool);
            write_run_artifacts(run.config, result);
            cell.ok = true;
            cell.val_acc = result.final_val_acc;
            cell.train_acc = result.final_train_acc;
            cell.objective = result.final_objective;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        summary.cells[i] = std::move(cell);
    };

    if (jobs == 1 || planned.size() <= 1) {
        for (std::size_t i = 0; i < planned.size(); ++i) run_one(i, pool);
    } else {
        std::atomic<std::size_t> next{0};
        const int n_threads = std::min<int>(jobs, static_cast<int>(planned.size()));
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t)
            threads.emplace_back([&]() {
                WorkerPool local_pool(pool.workers());
                for (std::size_t i = next.fetch_add(1); i < planned.size();
                     i = next.fetch_add(1))
                    run_one(i, local_pool);
            });
        for (std::thread& t : threads) t.join();
    }

    std::vector<double> pooled;
    for (const std::string& label : labels) {
        std::vector<double> accs;
        for (const SweepCell& cell : summary.cells)
            if (cell.ok && cell.label == label) accs.push_back(cell.val_acc);
        summary.per_config.emplace_back(label, summarize(accs));
        pooled.insert(pooled.end(), accs.begin(), accs.end());
    }
    summary.pooled = summarize(pooled);

    if (pooled.empty()) {
        std::string first_error = "unknown";
        for (const SweepCell& cell : summary.cells)
            if (!cell.ok) {
                first_error = cell.error;
                break;
            }
        throw std::runtime_error("sweep: all " + std::to_string(summary.cells.size()) +
                                 " runs failed; first error: " + first_error);
    }
    return summary;
}

void write_sweep_raw_csv(const SweepSummary& summary, std::ostream& out) {
    out << "config,seed,status,val_acc,train_acc,objective,error\n";
    for (const SweepCell& cell : summary.cells) {
        out << csv_quote(cell.label) << ',' << cell.seed << ',';
        if (cell.ok)
            out << "ok," << fmt_double(cell.val_acc) << ',' << fmt_double(cell.train_acc) << ','
                << fmt_double(cell.objective) << ",\"\"";
        else
            out << "failed,,,," << csv_quote(cell.error);
        out << '\n';
    }
}

void write_sweep_summary_csv(const SweepSummary& summary, std::ostream& out) {
    out << "config,n,mean,median,min,max,stddev\n";
    const auto row = [&out](const std::string& label, const SweepStats& s) {
        out << csv_quote(label) << ',' << s.n << ',' << fmt_double(s.mean) << ','
            << fmt_double(s.median) << ',' << fmt_double(s.min) << ',' << fmt_double(s.max) << ','
            << fmt_double(s.stddev) << '\n';
    };
    for (const auto& [label, stats] : summary.per_config) row(label, stats);
    row("pooled", summary.pooled);
}

void write_sweep_artifacts(const RunConfig& base, const SweepSummary& summary) {
    const fs::path dir = base.out_dir;
    fs::create_directories(dir);
    {
        std::ostringstream raw;
        write_sweep_raw_csv(summary, raw);
        atomic_write_text(dir / "sweep_raw.csv", raw.str());
    }
    {
        std::ostringstream table;
        write_sweep_summary_csv(summary, table);
        atomic_write_text(dir / "sweep_summary.csv", table.str());
    }
}

} // namespace layertime

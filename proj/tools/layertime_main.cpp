/// Command-line driver: `layertime run` executes one training run and writes
/// its artifacts, `layertime sweep` runs a hyperparameter grid across seeds,
/// and `layertime curve` projects an existing training log into a plot-ready
/// CSV. Exit status 2 flags configuration problems, 1 runtime failures.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "layertime/cli.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::string cur;
    const auto flush = [&]() {
        if (cur.empty()) throw layertime::ConfigError("--seeds: empty entry in seed list");
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            v = std::stoull(cur, &used);
        } catch (const std::exception&) {
            throw layertime::ConfigError("--seeds: '" + cur + "' is not a seed");
        }
        if (used != cur.size())
            throw layertime::ConfigError("--seeds: '" + cur + "' is not a seed");
        seeds.push_back(v);
        cur.clear();
    };
    for (char ch : text) {
        if (ch == ',') flush();
        else if (!std::isspace(static_cast<unsigned char>(ch))) cur.push_back(ch);
    }
    flush();
    return seeds;
}

std::pair<std::string, std::vector<std::string>> parse_grid_entry(const std::string& text) {
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw layertime::ConfigError("--grid: expected key=v1,v2,..., got '" + text + "'");
    const std::string key = text.substr(0, eq);
    std::vector<std::string> values;
    std::string cur;
    for (char ch : text.substr(eq + 1)) {
        if (ch == ',') {
            values.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    values.push_back(cur);
    for (const std::string& v : values)
        if (v.empty())
            throw layertime::ConfigError("--grid: key '" + key + "' has an empty value");
    return {key, values};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-parallel training of ODE-interpretation residual networks"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> mode;
    std::optional<double> seconds_per_unit;

    CLI::App* run = app.add_subcommand("run", "Execute one training run and write its artifacts");
    run->add_option("--config", config_path, "Run configuration file")->required();
    run->add_option("--seed", seed, "Override run.seed");
    run->add_option("--out", out_dir, "Override run.out");
    run->add_option("--mode", mode, "Override run.mode (nested | non-nested)");
    run->add_option("--seconds-per-unit", seconds_per_unit,
                    "Skip calibration and use this wall-seconds-per-work-unit scale");

    std::string seeds_text;
    std::vector<std::string> grid_entries;
    int jobs = 1;
    CLI::App* sweep = app.add_subcommand("sweep", "Run a hyperparameter grid across seeds");
    sweep->add_option("--config", config_path, "Base run configuration file")->required();
    sweep->add_option("--seeds", seeds_text, "Comma-separated seed list")->required();
    sweep->add_option("--grid", grid_entries, "Override grid, key=v1,v2 (repeatable)")
        ->required()
        ->take_all();
    sweep->add_option("--out", out_dir, "Override run.out for the sweep root");
    sweep->add_option("--jobs", jobs, "Runs to execute concurrently")->default_val(1);

    std::string log_path;
    std::optional<std::string> curve_out;
    CLI::App* curve = app.add_subcommand("curve", "Project a training log into curve.csv");
    curve->add_option("--log", log_path, "Training log to read")->required();
    curve->add_option("--out", curve_out, "Output path (default: curve.csv beside the log)");

    CLI11_PARSE(app, argc, argv);

    try {
        layertime::WorkerPool pool(layertime::WorkerPool::workers_from_env());
        if (run->parsed()) {
            layertime::RunConfig config = layertime::load_run_config(config_path);
            layertime::CliOverrides overrides{seed, out_dir, mode, seconds_per_unit};
            layertime::apply_overrides(config, overrides);
            config.validate();
            const layertime::RunResult result = layertime::execute_run(config, pool);
            layertime::write_run_artifacts(config, result);
            std::cout << "run complete: " << config.out_dir << " (objective "
                      << result.final_objective << ", val_acc " << result.final_val_acc << ")\n";
        } else if (sweep->parsed()) {
            layertime::RunConfig base = layertime::load_run_config(config_path);
            if (out_dir) base.out_dir = *out_dir;
            base.validate();
            const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_text);
            std::vector<std::pair<std::string, std::vector<std::string>>> grid;
            for (const std::string& entry : grid_entries) grid.push_back(parse_grid_entry(entry));
            const layertime::SweepSummary summary =
                layertime::execute_sweep(base, grid, seeds, pool, jobs);
            layertime::write_sweep_artifacts(base, summary);
            int failed = 0;
            for (const layertime::SweepCell& cell : summary.cells)
                if (!cell.ok) ++failed;
            std::cout << "sweep complete: " << summary.cells.size() << " runs (" << failed
                      << " failed), pooled mean val_acc " << summary.pooled.mean << "\n";
        } else if (curve->parsed()) {
            const std::string out_path =
                curve_out ? *curve_out
                          : (std::filesystem::path(log_path).parent_path() / "curve.csv").string();
            layertime::emit_curve(log_path, out_path);
            std::cout << "curve written: " << out_path << "\n";
        }
    } catch (const layertime::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

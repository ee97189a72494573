// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

// gccpc: preprocess, train, eval, bench and verify.
//
// Exit codes: 0 success, 1 verification or validation failure, 2 usage error,
// 3 I/O error.

#include <gccpc/bench.hpp>
#include <gccpc/config.hpp>
#include <gccpc/nn/checkpoint.hpp>
#include <gccpc/verify.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

using namespace gccpc;

namespace {

enum ExitCode { exit_ok = 0, exit_failure = 1, exit_usage = 2, exit_io = 3 };

class UsageError : public Error {
  public:
    using Error::Error;
};

// --config plus one option per config key; values are applied after the file
// so flags win.
struct Settings {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config_file, "config file of `key = value` lines");
        for (const auto& k : config_keys()) {
            auto& v = values[k.key];
            options[k.key] = k.boolean ? app->add_flag(k.flag + "{true}", v, k.help)
                                       : app->add_option(k.flag, v, k.help);
        }
    }

    RunConfig resolve() const
    {
        RunConfig cfg;
        try {
            if (!config_file.empty()) {
                apply_config_file(cfg, config_file);
            }
            for (const auto& k : config_keys()) {
                if (options.at(k.key)->count() > 0) {
                    apply_setting(cfg, k.key, values.at(k.key));
                }
            }
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        cfg.validate();
        return cfg;
    }
};

std::string fmt(double v, const char* spec = "%.6g")
{
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

nn::PrepareOptions prepare_options(const RunConfig& cfg)
{
    nn::PrepareOptions o;
    if (!cfg.no_cache) {
        o.cache_dir = cfg.cache_dir;
    }
    return o;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    detail::atomic_write(path, std::span<const char>(text.data(), text.size()));
}

int cmd_preprocess(const RunConfig& cfg)
{
    // Clouds are loaded one by one so that a bad file is reported and skipped.
    std::vector<nn::Sample> samples;
    std::size_t failed = 0;
    int classes = 0;
    if (cfg.dataset) {
        if (!std::filesystem::is_directory(*cfg.dataset)) {
            throw IoError("dataset directory not found: " + cfg.dataset->string());
        }
        for (const char* split : {"train", "test"}) {
            for (const auto& f : nn::dataset_files(*cfg.dataset, split)) {
                try {
                    samples.push_back(nn::load_sample(f, split));
                    classes = std::max(classes, samples.back().label + 1);
                } catch (const Error& e) {
                    std::cerr << "error: " << e.what() << '\n';
                    ++failed;
                }
            }
        }
    } else {
        nn::Dataset d = cfg.load();
        classes = d.classes;
        for (auto* split : {&d.train, &d.test}) {
            for (auto& s : *split) samples.push_back(std::move(s));
        }
    }
    const std::size_t total = samples.size() + failed;
    if (total == 0) {
        throw IoError("no input clouds found");
    }

    nn::Classifier net(cfg.resolved_network(std::max(classes, 2)), cfg.init_seed());
    const auto opt = prepare_options(cfg);
    std::size_t hits = 0;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& s : samples) {
        try {
            const nn::PreparedModel m = net.prepare(s.cloud, s.id, s.label, opt);
            hits += m.cache_hit ? 1 : 0;
            const char* state = !m.compressed ? "hierarchy" : m.cache_hit ? "hit" : "built";
            std::cout << s.id << ' ' << fmt(m.prepare_seconds) << " s " << state << '\n';
        } catch (const Error& e) {
            std::cerr << "error: " << s.id << ": " << e.what() << '\n';
            ++failed;
        }
    }
    std::cout << "preprocessed " << total - failed << " of " << total << " models (" << hits << " cache hits, "
              << failed << " failed) in " << fmt(nn::seconds_since(start)) << " s\n";
    return failed == total ? exit_io : exit_ok;
}

int cmd_train(const RunConfig& cfg)
{
    const nn::Dataset data = cfg.load();
    nn::Classifier net(cfg.resolved_network(data.classes), cfg.init_seed());
    nn::TrainOptions opt = cfg.train_options();
    opt.log = [](const std::string& s) { std::cout << s << std::endl; };
    const nn::TrainResult r = nn::train_classifier(net, data, opt);

    std::filesystem::create_directories(cfg.out_dir);
    nn::save_checkpoint(cfg.out_dir / "checkpoint.gcnn", net);
    std::ostringstream metrics, timing;
    nn::write_metrics_csv(metrics, r, cfg.reproducible);
    nn::write_timing_csv(timing, r);
    write_text(cfg.out_dir / "metrics.csv", metrics.str());
    write_text(cfg.out_dir / "timing.csv", timing.str());

    std::cout << "summary total_seconds " << fmt(r.total_seconds()) << " first_epoch_seconds "
              << fmt(r.epochs.empty() ? 0.0 : r.epochs.front().wall_seconds) << " steady_epoch_seconds "
              << fmt(r.steady_epoch_seconds()) << " final_test_acc "
              << (r.final_test_acc ? fmt(*r.final_test_acc) : std::string("n/a")) << '\n';
    return exit_ok;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint)
{
    const nn::Dataset data = cfg.load();
    if (data.test.empty()) {
        throw InvalidArgument("eval: empty test set");
    }
    nn::Classifier net(cfg.resolved_network(data.classes), cfg.init_seed());
    const std::filesystem::path path =
        checkpoint.empty() ? cfg.out_dir / "checkpoint.gcnn" : std::filesystem::path(checkpoint);
    nn::load_checkpoint(path, net);
    const auto opt = prepare_options(cfg);
    const double aligned = nn::evaluate(net, data.test, nn::Augment::aligned, 0, cfg.batch_size, opt);
    std::cout << "aligned_accuracy " << fmt(aligned) << '\n';
    if (cfg.augment == nn::Augment::random_so3) {
        const double rotated =
            nn::evaluate(net, data.test, nn::Augment::random_so3, cfg.augment_seed(), cfg.batch_size, opt);
        std::cout << "random_so3_accuracy " << fmt(rotated) << '\n';
    }
    return exit_ok;
}

int cmd_bench(RunConfig cfg, const std::vector<std::size_t>& grid_points, const std::vector<int>& grid_reps,
              bool timing)
{
    const auto points = grid_points.empty() ? std::vector<std::size_t>{cfg.network.points} : grid_points;
    const auto reps = grid_reps.empty() ? std::vector<int>{cfg.network.cluster.representatives} : grid_reps;
    for (int m : reps) {
        require(m >= 1, "bench: representatives must be >= 1");
    }
    std::ostringstream csv;
    write_bench_header(csv);
    std::cout << csv.str() << std::flush;
    for (std::size_t p : points) {
        RunConfig c = cfg;
        c.network.points = p;
        if (!grid_points.empty()) {
            c.network.level_counts.clear();
        }
        c.validate();
        const nn::Dataset data = c.load();
        require(!data.train.empty(), "bench: empty training set");
        nn::NetworkConfig base = c.resolved_network(data.classes);
        base.cluster.representatives = 0;
        const nn::Classifier geometry(base, c.init_seed());
        std::optional<BenchTiming> plain;
        if (timing) {
            plain = bench_epoch(base, c.init_seed(), data, c.train_options());
        }
        for (int m : reps) {
            BenchRow row;
            row.points = p;
            row.representatives = m;
            row.mode = base.mode;
            row.layers = bench_counts(geometry, data.train.front().cloud, m);
            if (timing) {
                nn::NetworkConfig comp = base;
                comp.cluster.representatives = m;
                row.uncompressed = plain;
                row.compressed = bench_epoch(comp, c.init_seed(), data, c.train_options());
            }
            std::ostringstream lines;
            write_bench_rows(lines, row);
            std::cout << lines.str() << std::flush;
            csv << lines.str();
        }
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "bench.csv", csv.str());
    return exit_ok;
}

int cmd_verify(const RunConfig& cfg)
{
    VerifyOptions opt;
    opt.seed = cfg.seed;
    opt.lambda = cfg.network.lambda;
    bool all = true;
    std::printf("%-34s %12s %10s %6s %9s  %s\n", "property", "error", "tolerance", "result", "seconds", "detail");
    for (const auto& r : run_verification(opt)) {
        std::printf("%-34s %12.3e %10.0e %6s %9.2f  %s\n", r.name.c_str(), r.error, r.tolerance,
                    r.passed ? "pass" : "FAIL", r.seconds, r.detail.c_str());
        all = all && r.passed;
    }
    std::fflush(stdout);
    return all ? exit_ok : exit_failure;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Compressed group convolutions on point clouds"};
    app.require_subcommand(1);

    Settings s_pre, s_train, s_eval, s_bench, s_verify;
    auto* pre = app.add_subcommand("preprocess", "build hierarchies, assignments and compressed tensors into the cache");
    s_pre.attach(pre);
    auto* train = app.add_subcommand("train", "train a classifier; writes checkpoint, metrics.csv and timing.csv");
    s_train.attach(train);
    auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on the test split");
    s_eval.attach(eval);
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file (default <out-dir>/checkpoint.gcnn)");
    auto* bench = app.add_subcommand("bench", "feature, MAC and epoch-time comparison against the uncompressed network");
    s_bench.attach(bench);
    std::vector<std::size_t> grid_points;
    std::vector<int> grid_reps;
    bool no_timing = false;
    bench->add_option("--grid-points", grid_points, "point counts to sweep (default --points)")->delimiter(',');
    bench->add_option("--grid-representatives", grid_reps, "cluster counts to sweep (default --representatives)")
        ->delimiter(',');
    bench->add_flag("--no-timing", no_timing, "report counts only, without training epochs");
    auto* verify = app.add_subcommand("verify", "oracle, equivariance, partition-of-unity and gradient checks");
    s_verify.attach(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_usage;
    }

    try {
        if (pre->parsed()) return cmd_preprocess(s_pre.resolve());
        if (train->parsed()) return cmd_train(s_train.resolve());
        if (eval->parsed()) return cmd_eval(s_eval.resolve(), checkpoint);
        if (bench->parsed()) return cmd_bench(s_bench.resolve(), grid_points, grid_reps, !no_timing);
        if (verify->parsed()) return cmd_verify(s_verify.resolve());
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const FormatError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_usage;
}

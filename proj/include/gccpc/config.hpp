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

// Run configuration shared by the command-line tools.
//
// Config files are line-based `key = value` text; `#` starts a comment and
// nested keys use dotted paths:
//
//   mode = se3_normal_aligned
//   points = 1024
//   cluster.algorithm = kmeans
//
// Every command-line flag maps to one key (see config_keys()); flags override
// the file.

#pragma once

#include "gccpc/nn/train.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

namespace gccpc {

struct RunConfig {
    nn::NetworkConfig network;
    int epochs = 15;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> dataset; // unset: synthetic
    std::optional<int> classes; // unset: taken from the dataset
    int synthetic_classes = 6;
    std::size_t synthetic_count = 600; // training clouds; a third as many test clouds
    std::uint64_t synthetic_seed = 0;
    std::filesystem::path cache_dir = default_cache_dir();
    std::filesystem::path out_dir = "gccpc_out";
    nn::Augment augment = nn::Augment::aligned;
    std::size_t memory_budget_mb = 2048;
    bool reproducible = false;
    bool no_cache = false;
    bool eval_each_epoch = true;

    static std::filesystem::path default_cache_dir()
    {
        const char* env = std::getenv("GCCPC_CACHE_DIR");
        return env && *env ? std::filesystem::path(env) : std::filesystem::path("gccpc_cache");
    }

    // Per-module seeds fanned out from the run seed.
    nn::NetworkConfig resolved_network(int dataset_classes) const
    {
        nn::NetworkConfig n = network;
        n.classes = classes.value_or(dataset_classes);
        n.seed = derive_seed(seed, 0x47454f4dULL);
        n.cluster.seed = derive_seed(seed, 0x434c5553ULL);
        return n;
    }
    std::uint64_t init_seed() const { return derive_seed(seed, 0x494e4954ULL); }
    std::uint64_t train_seed() const { return derive_seed(seed, 0x54524e00ULL); }
    std::uint64_t augment_seed() const { return derive_seed(seed, 0x41554700ULL); }

    nn::TrainOptions train_options() const
    {
        nn::TrainOptions o;
        o.epochs = epochs;
        o.lr = lr;
        o.batch_size = batch_size;
        o.seed = train_seed();
        if (!no_cache) {
            o.cache_dir = cache_dir;
        }
        o.memory_budget_bytes = memory_budget_mb << 20;
        o.evaluate_each_epoch = eval_each_epoch;
        return o;
    }

    nn::Dataset load() const
    {
        if (dataset) {
            return nn::load_dataset(*dataset);
        }
        return nn::synthetic_dataset(synthetic_classes, synthetic_count, network.points, synthetic_seed);
    }

    void validate() const
    {
        require(epochs >= 0, "epochs must be >= 0");
        require(lr > 0.0, "lr must be positive");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(memory_budget_mb >= 1, "memory_budget_mb must be >= 1");
        if (classes) {
            require(*classes >= 2, "classes must be >= 2");
        }
        if (!dataset) {
            require(synthetic_classes >= 2 && synthetic_classes <= static_cast<int>(all_shape_kinds.size()),
                    "synthetic.classes must be in [2, " + std::to_string(all_shape_kinds.size()) + "]");
            require(synthetic_count >= static_cast<std::size_t>(synthetic_classes),
                    "synthetic.count must be at least synthetic.classes");
        }
        resolved_network(classes.value_or(synthetic_classes)).validate();
    }
};

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v)
{
    T out{};
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw InvalidArgument("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
    }
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw InvalidArgument("bad boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view v)
{
    std::vector<T> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        const auto comma = v.find(',', pos);
        const auto item = trim(v.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        out.push_back(parse_number<T>(key, item));
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    return out;
}

} // namespace detail

struct ConfigKey {
    std::string key;
    std::string flag; // command-line spelling
    std::string help;
    std::function<void(RunConfig&, std::string_view)> apply;
    bool boolean = false; // may be given as a bare flag
};

inline const std::vector<ConfigKey>& config_keys()
{
    using namespace detail;
    static const std::vector<ConfigKey> keys = {
        {"mode", "--mode", "translation | se3_normal_aligned | so3_full",
         [](RunConfig& c, std::string_view v) { c.network.mode = nn::parse_network_mode(v); }},
        {"points", "--points", "points per cloud at the finest level",
         [](RunConfig& c, std::string_view v) { c.network.points = parse_number<std::size_t>("points", v); }},
        {"levels", "--levels", "explicit level counts, comma separated (default points/4^k down to 16)",
         [](RunConfig& c, std::string_view v) {
             c.network.level_counts = parse_list<std::size_t>("levels", v);
             c.network.points = c.network.level_counts.front();
         }},
        {"channels", "--channels", "output channels per layer, comma separated",
         [](RunConfig& c, std::string_view v) { c.network.channels = parse_list<int>("channels", v); }},
        {"spacing", "--spacing", "kernel spacing of the first layer",
         [](RunConfig& c, std::string_view v) { c.network.initial_spacing = parse_number<double>("spacing", v); }},
        {"lambda", "--lambda", "rotation weight of the group kernel (default (spacing/pi)^2 per layer)",
         [](RunConfig& c, std::string_view v) { c.network.lambda = parse_number<double>("lambda", v); }},
        {"use_colors", "--use-colors", "append color channels to the input features",
         [](RunConfig& c, std::string_view v) { c.network.use_colors = parse_bool("use_colors", v); }, true},
        {"representatives", "--representatives", "clusters per level, 0 = uncompressed",
         [](RunConfig& c, std::string_view v) {
             c.network.cluster.representatives = parse_number<int>("representatives", v);
         }},
        {"cluster.algorithm", "--cluster-algo", "kmeans | random_subset | farthest_point",
         [](RunConfig& c, std::string_view v) { c.network.cluster.algorithm = parse_cluster_algorithm(v); }},
        {"cluster.target", "--cluster-target",
         "geometry_only | after_interaction | after_weights | after_norm | after_nonlinearity",
         [](RunConfig& c, std::string_view v) { c.network.cluster.target = parse_cluster_target(v); }},
        {"cluster.max_iter", "--max-iter", "k-means iterations",
         [](RunConfig& c, std::string_view v) { c.network.cluster.max_iter = parse_number<int>("max_iter", v); }},
        {"cluster.recluster_each_epoch", "--recluster-each-epoch", "recompute clusters every epoch",
         [](RunConfig& c, std::string_view v) {
             c.network.cluster.recluster_each_epoch = parse_bool("recluster_each_epoch", v);
         }, true},
        {"epochs", "--epochs", "training epochs",
         [](RunConfig& c, std::string_view v) { c.epochs = parse_number<int>("epochs", v); }},
        {"lr", "--lr", "initial learning rate", [](RunConfig& c, std::string_view v) { c.lr = parse_number<double>("lr", v); }},
        {"batch_size", "--batch-size", "models per batch",
         [](RunConfig& c, std::string_view v) { c.batch_size = parse_number<std::size_t>("batch_size", v); }},
        {"seed", "--seed", "run seed", [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
        {"cache_dir", "--cache-dir", "cache directory (default $GCCPC_CACHE_DIR or ./gccpc_cache)",
         [](RunConfig& c, std::string_view v) { c.cache_dir = std::string(v); }},
        {"no_cache", "--no-cache", "do not read or write the cache",
         [](RunConfig& c, std::string_view v) { c.no_cache = parse_bool("no_cache", v); }, true},
        {"out_dir", "--out-dir", "output directory", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); }},
        {"augment", "--augment", "aligned | random-so3",
         [](RunConfig& c, std::string_view v) { c.augment = nn::parse_augment(v); }},
        {"dataset", "--dataset", "directory with train/ and test/ .pcf files (default: synthetic)",
         [](RunConfig& c, std::string_view v) { c.dataset = std::string(v); }},
        {"synthetic.classes", "--synthetic-classes", "number of synthetic shape classes (2-6)",
         [](RunConfig& c, std::string_view v) {
             c.synthetic_classes = parse_number<int>("synthetic.classes", v);
         }},
        {"synthetic.count", "--synthetic-count", "synthetic training clouds",
         [](RunConfig& c, std::string_view v) { c.synthetic_count = parse_number<std::size_t>("synthetic.count", v); }},
        {"synthetic.seed", "--synthetic-seed", "seed of the synthetic dataset",
         [](RunConfig& c, std::string_view v) { c.synthetic_seed = parse_number<std::uint64_t>("synthetic.seed", v); }},
        {"classes", "--classes", "classifier outputs (default: from the dataset)",
         [](RunConfig& c, std::string_view v) { c.classes = parse_number<int>("classes", v); }},
        {"memory_budget_mb", "--memory-budget-mb", "memory for precomputed tensors; the rest are reloaded or rebuilt per batch",
         [](RunConfig& c, std::string_view v) { c.memory_budget_mb = parse_number<std::size_t>("memory_budget_mb", v); }},
        {"reproducible", "--reproducible", "write zero wall times to metrics.csv",
         [](RunConfig& c, std::string_view v) { c.reproducible = parse_bool("reproducible", v); }, true},
        {"eval_each_epoch", "--eval-each-epoch", "score the test set after every epoch",
         [](RunConfig& c, std::string_view v) { c.eval_each_epoch = parse_bool("eval_each_epoch", v); }, true},
    };
    return keys;
}

inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value)
{
    for (const auto& k : config_keys()) {
        if (k.key == key) {
            k.apply(cfg, value);
            return;
        }
    }
    throw InvalidArgument("unknown config key: " + std::string(key));
}

inline void apply_config_text(RunConfig& cfg, std::istream& is, const std::string& origin = "config")
{
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        const auto hash = line.find('#');
        const std::string body = detail::trim(std::string_view(line).substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument(origin + ":" + std::to_string(n) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        try {
            apply_setting(cfg, key, value);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open config file: " + path.string());
    }
    apply_config_text(cfg, is, path.string());
}

} // namespace gccpc

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

// Training loop, batch-norm refit and evaluation.

#pragma once

#include "gccpc/nn/dataset.hpp"
#include "gccpc/nn/network.hpp"
#include "gccpc/nn/optim.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>

namespace gccpc::nn {

enum class Augment { aligned, random_so3 };

inline Augment parse_augment(std::string_view s)
{
    if (s == "aligned") {
        return Augment::aligned;
    }
    if (s == "random-so3" || s == "random_so3") {
        return Augment::random_so3;
    }
    throw InvalidArgument("unknown augment: " + std::string(s));
}

inline std::string_view to_string(Augment a) { return a == Augment::aligned ? "aligned" : "random-so3"; }

struct TrainOptions {
    int epochs = 15;
    double lr = 1e-3;
    std::vector<int> milestones; // empty: default_milestones(epochs)
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> cache_dir;
    // Compressed tensors beyond this many bytes are dropped after
    // preparation and reloaded from the cache per batch. Needs a cache.
    std::size_t memory_budget_bytes = std::size_t{2} << 30;
    bool evaluate_each_epoch = true;
    std::function<void(const std::string&)> log;
};

struct EpochMetrics {
    int epoch = 0;
    double wall_seconds = 0.0; // training, plus preparation when it happens in this epoch
    bool first_epoch = false;
    double loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> test_acc;
    std::uint64_t features_processed = 0;
    std::uint64_t macs = 0;
    // Not part of the metrics file.
    double prepare_seconds = 0.0;
    double eval_seconds = 0.0;
    std::size_t cache_hits = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    double train_prepare_seconds = 0.0; // inside the first epoch
    double test_prepare_seconds = 0.0;
    double refit_seconds = 0.0;
    std::size_t train_cache_hits = 0;
    std::size_t models_reloaded = 0; // models whose tensors exceed the memory budget
    std::optional<double> final_test_acc;

    double total_seconds() const
    {
        double t = 0.0;
        for (const auto& e : epochs) {
            t += e.wall_seconds;
        }
        return t;
    }
    double first_epoch_seconds() const { return epochs.empty() ? 0.0 : epochs.front().wall_seconds; }
    // Mean over epochs after the first.
    double steady_epoch_seconds() const
    {
        if (epochs.size() < 2) {
            return first_epoch_seconds();
        }
        return (total_seconds() - first_epoch_seconds()) / static_cast<double>(epochs.size() - 1);
    }
};

inline double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

inline int argmax_row(const Matrix& m, Eigen::Index r)
{
    Eigen::Index best = 0;
    m.row(r).maxCoeff(&best);
    return static_cast<int>(best);
}

// A uniformly random rotation per sample; normals rotate with the points.
inline Sample rotated_sample(const Sample& s, std::uint64_t seed, std::size_t index)
{
    std::mt19937_64 rng(derive_seed(seed, 0x524f54ULL, index));
    const Rotation r = Rotation::uniform_random(rng);
    Sample out = s;
    out.cloud = transformed(s.cloud, r.matrix(), Vec3::Zero());
    return out;
}

// Model set prepared for one network. Compressed tensors that do not fit the
// memory budget are offloaded to the cache and reloaded per batch; for
// uncompressed models the per-layer T is kept for as many models as the
// budget allows and rebuilt per batch for the rest.
class PreparedSet {
  public:
    std::vector<PreparedModel> models;
    std::vector<bool> offloaded;

    double prepare(Classifier& net, std::span<const Sample> samples, const PrepareOptions& opt,
                   std::size_t budget_bytes, std::size_t& resident_bytes)
    {
        const auto start = std::chrono::steady_clock::now();
        models.clear();
        offloaded.clear();
        models.reserve(samples.size());
        for (const auto& s : samples) {
            models.push_back(net.prepare(s.cloud, s.id, s.label, opt));
            PreparedModel& m = models.back();
            bool offload = false;
            if (m.compressed) {
                const std::size_t b = m.tensor_bytes();
                offload = opt.cache_dir.has_value() && resident_bytes + b > budget_bytes;
                if (offload) {
                    m.release_tensors();
                } else {
                    resident_bytes += b;
                }
            } else if (resident_bytes < budget_bytes) {
                std::size_t b = 0;
                for (std::size_t l = 0; l < net.num_layers(); ++l) {
                    m.interactions.push_back(net.interaction(l, m));
                    b += m.interactions.back()->bytes();
                }
                if (resident_bytes + b > budget_bytes) {
                    m.interactions.clear();
                    resident_bytes = budget_bytes;
                } else {
                    resident_bytes += b;
                }
            }
            offloaded.push_back(offload);
        }
        return seconds_since(start);
    }

    std::size_t cache_hits() const
    {
        return static_cast<std::size_t>(
            std::count_if(models.begin(), models.end(), [](const auto& m) { return m.cache_hit; }));
    }

    std::size_t offloaded_count() const
    {
        return static_cast<std::size_t>(std::count(offloaded.begin(), offloaded.end(), true));
    }

    void release(std::size_t i)
    {
        if (offloaded[i]) {
            models[i].release_tensors();
        }
    }
};

struct BatchResult {
    Matrix log_probs;
    double loss_sum = 0.0;
    std::size_t correct = 0;
};

inline BatchResult score(const Matrix& log_probs, std::span<const int> labels)
{
    BatchResult r;
    r.log_probs = log_probs;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        r.loss_sum += cross_entropy_loss(log_probs.row(static_cast<Eigen::Index>(b)), labels[b]);
        r.correct += argmax_row(log_probs, static_cast<Eigen::Index>(b)) == labels[b] ? 1 : 0;
    }
    return r;
}

// Accuracy with running statistics, in fixed batches over the given order.
inline double evaluate_prepared(Classifier& net, PreparedSet& set, std::size_t batch_size)
{
    require(!set.models.empty(), "evaluate: empty model set");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < set.models.size(); start += batch_size) {
        const std::size_t end = std::min(set.models.size(), start + batch_size);
        std::vector<PreparedModel*> batch;
        std::vector<int> labels;
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(&set.models[i]);
            labels.push_back(set.models[i].label);
        }
        Tape tape;
        ForwardOptions fo;
        fo.bn_mode = BnMode::eval;
        const Var out = net.forward(tape, batch, fo);
        correct += score(tape.value(out), labels).correct;
        for (std::size_t i = start; i < end; ++i) {
            set.release(i);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(set.models.size());
}

// Prepares and scores the samples batch by batch, so only one batch of
// tensors is held at a time.
inline double evaluate(Classifier& net, std::span<const Sample> samples, Augment augment, std::uint64_t seed,
                       std::size_t batch_size, const PrepareOptions& opt = {})
{
    if (samples.empty()) {
        throw InvalidArgument("evaluate: empty test set");
    }
    std::size_t correct = 0;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        std::vector<PreparedModel> models;
        std::vector<int> labels;
        for (std::size_t i = start; i < end; ++i) {
            PrepareOptions po = opt;
            if (augment == Augment::random_so3) {
                const Sample r = rotated_sample(samples[i], seed, i);
                po.cache_suffix += "@so3-" + std::to_string(seed);
                models.push_back(net.prepare(r.cloud, r.id, r.label, po));
            } else {
                models.push_back(net.prepare(samples[i].cloud, samples[i].id, samples[i].label, po));
            }
            labels.push_back(samples[i].label);
        }
        std::vector<PreparedModel*> batch;
        for (auto& m : models) {
            batch.push_back(&m);
        }
        Tape tape;
        ForwardOptions fo;
        fo.bn_mode = BnMode::eval;
        const Var out = net.forward(tape, batch, fo);
        correct += score(tape.value(out), labels).correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// Sets every layer's running statistics to the mean of the per-batch
// statistics over one pass of the training set in fixed order. Parameters are
// not touched.
inline void batch_norm_refit(Classifier& net, PreparedSet& train, std::size_t batch_size)
{
    require(!train.models.empty(), "batch_norm_refit: empty training set");
    const std::size_t L = net.num_layers();
    std::vector<Vector> mean_sum(L), var_sum(L);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train.models.size(); start += batch_size) {
        const std::size_t end = std::min(train.models.size(), start + batch_size);
        std::vector<PreparedModel*> batch;
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(&train.models[i]);
        }
        Tape tape;
        std::vector<BatchStats> stats;
        ForwardOptions fo;
        fo.bn_mode = BnMode::train_frozen;
        fo.bn_stats = &stats;
        net.forward(tape, batch, fo);
        for (std::size_t l = 0; l < L; ++l) {
            if (batches == 0) {
                mean_sum[l] = stats[l].mean;
                var_sum[l] = stats[l].var;
            } else {
                mean_sum[l] += stats[l].mean;
                var_sum[l] += stats[l].var;
            }
        }
        ++batches;
        for (std::size_t i = start; i < end; ++i) {
            train.release(i);
        }
    }
    for (std::size_t l = 0; l < L; ++l) {
        net.norm(l).running_mean = mean_sum[l] / static_cast<double>(batches);
        net.norm(l).running_var = var_sum[l] / static_cast<double>(batches);
    }
}

inline TrainResult train_classifier(Classifier& net, const Dataset& data, const TrainOptions& opt)
{
    require(opt.epochs >= 0, "train: epochs must be >= 0");
    require(opt.batch_size >= 1, "train: batch size must be >= 1");
    require(opt.lr > 0.0, "train: learning rate must be positive");
    require(!data.train.empty(), "train: empty training set");
    require(data.classes <= net.config().classes,
            "train: dataset has " + std::to_string(data.classes) + " classes, the network " +
                std::to_string(net.config().classes));
    const NetworkConfig& cfg = net.config();
    const bool recluster = cfg.compressed() && cfg.cluster.recluster_each_epoch;
    auto log = [&](const std::string& s) {
        if (opt.log) {
            opt.log(s);
        }
    };

    PrepareOptions popt;
    if (!recluster) {
        popt.cache_dir = opt.cache_dir;
    }
    const auto milestones = opt.milestones.empty() ? default_milestones(opt.epochs) : opt.milestones;
    TrainResult result;
    PreparedSet train, test;
    std::size_t resident = 0;

    auto prepare_train = [&] {
        resident = 0;
        const double t = train.prepare(net, data.train, popt, opt.memory_budget_bytes, resident);
        log("prepared " + std::to_string(train.models.size()) + " training models in " + std::to_string(t) +
            " s (" + std::to_string(train.cache_hits()) + " cache hits, " + std::to_string(train.offloaded_count()) +
            " offloaded)");
        return t;
    };
    auto prepare_test = [&] {
        if (data.test.empty()) {
            return 0.0;
        }
        return test.prepare(net, data.test, popt, opt.memory_budget_bytes, resident);
    };

    // Test models are prepared with the same weights as the training models,
    // so activation-based assignments agree between the two sets.
    const auto start0 = std::chrono::steady_clock::now();
    result.train_prepare_seconds = prepare_train();
    const double first_prepare_wall = seconds_since(start0);
    result.train_cache_hits = train.cache_hits();
    result.test_prepare_seconds = prepare_test();
    result.models_reloaded = train.offloaded_count() + test.offloaded_count();

    Adam adam;
    const auto params = net.parameters();
    std::vector<std::size_t> order(train.models.size());
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        em.first_epoch = epoch == 0;
        double prepare_wall = 0.0;
        if (epoch == 0) {
            prepare_wall = first_prepare_wall;
            em.prepare_seconds = result.train_prepare_seconds;
            em.cache_hits = result.train_cache_hits;
        } else if (recluster) {
            em.prepare_seconds = prepare_train();
            prepare_wall = em.prepare_seconds;
        }
        const auto start = std::chrono::steady_clock::now();
        const double lr = lr_schedule(epoch, milestones, opt.lr);

        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(opt.seed, 0x53485546ULL, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::vector<LayerCounters> counters;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += opt.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + opt.batch_size);
            std::vector<PreparedModel*> batch;
            std::vector<int> labels;
            for (std::size_t i = b0; i < b1; ++i) {
                batch.push_back(&train.models[order[i]]);
                labels.push_back(train.models[order[i]].label);
            }
            Tape tape;
            ForwardOptions fo;
            fo.bn_mode = BnMode::train;
            fo.counters = &counters;
            const Var lp = net.forward(tape, batch, fo);
            const Var loss = nll_loss(tape, lp, labels);
            const BatchResult br = score(tape.value(lp), labels);
            loss_sum += br.loss_sum;
            correct += br.correct;
            net.zero_grad();
            tape.backward(loss);
            adam.step(params, lr);
            for (std::size_t i = b0; i < b1; ++i) {
                train.release(order[i]);
            }
        }
        em.wall_seconds = seconds_since(start) + prepare_wall;
        em.loss = loss_sum / static_cast<double>(order.size());
        em.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        for (const auto& c : counters) {
            em.features_processed += c.features;
            em.macs += c.macs;
        }

        const bool last = epoch + 1 == opt.epochs;
        if (last) {
            const auto t = std::chrono::steady_clock::now();
            batch_norm_refit(net, train, opt.batch_size);
            result.refit_seconds = seconds_since(t);
        }
        if (!data.test.empty() && (opt.evaluate_each_epoch || last)) {
            const auto t = std::chrono::steady_clock::now();
            if (recluster) {
                prepare_test();
            }
            em.test_acc = evaluate_prepared(net, test, opt.batch_size);
            em.eval_seconds = seconds_since(t);
        }
        log("epoch " + std::to_string(epoch) + " loss " + std::to_string(em.loss) + " train_acc " +
            std::to_string(em.train_acc) + (em.test_acc ? " test_acc " + std::to_string(*em.test_acc) : "") +
            " time " + std::to_string(em.wall_seconds) + " s");
        result.epochs.push_back(em);
    }
    if (!result.epochs.empty()) {
        result.final_test_acc = result.epochs.back().test_acc;
    }
    return result;
}

// epoch,wall_seconds,first_epoch_flag,loss,train_acc,test_acc,features_processed,macs
// Times are written as 0 when reproducible output is requested.
inline void write_metrics_csv(std::ostream& os, const TrainResult& r, bool reproducible)
{
    os << "epoch,wall_seconds,first_epoch_flag,loss,train_acc,test_acc,features_processed,macs\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& e : r.epochs) {
        os << e.epoch << ',' << (reproducible ? std::string("0") : num(e.wall_seconds)) << ','
           << (e.first_epoch ? 1 : 0) << ',' << num(e.loss) << ',' << num(e.train_acc) << ','
           << (e.test_acc ? num(*e.test_acc) : std::string()) << ',' << e.features_processed << ',' << e.macs
           << '\n';
    }
}

inline void write_timing_csv(std::ostream& os, const TrainResult& r)
{
    os << "epoch,wall_seconds,prepare_seconds,eval_seconds,cache_hits\n";
    for (const auto& e : r.epochs) {
        os << e.epoch << ',' << e.wall_seconds << ',' << e.prepare_seconds << ',' << e.eval_seconds << ','
           << e.cache_hits << '\n';
    }
    os << "# test_prepare_seconds," << r.test_prepare_seconds << "\n# refit_seconds," << r.refit_seconds << '\n';
}

} // namespace gccpc::nn

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

#include <gccpc/config.hpp>
#include <gccpc/nn/checkpoint.hpp>
#include <gccpc/nn/train.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

using namespace gccpc;
using namespace gccpc::nn;

namespace {

NetworkConfig tiny_config(NetworkMode mode, int representatives)
{
    NetworkConfig cfg;
    cfg.mode = mode;
    cfg.channels = {4, 6};
    cfg.points = 64;
    cfg.initial_spacing = 0.15;
    cfg.classes = 3;
    cfg.cluster.representatives = representatives;
    cfg.seed = 3;
    return cfg;
}

TrainOptions quick_options(int epochs)
{
    TrainOptions opt;
    opt.epochs = epochs;
    opt.batch_size = 4;
    opt.seed = 5;
    return opt;
}

std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("gccpc_train_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string metrics_text(const TrainResult& r)
{
    std::ostringstream os;
    write_metrics_csv(os, r, true);
    return os.str();
}

} // namespace

TEST(SyntheticData, DeterministicAndBalanced)
{
    const Dataset a = synthetic_dataset(3, 12, 64, 9);
    const Dataset b = synthetic_dataset(3, 12, 64, 9);
    ASSERT_EQ(a.train.size(), 12u);
    EXPECT_EQ(a.test.size(), 4u);
    EXPECT_EQ(a.classes, 3);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].label, static_cast<int>(i % 3));
        EXPECT_EQ(a.train[i].cloud.positions, b.train[i].cloud.positions);
        EXPECT_EQ(a.train[i].cloud.size(), 128u);
        EXPECT_TRUE(a.train[i].cloud.has_normals());
        ids.insert(a.train[i].id);
    }
    for (const auto& s : a.test) ids.insert(s.id);
    EXPECT_EQ(ids.size(), 16u);
    EXPECT_NE(synthetic_dataset(3, 12, 64, 10).train[0].cloud.positions, a.train[0].cloud.positions);
}

TEST(SyntheticData, RejectsBadClassCounts)
{
    EXPECT_THROW(synthetic_dataset(1, 12, 64, 0), InvalidArgument);
    EXPECT_THROW(synthetic_dataset(7, 12, 64, 0), InvalidArgument);
    EXPECT_THROW(synthetic_dataset(4, 3, 64, 0), InvalidArgument);
}

TEST(DatasetDirectory, ReadsLabelsInNameOrder)
{
    const auto dir = scratch_dir("dataset");
    std::filesystem::create_directories(dir / "train");
    std::filesystem::create_directories(dir / "test");
    for (int i = 0; i < 3; ++i) {
        PointCloud c = synthesize_shape(all_shape_kinds[static_cast<std::size_t>(i)], 100, static_cast<std::uint64_t>(i));
        c.label = 2 - i;
        save_pcf(dir / "train" / ("m" + std::to_string(i) + ".pcf"), c);
        if (i == 0) save_pcf(dir / "test" / "t.pcf", c);
    }
    const Dataset d = load_dataset(dir);
    ASSERT_EQ(d.train.size(), 3u);
    ASSERT_EQ(d.test.size(), 1u);
    EXPECT_EQ(d.classes, 3);
    EXPECT_EQ(d.train[0].id, "train-m0");
    EXPECT_EQ(d.train[0].label, 2);
    EXPECT_EQ(d.train[2].label, 0);
    EXPECT_EQ(d.test[0].id, "test-t");
    std::filesystem::remove_all(dir);
}

TEST(DatasetDirectory, MissingLabelOrSplitIsAnError)
{
    const auto dir = scratch_dir("unlabeled");
    EXPECT_THROW(load_dataset(dir), IoError);
    std::filesystem::create_directories(dir / "train");
    std::filesystem::create_directories(dir / "test");
    PointCloud c = synthesize_shape(ShapeKind::box, 50, 1);
    c.label.reset();
    save_pcf(dir / "train" / "a.pcf", c);
    EXPECT_THROW(load_dataset(dir), FormatError);
    EXPECT_THROW(load_dataset(dir / "absent"), IoError);
    std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, RoundTripRestoresParametersAndStatistics)
{
    Classifier a(tiny_config(NetworkMode::translation, 8), 1);
    a.norm(1).running_mean.setConstant(0.5);
    a.norm(1).running_var.setConstant(2.5);
    const auto bytes = encode_checkpoint(a);
    Classifier b(tiny_config(NetworkMode::translation, 8), 2);
    decode_checkpoint(bytes, b);
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    }
    EXPECT_EQ(b.norm(1).running_mean, a.norm(1).running_mean);
    EXPECT_EQ(b.norm(1).running_var, a.norm(1).running_var);
    EXPECT_EQ(encode_checkpoint(b), bytes);
}

TEST(CheckpointTest, DifferentConfigurationIsRejected)
{
    Classifier a(tiny_config(NetworkMode::translation, 8), 1);
    const auto bytes = encode_checkpoint(a);
    Classifier other(tiny_config(NetworkMode::translation, 9), 1);
    EXPECT_THROW(decode_checkpoint(bytes, other), InvalidArgument);
}

TEST(CheckpointTest, CorruptionIsDetected)
{
    Classifier a(tiny_config(NetworkMode::translation, 8), 1);
    auto bytes = encode_checkpoint(a);
    bytes[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(bytes, a), FormatError);
    bytes = encode_checkpoint(a);
    bytes[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bytes, a), FormatError);
    bytes.resize(6);
    EXPECT_THROW(decode_checkpoint(bytes, a), FormatError);
}

TEST(Training, RepeatedRunsAreBitIdentical)
{
    const Dataset data = synthetic_dataset(3, 12, 64, 1);
    std::vector<char> ckpt[2];
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        Classifier net(tiny_config(NetworkMode::translation, 8), 4);
        TrainOptions opt = quick_options(2);
        opt.cache_dir = scratch_dir("determinism" + std::to_string(run));
        const TrainResult r = train_classifier(net, data, opt);
        csv[run] = metrics_text(r);
        ckpt[run] = encode_checkpoint(net);
        std::filesystem::remove_all(*opt.cache_dir);
    }
    EXPECT_EQ(csv[0], csv[1]);
    EXPECT_EQ(ckpt[0], ckpt[1]);
}

TEST(Training, MetricsHaveOneRowPerEpoch)
{
    const Dataset data = synthetic_dataset(3, 12, 64, 2);
    Classifier net(tiny_config(NetworkMode::translation, 0), 4);
    const TrainResult r = train_classifier(net, data, quick_options(3));
    ASSERT_EQ(r.epochs.size(), 3u);
    EXPECT_TRUE(r.epochs[0].first_epoch);
    EXPECT_FALSE(r.epochs[1].first_epoch);
    ASSERT_TRUE(r.final_test_acc.has_value());
    EXPECT_GE(*r.final_test_acc, 0.0);
    EXPECT_LE(*r.final_test_acc, 1.0);
    for (const auto& e : r.epochs) {
        EXPECT_TRUE(std::isfinite(e.loss));
        EXPECT_GT(e.macs, 0u);
        EXPECT_EQ(e.features_processed, r.epochs[0].features_processed);
    }
    const std::string text = metrics_text(r);
    EXPECT_EQ(text.substr(0, text.find('\n')),
              "epoch,wall_seconds,first_epoch_flag,loss,train_acc,test_acc,features_processed,macs");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Training, CompressedProcessesFewerFeatures)
{
    const Dataset data = synthetic_dataset(3, 6, 64, 3);
    Classifier plain(tiny_config(NetworkMode::translation, 0), 4);
    Classifier comp(tiny_config(NetworkMode::translation, 8), 4);
    const auto a = train_classifier(plain, data, quick_options(1));
    const auto b = train_classifier(comp, data, quick_options(1));
    // Layer 0 reads 64 surfels and layer 1 reads 16; compressed both read 8.
    EXPECT_EQ(a.epochs[0].features_processed, 6u * (64 + 16));
    EXPECT_EQ(b.epochs[0].features_processed, 6u * (8 + 8));
}

TEST(Training, ReclusteringRepreparesEveryEpoch)
{
    const Dataset data = synthetic_dataset(3, 6, 64, 4);
    NetworkConfig cfg = tiny_config(NetworkMode::translation, 8);
    cfg.cluster.target = ClusterTarget::after_nonlinearity;
    cfg.cluster.recluster_each_epoch = true;
    Classifier net(cfg, 4);
    const TrainResult r = train_classifier(net, data, quick_options(2));
    EXPECT_GT(r.epochs[1].prepare_seconds, 0.0);

    cfg.cluster.target = ClusterTarget::geometry_only;
    EXPECT_THROW(Classifier(cfg, 4), InvalidArgument);
}

TEST(Training, OffloadedModelsTrainIdentically)
{
    const Dataset data = synthetic_dataset(3, 9, 64, 5);
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        Classifier net(tiny_config(NetworkMode::translation, 8), 4);
        TrainOptions opt = quick_options(2);
        opt.cache_dir = scratch_dir("offload" + std::to_string(run));
        opt.memory_budget_bytes = run == 0 ? std::size_t{1} << 30 : 1;
        const TrainResult r = train_classifier(net, data, opt);
        EXPECT_EQ(r.models_reloaded, run == 0 ? 0u : 12u);
        csv[run] = metrics_text(r);
        std::filesystem::remove_all(*opt.cache_dir);
    }
    EXPECT_EQ(csv[0], csv[1]);
}

TEST(Training, RejectsDatasetWithMoreClassesThanOutputs)
{
    const Dataset data = synthetic_dataset(4, 8, 64, 6);
    Classifier net(tiny_config(NetworkMode::translation, 0), 4);
    EXPECT_THROW(train_classifier(net, data, quick_options(1)), InvalidArgument);
}

TEST(BatchNormRefit, IsIdempotent)
{
    const Dataset data = synthetic_dataset(3, 8, 64, 7);
    Classifier net(tiny_config(NetworkMode::translation, 8), 4);
    PreparedSet set;
    std::size_t resident = 0;
    set.prepare(net, data.train, {}, std::size_t{1} << 30, resident);
    batch_norm_refit(net, set, 4);
    const Vector mean = net.norm(0).running_mean, var = net.norm(0).running_var;
    EXPECT_GT(var.minCoeff(), 0.0);
    batch_norm_refit(net, set, 4);
    EXPECT_EQ(net.norm(0).running_mean, mean);
    EXPECT_EQ(net.norm(0).running_var, var);
}

TEST(Evaluation, RotatedTestSetLeavesSe3NetworkUnchanged)
{
    const Dataset data = synthetic_dataset(3, 6, 64, 8);
    Classifier net(tiny_config(NetworkMode::se3_normal_aligned, 0), 4);
    const double aligned = evaluate(net, data.test, Augment::aligned, 0, 4);
    const double rotated = evaluate(net, data.test, Augment::random_so3, 11, 4);
    EXPECT_EQ(aligned, rotated);
}

TEST(Evaluation, EmptyTestSetIsAnError)
{
    Classifier net(tiny_config(NetworkMode::translation, 0), 4);
    EXPECT_THROW(evaluate(net, {}, Augment::aligned, 0, 4), InvalidArgument);
}

TEST(AugmentTest, ParsesBothSpellings)
{
    EXPECT_EQ(parse_augment("random-so3"), Augment::random_so3);
    EXPECT_EQ(parse_augment("aligned"), Augment::aligned);
    EXPECT_THROW(parse_augment("mirror"), InvalidArgument);
}

TEST(ConfigFile, KeysCommentsAndDottedPaths)
{
    RunConfig cfg;
    std::istringstream is("# comment\n"
                          "mode = se3_normal_aligned   # trailing\n"
                          "\n"
                          "points = 256\n"
                          "cluster.algorithm = random_subset\n"
                          "cluster.max_iter = 3\n"
                          "representatives = 32\n"
                          "lambda = 0.25\n"
                          "channels = 8, 16\n"
                          "no_cache = true\n");
    apply_config_text(cfg, is);
    EXPECT_EQ(cfg.network.mode, NetworkMode::se3_normal_aligned);
    EXPECT_EQ(cfg.network.points, 256u);
    EXPECT_EQ(cfg.network.cluster.algorithm, ClusterAlgorithm::random_subset);
    EXPECT_EQ(cfg.network.cluster.max_iter, 3);
    EXPECT_EQ(cfg.network.cluster.representatives, 32);
    EXPECT_EQ(cfg.network.lambda, 0.25);
    EXPECT_EQ(cfg.network.channels, (std::vector<int>{8, 16}));
    EXPECT_TRUE(cfg.no_cache);
}

TEST(ConfigFile, ErrorsNameTheLine)
{
    RunConfig cfg;
    std::istringstream bad_key("points = 64\nwidth = 3\n");
    try {
        apply_config_text(cfg, bad_key, "run.cfg");
        FAIL() << "expected an error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
    }
    std::istringstream bad_value("epochs = many\n");
    EXPECT_THROW(apply_config_text(cfg, bad_value), InvalidArgument);
    std::istringstream no_eq("epochs 3\n");
    EXPECT_THROW(apply_config_text(cfg, no_eq), InvalidArgument);
    EXPECT_THROW(apply_config_file(cfg, "/nonexistent/run.cfg"), IoError);
}

TEST(ConfigFile, EveryDocumentedFlagHasAKey)
{
    std::set<std::string> flags;
    for (const auto& k : config_keys()) flags.insert(k.flag);
    for (const char* f : {"--mode", "--points", "--levels", "--representatives", "--cluster-algo", "--cluster-target",
                          "--max-iter", "--recluster-each-epoch", "--lambda", "--epochs", "--lr", "--batch-size",
                          "--seed", "--cache-dir", "--out-dir", "--augment", "--dataset", "--synthetic-classes",
                          "--synthetic-count"}) {
        EXPECT_TRUE(flags.count(f)) << f;
    }
}

TEST(ConfigFile, ValidationCatchesInconsistentSettings)
{
    RunConfig cfg;
    apply_setting(cfg, "cluster.recluster_each_epoch", "true");
    apply_setting(cfg, "representatives", "16");
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    apply_setting(cfg, "cluster.target", "after_norm");
    EXPECT_NO_THROW(cfg.validate());
    apply_setting(cfg, "lambda", "-1");
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(ConfigFile, SeedsFanOutIndependently)
{
    RunConfig a, b;
    apply_setting(b, "seed", "1");
    EXPECT_NE(a.init_seed(), b.init_seed());
    EXPECT_NE(a.train_seed(), a.init_seed());
    EXPECT_NE(a.resolved_network(6).seed, a.resolved_network(6).cluster.seed);
    EXPECT_EQ(a.resolved_network(4).classes, 4);
    apply_setting(a, "classes", "9");
    EXPECT_EQ(a.resolved_network(4).classes, 9);
}

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

#include <gccpc/nn/network.hpp>
#include <gccpc/nn/optim.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <random>

using namespace gccpc;
using namespace gccpc::nn;

namespace {

struct ConvFixture {
    std::vector<Vec3> in, out;
    KernelSpec spec;
    OffsetGrid grid;
    std::shared_ptr<const SparseInteraction> t;
    oracle::DenseT dense;

    ConvFixture(std::size_t I, std::size_t J, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        in = oracle::random_points(I, 0.1, rng);
        out = oracle::random_points(J, 0.1, rng);
        spec.spacing = 0.04;
        grid = spatial_offset_grid(spec);
        t = std::make_shared<const SparseInteraction>(build_interaction_translation(in, out, grid, spec));
        dense = oracle::dense_translation(in, out, grid.vectors, spec.spacing);
    }
};

// Central differences of a scalar function of one matrix, entry by entry.
Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h = 1e-6)
{
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = f();
        x.data()[i] = keep - h;
        const double down = f();
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

PointCloud test_cloud(ShapeKind kind, std::size_t n, std::uint64_t seed)
{
    return orient_normals(normalize_unit_cube(synthesize_shape(kind, n, seed)));
}

NetworkConfig small_config(NetworkMode mode, int representatives)
{
    NetworkConfig cfg;
    cfg.mode = mode;
    cfg.channels = {6, 8};
    cfg.points = 64;
    cfg.initial_spacing = 0.15;
    cfg.classes = 3;
    cfg.cluster.representatives = representatives;
    cfg.seed = 11;
    return cfg;
}

Matrix run(Classifier& net, std::vector<PreparedModel*> batch, BnMode mode)
{
    Tape tape;
    ForwardOptions opt;
    opt.bn_mode = mode;
    const Var out = net.forward(tape, batch, opt);
    return tape.value(out);
}

} // namespace

TEST(Conv, UncompressedMatchesDenseOracle)
{
    ConvFixture f(40, 12, 1);
    std::mt19937_64 rng(2);
    const Matrix phi = oracle::random_matrix(40, 3, rng);
    Parameter w("w", oracle::random_matrix(27 * 3, 5, rng));
    Tape tape;
    LayerCounters counters;
    ConvOperand op;
    op.sparse = f.t;
    const Var y = conv(tape, tape.constant(phi), {op}, tape.parameter(w), &counters);
    EXPECT_LT(oracle::relative_error(tape.value(y), oracle::dense_conv(f.dense, phi, w.value)), 1e-12);
    EXPECT_EQ(counters.features, 40u);
    EXPECT_EQ(counters.macs, f.t->nnz() * 3 + 12u * 27 * 3 * 5);
}

TEST(Conv, ConstantInputGetsNoAdjoint)
{
    ConvFixture f(40, 12, 1);
    std::mt19937_64 rng(3);
    Parameter w("w", oracle::random_matrix(27 * 3, 5, rng));
    ConvOperand op;
    op.sparse = f.t;
    for (const bool keep : {false, true}) {
        Tape tape;
        const Matrix phi = oracle::random_matrix(40, 3, rng);
        const Var x = keep ? tape.input(phi) : tape.constant(phi);
        const Var y = conv(tape, x, {op}, tape.parameter(w));
        tape.backward(tape.record(Matrix::Constant(1, 1, tape.value(y).sum()), [y](Tape& t, Var self) {
            t.grad(y).array() += t.grad(self)(0, 0);
        }));
        EXPECT_EQ(tape.has_grad(x), keep);
    }
}

TEST(Conv, CompressedMatchesNaiveOracle)
{
    ConvFixture f(50, 20, 3);
    std::mt19937_64 rng(4);
    const auto in = oracle::random_assignment(50, 7, rng);
    const auto out = oracle::random_assignment(20, 5, rng);
    const CompressedInteraction h = compress_interaction(*f.t, in, out);
    const Matrix rep = oracle::random_matrix(7, 2, rng);
    Parameter w("w", oracle::random_matrix(27 * 2, 4, rng));
    Tape tape;
    LayerCounters counters;
    ConvOperand op;
    op.compressed = &h;
    const Var y = conv(tape, tape.constant(rep), {op}, tape.parameter(w), &counters);
    EXPECT_LT(oracle::relative_error(tape.value(y), oracle::naive_compressed_conv(f.dense, rep, in, out, w.value)),
              1e-12);
    EXPECT_EQ(counters.features, 7u);
    EXPECT_EQ(counters.macs, 7u * 5 * 27 * 2 + 5u * 27 * 2 * 4);
}

TEST(Conv, SingletonClustersReproduceUncompressed)
{
    ConvFixture f(30, 10, 5);
    std::mt19937_64 rng(6);
    const CompressedInteraction h =
        compress_interaction(*f.t, ClusterAssignment::singletons(30), ClusterAssignment::singletons(10));
    const Matrix phi = oracle::random_matrix(30, 3, rng);
    const Matrix w = oracle::random_matrix(27 * 3, 4, rng);
    const Matrix a = compressed_interaction_apply(h, phi) * w;
    const Matrix b = apply_interaction(*f.t, phi) * w;
    EXPECT_LT(oracle::relative_error(a, b), 1e-13);
}

TEST(Conv, StacksModelsBlockDiagonally)
{
    ConvFixture f1(20, 6, 7), f2(25, 8, 8);
    std::mt19937_64 rng(9);
    const Matrix x1 = oracle::random_matrix(20, 2, rng), x2 = oracle::random_matrix(25, 2, rng);
    Parameter w("w", oracle::random_matrix(54, 3, rng));
    Matrix x(45, 2);
    x << x1, x2;
    Tape tape;
    ConvOperand a, b;
    a.sparse = f1.t;
    b.sparse = f2.t;
    const Matrix y = tape.value(conv(tape, tape.constant(x), {a, b}, tape.parameter(w)));
    ASSERT_EQ(y.rows(), 14);
    EXPECT_LT(oracle::relative_error(y.topRows(6), oracle::dense_conv(f1.dense, x1, w.value)), 1e-12);
    EXPECT_LT(oracle::relative_error(y.bottomRows(8), oracle::dense_conv(f2.dense, x2, w.value)), 1e-12);
}

TEST(Conv, RejectsMismatchedRows)
{
    ConvFixture f(20, 6, 10);
    Parameter w("w", Matrix::Ones(27, 2));
    Tape tape;
    ConvOperand op;
    op.sparse = f.t;
    EXPECT_THROW(conv(tape, tape.constant(Matrix::Ones(19, 1)), {op}, tape.parameter(w)), InvalidArgument);
}

TEST(Gradient, FullPipelineMatchesFiniteDifferences)
{
    ConvFixture f1(30, 10, 11), f2(24, 10, 12);
    std::mt19937_64 rng(13);
    const auto in = oracle::random_assignment(24, 6, rng);
    const auto out = oracle::random_assignment(10, 4, rng);
    const CompressedInteraction h = compress_interaction(*f2.t, in, out);

    Matrix x = oracle::random_matrix(36, 2, rng);
    Parameter w("w", oracle::random_matrix(54, 4, rng));
    BatchNorm bn("bn", 4);
    bn.gamma.value = oracle::random_matrix(1, 4, rng);
    bn.beta.value = oracle::random_matrix(1, 4, rng);
    Parameter fw("fw", oracle::random_matrix(4, 3, rng));
    Parameter fb("fb", oracle::random_matrix(1, 3, rng));
    std::vector<double> pool_w(14);
    for (auto& v : pool_w) v = 1.0 + std::uniform_real_distribution<double>(0, 2)(rng);

    Var x_var = 0;
    auto loss = [&](Tape& tape) {
        ConvOperand a, b;
        a.sparse = f1.t;
        b.compressed = &h;
        x_var = tape.input(x);
        Var y = conv(tape, x_var, {a, b}, tape.parameter(w));
        y = batch_norm(tape, y, tape.parameter(bn.gamma), tape.parameter(bn.beta), bn, BnMode::train_frozen);
        y = relu(tape, y);
        y = weighted_pool(tape, y, {0, 10, 14}, pool_w);
        y = log_softmax(tape, linear(tape, y, tape.parameter(fw), tape.parameter(fb)));
        return nll_loss(tape, y, {2, 0});
    };
    auto value = [&] {
        Tape t;
        return t.value(loss(t))(0, 0);
    };

    Tape tape;
    for (Parameter* p : {&w, &bn.gamma, &bn.beta, &fw, &fb}) p->zero_grad();
    const Var root = loss(tape);
    tape.backward(root);
    const Matrix gx = tape.grad(x_var);

    for (Parameter* p : {&w, &bn.gamma, &bn.beta, &fw, &fb}) {
        const Matrix num = numeric_gradient(p->value, value);
        EXPECT_LT(oracle::relative_error(p->grad, num), 1e-6) << p->name;
    }
    EXPECT_LT(oracle::relative_error(gx, numeric_gradient(x, value)), 1e-6);
}

TEST(Gradient, EvalModeBatchNorm)
{
    std::mt19937_64 rng(14);
    Matrix x = oracle::random_matrix(5, 3, rng);
    BatchNorm bn("bn", 3);
    bn.running_mean = Vector::Constant(3, 0.2);
    bn.running_var = Vector::Constant(3, 1.7);
    bn.gamma.value = oracle::random_matrix(1, 3, rng);
    const Matrix probe = oracle::random_matrix(5, 3, rng);
    Var xv = 0;
    auto build = [&](Tape& t) {
        xv = t.constant(x);
        const Var y = batch_norm(t, xv, t.parameter(bn.gamma), t.parameter(bn.beta), bn, BnMode::eval);
        Matrix one(1, 1);
        one(0, 0) = (t.value(y).array() * probe.array()).sum();
        return t.record(one, [y, probe](Tape& tt, Var self) { tt.grad(y) += tt.grad(self)(0, 0) * probe; });
    };
    Tape tape;
    tape.backward(build(tape));
    auto f = [&] {
        Tape t;
        return t.value(build(t))(0, 0);
    };
    EXPECT_LT(oracle::relative_error(tape.grad(xv), numeric_gradient(x, f)), 1e-7);
}

TEST(BatchNormTest, TrainNormalizesAndUpdatesRunningStats)
{
    std::mt19937_64 rng(15);
    const Matrix x = oracle::random_matrix(40, 3, rng) * 3.0;
    BatchNorm bn("bn", 3);
    Tape tape;
    BatchStats stats;
    const Matrix y = tape.value(batch_norm(tape, tape.constant(x), tape.parameter(bn.gamma),
                                           tape.parameter(bn.beta), bn, BnMode::train, &stats));
    const Vector mean = x.colwise().mean().transpose();
    const Vector var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    EXPECT_LT((stats.mean - mean).norm(), 1e-14);
    EXPECT_LT((stats.var - var).norm(), 1e-12);
    EXPECT_LT(y.colwise().mean().norm(), 1e-12);
    for (Eigen::Index c = 0; c < 3; ++c) {
        const double v = y.col(c).squaredNorm() / 40.0;
        EXPECT_NEAR(v, var(c) / (var(c) + 1e-5), 1e-12);
    }
    EXPECT_LT((bn.running_mean - 0.1 * mean).norm(), 1e-14);
    EXPECT_LT((bn.running_var - (Vector::Constant(3, 0.9) + 0.1 * var)).norm(), 1e-14);
}

TEST(BatchNormTest, FrozenAndEvalLeaveRunningStatsAlone)
{
    std::mt19937_64 rng(16);
    const Matrix x = oracle::random_matrix(10, 2, rng);
    BatchNorm bn("bn", 2);
    bn.running_mean << 0.5, -0.5;
    bn.running_var << 2.0, 4.0;
    Tape tape;
    batch_norm(tape, tape.constant(x), tape.parameter(bn.gamma), tape.parameter(bn.beta), bn, BnMode::train_frozen);
    const Matrix y = tape.value(batch_norm(tape, tape.constant(x), tape.parameter(bn.gamma),
                                           tape.parameter(bn.beta), bn, BnMode::eval));
    EXPECT_EQ(bn.running_mean, Vector((Vector(2) << 0.5, -0.5).finished()));
    EXPECT_NEAR(y(3, 1), (x(3, 1) + 0.5) / std::sqrt(4.0 + 1e-5), 1e-14);
}

TEST(Pooling, WeightedMeanPerModel)
{
    Matrix x(5, 2);
    x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
    Tape tape;
    const Matrix y = tape.value(weighted_pool(tape, tape.constant(x), {0, 2, 5}, {1, 3, 1, 1, 2}));
    EXPECT_NEAR(y(0, 0), (1 + 9) / 4.0, 1e-15);
    EXPECT_NEAR(y(0, 1), (2 + 12) / 4.0, 1e-15);
    EXPECT_NEAR(y(1, 0), (5 + 7 + 18) / 4.0, 1e-15);
    EXPECT_THROW(weighted_pool(tape, tape.constant(x), {0, 2, 4}, {1, 1, 1, 1, 1}), InvalidArgument);
}

TEST(Softmax, StableAndNormalized)
{
    Matrix x(2, 3);
    x << 1000, 1001, 1002, -5, 0, 5;
    const Matrix lp = log_softmax_rows(x);
    for (Eigen::Index r = 0; r < 2; ++r) EXPECT_NEAR(lp.row(r).array().exp().sum(), 1.0, 1e-14);
    EXPECT_NEAR(lp(0, 2) - lp(0, 0), 2.0, 1e-12);
    EXPECT_NEAR(cross_entropy_loss(lp.row(1), 2), -lp(1, 2), 0.0);
    EXPECT_THROW(cross_entropy_loss(lp.row(1), 3), InvalidArgument);
    EXPECT_THROW(cross_entropy_loss(lp.row(1), -1), InvalidArgument);
}

TEST(AdamTest, MatchesReferenceUpdates)
{
    Parameter p("p", Matrix::Constant(1, 2, 1.0));
    Adam adam;
    double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, 1.0};
    const double grads[3][2] = {{0.5, -2.0}, {0.1, 0.3}, {-1.0, 0.0}};
    std::vector<Parameter*> params{&p};
    for (int t = 1; t <= 3; ++t) {
        for (int i = 0; i < 2; ++i) {
            p.grad(0, i) = grads[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * grads[t - 1][i];
            v[i] = 0.999 * v[i] + 0.001 * grads[t - 1][i] * grads[t - 1][i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        adam.step(params, 0.01);
        EXPECT_NEAR(p.value(0, 0), ref[0], 1e-15);
        EXPECT_NEAR(p.value(0, 1), ref[1], 1e-15);
    }
    EXPECT_EQ(adam.steps(), 3);
    // First step moves every coordinate by about lr regardless of scale.
    Parameter q("q", Matrix::Zero(1, 1));
    q.grad(0, 0) = 1e4;
    Adam fresh;
    std::vector<Parameter*> qp{&q};
    fresh.step(qp, 1e-3);
    EXPECT_NEAR(q.value(0, 0), -1e-3, 1e-12);
}

TEST(LearningRate, HalvesAtMilestones)
{
    const auto ms = default_milestones(15);
    EXPECT_EQ(ms, (std::vector<int>{6, 9, 12, 13, 14}));
    EXPECT_EQ(default_milestones(30), (std::vector<int>{12, 18, 24, 26, 28}));
    EXPECT_DOUBLE_EQ(lr_schedule(0, ms), 1e-3);
    EXPECT_DOUBLE_EQ(lr_schedule(5, ms), 1e-3);
    EXPECT_DOUBLE_EQ(lr_schedule(6, ms), 5e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(9, ms), 2.5e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(14, ms), 1e-3 / 32);
    EXPECT_THROW(lr_schedule(-1, ms), InvalidArgument);
}

TEST(LevelPlan, DefaultCountsAndOutputLevels)
{
    EXPECT_EQ(default_level_counts(1024), (std::vector<std::size_t>{1024, 256, 64, 16}));
    EXPECT_EQ(default_level_counts(4096), (std::vector<std::size_t>{4096, 1024, 256, 64, 16}));
    EXPECT_THROW(default_level_counts(1000), InvalidArgument);
    EXPECT_THROW(default_level_counts(16), InvalidArgument);
    NetworkConfig cfg;
    EXPECT_EQ(cfg.output_levels(), (std::vector<std::size_t>{1, 1, 1, 1, 2, 3}));
    cfg.points = 4096;
    EXPECT_EQ(cfg.output_levels(), (std::vector<std::size_t>{1, 1, 1, 2, 3, 4}));
    EXPECT_EQ(cfg.input_level(0), 0u);
    EXPECT_EQ(cfg.input_level(4), 2u);
    EXPECT_DOUBLE_EQ(cfg.spacing(5), 0.64);
    cfg.channels = {8, 8, 8};
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg.level_counts = {4096, 256, 16};
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.output_levels(), (std::vector<std::size_t>{1, 1, 2}));
}

TEST(LevelPlan, KernelSpecsPerLayer)
{
    NetworkConfig cfg;
    cfg.mode = NetworkMode::se3_normal_aligned;
    const KernelSpec s = cfg.kernel_spec(2);
    EXPECT_EQ(s.mode, KernelMode::radial_group);
    EXPECT_DOUBLE_EQ(s.spacing, 0.08);
    EXPECT_DOUBLE_EQ(s.lambda, KernelSpec::default_lambda(0.08));
    cfg.lambda = 0.5;
    EXPECT_DOUBLE_EQ(cfg.kernel_spec(2).lambda, 0.5);
    EXPECT_EQ(parse_network_mode("so3"), NetworkMode::so3_full);
    EXPECT_EQ(parse_network_mode("se3_normal_aligned"), NetworkMode::se3_normal_aligned);
    EXPECT_THROW(parse_network_mode("affine"), InvalidArgument);
}

TEST(ClassifierTest, ParameterShapes)
{
    NetworkConfig cfg = small_config(NetworkMode::se3_normal_aligned, 0);
    Classifier net(cfg, 1);
    EXPECT_EQ(net.grid(0).size(), 648u);
    EXPECT_EQ(net.conv_weight(0).value.rows(), 648);
    EXPECT_EQ(net.conv_weight(1).value.rows(), 648 * 6);
    EXPECT_EQ(net.parameters().size(), 8u);
    const double a = std::sqrt(6.0 / (648 * 6 + 8));
    EXPECT_LE(net.conv_weight(1).value.cwiseAbs().maxCoeff(), a);
}

TEST(ClassifierTest, SingletonCompressionEqualsUncompressed)
{
    const auto cloud = test_cloud(ShapeKind::torus, 128, 21);
    NetworkConfig plain = small_config(NetworkMode::translation, 0);
    NetworkConfig comp = small_config(NetworkMode::translation, 64);
    Classifier a(plain, 5), b(comp, 5);
    PreparedModel ma = a.prepare(cloud, "torus", 1);
    PreparedModel mb = b.prepare(cloud, "torus", 1);
    ASSERT_EQ(mb.layers.size(), 2u);
    EXPECT_EQ(mb.layers[0].M, 64u);
    EXPECT_EQ(mb.layers[1].N, 16u);
    const Matrix ya = run(a, {&ma}, BnMode::train_frozen);
    const Matrix yb = run(b, {&mb}, BnMode::train_frozen);
    EXPECT_LT(oracle::relative_error(ya, yb), 1e-10);
}

TEST(ClassifierTest, CacheRoundTripGivesIdenticalOutputs)
{
    const auto dir = std::filesystem::temp_directory_path() / "gccpc_nn_cache_test";
    std::filesystem::remove_all(dir);
    const auto cloud = test_cloud(ShapeKind::box, 128, 22);
    NetworkConfig cfg = small_config(NetworkMode::se3_normal_aligned, 12);
    Classifier net(cfg, 6);
    PrepareOptions opt;
    opt.cache_dir = dir;
    PreparedModel first = net.prepare(cloud, "box", 0, opt);
    PreparedModel second = net.prepare(cloud, "box", 0, opt);
    EXPECT_FALSE(first.cache_hit);
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(first.pool_weights, second.pool_weights);
    const Matrix y1 = run(net, {&first}, BnMode::train_frozen);
    second.release_tensors();
    EXPECT_FALSE(second.tensors_loaded());
    const Matrix y2 = run(net, {&second}, BnMode::train_frozen);
    EXPECT_EQ(y1, y2);
    std::filesystem::remove_all(dir);
}

TEST(ClassifierTest, CompressedCountsClusters)
{
    const auto cloud = test_cloud(ShapeKind::cylinder, 128, 23);
    NetworkConfig cfg = small_config(NetworkMode::se3_normal_aligned, 10);
    Classifier net(cfg, 7);
    PreparedModel m = net.prepare(cloud, "cyl", 2);
    ASSERT_EQ(m.layers.size(), 2u);
    EXPECT_EQ(m.layers[0].M, 10u);
    EXPECT_EQ(m.layers[0].N, 10u);
    EXPECT_EQ(m.layers[1].M, 10u);
    EXPECT_EQ(m.input_representatives.rows(), 10);
    double total = 0;
    for (double w : m.pool_weights) total += w;
    EXPECT_DOUBLE_EQ(total, 16.0 * 8.0);
}

TEST(ClassifierTest, Se3OutputsInvariantUnderRigidMotion)
{
    const auto cloud = test_cloud(ShapeKind::cone, 128, 24);
    std::mt19937_64 rng(25);
    const Rotation r = Rotation::uniform_random(rng);
    const auto moved = transformed(cloud, r.matrix(), Vec3(0.3, -0.2, 0.1));
    for (int reps : {0, 12}) {
        Classifier net(small_config(NetworkMode::se3_normal_aligned, reps), 8);
        PreparedModel a = net.prepare(cloud, "cone", 0);
        PreparedModel b = net.prepare(moved, "cone", 0);
        const Matrix ya = run(net, {&a}, BnMode::train_frozen);
        const Matrix yb = run(net, {&b}, BnMode::train_frozen);
        EXPECT_LT((ya - yb).cwiseAbs().maxCoeff(), 1e-9) << "representatives " << reps;
    }
}

TEST(ClassifierTest, ActivationTargetsDependOnWeights)
{
    const auto cloud = test_cloud(ShapeKind::sphere, 128, 26);
    NetworkConfig cfg = small_config(NetworkMode::translation, 8);
    cfg.cluster.target = ClusterTarget::after_nonlinearity;
    Classifier net(cfg, 9);
    const CacheKey k1 = net.cache_key("s");
    net.conv_weight(0).value(0, 0) += 0.25;
    const CacheKey k2 = net.cache_key("s");
    EXPECT_NE(k1.cluster_hash, k2.cluster_hash);
    PreparedModel m = net.prepare(cloud, "s", 0);
    EXPECT_EQ(m.layers[0].N, 8u);
    EXPECT_TRUE(run(net, {&m}, BnMode::train_frozen).allFinite());
}

TEST(ClassifierTest, RejectsUnsuitableInput)
{
    Classifier net(small_config(NetworkMode::se3_normal_aligned, 0), 1);
    auto cloud = test_cloud(ShapeKind::box, 32, 27);
    EXPECT_THROW(net.prepare(cloud, "tiny", 0), InvalidArgument);
    cloud = test_cloud(ShapeKind::box, 128, 27);
    cloud.normals.reset();
    EXPECT_THROW(net.prepare(cloud, "no-normals", 0), InvalidArgument);
}

#include "agla/nets.hpp"
#include "agla/param_io.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using agla::IlMode;
using agla::Tensor;
using oracle::Mat;
using oracle::Vec;

namespace {

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    Mat m(r);
    for (auto& row : m) row = oracle::random_vec(c, rng);
    return m;
}

double project(const Mat& y, const Mat& w) {
    double s = 0;
    for (std::size_t r = 0; r < y.size(); ++r)
        for (std::size_t c = 0; c < y[r].size(); ++c) s += y[r][c] * w[r][c];
    return s;
}

}  // namespace

TEST(BaseLearner, ShapesInBothModes) {
    agla::BaseLearner ci(20, IlMode::class_il, 1);
    ci.expand_head(2);
    ci.expand_head(2);
    EXPECT_EQ(ci.head_count(), 1u);
    EXPECT_EQ(ci.output_width(), 4u);
    const Tensor x({3, 20}, Vec(60, 0.5));
    EXPECT_EQ(ci.forward(x).shape(), (agla::Shape{3, 4}));
    EXPECT_EQ(ci.features(x).shape(), (agla::Shape{3, 64}));

    agla::BaseLearner ti(20, IlMode::task_il, 1);
    ti.expand_head(2);
    ti.expand_head(3);
    EXPECT_EQ(ti.head_count(), 2u);
    EXPECT_EQ(ti.forward(x, 1).shape(), (agla::Shape{3, 3}));
    EXPECT_EQ(ti.head_offset(1), 2u);
    EXPECT_EQ(ti.all_logits(ti.features(x)).shape(), (agla::Shape{3, 5}));
}

TEST(BaseLearner, ModeRules) {
    agla::BaseLearner ci(4, IlMode::class_il, 1);
    ci.expand_head(2);
    const Tensor x({1, 4}, Vec(4, 0.1));
    EXPECT_THROW(ci.forward(x, 0), agla::ModeError);
    agla::BaseLearner ti(4, IlMode::task_il, 1);
    ti.expand_head(2);
    EXPECT_THROW(ti.forward(x), agla::ModeError);
    EXPECT_THROW(ti.forward(x, 3), agla::ProtocolError);
    EXPECT_THROW(ti.forward(Tensor({1, 5}, Vec(5)), 0), agla::DimensionError);
}

TEST(BaseLearner, ExpandHeadPreservesExistingColumns) {
    agla::BaseLearner m(6, IlMode::class_il, 7);
    m.expand_head(2);
    const Tensor x({2, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
    const Tensor before = m.forward(x);
    m.expand_head(3);
    const Tensor after = m.forward(x);
    ASSERT_EQ(after.cols(), 5u);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(after.at(r, c), before.at(r, c));
}

TEST(BaseLearner, SameSeedSameParameters) {
    agla::BaseLearner a(8, IlMode::class_il, 3), b(8, IlMode::class_il, 3), c(8, IlMode::class_il, 4);
    a.expand_head(2);
    b.expand_head(2);
    c.expand_head(2);
    EXPECT_EQ(agla::parameter_hash(a.parameters()), agla::parameter_hash(b.parameters()));
    EXPECT_NE(agla::parameter_hash(a.parameters()), agla::parameter_hash(c.parameters()));
}

TEST(BaseLearner, MatchesIndependentForward) {
    std::mt19937_64 rng(5);
    agla::BaseLearner m(5, IlMode::task_il, 11, 8, 6);
    m.expand_head(2);
    m.expand_head(3);
    const Mat x = random_mat(4, 5, rng);
    const Mat ref = oracle::base_forward(oracle::ParamSet::from(m.named_parameters()), x);
    const Tensor got = m.all_logits(m.features(oracle::to_tensor(x)));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(got.at(r, c), ref[r][c], 1e-12);
}

/// Finite differences on the independent forward; coordinates whose stencil crosses a
/// ReLU kink are not differentiable there and are skipped (and counted).
TEST(GradCheck, BaseLearnerAllParameters) {
    std::size_t kinks = 0, checked = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        agla::BaseLearner m(5, seed % 2 ? IlMode::class_il : IlMode::task_il, seed, 8, 6);
        m.expand_head(2);
        m.expand_head(2);
        const Mat x = random_mat(3, 5, rng);
        const Tensor xt = oracle::to_tensor(x);
        const Tensor probe = m.all_logits(m.features(xt));
        const Mat w = random_mat(probe.rows(), probe.cols(), rng);
        auto params = m.parameters();
        agla::zero_grads(params);
        agla::backward(agla::sum(agla::mul(m.all_logits(m.features(xt)), oracle::to_tensor(w))));

        oracle::ParamSet ps = oracle::ParamSet::from(m.named_parameters());
        oracle::Pattern base;
        oracle::base_forward(ps, x, &base);
        Vec analytic;
        for (const auto& [name, t] : m.named_parameters()) analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
        ASSERT_EQ(analytic.size(), ps.total());
        for (std::size_t k = 0; k < ps.total(); ++k) {
            const double keep = ps.flat(k);
            oracle::Pattern up, down;
            ps.flat(k) = keep + 1e-5;
            const double fu = project(oracle::base_forward(ps, x, &up), w);
            ps.flat(k) = keep - 1e-5;
            const double fd = project(oracle::base_forward(ps, x, &down), w);
            ps.flat(k) = keep;
            if (up != base || down != base) {
                ++kinks;
                continue;
            }
            ++checked;
            ASSERT_LT(oracle::rel_err(analytic[k], (fu - fd) / 2e-5), 1e-4) << "seed " << seed << " coordinate " << k;
        }
    }
    EXPECT_LT(kinks * 1000, checked);
}

TEST(Assessor, OutputShapeRangeAndState) {
    agla::Assessor a(20, 3);
    const Tensor x({5, 20}, Vec(100, 0.3));
    const auto out = a.forward(x, a.initial_state());
    EXPECT_EQ(out.weights.shape(), (agla::Shape{5, 3}));
    for (double v : out.weights.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(out.state.hidden.size(), 1u);
    EXPECT_EQ(out.state.hidden[0].cols(), 64u);
}

TEST(Assessor, StateThreadsThroughRows) {
    agla::Assessor a(4, 9);
    std::mt19937_64 rng(2);
    const Mat x = random_mat(6, 4, rng);
    const auto whole = a.forward(oracle::to_tensor(x), a.initial_state());
    const Mat first(x.begin(), x.begin() + 3), second(x.begin() + 3, x.end());
    const auto a1 = a.forward(oracle::to_tensor(first), a.initial_state());
    const auto a2 = a.forward(oracle::to_tensor(second), a1.state);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(whole.weights.at(4, c), a2.weights.at(1, c), 1e-14);
    const auto fresh = a.forward(oracle::to_tensor(second), a.initial_state());
    EXPECT_NE(fresh.weights.at(1, 0), a2.weights.at(1, 0));
}

TEST(Assessor, RejectsBadInputs) {
    agla::Assessor a(4, 1);
    EXPECT_THROW(a.forward(Tensor({2, 5}, Vec(10)), a.initial_state()), agla::DimensionError);
    auto s = a.initial_state();
    s.hidden[0].mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(a.forward(Tensor({1, 4}, Vec(4)), s), agla::NumericError);
}

TEST(Assessor, MatchesIndependentForward) {
    for (std::size_t layers : {1u, 2u}) {
        agla::Assessor a(4, 17, layers, 5, 6);
        std::mt19937_64 rng(3);
        const Mat x = random_mat(5, 4, rng);
        const Mat ref = oracle::assessor_forward(oracle::ParamSet::from(a.named_parameters()), x, layers);
        const Tensor got = a.forward(oracle::to_tensor(x), a.initial_state()).weights;
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(got.at(r, c), ref[r][c], 1e-12);
    }
}

/// LSTM unrolled over five rows; every parameter checked against the independent forward.
TEST(GradCheck, AssessorLstmFiveSteps) {
    std::size_t kinks = 0, checked = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed + 1000);
        const std::size_t layers = seed % 3 == 0 ? 2 : 1;
        agla::Assessor a(4, seed, layers, 4, 5);
        const Mat x = random_mat(5, 4, rng);
        const Mat w = random_mat(5, 3, rng);
        auto params = a.parameters();
        agla::zero_grads(params);
        agla::backward(agla::sum(agla::mul(a.forward(oracle::to_tensor(x), a.initial_state()).weights, oracle::to_tensor(w))));
        oracle::ParamSet ps = oracle::ParamSet::from(a.named_parameters());
        Vec analytic;
        for (const auto& [name, t] : a.named_parameters()) analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
        oracle::Pattern base;
        oracle::assessor_forward(ps, x, layers, &base);
        for (std::size_t k = 0; k < ps.total(); ++k) {
            const double keep = ps.flat(k);
            oracle::Pattern up, down;
            ps.flat(k) = keep + 1e-5;
            const double fu = project(oracle::assessor_forward(ps, x, layers, &up), w);
            ps.flat(k) = keep - 1e-5;
            const double fd = project(oracle::assessor_forward(ps, x, layers, &down), w);
            ps.flat(k) = keep;
            if (up != base || down != base) {
                ++kinks;
                continue;
            }
            ++checked;
            ASSERT_LT(oracle::rel_err(analytic[k], (fu - fd) / 2e-5), 1e-4) << "seed " << seed << " coordinate " << k;
        }
    }
    EXPECT_LT(kinks * 1000, checked);
}

TEST(Snapshot, FrozenAgainstLaterUpdates) {
    agla::BaseLearner m(3, IlMode::class_il, 2);
    m.expand_head(2);
    const Tensor x({1, 3}, {0.2, 0.4, 0.6});
    const agla::ModelSnapshot snap(m);
    const double before = snap.forward(x).at(0, 0);
    for (Tensor& p : m.parameters())
        for (double& v : p.mutable_data()) v += 0.5;
    EXPECT_EQ(snap.forward(x).at(0, 0), before);
    EXPECT_NE(m.forward(x).at(0, 0), before);
    EXPECT_FALSE(snap.forward(x).requires_grad());
}

TEST(Snapshot, ZeroParametersGiveZeroLogits) {
    agla::BaseLearner m(3, IlMode::class_il, 2);
    m.expand_head(4);
    m.zero_parameters();
    const agla::ModelSnapshot snap(m);
    const Tensor out = snap.forward(Tensor({2, 3}, Vec(6, 0.7)));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ParamIo, RoundTripIsBitExact) {
    agla::BaseLearner m(7, IlMode::task_il, 21);
    m.expand_head(2);
    m.expand_head(2);
    agla::Assessor a(7, 5);
    agla::NamedTensors all = m.named_parameters();
    for (auto& p : a.named_parameters()) all.push_back(p);
    const auto path = std::filesystem::temp_directory_path() / "agla_param_roundtrip.bin";
    agla::save_parameters(path.string(), all);
    const auto loaded = agla::load_parameters(path.string());
    ASSERT_EQ(loaded.size(), all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_EQ(loaded[i].first, all[i].first);
        EXPECT_EQ(loaded[i].second.shape(), all[i].second.shape());
        EXPECT_TRUE(std::equal(loaded[i].second.data().begin(), loaded[i].second.data().end(),
                               all[i].second.data().begin()));
    }
    agla::BaseLearner restored(7, IlMode::task_il, 99);
    restored.load_named(loaded);
    EXPECT_EQ(agla::parameter_hash(restored.parameters()), agla::parameter_hash(m.parameters()));
    std::filesystem::remove(path);
}

TEST(ParamIo, CorruptInputReportsOffset) {
    agla::BaseLearner m(3, IlMode::class_il, 1);
    m.expand_head(2);
    auto bytes = agla::encode_parameters(m.named_parameters());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        agla::decode_parameters(bad_magic);
        FAIL();
    } catch (const agla::FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(agla::decode_parameters(bytes), agla::FormatError);
}

TEST(ParamIo, ShapeMismatchOnLoad) {
    agla::BaseLearner small(3, IlMode::class_il, 1);
    small.expand_head(2);
    agla::BaseLearner wide(4, IlMode::class_il, 1);
    wide.expand_head(2);
    EXPECT_THROW(wide.load_named(small.named_parameters()), agla::DimensionError);
}

#include "agla/losses.hpp"
#include "agla/nets.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using agla::LossRow;
using agla::Tensor;
using oracle::Mat;
using oracle::Vec;

namespace {

Tensor row(Vec v, bool g = false) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v), g);
}

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2, double hi = 2) {
    Mat m(r);
    for (auto& x : m) x = oracle::random_vec(c, rng, lo, hi);
    return m;
}

Mat random_meta(std::size_t r, std::mt19937_64& rng) { return random_mat(r, 3, rng, 0.05, 0.95); }

/// A batch mixing current rows and memory rows, some with COS factors, in one logit space.
struct Batch {
    std::vector<LossRow> rows;
    std::vector<oracle::Row> ref;
};

Batch random_batch(std::size_t n, std::size_t width, std::mt19937_64& rng, bool windows) {
    Batch b;
    std::uniform_int_distribution<std::size_t> coin(0, 2);
    for (std::size_t r = 0; r < n; ++r) {
        LossRow lr;
        lr.window = windows && r % 2 ? agla::LogitWindow{2, width - 2} : agla::LogitWindow{0, width};
        lr.target = std::uniform_int_distribution<std::size_t>(0, lr.window.width - 1)(rng);
        lr.memory = coin(rng) != 0;
        if (lr.memory) {
            const std::size_t stored = std::max<std::size_t>(1, lr.window.width - (r % 2));
            lr.stored_logits = oracle::random_vec(stored, rng, -2, 2);
            if (coin(rng) == 0) lr.cos_factor = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        }
        b.ref.push_back({lr.window.offset, lr.window.width, lr.target, lr.memory, lr.stored_logits, lr.cos_factor});
        b.rows.push_back(std::move(lr));
    }
    return b;
}

}  // namespace

TEST(CrossEntropy, OracleValues) {
    EXPECT_NEAR(agla::ce_loss(row({0, 0}), 0).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(agla::ce_loss(row({0, 0, 0}), 2).item(), std::log(3.0), 1e-15);
    EXPECT_NEAR(agla::ce_loss(row({2, 0}), 0).item(), oracle::ce({2, 0}, 0), 1e-15);
    EXPECT_NEAR(agla::ce_loss(row({2, 0}), 0).item(), 0.126928011042973, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) { EXPECT_THROW(agla::ce_loss(row({0, 0}), 2), std::out_of_range); }

TEST(CrossEntropy, StableForHugeLogits) {
    EXPECT_NEAR(agla::ce_loss(row({1000, -1000}), 1).item(), 2000.0, 1e-9);
}

TEST(DerLoss, OracleValues) {
    EXPECT_NEAR(agla::der_loss(row({0, 0}), row({0, 0}), 0).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(agla::der_loss(row({1, 0}), row({0, 0}), 0).item(), 0.5 + oracle::ce({1, 0}, 0), 1e-15);
    EXPECT_NEAR(agla::der_loss(row({0, 0, 0}), row({0, 0, 0}), 1).item(), std::log(3.0), 1e-15);
}

TEST(DerLoss, TruncatesToStoredWidth) {
    const double v = agla::der_loss(row({1, 0, 5}), row({0, 0}), 0).item();
    EXPECT_NEAR(v, 0.5 + oracle::ce({1, 0, 5}, 0), 1e-14);
    EXPECT_THROW(agla::der_loss(row({1, 0}), row({0, 0, 0}), 0), agla::DimensionError);
}

TEST(Distill, OracleValues) {
    EXPECT_NEAR(agla::distill_loss(row({0, 0}), row({0, 0}), 2).item(), std::log(2.0), 1e-15);
    const Vec h{1.3, -0.4, 0.2};
    double entropy = 0;
    for (std::size_t j = 0; j < 3; ++j) {
        const double p = std::exp(h[j] / 2 - oracle::logsumexp({h[0] / 2, h[1] / 2, h[2] / 2}));
        entropy -= p * std::log(p);
    }
    EXPECT_NEAR(agla::distill_loss(row(h), row(h), 2).item(), entropy, 1e-14);
    const double s = 1 / (1 + std::exp(-1.0));
    EXPECT_NEAR(agla::distill_loss(row({2, 0}), row({0, 0}), 2).item(), -0.5 * std::log(s) - 0.5 * std::log(1 - s), 1e-14);
    EXPECT_THROW(agla::distill_loss(row({0, 0}), row({0, 0}), 0.0), agla::ParameterError);
}

TEST(Distill, CrossEntropyDominatesEntropy) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const Vec o = oracle::random_vec(4, rng, -3, 3), h = oracle::random_vec(4, rng, -3, 3);
        EXPECT_GE(agla::distill_loss(row(o), row(h), 2).item() + 1e-12, agla::distill_loss(row(h), row(h), 2).item());
    }
}

TEST(Schedule, LambdaPiZeroAtFirstTask) {
    EXPECT_EQ(agla::der_weight(1, 0.7), 0.0);
    EXPECT_EQ(agla::distill_weight(1, 0.7), 0.0);
    EXPECT_NEAR(agla::der_weight(3, 0.2), 0.6, 1e-12);
    EXPECT_NEAR(agla::distill_weight(3, 0.3), 0.9, 1e-12);
}

TEST(Combined, FirstTaskIsAlphaTimesCrossEntropy) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat logits = random_mat(6, 4, rng);
        const Batch b = random_batch(6, 4, rng, false);
        const Mat meta = random_meta(6, rng);
        const double got = agla::combined_loss(oracle::to_tensor(logits), b.rows, oracle::to_tensor(meta), 1).item();
        double expect = 0;
        for (std::size_t r = 0; r < 6; ++r) expect += b.ref[r].cos * meta[r][0] * oracle::ce(logits[r], b.ref[r].target);
        EXPECT_NEAR(got, expect / 6, 1e-14);
    }
}

TEST(Combined, HalfAlphaOnCurrentBatch) {
    const Mat logits{{0.3, -0.2}, {1.0, 0.5}};
    std::vector<LossRow> rows(2);
    rows[0].window = rows[1].window = {0, 2};
    rows[1].target = 1;
    const double got =
        agla::combined_loss(oracle::to_tensor(logits), rows, agla::constant_meta(2, {0.5, 0.9, 0.9}), 1).item();
    EXPECT_NEAR(got, 0.5 * (oracle::ce(logits[0], 0) + oracle::ce(logits[1], 1)) / 2, 1e-15);
}

TEST(Combined, MatchesOracleAtLaterTasks) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + trial % 4;
        const Mat logits = random_mat(7, 5, rng);
        const Batch b = random_batch(7, 5, rng, trial % 2 == 1);
        const Mat meta = random_meta(7, rng);
        const double got = agla::combined_loss(oracle::to_tensor(logits), b.rows, oracle::to_tensor(meta), k).item();
        EXPECT_NEAR(got, oracle::combined(logits, b.ref, meta, k, 2.0), 1e-12);
    }
}

TEST(Combined, ThirdTaskScalesBetaAndGamma) {
    Mat logits{{0.4, -1.1, 0.3}};
    std::vector<LossRow> rows(1);
    rows[0].window = {0, 3};
    rows[0].target = 2;
    rows[0].memory = true;
    rows[0].stored_logits = {0.1, 0.2, -0.3};
    const Tensor lt = oracle::to_tensor(logits);
    auto loss = [&](double a, double b, double g, agla::LossTerms terms) {
        return agla::combined_loss(lt, rows, agla::constant_meta(1, {a, b, g}), 3, terms).item();
    };
    const double ce = oracle::ce(logits[0], 2);
    const double der = loss(0.3, 0.2, 0.1, {true, false, 2}) - 0.3 * ce;
    const double dist = loss(0.3, 0.2, 0.1, {false, true, 2}) - 0.3 * ce;
    EXPECT_NEAR(der / (oracle::mse(logits[0], rows[0].stored_logits) + ce), 3 * 0.2, 1e-12);
    EXPECT_NEAR(dist / oracle::distill(logits[0], rows[0].stored_logits, 2), 3 * 0.1, 1e-12);
}

TEST(Combined, NoMemoryTermsAtFirstTask) {
    const std::size_t before = agla::memory_term_evaluations();
    std::vector<LossRow> rows(1);
    rows[0].window = {0, 2};
    rows[0].memory = true;
    rows[0].stored_logits = {0, 0};
    agla::combined_loss(oracle::to_tensor(Mat{{1, 2}}), rows, agla::constant_meta(1, {}), 1);
    EXPECT_EQ(agla::memory_term_evaluations(), before);
    agla::combined_loss(oracle::to_tensor(Mat{{1, 2}}), rows, agla::constant_meta(1, {}), 2);
    EXPECT_EQ(agla::memory_term_evaluations(), before + 1);
}

TEST(Combined, ForcedZeroMemoryWeightsIsReplayCrossEntropy) {
    std::mt19937_64 rng(2);
    const Mat logits = random_mat(5, 3, rng);
    Batch b = random_batch(5, 3, rng, false);
    for (auto& r : b.rows) r.cos_factor = 1;
    const double got =
        agla::combined_loss(oracle::to_tensor(logits), b.rows, agla::constant_meta(5, {1.0, 0.0, 0.0}), 4).item();
    double expect = 0;
    for (std::size_t r = 0; r < 5; ++r) expect += oracle::ce(logits[r], b.rows[r].target);
    EXPECT_NEAR(got, expect / 5, 1e-14);
}

TEST(Combined, NonNegativeAndMonotoneInAlpha) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const Mat logits = random_mat(4, 3, rng);
        const Batch b = random_batch(4, 3, rng, false);
        Mat meta = random_meta(4, rng);
        const double lo = agla::combined_loss(oracle::to_tensor(logits), b.rows, oracle::to_tensor(meta), 3).item();
        EXPECT_GE(lo, 0.0);
        for (auto& m : meta) m[0] += 0.03;
        const double hi = agla::combined_loss(oracle::to_tensor(logits), b.rows, oracle::to_tensor(meta), 3).item();
        EXPECT_GT(hi, lo);
    }
}

TEST(Combined, Errors) {
    std::vector<LossRow> rows(1);
    rows[0].window = {0, 2};
    const Tensor logits = oracle::to_tensor(Mat{{1, 2}});
    EXPECT_THROW(agla::combined_loss(logits, rows, agla::constant_meta(1, {}), 0), agla::ParameterError);
    EXPECT_THROW(agla::combined_loss(logits, rows, agla::constant_meta(2, {}), 1), agla::DimensionError);
    rows[0].memory = true;
    EXPECT_THROW(agla::combined_loss(logits, rows, agla::constant_meta(1, {}), 2), agla::ContractError);
}

/// Gradient into the logits (and so into theta, phi) and into the meta weights.
TEST(GradCheck, CombinedLossLogitsAndMeta) {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        const int k = 1 + seed % 5;
        const Mat logits = random_mat(6, 5, rng);
        const Batch b = random_batch(6, 5, rng, seed % 2 == 0);
        const Mat meta = random_meta(6, rng);
        Tensor lt = oracle::to_tensor(logits, true), mt = oracle::to_tensor(meta, true);
        agla::backward(agla::combined_loss(lt, b.rows, mt, k, {true, true, 2.0}));
        auto flat = [](const Mat& m) {
            Vec v;
            for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
            return v;
        };
        auto unflat = [](const Vec& v, std::size_t cols) {
            Mat m(v.size() / cols, Vec(cols));
            for (std::size_t i = 0; i < v.size(); ++i) m[i / cols][i % cols] = v[i];
            return m;
        };
        const Vec nl = oracle::fd_gradient(
            [&](const Vec& v) { return oracle::combined(unflat(v, 5), b.ref, meta, k, 2.0); }, flat(logits));
        const Vec nm = oracle::fd_gradient(
            [&](const Vec& v) { return oracle::combined(logits, b.ref, unflat(v, 3), k, 2.0); }, flat(meta));
        for (std::size_t i = 0; i < nl.size(); ++i) ASSERT_LT(oracle::rel_err(lt.grad()[i], nl[i]), 1e-4) << seed;
        for (std::size_t i = 0; i < nm.size(); ++i) ASSERT_LT(oracle::rel_err(mt.grad()[i], nm[i]), 1e-4) << seed;
    }
}

/// The meta-gradient: combined loss on fixed logits, differentiated into every assessor
/// parameter through alpha, beta, gamma.
TEST(GradCheck, CombinedLossIntoAssessor) {
    std::size_t kinks = 0, checked = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed + 77);
        const int k = 2 + seed % 3;
        agla::Assessor a(4, seed, 1, 4, 5);
        const Mat x = random_mat(5, 4, rng, 0, 1);
        const Mat logits = random_mat(5, 4, rng);
        const Batch b = random_batch(5, 4, rng, false);
        auto params = a.parameters();
        agla::zero_grads(params);
        const Tensor meta = a.forward(oracle::to_tensor(x), a.initial_state()).weights;
        agla::backward(agla::combined_loss(oracle::to_tensor(logits), b.rows, meta, k));
        Vec analytic;
        for (const auto& [name, t] : a.named_parameters()) analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
        oracle::ParamSet ps = oracle::ParamSet::from(a.named_parameters());
        oracle::Pattern base;
        oracle::assessor_forward(ps, x, 1, &base);
        for (std::size_t i = 0; i < ps.total(); ++i) {
            const double keep = ps.flat(i);
            oracle::Pattern up, down;
            ps.flat(i) = keep + 1e-5;
            const double fu = oracle::combined(logits, b.ref, oracle::assessor_forward(ps, x, 1, &up), k, 2.0);
            ps.flat(i) = keep - 1e-5;
            const double fd = oracle::combined(logits, b.ref, oracle::assessor_forward(ps, x, 1, &down), k, 2.0);
            ps.flat(i) = keep;
            if (up != base || down != base) {
                ++kinks;
                continue;
            }
            ++checked;
            ASSERT_LT(oracle::rel_err(analytic[i], (fu - fd) / 2e-5), 1e-4) << "seed " << seed << " coordinate " << i;
        }
    }
    EXPECT_LT(kinks * 1000, checked);
}

#include "lune/error.hpp"
#include "lune/experiments.hpp"
#include "lune/projection.hpp"
#include "lune/report.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace lune;

namespace {

Tensor randn(std::size_t r, std::size_t c, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(r * c);
    for (auto& x : v) x = n(rng);
    return Tensor::from({r, c}, v);
}

double fro(const Tensor& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

Tensor axpy(const Tensor& a, double k, const Tensor& b) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + k * b.data()[i];
    return Tensor::from(a.shape(), v);
}

// Numerical rank via Gram-Schmidt on the columns.
std::size_t column_rank(const Tensor& m, double tol = 1e-8) {
    const std::size_t R = m.dim(0), C = m.dim(1);
    std::vector<std::vector<double>> basis;
    for (std::size_t j = 0; j < C; ++j) {
        std::vector<double> v(R);
        for (std::size_t i = 0; i < R; ++i) v[i] = m.data()[i * C + j];
        for (const auto& b : basis) {
            double d = 0;
            for (std::size_t i = 0; i < R; ++i) d += v[i] * b[i];
            for (std::size_t i = 0; i < R; ++i) v[i] -= d * b[i];
        }
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > tol) {
            for (auto& x : v) x /= n;
            basis.push_back(v);
        }
    }
    return basis.size();
}

}  // namespace

TEST(Projection, LinearInGradient) {
    Rng rng(1);
    const Tensor A = randn(12, 3, rng), B = randn(10, 3, rng);
    const Tensor g1 = randn(12, 10, rng), g2 = randn(12, 10, rng);
    const Tensor lhs = projected_direction(A, B, axpy(g1, 2.5, g2));
    const Tensor rhs = axpy(projected_direction(A, B, g1), 2.5, projected_direction(A, B, g2));
    EXPECT_LT(fro(axpy(lhs, -1.0, rhs)), 1e-10 * fro(lhs));
}

TEST(Projection, RankAtMostTwoR) {
    Rng rng(2);
    const Tensor A = randn(20, 3, rng), B = randn(18, 3, rng);
    EXPECT_LE(column_rank(projected_direction(A, B, randn(20, 18, rng))), 6u);
}

TEST(Projection, ZeroAdaptersGiveZeroDirection) {
    Rng rng(3);
    const Tensor g = randn(6, 5, rng);
    EXPECT_EQ(fro(projected_direction(Tensor::zeros({6, 2}), Tensor::zeros({5, 2}), g)), 0.0);
}

TEST(Projection, OrthonormalFactorsActAsIdempotentProjectors) {
    ProbeSpec spec;
    spec.d_out = 16;
    spec.d_in = 12;
    spec.rank = 4;
    spec.orthonormal = true;
    const ProjectionProbe p = make_probe(spec, 5);
    Rng rng(5);
    const Tensor g = randn(16, 12, rng);
    // With orthonormal columns, P_B(g) = g B B^T and P_A(g) = A A^T g are idempotent.
    const Tensor zeroA = Tensor::zeros({16, 4}), zeroB = Tensor::zeros({12, 4});
    const Tensor right = projected_direction(zeroA, p.B, g);
    const Tensor left = projected_direction(p.A, zeroB, g);
    EXPECT_LT(fro(axpy(projected_direction(zeroA, p.B, right), -1.0, right)), 1e-10);
    EXPECT_LT(fro(axpy(projected_direction(p.A, zeroB, left), -1.0, left)), 1e-10);
}

TEST(Projection, FullGradientMatchesFiniteDifferences) {
    for (LayerLoss loss : {LayerLoss::kQuadratic, LayerLoss::kLinear, LayerLoss::kCrossEntropy}) {
        ProbeSpec spec;
        spec.d_out = 6;
        spec.d_in = 5;
        spec.rank = 2;
        spec.batch = 4;
        spec.loss = loss;
        const ProjectionProbe p = make_probe(spec, 8);
        const Tensor g = full_gradient(p);
        const Tensor W = effective_weight(p);
        const double h = 1e-6;
        for (std::size_t i = 0; i < W.numel(); ++i) {
            std::vector<double> up(W.data().begin(), W.data().end()), dn = up;
            up[i] += h;
            dn[i] -= h;
            const double fd = (probe_loss(p, Tensor::from(W.shape(), up)).item() -
                               probe_loss(p, Tensor::from(W.shape(), dn)).item()) / (2 * h);
            EXPECT_NEAR(g.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << layer_loss_name(loss) << " " << i;
        }
    }
}

TEST(Projection, FirstOrderResidualDecays) {
    for (LayerLoss loss : {LayerLoss::kQuadratic, LayerLoss::kLinear, LayerLoss::kCrossEntropy}) {
        ProbeSpec spec;
        spec.loss = loss;
        const FirstOrderReport r = verify_first_order(make_probe(spec, 11), {1e-2, 5e-3, 2.5e-3});
        EXPECT_TRUE(r.passed) << layer_loss_name(loss);
        EXPECT_LE(r.max_ratio, 0.3);
        ASSERT_EQ(r.rows.size(), 3u);
        EXPECT_EQ(r.rows[0].ratio, 0.0);
    }
}

TEST(Projection, ZeroBInitMovesOnlyThroughAGradient) {
    ProbeSpec spec;
    spec.zero_B = true;
    const ProjectionProbe p = make_probe(spec, 2);
    // B = 0 leaves only the A A^T g term.
    const Tensor g = full_gradient(p);
    const Tensor d = projected_direction(p.A, p.B, g);
    const Tensor only_left = projected_direction(p.A, Tensor::zeros(p.B.shape()), g);
    EXPECT_EQ(fro(axpy(d, -1.0, only_left)), 0.0);
}

TEST(Projection, LayerKindsAndReferenceCounts) {
    const auto kinds = injected_layer_kinds(ModelConfig{});
    ASSERT_EQ(kinds.size(), 3u);
    EXPECT_EQ(kinds[1].d_out, 256u);
    const ReferenceArch m = mistral_7b();
    EXPECT_EQ(reference_param_count(m), 7241732096u);
    EXPECT_EQ(reference_lora_count(m, 16), 32505856u);
}

TEST(Matching, PrefersBestEpochInWindow) {
    const std::vector<TrajectoryPoint> full{{1, 0.2, 0.9}, {2, 0.48, 0.6}, {3, 0.52, 0.7}, {4, 0.9, 0.1}};
    const MatchedPoint p = match_on_usr(0, {0, 0.5, 0.8}, full);
    EXPECT_TRUE(p.matched && p.within_window);
    EXPECT_DOUBLE_EQ(p.full_gur, 0.7);
}

TEST(Matching, InterpolatesBetweenBracketingEpochs) {
    const std::vector<TrajectoryPoint> full{{1, 0.2, 0.9}, {2, 0.6, 0.5}};
    const MatchedPoint p = match_on_usr(0, {0, 0.4, 0.8}, full);
    EXPECT_TRUE(p.matched);
    EXPECT_FALSE(p.within_window);
    EXPECT_NEAR(p.full_gur, 0.7, 1e-12);
    EXPECT_FALSE(match_on_usr(0, {0, 0.95, 0.8}, full).matched);
}

TEST(Report, AggregateMeanAndSem) {
    const Aggregate a = aggregate({1.0, 2.0, 3.0});
    EXPECT_DOUBLE_EQ(a.mean, 2.0);
    EXPECT_NEAR(a.sem, 1.0 / std::sqrt(3.0), 1e-12);
    EXPECT_EQ(aggregate({0.5}).sem, 0.0);
}

TEST(Report, ManifestVerifyDetectsTampering) {
    const auto dir = std::filesystem::temp_directory_path() / "lune_manifest_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "a.txt") << "hello";
    RunManifest m;
    m.run_id = "x";
    m.kind = "test";
    m.add(dir, "a.txt", "data");
    m.write(dir);
    EXPECT_NO_THROW(RunManifest::read(dir).verify(dir));
    std::ofstream(dir / "a.txt") << "hellp";
    EXPECT_THROW(RunManifest::read(dir).verify(dir), IoError);
}

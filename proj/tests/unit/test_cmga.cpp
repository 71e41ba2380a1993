#include "doctest.h"

#include "mga/cmga.hpp"
#include "mga/error.hpp"
#include "mga/ops.hpp"

#include "../support/helpers.hpp"

#include <cmath>

using namespace mga;
using namespace mga::testing;

namespace {

EpisodeFeatures random_episode(std::size_t nk, std::size_t queries, Shape video, Rng& rng) {
    EpisodeFeatures ep;
    for (std::size_t i = 0; i < nk; ++i) {
        ep.support.push_back(randn(video, rng));
    }
    for (std::size_t i = 0; i < queries; ++i) {
        ep.query.push_back(randn(video, rng));
    }
    return ep;
}

} // namespace

TEST_SUITE("cmga") {

TEST_CASE("identity at initialisation") {
    ParameterStore st(1);
    CmgaParams p = CmgaParams::create(st, "c", 8, 2);
    CHECK(p.lambda1.item() == 0.0);
    CHECK(p.lambda2.item() == 0.0);
    Rng rng(1);
    EpisodeFeatures ep = random_episode(5, 3, {4, 8, 3, 3}, rng);
    for (CrossVariant v : {CrossVariant::FrameWise, CrossVariant::FrameAll}) {
        EpisodeFeatures out = cmga_forward(ep, p, v);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(bitwise_equal(out.support[i], ep.support[i]));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(bitwise_equal(out.query[i], ep.query[i]));
        }
    }
}

TEST_CASE("unit temporal gain with the identity filter doubles every video") {
    ParameterStore st(2);
    CmgaParams p = CmgaParams::create(st, "c", 4, 2);
    p.lambda2.mutable_data()[0] = 1.0;
    Rng rng(2);
    EpisodeFeatures ep = random_episode(2, 2, {3, 4, 2, 2}, rng);
    EpisodeFeatures out = cmga_forward(ep, p);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(bitwise_equal(out.query[i], ops::scale(ep.query[i], 2.0)));
        CHECK(bitwise_equal(out.support[i], ops::scale(ep.support[i], 2.0)));
    }
}

TEST_CASE("zero motion spreads attention evenly over the support set") {
    const std::size_t L = 3, HW = 4, NK = 5, dc = 2;
    PatchMotion q{Tensor::zeros({L, HW, dc}), Tensor::zeros({L, HW, dc})};
    PatchMotion s{Tensor::zeros({L, NK * HW, dc}), Tensor::zeros({L, NK * HW, dc})};
    CrossScore fw = cross_association_framewise(q, s, dc);
    REQUIRE(fw.scores.shape() == Shape{L, HW, NK * HW});
    for (double v : fw.scores.data()) {
        CHECK(v == doctest::Approx(1.0 / (NK * HW)).epsilon(1e-15));
    }
    CrossScore fa = cross_association_frameall(q, s, dc);
    REQUIRE(fa.scores.shape() == Shape{L * HW, L * NK * HW});
    for (double v : fa.scores.data()) {
        CHECK(v == doctest::Approx(1.0 / (L * NK * HW)).epsilon(1e-15));
    }
}

TEST_CASE("uniform attention adds the mean support value") {
    ParameterStore st(3);
    const std::size_t L = 2, D = 4, NK = 3;
    CmgaParams p = CmgaParams::create(st, "c", D, 2);
    p.lambda1.mutable_data()[0] = 1.0;
    Rng rng(3);
    EpisodeFeatures ep = random_episode(NK, 1, {L, D, 2, 2}, rng);
    Tensor values = support_values(ep.support, p);
    CrossScore c;
    c.scores = Tensor::full({L, 4, NK * 4}, 1.0 / (NK * 4));
    Tensor out = enhance_query(ep.query[0], c, values, p);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t d = 0; d < D; ++d) {
            double mean = 0.0;
            for (const Tensor& s : ep.support) {
                for (std::size_t i = 0; i < 4; ++i) {
                    mean += s.data()[(l * D + d) * 4 + i];
                }
            }
            mean /= NK * 4;
            for (std::size_t i = 0; i < 4; ++i) {
                const std::size_t at = (l * D + d) * 4 + i;
                CHECK(out.data()[at] == doctest::Approx(ep.query[0].data()[at] + mean).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("one patch against two support videos") {
    // HW = 1, NK = 2, Dc = 1, one frame
    PatchMotion q{Tensor::from({1, 1, 1}, {1.0}), Tensor::zeros({1, 1, 1})};
    PatchMotion s{Tensor::from({1, 2, 1}, {1.0, -1.0}), Tensor::zeros({1, 2, 1})};
    CrossScore c = cross_association_framewise(q, s, 1);
    const double e = std::exp(2.0);
    CHECK(c.backward_logits.to_vector() == std::vector<double>{1.0, -1.0});
    CHECK(c.scores.data()[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-15));
    CHECK(c.scores.data()[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-15));
}

TEST_CASE("patch axis covers every support patch") {
    ParameterStore st(4);
    CmgaParams p = CmgaParams::create(st, "c", 8, 4);
    Rng rng(4);
    EpisodeFeatures ep = random_episode(5, 1, {2, 8, 7, 7}, rng);
    PatchMotion sm = support_motion(ep.support, p);
    CHECK(sm.backward.shape() == Shape{2, 245, 2});
    std::vector<CrossScore> trace;
    cmga_forward(ep, p, CrossVariant::FrameWise, &trace);
    REQUIRE(trace.size() == 1);
    CHECK(trace[0].scores.shape() == Shape{2, 49, 245});

    // one-way one-shot degenerates to attention over a single video
    EpisodeFeatures single = random_episode(1, 1, {2, 8, 3, 3}, rng);
    cmga_forward(single, p, CrossVariant::FrameWise, &trace);
    CHECK(trace[0].scores.shape() == Shape{2, 9, 9});
}

TEST_CASE("support blocks follow episode order") {
    ParameterStore st(5);
    CmgaParams p = CmgaParams::create(st, "c", 3, 1);
    std::vector<Tensor> support;
    for (std::size_t k = 0; k < 4; ++k) {
        support.push_back(Tensor::full({2, 3, 2, 2}, static_cast<double>(k)));
    }
    Tensor values = support_values(support, p);
    REQUIRE(values.shape() == Shape{2, 16, 3});
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t j = 0; j < 16; ++j) {
            for (std::size_t d = 0; d < 3; ++d) {
                CHECK(values.at({l, j, d}) == static_cast<double>(j / 4));
            }
        }
    }
}

TEST_CASE("reordering the support set permutes score columns only") {
    ParameterStore st(6);
    const std::size_t L = 3, NK = 4, HW = 4;
    CmgaParams p = CmgaParams::create(st, "c", 8, 2);
    Rng rng(6);
    perturb(st, rng, 0.3);
    EpisodeFeatures ep = random_episode(NK, 2, {L, 8, 2, 2}, rng);
    const std::vector<std::size_t> order{2, 0, 3, 1};
    EpisodeFeatures shuffled = ep;
    for (std::size_t k = 0; k < NK; ++k) {
        shuffled.support[k] = ep.support[order[k]];
    }
    for (CrossVariant v : {CrossVariant::FrameWise, CrossVariant::FrameAll}) {
        std::vector<CrossScore> t0, t1;
        EpisodeFeatures a = cmga_forward(ep, p, v, &t0);
        EpisodeFeatures b = cmga_forward(shuffled, p, v, &t1);
        for (std::size_t q = 0; q < 2; ++q) {
            CHECK(max_abs_diff(a.query[q].data(), b.query[q].data()) < 1e-9);
        }
        if (v == CrossVariant::FrameWise) {
            double worst = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                for (std::size_t i = 0; i < HW; ++i) {
                    for (std::size_t k = 0; k < NK; ++k) {
                        for (std::size_t j = 0; j < HW; ++j) {
                            worst = std::max(worst, std::abs(t1[0].scores.at({l, i, k * HW + j}) -
                                                             t0[0].scores.at({l, i, order[k] * HW + j})));
                        }
                    }
                }
            }
            CHECK(worst < 1e-12);
        }
    }
}

TEST_CASE("frame-wise logits are the diagonal blocks of frame-all logits") {
    ParameterStore st(7);
    const std::size_t L = 4, HW = 4, NK = 3;
    CmgaParams p = CmgaParams::create(st, "c", 8, 2);
    Rng rng(7);
    perturb(st, rng, 0.3);
    EpisodeFeatures ep = random_episode(NK, 1, {L, 8, 2, 2}, rng);
    PatchMotion qm = video_motion(ep.query[0], p);
    PatchMotion sm = support_motion(ep.support, p);
    CrossScore fw = cross_association_framewise(qm, sm, 4);
    CrossScore fa = cross_association_frameall(qm, sm, 4);
    CHECK(fa.scores.numel() == L * fw.scores.numel());
    double worst = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < HW; ++i) {
            for (std::size_t j = 0; j < NK * HW; ++j) {
                const double a = fw.backward_logits.at({l, i, j}) + fw.forward_logits.at({l, i, j});
                const double b = fa.backward_logits.at({l * HW + i, l * NK * HW + j}) +
                                 fa.forward_logits.at({l * HW + i, l * NK * HW + j});
                worst = std::max(worst, std::abs(a - b));
            }
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("backbone-scale episode") {
    ParameterStore st(8);
    CmgaParams p = CmgaParams::create(st, "c", 2048, 8);
    Rng rng(8);
    EpisodeFeatures ep = random_episode(5, 1, {8, 2048, 7, 7}, rng);
    std::vector<CrossScore> trace;
    EpisodeFeatures out = cmga_forward(ep, p, CrossVariant::FrameWise, &trace);
    CHECK(out.query[0].shape() == Shape{8, 2048, 7, 7});
    CHECK(trace[0].scores.shape() == Shape{8, 49, 245});
}

TEST_CASE("mismatched inputs are rejected") {
    ParameterStore st(9);
    CmgaParams p = CmgaParams::create(st, "c", 4, 2);
    Rng rng(9);
    EpisodeFeatures ep = random_episode(2, 1, {3, 4, 2, 2}, rng);
    ep.support[1] = randn({3, 4, 3, 3}, rng);
    CHECK_THROWS_AS(cmga_forward(ep, p), ConfigError);
    CHECK_THROWS_AS(support_values({}, p), ConfigError);

    PatchMotion q{Tensor::zeros({3, 4, 2}), Tensor::zeros({3, 4, 2})};
    PatchMotion s{Tensor::zeros({2, 8, 2}), Tensor::zeros({2, 8, 2})};
    CHECK_THROWS_AS(cross_association_framewise(q, s, 2), UsageError);
    PatchMotion s3{Tensor::zeros({3, 8, 2}), Tensor::zeros({3, 8, 2})};
    CHECK_THROWS_AS(cross_association_frameall(q, s3, 3), UsageError);
    CHECK_NOTHROW(cross_association_frameall(q, s3, 2));
}

} // TEST_SUITE

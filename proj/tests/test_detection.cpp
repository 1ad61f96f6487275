#include <algorithm>
#include <random>

#include "doctest.h"
#include "mmdet/detection.hpp"
#include "test_util.hpp"

using namespace mmdet;
using mmdet::test::random_tensor;

namespace {

// Literal transcription of the threshold / split / vote / merge / extract
// procedure, written independently of the library implementation.
std::vector<ActionSegment> regression_oracle(const Tensor& scores, double theta, int q, const std::string& video) {
    const int T = scores.rows(), C = scores.cols();
    std::vector<std::vector<int>> bin(T, std::vector<int>(C));
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) bin[t][c] = scores.at(t, c) >= theta;

    std::vector<int> edges;
    for (int b = 0; b <= T; b += q) edges.push_back(std::min(b, T));
    if (edges.back() != T) edges.push_back(T);

    std::vector<ActionSegment> out;
    for (int c = 0; c < C; ++c) {
        const int nseg = static_cast<int>(edges.size()) - 1;
        std::vector<int> vote(nseg);
        for (int s = 0; s < nseg; ++s) {
            int ones = 0;
            for (int t = edges[s]; t < edges[s + 1]; ++t) ones += bin[t][c];
            vote[s] = ones >= (edges[s + 1] - edges[s]) / 2.0 ? 1 : 0;
        }
        int s = 0;
        while (s < nseg) {
            int r = s;
            while (r + 1 < nseg && vote[r + 1] == vote[s]) ++r;
            if (vote[s] == 1) {
                int delta = -1, eps = -1;
                for (int t = edges[s]; t < edges[r + 1]; ++t)
                    if (bin[t][c]) {
                        if (delta < 0) delta = t;
                        eps = t;
                    }
                if (delta >= 0) {
                    double sum = 0.0;
                    for (int t = delta; t <= eps; ++t) sum += scores.at(t, c);
                    out.push_back(ActionSegment{video, c, delta, eps, sum / (eps - delta + 1)});
                }
            }
            s = r + 1;
        }
    }
    return out;
}

ActionSegment seg(const std::string& v, int c, int s, int e, double score = 0.0) {
    return ActionSegment{v, c, s, e, score};
}

}  // namespace

TEST_CASE("threshold_scores basics") {
    Tensor s({2, 2});
    s.at(0, 0) = 0.4;
    s.at(0, 1) = 0.5;  // the >= branch fires at exactly theta
    s.at(1, 0) = 0.6;
    s.at(1, 1) = 0.1;
    auto b = threshold_scores(s, 0.5);
    CHECK(b[0][0] == 0);
    CHECK(b[0][1] == 1);
    CHECK(b[1][0] == 1);
    CHECK(b[1][1] == 0);

    CHECK_THROWS_AS(threshold_scores(s, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(threshold_scores(s, 1.0), std::invalid_argument);
}

TEST_CASE("raising the threshold never adds positives") {
    std::mt19937_64 rng(1);
    Tensor s = random_tensor({32, 4}, rng, 0.0, 1.0);
    int prev = 32 * 4 + 1;
    for (double theta : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        auto b = threshold_scores(s, theta);
        int ones = 0;
        for (const auto& row : b)
            for (int v : row) ones += v;
        CHECK(ones <= prev);
        prev = ones;
    }
}

TEST_CASE("regress_segments trivial inputs") {
    Tensor zero({16, 3});
    CHECK(regress_segments(zero, 0.5, 4).empty());

    Tensor full({16, 2});
    for (int t = 0; t < 16; ++t) full.at(t, 1) = 1.0;
    auto segs = regress_segments(full, 0.5, 4, "v");
    REQUIRE(segs.size() == 1);
    CHECK(segs[0] == seg("v", 1, 0, 15, 1.0));

    CHECK_THROWS_AS(regress_segments(full, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(regress_segments(full, 0.5, 17), std::invalid_argument);
}

TEST_CASE("regress_segments matches the transcription oracle on random matrices") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> td(4, 64), cd(1, 5);
    const int qs[] = {2, 4, 8};
    for (int rep = 0; rep < 100; ++rep) {
        const int T = td(rng), C = cd(rng), q = std::min(qs[rep % 3], T);
        Tensor s = random_tensor({T, C}, rng, 0.0, 1.0);
        auto got = regress_segments(s, 0.5, q, "vid");
        auto want = regression_oracle(s, 0.5, q, "vid");
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
    }
}

TEST_CASE("regress_segments output is per-class sorted and non-overlapping") {
    std::mt19937_64 rng(3);
    Tensor s = random_tensor({48, 3}, rng, 0.0, 1.0);
    auto segs = regress_segments(s, 0.5, 8);
    for (std::size_t i = 1; i < segs.size(); ++i) {
        if (segs[i].cls != segs[i - 1].cls) continue;
        CHECK(segs[i].start > segs[i - 1].end);
    }
    for (const auto& g : segs) CHECK(g.start <= g.end);
}

TEST_CASE("tiou hand values and symmetry") {
    CHECK(tiou(seg("v", 0, 3, 7), seg("v", 0, 3, 7)) == 1.0);
    CHECK(tiou(seg("v", 0, 0, 4), seg("v", 0, 10, 14)) == 0.0);
    // inclusive frames: 10 + 10 with 5 shared -> union 15
    CHECK(tiou(seg("v", 0, 0, 9), seg("v", 0, 5, 14)) == doctest::Approx(5.0 / 15.0).epsilon(1e-15));
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> d(0, 30);
    for (int i = 0; i < 20; ++i) {
        int a0 = d(rng), b0 = d(rng);
        ActionSegment a = seg("v", 0, a0, a0 + d(rng));
        ActionSegment b = seg("v", 0, b0, b0 + d(rng));
        CHECK(tiou(a, b) == tiou(b, a));
    }
}

TEST_CASE("evaluate_map hand-computed cases") {
    const std::vector<double> thr = {0.3, 0.4, 0.5, 0.6, 0.7};
    std::vector<ActionSegment> gt = {seg("a", 1, 0, 9), seg("a", 2, 20, 29), seg("b", 1, 5, 12)};

    SUBCASE("predictions identical to ground truth score perfect mAP") {
        std::vector<ActionSegment> pred = gt;
        for (auto& p : pred) p.score = 0.8;
        EvalReport r = evaluate_map(pred, gt, thr);
        for (const auto& t : r.per_threshold) CHECK(t.map == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.average_map == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("no predictions score zero") {
        EvalReport r = evaluate_map({}, gt, thr);
        CHECK(r.average_map == 0.0);
        for (const auto& t : r.per_threshold) CHECK(t.map == 0.0);
    }

    SUBCASE("high-ranked true positive dominates a low-ranked false positive") {
        std::vector<ActionSegment> one_gt = {seg("a", 1, 0, 9)};
        std::vector<ActionSegment> pred = {seg("a", 1, 0, 9, 0.9), seg("a", 1, 20, 29, 0.8)};
        EvalReport r = evaluate_map(pred, one_gt, {0.5});
        CHECK(r.per_threshold[0].ap_per_class.at(1) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("classes without ground truth are excluded and reported") {
    std::vector<ActionSegment> gt = {seg("a", 1, 0, 9)};
    std::vector<ActionSegment> pred = {seg("a", 1, 0, 9, 0.9), seg("a", 7, 0, 9, 0.9)};
    EvalReport r = evaluate_map(pred, gt, {0.5});
    REQUIRE(r.per_threshold.size() == 1);
    CHECK(r.per_threshold[0].ap_per_class.count(7) == 0);
    REQUIRE(r.per_threshold[0].skipped_classes.size() == 1);
    CHECK(r.per_threshold[0].skipped_classes[0] == 7);
    CHECK(r.per_threshold[0].map == doctest::Approx(1.0));
}

TEST_CASE("matching respects video identity") {
    std::vector<ActionSegment> gt = {seg("a", 1, 0, 9)};
    std::vector<ActionSegment> pred = {seg("b", 1, 0, 9, 0.9)};  // perfect span, wrong video
    EvalReport r = evaluate_map(pred, gt, {0.5});
    CHECK(r.per_threshold[0].map == 0.0);
}

TEST_CASE("evaluate_map is invariant to prediction order and positive rescaling") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> cd(0, 3), sd(0, 40), ld(1, 15), nd(1, 12);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const std::vector<double> thr = {0.3, 0.5, 0.7};
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<ActionSegment> gt, pred;
        const int ng = nd(rng), np = nd(rng);
        for (int i = 0; i < ng; ++i) {
            int s0 = sd(rng);
            gt.push_back(seg(i % 2 ? "a" : "b", cd(rng), s0, s0 + ld(rng)));
        }
        for (int i = 0; i < np; ++i) {
            int s0 = sd(rng);
            pred.push_back(seg(i % 2 ? "a" : "b", cd(rng), s0, s0 + ld(rng), ud(rng)));
        }
        EvalReport base = evaluate_map(pred, gt, thr);

        std::shuffle(pred.begin(), pred.end(), rng);
        EvalReport shuffled = evaluate_map(pred, gt, thr);
        CHECK(eval_report_json(shuffled) == eval_report_json(base));

        std::vector<ActionSegment> rescaled = pred;
        for (auto& p : rescaled) p.score = 3.0 * p.score + 0.25;
        EvalReport scaled = evaluate_map(rescaled, gt, thr);
        CHECK(scaled.average_map == base.average_map);
        for (std::size_t t = 0; t < thr.size(); ++t) CHECK(scaled.per_threshold[t].map == base.per_threshold[t].map);
    }
}

TEST_CASE("segments json round trip and score requirement") {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "mmdet_segments_test.json";
    std::vector<ActionSegment> segs = {seg("a", 1, 0, 9, 0.5), seg("b", 2, 3, 3, 0.25)};
    write_segments_json(segs, p, /*with_score=*/true);
    auto back = read_segments_json(p, /*require_score=*/true);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == segs[0]);
    CHECK(back[1] == segs[1]);

    write_segments_json(segs, p, /*with_score=*/false);
    CHECK_THROWS_WITH_AS(read_segments_json(p, true), doctest::Contains("score"), std::runtime_error);
    auto gt = read_segments_json(p, false);
    CHECK(gt[0].score == 0.0);
}

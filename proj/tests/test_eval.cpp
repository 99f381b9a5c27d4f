#include "doctest.h"

#include <cmath>

#include "attnseg/eval.hpp"
#include "attnseg/optimizer.hpp"
#include "helpers.hpp"

using namespace attnseg;
using namespace attnseg::test;

TEST_CASE("iou_per_class: exact, disjoint, hand-counted, absent classes") {
    LabelMask a = LabelMask::filled(4, 4, 0);
    a.at(0, 0) = 1;
    a.at(0, 1) = 1;
    std::vector<double> same = iou_per_class(a, a, 2);
    CHECK(same[0] == doctest::Approx(1.0));
    CHECK(same[1] == doctest::Approx(1.0));

    LabelMask b = LabelMask::filled(4, 4, 0);
    b.at(3, 3) = 1;
    // class 1: disjoint single pixels -> 0/3
    std::vector<double> dis = iou_per_class(a, b, 2);
    CHECK(dis[1] == doctest::Approx(0.0));

    // hand-counted 4x4 case
    LabelMask pred = LabelMask::filled(4, 4, 0);
    LabelMask gt = LabelMask::filled(4, 4, 0);
    for (int x = 0; x < 4; ++x) pred.at(0, x) = 1;  // top row predicted 1
    for (int y = 0; y < 2; ++y) gt.at(y, 0) = 1;    // left two pixels gt 1
    // class 1: inter 1, union 5; class 0: inter 11, union 15
    std::vector<double> r = iou_per_class(pred, gt, 3);
    CHECK(r[1] == doctest::Approx(1.0 / 5.0));
    CHECK(r[0] == doctest::Approx(11.0 / 15.0));
    CHECK(std::isnan(r[2]));  // class 2 absent everywhere

    CHECK(mean_iou(r) == doctest::Approx((1.0 / 5.0 + 11.0 / 15.0) / 2.0));
    CHECK(std::isnan(mean_iou({std::nan(""), std::nan("")})));
}

TEST_CASE("IoUAccumulator: dataset-level pooling differs from per-image averaging") {
    LabelMask p1 = LabelMask::filled(2, 2, 0);
    LabelMask g1 = LabelMask::filled(2, 2, 0);
    p1.at(0, 0) = 1;
    g1.at(0, 0) = 1;
    g1.at(0, 1) = 1;  // image 1: inter 1, union 2
    LabelMask p2 = LabelMask::filled(2, 2, 0);
    LabelMask g2 = LabelMask::filled(2, 2, 0);
    p2.at(1, 1) = 1;
    g2.at(1, 1) = 1;  // image 2: inter 1, union 1

    IoUAccumulator acc(2);
    acc.add(p1, g1);
    acc.add(p2, g2);
    std::vector<double> pooled = acc.result();
    CHECK(pooled[1] == doctest::Approx(2.0 / 3.0));  // (1+1)/(2+1), not (0.5+1)/2
    CHECK(acc.inter[1] == 2);
    CHECK(acc.uni[1] == 3);

    LabelMask wrong = LabelMask::filled(3, 3, 0);
    CHECK_THROWS_AS(acc.add(wrong, g1), EvalError);
    LabelMask high = LabelMask::filled(2, 2, 5);
    CHECK_THROWS_AS(acc.add(high, g1), EvalError);
}

TEST_CASE("evaluate: identical seeds give zero std; order invariance") {
    auto bb = make_backbone("toy");
    AnnotatedSample s1 = two_region_sample();
    AnnotatedSample s2 = two_region_sample();
    s2.id = "two_region_b";
    PromptEmbeddings emb = bb->encode_prompt("part part", 2);
    emb.class_names = s1.class_names;
    InferenceConfig cfg;

    EvalReport rep = evaluate(emb, {s1, s2}, *bb, cfg, {3, 3, 3});
    CHECK(rep.seeds.size() == 3);
    CHECK(rep.per_seed_average[0] == rep.per_seed_average[1]);
    CHECK(rep.average_std == doctest::Approx(0.0));
    for (double sd : rep.per_class_std) CHECK(sd == doctest::Approx(0.0));

    // dataset pooling is order-invariant
    EvalReport fwd = evaluate(emb, {s1, s2}, *bb, cfg, {3});
    EvalReport rev = evaluate(emb, {s2, s1}, *bb, cfg, {3});
    CHECK(fwd.per_seed_class[0] == rev.per_seed_class[0]);
    CHECK(fwd.average_mean == rev.average_mean);

    // single seed: no std reported as zero
    CHECK(fwd.average_std == doctest::Approx(0.0));
}

TEST_CASE("evaluate: distinct seeds and population std") {
    auto bb = make_backbone("toy");
    AnnotatedSample s = two_region_sample();
    PromptEmbeddings emb = bb->encode_prompt("part part", 2);
    emb.class_names = s.class_names;
    EvalReport rep = evaluate(emb, {s}, *bb, InferenceConfig{}, {0, 1, 2});
    REQUIRE(rep.per_seed_average.size() == 3);
    double mean = 0;
    for (double v : rep.per_seed_average) mean += v;
    mean /= 3.0;
    CHECK(rep.average_mean == doctest::Approx(mean));
    double var = 0;
    for (double v : rep.per_seed_average) var += (v - mean) * (v - mean);
    CHECK(rep.average_std == doctest::Approx(std::sqrt(var / 3.0)));
}

TEST_CASE("emit_table: column order and round-trip of the csv form") {
    EvalReport r;
    r.label = "toy";
    r.seeds = {0, 1};
    r.class_names = {"Background", "Body", "Wheel"};
    r.per_class_mean = {0.5, 0.75, 0.25};
    r.per_class_std = {0.0, 0.01, 0.02};
    r.average_mean = 0.5;
    r.average_std = 0.015;

    std::string csv = emit_table({r}, "csv");
    // parts first, background next, Average last
    const size_t body = csv.find("Body");
    const size_t wheel = csv.find("Wheel");
    const size_t bg = csv.find("Background");
    const size_t avg = csv.find("Average");
    REQUIRE(body != std::string::npos);
    CHECK(body < wheel);
    CHECK(wheel < bg);
    CHECK(bg < avg);
    CHECK(csv.find("0.75") != std::string::npos);

    std::string md = emit_table({r}, "markdown");
    CHECK(md.find("| toy ") != std::string::npos);
    CHECK(md.find("0.7500") != std::string::npos);
    CHECK(md.find("±") != std::string::npos);

    CHECK_THROWS_AS(emit_table({r}, "latex"), EvalError);
}

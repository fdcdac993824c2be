#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "duet/rng.hpp"

using duet::Philox4x32;

// Random123 known-answer vector: Philox4x32-10, counter 0, key 0.
TEST(Philox, KnownAnswerZeroKey) {
    Philox4x32 r(0, 0);
    EXPECT_EQ(r(), 0x6627e8d5e169c58dull);
    EXPECT_EQ(r(), 0xbc57ac4c9b00dbd8ull);
}

TEST(Philox, SameKeyAndStreamReproduce) {
    Philox4x32 a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
}

TEST(Philox, StreamsDiffer) {
    Philox4x32 a(42, 1), b(42, 2);
    int equal = 0;
    for (int i = 0; i < 100; ++i) equal += a() == b();
    EXPECT_EQ(equal, 0);
}

TEST(Philox, UniformMoments) {
    Philox4x32 r(1, 1);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(Philox, NormalMoments) {
    Philox4x32 r(2, 1);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Philox, GammaMeanAndVariance) {
    // Gamma(a, 1) has mean a and variance a.
    for (double shape : {0.5, 1.0, 2.3}) {
        Philox4x32 r(3, 1);
        const int n = 200000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double g = r.gamma(shape);
            ASSERT_GT(g, 0.0);
            sum += g;
            sq += g * g;
        }
        const double mean = sum / n;
        EXPECT_NEAR(mean, shape, 0.02 * std::max(1.0, shape)) << shape;
        EXPECT_NEAR(sq / n - mean * mean, shape, 0.05 * std::max(1.0, shape)) << shape;
    }
}

TEST(Philox, BelowIsInRangeAndCoversIt) {
    Philox4x32 r(4, 1);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const auto v = r.below(5);
        ASSERT_LT(v, 5u);
        ++hits[v];
    }
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Hashing, NameHashIsFnv1a) {
    // FNV-1a 64 of the empty string is the offset basis; of "a" a published value.
    EXPECT_EQ(duet::hash_name(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(duet::hash_name("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Hashing, CombineIsOrderSensitive) {
    EXPECT_NE(duet::combine(1, 2), duet::combine(2, 1));
    EXPECT_EQ(duet::combine(1, 2), duet::combine(1, 2));
}

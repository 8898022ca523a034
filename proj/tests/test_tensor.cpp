#include <gtest/gtest.h>

#include <numeric>

#include "coconv/geometry.hpp"
#include "coconv/tensor.hpp"
#include "test_support.hpp"

using namespace coconv;

TEST(TensorCreate, ZeroFill) {
    const auto t = Tensor<double>::zeros(Shape4{1, 1, 2, 2});
    ASSERT_EQ(t.size(), 4);
    for (index_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.data()[i], 0.0);
}

TEST(TensorCreate, OnesSum) {
    const auto t = Tensor<float>::ones(Shape4{2, 3, 4, 4});
    ASSERT_EQ(t.size(), 96);
    const double sum = std::accumulate(t.data(), t.data() + t.size(), 0.0);
    EXPECT_EQ(sum, 96.0);
}

TEST(TensorCreate, SeededUniformIsReproducible) {
    const auto a = Tensor<double>::uniform(Shape4{1, 2, 3, 3}, 7);
    const auto b = Tensor<double>::uniform(Shape4{1, 2, 3, 3}, 7);
    EXPECT_TRUE(a == b);
    const auto c = Tensor<double>::uniform(Shape4{1, 2, 3, 3}, 8);
    EXPECT_FALSE(a == c);
}

TEST(TensorCreate, RejectsNonPositiveDims) {
    EXPECT_THROW(Tensor<double>(Shape4{0, 1, 2, 2}), ShapeError);
    EXPECT_THROW(Tensor<double>(Shape4{1, -1, 2, 2}), ShapeError);
    EXPECT_THROW(Tensor<double>(Shape4{1, 1, 0, 2}), ShapeError);
}

TEST(TensorAccess, RowMajorLayout) {
    const auto t = Tensor<double>::arange(Shape4{2, 3, 2, 2});
    EXPECT_EQ(t(0, 0, 0, 0), 0.0);
    EXPECT_EQ(t(0, 0, 0, 1), 1.0);
    EXPECT_EQ(t(0, 1, 0, 0), 4.0);
    EXPECT_EQ(t(1, 0, 0, 0), 12.0);
    EXPECT_THROW(t.at(2, 0, 0, 0), ShapeError);
}

TEST(ConvOutputShape, Table1Stem) {
    ConvGeometry g;
    g.in_channels = 3;
    g.out_channels = 64;
    g.kernel_h = g.kernel_w = 7;
    g.stride = 2;
    g.padding = 3;
    const SpatialSize out = conv_output_shape(SpatialSize{224, 224}, g);
    EXPECT_EQ(out.h, 112);
    EXPECT_EQ(out.w, 112);
}

TEST(ConvOutputShape, PaddingOffsetsDilation) {
    ConvGeometry g;
    g.in_channels = g.out_channels = 1;
    g.kernel_h = g.kernel_w = 3;
    g.stride = 1;
    g.padding = 4;
    g.dilation = 4;
    const SpatialSize out = conv_output_shape(SpatialSize{56, 56}, g);
    EXPECT_EQ(out.h, 56);
    EXPECT_EQ(out.w, 56);
}

TEST(ConvOutputShape, StridedPoolGeometry) {
    ConvGeometry g;
    g.in_channels = g.out_channels = 64;
    g.kernel_h = g.kernel_w = 3;
    g.stride = 2;
    g.padding = 1;
    const SpatialSize out = conv_output_shape(SpatialSize{112, 112}, g);
    EXPECT_EQ(out.h, 56);
    EXPECT_EQ(out.w, 56);
}

TEST(ConvOutputShape, RejectsOversizedKernel) {
    ConvGeometry g;
    g.in_channels = g.out_channels = 1;
    g.kernel_h = g.kernel_w = 5;
    g.dilation = 3;  // extent 13 > 4 + 2*2
    g.padding = 2;
    EXPECT_THROW(conv_output_shape(SpatialSize{4, 4}, g), GeometryError);
}

// Same-padding keeps the spatial size for any input at stride 1 and odd K.
TEST(ConvOutputShape, SamePaddingProperty) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const index_t h = 1 + static_cast<index_t>(rng() % 40);
        const index_t w = 1 + static_cast<index_t>(rng() % 40);
        const index_t k = 2 * static_cast<index_t>(rng() % 4) + 1;
        ConvGeometry g;
        g.in_channels = g.out_channels = 1;
        g.kernel_h = g.kernel_w = k;
        g.stride = 1;
        g.padding = (k - 1) / 2;
        const SpatialSize out = conv_output_shape(SpatialSize{h, w}, g);
        EXPECT_EQ(out.h, h);
        EXPECT_EQ(out.w, w);
    }
}

TEST(ConcatChannels, FourEqualParts) {
    std::vector<Tensor<double>> parts;
    for (int i = 0; i < 4; ++i)
        parts.push_back(Tensor<double>::full(Shape4{1, 16, 5, 5}, static_cast<double>(i)));
    const auto cat = concat_channels(parts);
    EXPECT_EQ(cat.shape(), (Shape4{1, 64, 5, 5}));
    EXPECT_EQ(cat(0, 0, 0, 0), 0.0);
    EXPECT_EQ(cat(0, 16, 0, 0), 1.0);
    EXPECT_EQ(cat(0, 63, 4, 4), 3.0);
}

TEST(ConcatChannels, SinglePartIsIdentity) {
    const auto t = coconv::testing::random_tensor(Shape4{2, 5, 3, 4}, 3);
    const auto cat = concat_channels(std::vector<Tensor<double>>{t});
    EXPECT_TRUE(cat == t);
}

TEST(ConcatChannels, Stage2Blocks) {
    std::vector<Tensor<double>> parts;
    parts.push_back(Tensor<double>::zeros(Shape4{1, 64, 28, 28}));
    parts.push_back(Tensor<double>::zeros(Shape4{1, 32, 28, 28}));
    parts.push_back(Tensor<double>::zeros(Shape4{1, 32, 28, 28}));
    const auto cat = concat_channels(parts);
    EXPECT_EQ(cat.shape(), (Shape4{1, 128, 28, 28}));
}

TEST(ConcatChannels, RejectsMismatchedDims) {
    std::vector<Tensor<double>> parts;
    parts.push_back(Tensor<double>::zeros(Shape4{1, 4, 5, 5}));
    parts.push_back(Tensor<double>::zeros(Shape4{1, 4, 6, 5}));
    EXPECT_THROW(concat_channels(parts), ShapeError);
    parts[1] = Tensor<double>::zeros(Shape4{2, 4, 5, 5});
    EXPECT_THROW(concat_channels(parts), ShapeError);
}

// Splitting at the recorded offsets reproduces the parts bit-exactly.
TEST(ConcatChannels, SplitRoundTripProperty) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const index_t n = 1 + static_cast<index_t>(rng() % 3);
        const index_t h = 1 + static_cast<index_t>(rng() % 6);
        const index_t w = 1 + static_cast<index_t>(rng() % 6);
        const std::size_t count = 1 + rng() % 4;
        std::vector<Tensor<double>> parts;
        std::vector<index_t> sizes;
        for (std::size_t i = 0; i < count; ++i) {
            const index_t c = 1 + static_cast<index_t>(rng() % 7);
            sizes.push_back(c);
            parts.push_back(coconv::testing::random_tensor(Shape4{n, c, h, w}, rng()));
        }
        const auto cat = concat_channels(parts);
        const auto back = split_channels(cat, sizes);
        ASSERT_EQ(back.size(), parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_TRUE(back[i] == parts[i]);
    }
}

TEST(SplitChannels, RejectsBadSizes) {
    const auto t = Tensor<double>::zeros(Shape4{1, 8, 2, 2});
    EXPECT_THROW(split_channels(t, {4, 3}), ShapeError);
    EXPECT_THROW(split_channels(t, {8, 0}), ShapeError);
}

TEST(Reshape, PreservesDataAndChecksCount) {
    const auto t = Tensor<double>::arange(Shape4{1, 8, 1, 1});
    const auto r = t.reshaped(Shape4{1, 2, 2, 2});
    EXPECT_EQ(r(0, 1, 1, 1), 7.0);
    EXPECT_THROW(t.reshaped(Shape4{1, 3, 2, 2}), ShapeError);
}

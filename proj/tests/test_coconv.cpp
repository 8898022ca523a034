#include <gtest/gtest.h>

#include <random>

#include "coconv/coconv.hpp"
#include "coconv/cost.hpp"
#include "test_support.hpp"

using namespace coconv;
using coconv::testing::central_diff;
using coconv::testing::max_abs_diff;
using coconv::testing::random_tensor;
using coconv::testing::rel_err;
using coconv::testing::weighted_sum;

namespace {

// Table-1 stage-1 layout: 64 -> 4 levels of 16 at dilations 1..4.
CoConvSpec stage1_spec(index_t stride = 1) {
    return CoConvSpec::same_padded(64, 3, stride,
                                   {{1, 16}, {2, 16}, {3, 16}, {4, 16}});
}

std::vector<Tensor<double>> random_level_weights(const CoConvSpec& spec, std::uint64_t seed) {
    std::vector<Tensor<double>> weights;
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        weights.push_back(random_tensor(
            Shape4{spec.levels[i].out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
            seed + i));
    }
    return weights;
}

}  // namespace

TEST(CoConvSpec, ValidatesLevels) {
    EXPECT_THROW(CoConvSpec::same_padded(8, 3, 1, {}), ConfigError);
    EXPECT_THROW(CoConvSpec::same_padded(8, 3, 1, {{2, 4}, {1, 4}}), ConfigError);
    EXPECT_THROW(CoConvSpec::same_padded(8, 3, 1, {{1, 0}}), ConfigError);
    // Equal dilations are the degenerate configuration and stay legal.
    EXPECT_NO_THROW(CoConvSpec::same_padded(8, 3, 1, {{1, 4}, {1, 4}}));
}

TEST(CoConvSpec, RejectsMismatchedLevelOutputSizes) {
    CoConvSpec spec;
    spec.in_channels = 8;
    spec.kernel_h = spec.kernel_w = 3;
    spec.stride = 1;
    spec.levels = {{1, 4}, {2, 4}};
    spec.paddings = {1, 1};  // level 1 would shrink relative to level 0
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(CoConvForward, SingleLevelEqualsStandardConv) {
    const auto spec = CoConvSpec::same_padded(8, 3, 1, {{1, 12}});
    const auto x = random_tensor(Shape4{2, 8, 6, 6}, 1);
    const auto w = random_level_weights(spec, 2);
    const auto ours = coconv_forward(x, w, nullptr, spec);
    const auto plain = conv2d_forward(x, w[0], nullptr, spec.level_geometry(0));
    EXPECT_TRUE(ours == plain);
}

// All-d=1 levels concatenated equal one conv with the stacked kernel bank.
TEST(CoConvForward, DegenerateLevelsMatchStackedConvBitExactly) {
    CoConvSpec spec;
    spec.in_channels = 8;
    spec.kernel_h = spec.kernel_w = 3;
    spec.stride = 1;
    spec.levels = {{1, 16}, {1, 16}, {1, 16}, {1, 16}};
    spec.paddings = {1, 1, 1, 1};
    spec.validate();

    const auto x = random_tensor(Shape4{2, 8, 7, 7}, 3);
    const auto w = random_level_weights(spec, 4);
    const auto ours = coconv_forward(x, w, nullptr, spec);

    Tensor<double> stacked(Shape4{64, 8, 3, 3});
    index_t off = 0;
    for (const auto& lw : w) {
        std::copy(lw.data(), lw.data() + lw.size(), stacked.data() + off);
        off += lw.size();
    }
    const auto plain =
        conv2d_forward(x, stacked, nullptr, ConvGeometry{8, 64, 3, 3, 1, 1, 1, false});
    EXPECT_TRUE(ours == plain);
}

// Each 16-channel block must equal the standalone dilated conv computed by
// the independent oracle.
TEST(CoConvForward, Stage1BlocksMatchOraclePerLevel) {
    const auto spec = stage1_spec();
    const auto x = random_tensor(Shape4{1, 64, 56, 56}, 5);
    const auto w = random_level_weights(spec, 6);
    const auto y = coconv_forward(x, w, nullptr, spec);
    ASSERT_EQ(y.shape(), (Shape4{1, 64, 56, 56}));

    const auto blocks = split_channels(y, spec.level_sizes());
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const auto ref = conv2d_reference(x, w[i], nullptr, spec.level_geometry(i));
        EXPECT_LT(max_abs_diff(blocks[i], ref), 1e-10) << "level " << i;
    }
}

TEST(CoConvForward, RejectsChannelMismatch) {
    const auto spec = CoConvSpec::same_padded(8, 3, 1, {{1, 4}, {2, 4}});
    const auto x = random_tensor(Shape4{1, 7, 6, 6}, 7);
    EXPECT_THROW(coconv_forward(x, random_level_weights(spec, 8), nullptr, spec), ShapeError);
}

TEST(CoConvBackward, ZeroUpstreamGivesZeroGrads) {
    const auto spec = CoConvSpec::same_padded(4, 3, 1, {{1, 2}, {2, 3}});
    const auto x = random_tensor(Shape4{1, 4, 5, 5}, 9);
    const auto w = random_level_weights(spec, 10);
    const auto grads = coconv_backward(x, w, spec, Tensor<double>::zeros(Shape4{1, 5, 5, 5}));
    EXPECT_EQ(max_abs_diff(grads.input, Tensor<double>::zeros(x.shape())), 0.0);
    for (const auto& gw : grads.level_weights)
        EXPECT_EQ(max_abs_diff(gw, Tensor<double>::zeros(gw.shape())), 0.0);
}

TEST(CoConvBackward, SingleLevelMatchesConvBackward) {
    const auto spec = CoConvSpec::same_padded(6, 3, 2, {{1, 4}});
    const auto x = random_tensor(Shape4{2, 6, 9, 9}, 11);
    const auto w = random_level_weights(spec, 12);
    const auto upstream = random_tensor(Shape4{2, 4, 5, 5}, 13);
    const auto ours = coconv_backward(x, w, spec, upstream);
    const auto plain = conv2d_backward(x, w[0], spec.level_geometry(0), upstream);
    EXPECT_TRUE(ours.input == plain.input);
    EXPECT_TRUE(ours.level_weights[0] == plain.weights);
}

TEST(CoConvBackward, FiniteDifferenceThreeLevels) {
    const auto spec = CoConvSpec::same_padded(8, 3, 1, {{1, 3}, {2, 3}, {3, 2}}, true);
    auto x = random_tensor(Shape4{1, 8, 9, 9}, 14);
    auto w = random_level_weights(spec, 15);
    std::vector<double> bias(8);
    std::mt19937_64 brng(16);
    for (auto& b : bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(brng);
    const auto r = random_tensor(Shape4{1, 8, 9, 9}, 17);

    const auto loss = [&] { return weighted_sum(coconv_forward(x, w, &bias, spec), r); };
    const auto grads = coconv_backward(x, w, spec, r);

    std::mt19937_64 rng(18);
    double worst = 0.0;
    for (int s = 0; s < 10; ++s) {
        double* coord = x.data() + rng() % static_cast<std::uint64_t>(x.size());
        worst = std::max(worst,
                         rel_err(grads.input.data()[coord - x.data()], central_diff(loss, coord)));
    }
    for (std::size_t level = 0; level < w.size(); ++level) {
        for (int s = 0; s < 6; ++s) {
            double* coord =
                w[level].data() + rng() % static_cast<std::uint64_t>(w[level].size());
            worst = std::max(worst, rel_err(grads.level_weights[level].data()[coord - w[level].data()],
                                            central_diff(loss, coord)));
        }
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(CostModel, StandardConvCounts) {
    const ConvGeometry g{64, 64, 3, 3, 1, 1, 1, false};
    const auto r = count_conv_cost(g, SpatialSize{56, 56});
    EXPECT_EQ(r.params, 36864);
    EXPECT_EQ(r.flops, 115605504);
}

TEST(CostModel, PointwiseConvCounts) {
    const ConvGeometry g{64, 256, 1, 1, 1, 0, 1, false};
    const auto r = count_conv_cost(g, SpatialSize{56, 56});
    EXPECT_EQ(r.params, 16384);
    EXPECT_EQ(r.flops, 51380224);
}

TEST(CostModel, Stage1SpecMatchesStandardConvParams) {
    const auto r = count_coconv_cost(stage1_spec(), SpatialSize{56, 56});
    EXPECT_EQ(r.params, 36864);
    EXPECT_EQ(r.breakdown.size(), 4u);
    index_t params = 0, flops = 0;
    for (const auto& e : r.breakdown) {
        params += e.params;
        flops += e.flops;
    }
    EXPECT_EQ(params, r.params);
    EXPECT_EQ(flops, r.flops);
}

TEST(CostModel, Stage2SpecCounts) {
    const auto spec = CoConvSpec::same_padded(128, 3, 1, {{1, 64}, {2, 32}, {3, 32}});
    const auto r = count_coconv_cost(spec, SpatialSize{28, 28});
    EXPECT_EQ(r.params, 147456);
    EXPECT_EQ(r.flops, 115605504);
}

TEST(CostModel, GeneratorRowSplitKeepsUnsplitCost) {
    const auto spec = CoConvSpec::same_padded(512, 3, 1, {{1, 172}, {2, 170}, {3, 170}});
    const auto r = count_coconv_cost(spec, SpatialSize{16, 16});
    EXPECT_EQ(r.params, index_t{512} * 9 * 512);
    EXPECT_EQ(r.params, 2359296);
}

TEST(BudgetParity, Stage1AgainstReferenceConv) {
    const ConvGeometry ref{64, 64, 3, 3, 1, 1, 1, false};
    EXPECT_TRUE(check_budget_parity(stage1_spec(), ref, SpatialSize{56, 56}));
}

TEST(BudgetParity, MismatchedTotalsAreAnError) {
    const auto spec = CoConvSpec::same_padded(64, 3, 1, {{1, 16}, {2, 16}, {3, 16}, {4, 15}});
    const ConvGeometry ref{64, 64, 3, 3, 1, 1, 1, false};
    EXPECT_THROW(check_budget_parity(spec, ref, SpatialSize{56, 56}), ComparisonError);
}

TEST(BudgetParity, IdentityCase) {
    const auto spec = CoConvSpec::same_padded(32, 3, 1, {{1, 32}});
    const ConvGeometry ref{32, 32, 3, 3, 1, 1, 1, false};
    EXPECT_TRUE(check_budget_parity(spec, ref, SpatialSize{10, 10}));
}

// Cost never depends on the dilation ladder: for any valid spec, replacing
// the ladder leaves the report unchanged.
TEST(BudgetParity, DilationInvarianceProperty) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const index_t in = 1 + static_cast<index_t>(rng() % 64);
        const index_t k = (rng() % 2) ? 3 : 1;
        const std::size_t n_levels = 1 + rng() % 4;
        std::vector<CoConvLevel> levels, mutated;
        index_t d = 0, dm = 0;
        for (std::size_t i = 0; i < n_levels; ++i) {
            const index_t out = 1 + static_cast<index_t>(rng() % 32);
            d += 1 + static_cast<index_t>(rng() % 3);
            dm += 1 + static_cast<index_t>(rng() % 5);
            levels.push_back({d, out});
            mutated.push_back({dm, out});
        }
        const auto a = CoConvSpec::same_padded(in, k, 1, levels);
        const auto b = CoConvSpec::same_padded(in, k, 1, mutated);
        const SpatialSize out{1 + static_cast<index_t>(rng() % 32),
                              1 + static_cast<index_t>(rng() % 32)};
        const auto ra = count_coconv_cost(a, out);
        const auto rb = count_coconv_cost(b, out);
        EXPECT_EQ(ra.params, rb.params);
        EXPECT_EQ(ra.flops, rb.flops);

        const ConvGeometry ref{in, a.out_channels(), k, k, 1, same_padding(k, 1), 1, false};
        EXPECT_TRUE(check_budget_parity(a, ref, out));
    }
}

// Levels can be computed in any order; outputs only depend on concat order.
TEST(CoConvProperties, LevelIndependence) {
    const auto spec = stage1_spec();
    const auto x = random_tensor(Shape4{1, 64, 10, 10}, 91);
    const auto w = random_level_weights(spec, 92);

    std::vector<Tensor<double>> parts(spec.levels.size());
    for (std::size_t i = spec.levels.size(); i-- > 0;) {
        parts[i] = conv2d_forward(x, w[i], nullptr, spec.level_geometry(i));
    }
    EXPECT_TRUE(concat_channels(parts) == coconv_forward(x, w, nullptr, spec));
}

TEST(CoConvProperties, StridedLevelsShareOutputSize) {
    const auto spec = stage1_spec(2);
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const auto out = conv_output_shape(SpatialSize{56, 56}, spec.level_geometry(i));
        EXPECT_EQ(out.h, 28);
        EXPECT_EQ(out.w, 28);
    }
}

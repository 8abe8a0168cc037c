#include "prunekit/errors.hpp"
#include "prunekit/model.hpp"

#include "support/builders.hpp"
#include "support/reference_forward.hpp"

#include <doctest.h>

#include <cmath>

using namespace prunekit;

TEST_SUITE("model") {

TEST_CASE("config invariants") {
    CHECK_THROWS_AS(ModelConfig::uniform(1, 8, 3, 2, 4, 16, 32), ValidationError); // 3 % 2 != 0
    CHECK_THROWS_AS(ModelConfig::uniform(0, 8, 4, 2, 4, 16, 32), ValidationError);
    CHECK_THROWS_AS(ModelConfig::uniform(1, 8, 4, 2, 4, 16, 32, 0.0f), ValidationError);
    CHECK_NOTHROW(testing::toy_config().validate());
}

TEST_CASE("residual passthrough with zero module weights") {
    WeightStore w = random_init(testing::toy_config(), 17);
    for (auto& layer : w.layers) testing::zero_module_weights(layer);
    const auto tokens = testing::random_tokens(1, 5, w.config.vocab_size);
    const auto result = forward(w, tokens, true);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        const auto& tl = result.trace->layers[l];
        CHECK(tl.output == tl.input); // bit-exact: modules contribute exact zeros
    }
}

TEST_CASE("single-token attention equals the V projection") {
    const WeightStore w = random_init(testing::toy_config(), 5);
    const std::vector<std::int32_t> tokens{7};
    const auto result = forward(w, tokens, true);
    const auto& tl = result.trace->layers[0];
    // With one position the softmax weight is 1, so head j output is the
    // group's V projection of the normalized token.
    const Tensor2D v = matmul(tl.pre_attn_norm, w.layers[0].w_v);
    const std::size_t dh = w.config.head_dim;
    const std::size_t hpg = w.config.heads_per_group(0);
    for (std::size_t j = 0; j < w.config.num_heads[0]; ++j) {
        const std::size_t g = j / hpg;
        for (std::size_t t = 0; t < dh; ++t) {
            CHECK(tl.head_outputs.at(0, j * dh + t) ==
                  doctest::Approx(v.at(0, g * dh + t)).epsilon(1e-6));
        }
    }
}

TEST_CASE("logits match the straight-line reference forward") {
    const WeightStore w = random_init(testing::toy_config(), 23);
    const auto tokens = testing::random_tokens(9, 7, w.config.vocab_size);
    const auto result = forward(w, tokens);
    const auto ref = testing::refwd::reference_logits(w, tokens);
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        double diff = 0.0, scale = 0.0;
        for (std::size_t c = 0; c < w.config.vocab_size; ++c) {
            diff = std::max(diff, std::abs(ref[s][c] - result.logits.at(s, c)));
            scale = std::max(scale, std::abs(ref[s][c]));
        }
        CHECK(diff / scale < 1e-5);
    }
}

TEST_CASE("reference agreement holds without post-norms") {
    ModelConfig config = testing::toy_config();
    config.postnorm_attn.assign(config.num_layers, false);
    config.postnorm_ffn[0] = false;
    WeightStore w = random_init(config, 31);
    const auto tokens = testing::random_tokens(2, 6, config.vocab_size);
    const auto result = forward(w, tokens);
    const auto ref = testing::refwd::reference_logits(w, tokens);
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        for (std::size_t c = 0; c < config.vocab_size; ++c) {
            CHECK(result.logits.at(s, c) == doctest::Approx(ref[s][c]).epsilon(1e-5));
        }
    }
}

TEST_CASE("forward rejects out-of-vocab tokens") {
    const WeightStore w = random_init(testing::toy_config(), 1);
    const std::vector<std::int32_t> bad{0, 32};
    CHECK_THROWS_AS(forward(w, bad), ValidationError);
    CHECK_THROWS_AS(forward(w, std::vector<std::int32_t>{}), ValidationError);
}

TEST_CASE("forward is deterministic") {
    const WeightStore w = random_init(testing::toy_config(), 2);
    const auto tokens = testing::random_tokens(4, 12, w.config.vocab_size);
    const auto a = forward(w, tokens);
    const auto b = forward(w, tokens);
    CHECK(a.logits == b.logits);
}

TEST_CASE("trace populates every hook site") {
    const WeightStore w = random_init(testing::toy_config(), 3);
    const auto tokens = testing::random_tokens(6, 5, w.config.vocab_size);
    const auto result = forward(w, tokens, true);
    REQUIRE(result.trace.has_value());
    const std::size_t S = tokens.size();
    const std::size_t d = w.config.hidden_dim;
    REQUIRE(result.trace->layers.size() == w.config.num_layers);
    for (std::size_t l = 0; l < w.config.num_layers; ++l) {
        const auto& tl = result.trace->layers[l];
        CHECK(tl.input.rows() == S);
        CHECK(tl.pre_attn_norm.rows() == S);
        CHECK(tl.head_outputs.cols() == w.config.num_heads[l] * w.config.head_dim);
        CHECK(tl.attn_module_out.cols() == d);
        CHECK(tl.post_attn_norm.rows() == S);
        CHECK(tl.pre_ffn_norm.rows() == S);
        CHECK(tl.ffn_intermediate.cols() == w.config.ffn_dim[l]);
        CHECK(tl.ffn_module_out.cols() == d);
        CHECK(tl.post_ffn_norm.rows() == S);
        CHECK(tl.output.rows() == S);
    }
    CHECK(result.trace->final_norm.rows() == S);
}

TEST_CASE("random_init is deterministic per seed with unit gammas") {
    const ModelConfig config = testing::toy_config();
    const WeightStore a = random_init(config, 42);
    const WeightStore b = random_init(config, 42);
    const WeightStore c = random_init(config, 43);
    CHECK(a == b);
    CHECK(a.embedding != c.embedding);
    for (const auto& layer : a.layers) {
        for (float g : layer.pre_attn_gamma) CHECK(g == 1.0f);
        for (float g : layer.post_attn_gamma) CHECK(g == 1.0f);
    }
    for (float g : a.final_gamma) CHECK(g == 1.0f);
}

} // TEST_SUITE

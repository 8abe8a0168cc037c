#include "prunekit/checkpoint.hpp"
#include "prunekit/errors.hpp"

#include "support/builders.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace prunekit;

TEST_SUITE("checkpoint") {

TEST_CASE("save then load round-trips byte-identically") {
    testing::TempDir dir;
    const WeightStore w = random_init(testing::toy_config(), 99);
    const std::string first = dir.file("a.pgl");
    const std::string second = dir.file("b.pgl");
    save_checkpoint(w, first);
    const WeightStore loaded = load_checkpoint(first);
    CHECK(loaded == w);
    save_checkpoint(loaded, second);
    CHECK(testing::read_bytes(first) == testing::read_bytes(second));
}

TEST_CASE("shape mismatch between header and config names the tensor") {
    testing::TempDir dir;
    WeightStore w = random_init(ModelConfig::uniform(1, 8, 2, 1, 4, 8, 16), 1);
    w.layers[0].pre_attn_gamma.resize(7); // d=8 declared, 7 entries stored
    const std::string path = dir.file("bad.pgl");
    CHECK_THROWS_AS(save_checkpoint(w, path), ShapeError); // save validates too

    // Forge the file instead: write a valid store, then corrupt the manifest.
    WeightStore good = random_init(ModelConfig::uniform(1, 8, 2, 1, 4, 8, 16), 1);
    save_checkpoint(good, path);
    std::string bytes = testing::read_bytes(path);
    const std::string needle =
        "{\"name\":\"layers.0.pre_attn_gamma\",\"offset\":512,\"shape\":[8]}";
    const auto pos = bytes.find(needle);
    REQUIRE(pos != std::string::npos);
    std::string forged = needle;
    forged.replace(forged.find("[8]"), 3, "[7]");
    bytes.replace(pos, needle.size(), forged);
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("layers.0.pre_attn_gamma"), ShapeError);
}

TEST_CASE("non-finite values are rejected with tensor and flat index") {
    testing::TempDir dir;
    WeightStore w = random_init(testing::toy_config(), 7);
    const std::string path = dir.file("nan.pgl");
    save_checkpoint(w, path);
    // Poke a NaN into the payload at w_q[17] of layer 0.
    std::string bytes = testing::read_bytes(path);
    const auto sep = bytes.find("\n\0", 0, 2);
    REQUIRE(sep != std::string::npos);
    // Payload order: embedding (32x8), 4 gammas (8 each), then w_q.
    const std::size_t flat = (32 * 8 + 4 * 8 + 17) * 4;
    const std::size_t at = sep + 2 + flat;
    bytes[at] = '\x01';
    bytes[at + 1] = '\x00';
    bytes[at + 2] = '\x80';
    bytes[at + 3] = '\x7f'; // 0x7f800001 = NaN
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         "load_checkpoint: tensor 'layers.0.w_q' contains a non-finite value at "
                         "flat index 17",
                         NumericError);
}

TEST_CASE("malformed header is a load error") {
    testing::TempDir dir;
    const std::string path = dir.file("garbage.pgl");
    std::ofstream(path, std::ios::binary) << "{not json\n";
    CHECK_THROWS_AS(load_checkpoint(path), IoError); // no separator
    std::ofstream(path, std::ios::binary | std::ios::trunc).write("{oops}\n\0payload", 15);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.pgl")), IoError);
}

TEST_CASE("heterogeneous configs round-trip") {
    ModelConfig config = testing::toy_config_l4();
    config.num_heads[1] = 2;
    config.num_groups[1] = 1;
    config.ffn_dim[2] = 12;
    config.postnorm_attn[3] = false;
    config.postnorm_ffn[0] = false;
    WeightStore w = random_init(config, 13);
    testing::TempDir dir;
    save_checkpoint(w, dir.file("het.pgl"));
    CHECK(load_checkpoint(dir.file("het.pgl")) == w);
}

} // TEST_SUITE

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "padapt/checkpoint.hpp"
#include "padapt/rng.hpp"

using namespace padapt;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "padapt-ckpt-tests";
    std::filesystem::create_directories(dir);
    return dir;
}

Checkpoint sample_checkpoint() {
    Checkpoint ckpt;
    ckpt.add_meta("kind", "sample");
    ckpt.add_meta("note", "value with spaces");
    Rng rng(21);
    Tensor a({3, 4});
    for (double& v : a.values()) {
        v = rng.normal(0.0, 2.0);
    }
    Tensor b({5}, {0.0, -0.0, 1e-300, -1.5, 3.0});
    ckpt.add_tensor("layer.weight", a);
    ckpt.add_tensor("layer.bias", b);
    return ckpt;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact including re-serialization") {
    const Checkpoint original = sample_checkpoint();
    const std::string bytes = serialize_checkpoint(original);
    const Checkpoint parsed = parse_checkpoint(bytes);

    REQUIRE(parsed.tensors.size() == original.tensors.size());
    for (std::size_t t = 0; t < original.tensors.size(); ++t) {
        CHECK(parsed.tensors[t].first == original.tensors[t].first);
        const Tensor& x = original.tensors[t].second;
        const Tensor& y = parsed.tensors[t].second;
        REQUIRE(x.same_shape(y));
        CHECK(std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) == 0);
    }
    CHECK(parsed.meta_value("note") == "value with spaces");

    // save -> load -> save produces identical bytes
    CHECK(serialize_checkpoint(parsed) == bytes);
}

TEST_CASE("checkpoint file io") {
    const auto path = temp_dir() / "roundtrip.ckpt";
    const Checkpoint original = sample_checkpoint();
    write_checkpoint_file(path, original);
    const Checkpoint loaded = read_checkpoint_file(path);
    CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(original));
    CHECK(file_checksum_hex(path) == fnv1a64_hex(serialize_checkpoint(original)));
}

TEST_CASE("truncated checkpoint is rejected with a structured error") {
    const std::string bytes = serialize_checkpoint(sample_checkpoint());
    const std::string truncated = bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(parse_checkpoint(truncated, "trunc"), IoError);
    try {
        parse_checkpoint(truncated, "trunc");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("trunc") != std::string::npos);
    }
}

TEST_CASE("corrupted payload fails the checksum") {
    std::string bytes = serialize_checkpoint(sample_checkpoint());
    const std::size_t pos = bytes.find("layer.bias");
    REQUIRE(pos != std::string::npos);
    bytes[pos] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bytes), IoError);
}

TEST_CASE("missing files raise missing-artifact errors") {
    CHECK_THROWS_AS(read_checkpoint_file(temp_dir() / "does-not-exist.ckpt"), MissingArtifactError);
}

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "padapt/bench.hpp"
#include "padapt/checkpoint.hpp"
#include "padapt/classifier.hpp"
#include "padapt/data.hpp"

using namespace padapt;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "padapt-classifier-tests";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("default architecture propagates shapes") {
    const Classifier big = Classifier::build_default(10, {3, 32, 32}, 7);
    const Prediction p10 = big.predict(Tensor({4, 3, 32, 32}));
    CHECK(p10.probs.shape() == Shape{4, 10});

    const Classifier small = Classifier::build_default(2, {1, 16, 16}, 7);
    const Prediction p2 = small.predict(Tensor({3, 1, 16, 16}));
    CHECK(p2.probs.shape() == Shape{3, 2});

    CHECK_THROWS_AS(Classifier::build_default(1, {3, 32, 32}, 7), ConfigError);
}

TEST_CASE("default 3x32x32 C=10 model has the hand-computed parameter count") {
    const Classifier model = Classifier::build_default(10, {3, 32, 32}, 7);
    // conv1 8*3*3*3+8, conv2 16*8*3*3+16, fc1 64*4096+64, fc2 10*64+10
    CHECK(model.parameter_count() == 264250);
}

TEST_CASE("zero input yields uniform probabilities (biases start at zero)") {
    const Classifier model = Classifier::build_default(10, {3, 32, 32}, 7);
    const Prediction pred = model.predict(Tensor({2, 3, 32, 32}));
    for (const double c : pred.confidence) {
        CHECK(c == 1.0 / 10);
    }
}

TEST_CASE("predict returns per-sample confidences and normalized rows") {
    const Classifier model = Classifier::build_default(10, {3, 32, 32}, 3);
    GlyphDataset data = generate_glyphs(100, 10, 5);
    const Prediction pred = model.predict(data.images);
    CHECK(pred.confidence.size() == 100);
    CHECK(pred.predicted.size() == 100);
    for (int b = 0; b < 100; ++b) {
        double sum = 0.0;
        for (int c = 0; c < 10; ++c) {
            sum += pred.probs[b * 10 + c];
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }

    CHECK_THROWS_AS(model.predict(Tensor({2, 3, 16, 16})), ShapeError);
}

TEST_CASE("predict is a pure function of weights and input") {
    const Classifier model = Classifier::build_default(4, {1, 16, 16}, 11);
    GlyphDataset data = generate_glyphs(20, 4, 9, {1, 16, 16});
    const Prediction a = model.predict(data.images);
    const Prediction b = model.predict(data.images);
    CHECK(std::memcmp(a.probs.data(), b.probs.data(),
                      static_cast<std::size_t>(a.probs.size()) * sizeof(double)) == 0);
}

TEST_CASE("train_source reduces the loss and is seed-deterministic") {
    GlyphDataset data = generate_glyphs(120, 3, 13, {1, 16, 16});
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.05;
    cfg.batch_size = 30;
    cfg.seed = 5;

    Classifier m1 = Classifier::build_default(3, {1, 16, 16}, 5);
    const std::vector<double> curve1 = m1.train_source(data.images, data.labels, cfg);
    REQUIRE(curve1.size() == 3);
    CHECK(curve1.back() < curve1.front());

    Classifier m2 = Classifier::build_default(3, {1, 16, 16}, 5);
    const std::vector<double> curve2 = m2.train_source(data.images, data.labels, cfg);
    for (std::size_t i = 0; i < curve1.size(); ++i) {
        CHECK(curve1[i] == curve2[i]);
    }
    CHECK(m1.weight_checksum() == m2.weight_checksum());
}

TEST_CASE("train_source with lr 0 leaves the loss curve constant") {
    GlyphDataset data = generate_glyphs(60, 3, 13, {1, 16, 16});
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.0;
    cfg.batch_size = 30;
    Classifier model = Classifier::build_default(3, {1, 16, 16}, 5);
    const std::uint64_t before = model.weight_checksum();
    const std::vector<double> curve = model.train_source(data.images, data.labels, cfg);
    CHECK(model.weight_checksum() == before);
    // Weights never move; epoch means differ only by summation order.
    CHECK(curve[1] == doctest::Approx(curve[0]).epsilon(1e-12));
    CHECK(curve[2] == doctest::Approx(curve[0]).epsilon(1e-12));
}

TEST_CASE("train_source rejects bad inputs") {
    Classifier model = Classifier::build_default(3, {1, 16, 16}, 5);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS(model.train_source(Tensor({1, 1, 16, 16}), std::vector<int>{7}, cfg));
    GlyphDataset data = generate_glyphs(10, 3, 13, {1, 16, 16});
    model.freeze();
    CHECK_THROWS_AS(model.train_source(data.images, data.labels, cfg), std::logic_error);
}

TEST_CASE("freezing stops gradients at the parameters") {
    Classifier model = Classifier::build_default(3, {1, 16, 16}, 5);
    GlyphDataset data = generate_glyphs(6, 3, 13, {1, 16, 16});
    model.freeze();

    const Prediction before = model.predict(data.images);

    Tape tape;
    const NodeId in = tape.leaf(data.images, true);
    const Classifier::ForwardNodes fwd = model.forward_logits(tape, in, true);  // arming is ignored
    const NodeId loss = tape.soft_cross_entropy(tape.leaf(one_hot(data.labels, 3)),
                                                tape.log_softmax(fwd.logits));
    const GradientMap grads = tape.backward(loss);
    CHECK(grads.size() == 1);  // the input leaf only
    CHECK(grads.contains(in));
    for (const NodeId param : fwd.params) {
        CHECK_FALSE(grads.contains(param));
    }

    const Prediction after = model.predict(data.images);
    CHECK(std::memcmp(before.probs.data(), after.probs.data(),
                      static_cast<std::size_t>(before.probs.size()) * sizeof(double)) == 0);
}

TEST_CASE("classifier checkpoint round trip preserves bytes and predictions") {
    GlyphDataset data = generate_glyphs(40, 3, 13, {1, 16, 16});
    Classifier model = Classifier::build_default(3, {1, 16, 16}, 5);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 20;
    model.train_source(data.images, data.labels, cfg);
    model.freeze();

    const auto path_a = temp_dir() / "model_a.ckpt";
    const auto path_b = temp_dir() / "model_b.ckpt";
    model.save(path_a);
    const Classifier loaded = Classifier::load(path_a);
    loaded.save(path_b);
    CHECK(read_file_bytes(path_a) == read_file_bytes(path_b));
    CHECK(loaded.frozen());
    CHECK(loaded.weight_checksum() == model.weight_checksum());

    const Prediction original = model.predict(data.images);
    const Prediction reloaded = loaded.predict(data.images);
    CHECK(std::memcmp(original.probs.data(), reloaded.probs.data(),
                      static_cast<std::size_t>(original.probs.size()) * sizeof(double)) == 0);
}

TEST_CASE("loading a truncated checkpoint fails cleanly") {
    Classifier model = Classifier::build_default(3, {1, 16, 16}, 5);
    const auto path = temp_dir() / "truncated.ckpt";
    model.save(path);
    std::string bytes = read_file_bytes(path);
    bytes.resize(bytes.size() / 3);
    write_text_file(path, bytes);
    CHECK_THROWS_AS(Classifier::load(path), IoError);
}

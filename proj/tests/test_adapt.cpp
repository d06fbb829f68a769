#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "padapt/adapt.hpp"
#include "padapt/bench.hpp"

using namespace padapt;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

// Small trained frozen model + data shared by the loop tests.
struct Fixture {
    Classifier model;
    GlyphDataset train;
    GlyphDataset test;

    Fixture() : model(Classifier::build_default(4, {1, 16, 16}, 19)) {
        GlyphDataset all = generate_glyphs(360, 4, 19, {1, 16, 16});
        train = all.subset(0, 300);
        test = all.subset(300, 60);
        TrainConfig tc;
        tc.epochs = 6;
        tc.batch_size = 50;
        tc.seed = 19;
        model.train_source(train.images, train.labels, tc);
        model.freeze();
    }
};

const Fixture& fixture() {
    static const Fixture fx;
    return fx;
}

AdaptConfig small_config() {
    AdaptConfig cfg;
    cfg.batch_size = 20;
    cfg.prompt_size = 4;
    cfg.warmup_epochs = 0;
    cfg.ema_momentum = 0.9;
    cfg.seed = 5;
    return cfg;
}

DomainStream small_stream(int batch = 20) {
    Schedule schedule;
    schedule.kind = ScheduleKind::kStandard;
    schedule.families = {CorruptionFamily::kBrightness, CorruptionFamily::kGaussianNoise,
                         CorruptionFamily::kContrast};
    schedule.severity = 4;
    return build_stream(fixture().test, schedule, batch, 77);
}

}  // namespace

TEST_CASE("identity augmentation is bit exact") {
    const Tensor& images = fixture().test.images;
    Rng rng(1);
    const Tensor out = augment(images, AugmentPolicy::identity(), rng);
    CHECK(same_bits(out, images));
}

TEST_CASE("augmentation is deterministic for a fixed seed") {
    const Tensor images = fixture().test.subset(0, 10).images;
    AugmentPolicy policy;
    Rng a(9);
    Rng b(9);
    CHECK(same_bits(augment(images, policy, a), augment(images, policy, b)));
}

TEST_CASE("horizontal flip is an involution and augment uses it") {
    const Tensor images = fixture().test.subset(0, 6).images;
    CHECK(same_bits(flip_horizontal(flip_horizontal(images)), images));

    // Flip-only augmentation yields, per image, either that image or its
    // mirror; with p=0.5 both outcomes appear in six draws almost surely.
    AugmentPolicy policy = AugmentPolicy::identity();
    policy.flip = true;
    Rng rng(3);
    const Tensor out = augment(images, policy, rng);
    const Tensor mirrored = flip_horizontal(images);
    const int chw = 16 * 16;
    bool saw_flip = false, saw_keep = false;
    for (int i = 0; i < 6; ++i) {
        const bool kept =
            std::memcmp(out.data() + i * chw, images.data() + i * chw, chw * sizeof(double)) == 0;
        const bool flipped =
            std::memcmp(out.data() + i * chw, mirrored.data() + i * chw, chw * sizeof(double)) == 0;
        CHECK((kept || flipped));
        saw_flip = saw_flip || flipped;
        saw_keep = saw_keep || kept;
    }
    CHECK(saw_flip);
    CHECK(saw_keep);
}

TEST_CASE("ema update arithmetic") {
    PromptPair teacher = make_zero_prompts(1, 2, 2);
    PromptPair student = make_zero_prompts(1, 2, 2);
    student.dsp.values.fill(1.0);
    student.dap.values.fill(1.0);

    ema_update(teacher, student, 0.9);
    CHECK(teacher.dsp.values[0] == doctest::Approx(0.1).epsilon(1e-15));

    PromptPair teacher2 = make_zero_prompts(1, 2, 2);
    ema_update(teacher2, student, 0.999);
    CHECK(teacher2.dsp.values[0] == doctest::Approx(0.001).epsilon(1e-12));

    // Fixed point: teacher == student stays put.
    PromptPair fixed = make_zero_prompts(1, 2, 2);
    fixed.dsp.values.fill(1.0);
    fixed.dap.values.fill(1.0);
    ema_update(fixed, student, 0.75);
    CHECK(fixed.dsp.values[0] == 1.0);

    // Geometric approach to a constant student: the gap shrinks by m per step.
    PromptPair geo = make_zero_prompts(1, 2, 2);
    const double m = 0.9;
    for (int k = 1; k <= 20; ++k) {
        ema_update(geo, student, m);
        CHECK(geo.dsp.values[0] == doctest::Approx(1.0 - std::pow(m, k)).epsilon(1e-12));
    }

    PromptPair wrong_shape = make_zero_prompts(1, 3, 3);
    CHECK_THROWS_AS(ema_update(wrong_shape, student, 0.9), ShapeError);
}

TEST_CASE("adapt_batch keeps the EMA law within 1e-15 every step") {
    const Fixture& fx = fixture();
    AdaptState state = AdaptState::init(small_config(), fx.model.geometry());
    const DomainStream stream = small_stream();
    for (int b = 0; b < 6; ++b) {
        const PromptPair teacher_prev = state.teacher;
        adapt_batch(state, fx.model, stream.batches[static_cast<std::size_t>(b)].images);
        const double m = state.cfg.ema_momentum;
        for (std::int64_t i = 0; i < state.teacher.dsp.values.size(); ++i) {
            const double want = m * teacher_prev.dsp.values[i] + (1 - m) * state.student.dsp.values[i];
            CHECK(std::abs(state.teacher.dsp.values[i] - want) <= 1e-15);
        }
        for (std::int64_t i = 0; i < state.teacher.dap.values.size(); ++i) {
            const double want = m * teacher_prev.dap.values[i] + (1 - m) * state.student.dap.values[i];
            CHECK(std::abs(state.teacher.dap.values[i] - want) <= 1e-15);
        }
    }
}

TEST_CASE("zero learning rate leaves prompts and predictions frozen") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.prompt_lr = 0.0;
    const DomainStream stream = small_stream();

    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const BatchResult first = adapt_batch(state, fx.model, stream.batches[0].images);
    for (std::int64_t i = 0; i < state.student.dsp.values.size(); ++i) {
        CHECK(state.student.dsp.values[i] == 0.0);
        CHECK(state.student.dap.values[i] == 0.0);
    }
    for (int b = 1; b < 3; ++b) {
        adapt_batch(state, fx.model, stream.batches[static_cast<std::size_t>(b)].images);
    }
    // Replaying batch 0 through a fresh state reproduces the predictions.
    AdaptState replay = AdaptState::init(cfg, fx.model.geometry());
    const BatchResult again = adapt_batch(replay, fx.model, stream.batches[0].images);
    CHECK(same_bits(first.probs, again.probs));
}

TEST_CASE("momentum zero makes the teacher equal the student") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.ema_momentum = 0.0;
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const DomainStream stream = small_stream();
    for (int b = 0; b < 3; ++b) {
        adapt_batch(state, fx.model, stream.batches[static_cast<std::size_t>(b)].images);
        CHECK(same_bits(state.teacher.dsp.values, state.student.dsp.values));
        CHECK(same_bits(state.teacher.dap.values, state.student.dap.values));
    }
}

TEST_CASE("alpha zero with shared support keeps DSP and DAP identical") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.alpha = 0.0;
    cfg.relative_offset = 0;  // same support
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const DomainStream stream = small_stream();
    for (const StreamBatch& batch : stream.batches) {
        const BatchResult res = adapt_batch(state, fx.model, batch.images);
        CHECK(same_bits(state.student.dsp.values, state.student.dap.values));
        CHECK(res.loss_penalty == 0.0);
        CHECK(res.loss_dap == res.loss_dsp);
    }
}

TEST_CASE("overall loss decomposes additively") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.alpha = 2.5;
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const DomainStream stream = small_stream();
    for (int b = 0; b < 5; ++b) {
        const BatchResult res =
            adapt_batch(state, fx.model, stream.batches[static_cast<std::size_t>(b)].images);
        CHECK(res.loss_dap == res.loss_dsp + res.loss_penalty);
        const double overall = res.loss_dsp + res.loss_dap;
        CHECK(overall == doctest::Approx(2.0 * res.loss_dsp + res.loss_penalty).epsilon(1e-15));
    }
}

TEST_CASE("frozen model weights never move during a stream") {
    const Fixture& fx = fixture();
    const std::uint64_t before = fx.model.weight_checksum();
    AdaptState state = AdaptState::init(small_config(), fx.model.geometry());
    run_stream(state, fx.model, small_stream());
    CHECK(fx.model.weight_checksum() == before);
}

TEST_CASE("evaluation for batch t depends only on state after t-1") {
    const Fixture& fx = fixture();
    const DomainStream stream = small_stream();
    AdaptState full = AdaptState::init(small_config(), fx.model.geometry());
    const MetricsLog log = run_stream(full, fx.model, stream);

    const std::size_t t = 4;
    AdaptState partial = AdaptState::init(small_config(), fx.model.geometry());
    for (std::size_t b = 0; b < t; ++b) {
        adapt_batch(partial, fx.model, stream.batches[b].images);
    }
    const BatchResult at_t = adapt_batch(partial, fx.model, stream.batches[t].images);
    CHECK(fraction_wrong(at_t.predicted, stream.batches[t].labels) == log.rows[t].batch_error);
}

TEST_CASE("run_stream with zero prompts and lr zero equals the plain evaluation") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.prompt_lr = 0.0;
    cfg.disable_dsp = true;
    cfg.disable_dap = true;
    const DomainStream stream = small_stream();
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const MetricsLog log = run_stream(state, fx.model, stream);
    const std::vector<double> plain = evaluate_stream(fx.model, stream);
    REQUIRE(log.rows.size() == plain.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(log.rows[i].batch_error == plain[i]);
    }
}

TEST_CASE("identical seeds give identical metrics") {
    const Fixture& fx = fixture();
    const DomainStream stream = small_stream();
    AdaptState a = AdaptState::init(small_config(), fx.model.geometry());
    AdaptState b = AdaptState::init(small_config(), fx.model.geometry());
    const MetricsLog la = run_stream(a, fx.model, stream);
    const MetricsLog lb = run_stream(b, fx.model, stream);
    REQUIRE(la.rows.size() == lb.rows.size());
    for (std::size_t i = 0; i < la.rows.size(); ++i) {
        CHECK(la.rows[i].batch_error == lb.rows[i].batch_error);
        CHECK(la.rows[i].confidence == lb.rows[i].confidence);
        CHECK(la.rows[i].loss_dsp == lb.rows[i].loss_dsp);
        CHECK(la.rows[i].loss_dap == lb.rows[i].loss_dap);
    }
}

TEST_CASE("non-finite inputs abort with the step index") {
    const Fixture& fx = fixture();
    AdaptState state = AdaptState::init(small_config(), fx.model.geometry());
    Tensor poisoned({20, 1, 16, 16});
    poisoned.fill(std::numeric_limits<double>::quiet_NaN());
    try {
        adapt_batch(state, fx.model, poisoned);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("geometry mismatches are rejected") {
    const Fixture& fx = fixture();
    AdaptState state = AdaptState::init(small_config(), fx.model.geometry());
    CHECK_THROWS_AS(adapt_batch(state, fx.model, Tensor({4, 3, 32, 32})), ShapeError);
}

TEST_CASE("disabled prompts stay at zero while the other one trains") {
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    cfg.disable_dap = true;
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    const DomainStream stream = small_stream();
    for (int b = 0; b < 4; ++b) {
        adapt_batch(state, fx.model, stream.batches[static_cast<std::size_t>(b)].images);
    }
    bool dsp_moved = false;
    for (std::int64_t i = 0; i < state.student.dsp.values.size(); ++i) {
        dsp_moved = dsp_moved || state.student.dsp.values[i] != 0.0;
        CHECK(state.student.dap.values[i] == 0.0);
    }
    CHECK(dsp_moved);
}

TEST_CASE("shift consolidation fires through the adaptation loop") {
    // Alternating mild and crushing domains force confidence jumps.
    const Fixture& fx = fixture();
    AdaptConfig cfg = small_config();
    AdaptState state = AdaptState::init(cfg, fx.model.geometry());
    Schedule schedule;
    schedule.kind = ScheduleKind::kStandard;
    schedule.families = {CorruptionFamily::kBrightness, CorruptionFamily::kPixelate,
                         CorruptionFamily::kBrightness, CorruptionFamily::kPixelate};
    schedule.severity = 5;
    const DomainStream stream = build_stream(fixture().test, schedule, 20, 3);
    const MetricsLog log = run_stream(state, fx.model, stream);
    CHECK(log.events.size() >= 1);
    CHECK(state.importance.domain_index == static_cast<int>(log.events.size()));
    for (const ShiftEvent& event : log.events) {
        CHECK(std::abs(event.delta_conf) > cfg.shift_threshold);
    }
}

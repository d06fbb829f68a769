#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "padapt/data.hpp"

using namespace padapt;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

double mean_l2_distortion(const Tensor& clean, const Tensor& corrupted) {
    double total = 0.0;
    for (std::int64_t i = 0; i < clean.size(); ++i) {
        const double d = clean[i] - corrupted[i];
        total += d * d;
    }
    return std::sqrt(total / static_cast<double>(clean.size()));
}

}  // namespace

TEST_CASE("glyph datasets are balanced, bounded and reproducible") {
    const GlyphDataset a = generate_glyphs(1000, 10, 7);
    const GlyphDataset b = generate_glyphs(1000, 10, 7);
    CHECK(same_bits(a.images, b.images));
    CHECK(a.labels == b.labels);

    std::map<int, int> counts;
    for (const int label : a.labels) {
        ++counts[label];
    }
    REQUIRE(counts.size() == 10);
    for (const auto& [label, count] : counts) {
        CHECK(count == 100);
    }
    for (std::int64_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
    }

    const GlyphDataset c = generate_glyphs(1000, 10, 8);
    CHECK_FALSE(same_bits(a.images, c.images));

    CHECK_THROWS_AS(generate_glyphs(5, 10, 7), ConfigError);
}

TEST_CASE("uneven sample counts stay balanced within one") {
    const GlyphDataset ds = generate_glyphs(103, 10, 3);
    std::map<int, int> counts;
    for (const int label : ds.labels) {
        ++counts[label];
    }
    int lo = 1 << 30, hi = 0;
    for (const auto& [label, count] : counts) {
        lo = std::min(lo, count);
        hi = std::max(hi, count);
    }
    CHECK(hi - lo <= 1);
}

TEST_CASE("class templates differ pairwise on at least 10% of pixels by 0.2") {
    const InputGeometry geom{3, 32, 32};
    for (int a = 0; a < 10; ++a) {
        for (int b = a + 1; b < 10; ++b) {
            const Tensor ta = glyph_template(a, geom);
            const Tensor tb = glyph_template(b, geom);
            std::int64_t changed = 0;
            for (std::int64_t i = 0; i < ta.size(); ++i) {
                if (std::abs(ta[i] - tb[i]) >= 0.2) {
                    ++changed;
                }
            }
            const double fraction = static_cast<double>(changed) / static_cast<double>(ta.size());
            CHECK_MESSAGE(fraction >= 0.10, "templates ", a, " and ", b, " differ on only ",
                          fraction * 100.0, "% of pixels");
        }
    }
}

TEST_CASE("severity zero is the identity for every family") {
    const GlyphDataset ds = generate_glyphs(20, 10, 7);
    for (const CorruptionFamily family : all_corruption_families()) {
        const Tensor out = corrupt(ds.images, {family, 0, 99});
        CHECK(same_bits(out, ds.images));
    }
}

TEST_CASE("corruption is deterministic for a fixed seed") {
    const GlyphDataset ds = generate_glyphs(10, 10, 7);
    for (const CorruptionFamily family : all_corruption_families()) {
        const Tensor a = corrupt(ds.images, {family, 3, 42});
        const Tensor b = corrupt(ds.images, {family, 3, 42});
        CHECK(same_bits(a, b));
    }
}

TEST_CASE("corrupted pixels stay inside [0,1]") {
    const GlyphDataset ds = generate_glyphs(25, 10, 7);
    for (const CorruptionFamily family : all_corruption_families()) {
        for (int severity = 1; severity <= 5; ++severity) {
            const Tensor out = corrupt(ds.images, {family, severity, 11});
            for (std::int64_t i = 0; i < out.size(); ++i) {
                CHECK(out[i] >= 0.0);
                CHECK(out[i] <= 1.0);
            }
        }
    }
}

TEST_CASE("gaussian noise members match the sigma table on a constant image") {
    // 100 mid-gray images give ~300k samples of pure noise per severity.
    Tensor base({100, 3, 32, 32});
    base.fill(0.5);
    for (int severity = 1; severity <= 5; ++severity) {
        const Tensor noisy = corrupt(base, {CorruptionFamily::kGaussianNoise, severity, 5});
        double sq = 0.0;
        for (std::int64_t i = 0; i < noisy.size(); ++i) {
            const double d = noisy[i] - 0.5;
            sq += d * d;
        }
        const double std_dev = std::sqrt(sq / static_cast<double>(noisy.size()));
        CHECK(std_dev == doctest::Approx(gaussian_sigma(severity)).epsilon(0.05));
    }
}

TEST_CASE("noise families get strictly stronger with severity") {
    const GlyphDataset ds = generate_glyphs(100, 10, 7);
    for (const CorruptionFamily family :
         {CorruptionFamily::kGaussianNoise, CorruptionFamily::kShotNoise,
          CorruptionFamily::kImpulseNoise}) {
        double previous = 0.0;
        for (int severity = 1; severity <= 5; ++severity) {
            const Tensor out = corrupt(ds.images, {family, severity, 17});
            const double distortion = mean_l2_distortion(ds.images, out);
            CHECK_MESSAGE(distortion > previous, family_name(family), " severity ", severity);
            previous = distortion;
        }
    }
}

TEST_CASE("contrast is not idempotent") {
    const GlyphDataset ds = generate_glyphs(10, 10, 7);
    const CorruptionSpec spec{CorruptionFamily::kContrast, 5, 3};
    const Tensor once = corrupt(ds.images, spec);
    const Tensor twice = corrupt(once, spec);
    CHECK_FALSE(same_bits(once, twice));
}

TEST_CASE("unknown family names are rejected") {
    CHECK_THROWS_AS(parse_family("speckle"), ConfigError);
    CHECK(parse_family("fog") == CorruptionFamily::kFog);
}

TEST_CASE("standard stream has the expected segments and batches") {
    const GlyphDataset test = generate_glyphs(1000, 10, 7);
    Schedule schedule;
    schedule.kind = ScheduleKind::kStandard;
    schedule.families = all_corruption_families();
    schedule.severity = 4;
    const DomainStream stream = build_stream(test, schedule, 100, 7);
    CHECK(stream.batches.size() == 100);
    CHECK(stream.domain_count == 10);
    int transitions = 0;
    for (std::size_t i = 1; i < stream.batches.size(); ++i) {
        if (stream.batches[i].domain_index != stream.batches[i - 1].domain_index) {
            ++transitions;
        }
    }
    CHECK(transitions == 9);
}

TEST_CASE("gradual schedule walks severities 1..5..1 per family") {
    Schedule schedule;
    schedule.kind = ScheduleKind::kGradual;
    schedule.families = {CorruptionFamily::kFog};
    const std::vector<ScheduleEntry> entries = schedule.expand();
    REQUIRE(entries.size() == 9);
    const int expected[9] = {1, 2, 3, 4, 5, 4, 3, 2, 1};
    for (int i = 0; i < 9; ++i) {
        CHECK(entries[static_cast<std::size_t>(i)].severity == expected[i]);
    }
}

TEST_CASE("rounds schedule repeats the domain list with round tags") {
    Schedule schedule;
    schedule.kind = ScheduleKind::kRounds;
    schedule.families = {CorruptionFamily::kFog, CorruptionFamily::kContrast,
                         CorruptionFamily::kBrightness};
    schedule.severity = 5;
    schedule.rounds = 3;
    const std::vector<ScheduleEntry> entries = schedule.expand();
    REQUIRE(entries.size() == 9);
    for (int r = 0; r < 3; ++r) {
        CHECK(entries[static_cast<std::size_t>(3 * r)].family == CorruptionFamily::kFog);
        CHECK(entries[static_cast<std::size_t>(3 * r + 2)].family == CorruptionFamily::kBrightness);
        for (int d = 0; d < 3; ++d) {
            CHECK(entries[static_cast<std::size_t>(3 * r + d)].round == r + 1);
        }
    }
}

TEST_CASE("a reoccurring domain presents identical batches on every visit") {
    const GlyphDataset test = generate_glyphs(60, 10, 7);
    Schedule schedule;
    schedule.kind = ScheduleKind::kRounds;
    schedule.families = {CorruptionFamily::kGaussianNoise, CorruptionFamily::kFog};
    schedule.severity = 5;
    schedule.rounds = 2;
    const DomainStream stream = build_stream(test, schedule, 30, 7);
    REQUIRE(stream.batches.size() == 8);
    CHECK(same_bits(stream.batches[0].images, stream.batches[4].images));
    CHECK(same_bits(stream.batches[2].images, stream.batches[6].images));
}

TEST_CASE("stream replay is bit identical") {
    const GlyphDataset test = generate_glyphs(40, 10, 7);
    Schedule schedule;
    schedule.kind = ScheduleKind::kStandard;
    schedule.families = {CorruptionFamily::kShotNoise, CorruptionFamily::kPixelate};
    schedule.severity = 3;
    const DomainStream a = build_stream(test, schedule, 20, 9);
    const DomainStream b = build_stream(test, schedule, 20, 9);
    REQUIRE(a.batches.size() == b.batches.size());
    for (std::size_t i = 0; i < a.batches.size(); ++i) {
        CHECK(same_bits(a.batches[i].images, b.batches[i].images));
        CHECK(a.batches[i].labels == b.batches[i].labels);
    }
}

TEST_CASE("dataset files round trip") {
    const GlyphDataset all = generate_glyphs(60, 10, 7);
    const GlyphDataset train = all.subset(0, 40);
    const GlyphDataset test = all.subset(40, 20);
    const auto path = std::filesystem::temp_directory_path() / "padapt-data-tests" / "glyphs.tns";
    save_dataset(path, train, test);
    const auto [train2, test2] = load_dataset(path);
    CHECK(same_bits(train.images, train2.images));
    CHECK(train.labels == train2.labels);
    CHECK(same_bits(test.images, test2.images));
    CHECK(test.labels == test2.labels);
    CHECK(train2.classes == 10);
}

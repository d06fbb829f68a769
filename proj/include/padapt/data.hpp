#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "padapt/classifier.hpp"
#include "padapt/tensor.hpp"

namespace padapt {

// Procedurally generated class patterns; the desk-scale stand-in for a real
// image benchmark. Pixels lie in [0,1] and are quantized to 1/1024 so dataset
// files stay compact.
struct GlyphDataset {
    Tensor images;  // [N, channels, height, width]
    std::vector<int> labels;
    int classes = 10;
    std::uint64_t seed = 0;

    int size() const { return images.rank() == 4 ? images.extent(0) : 0; }
    InputGeometry geometry() const { return {images.extent(1), images.extent(2), images.extent(3)}; }
    GlyphDataset subset(int from, int count) const;
};

GlyphDataset generate_glyphs(int n, int classes, std::uint64_t seed, InputGeometry geom = {3, 32, 32});

// Jitter-free class pattern; exposed for the template-separation tests.
Tensor glyph_template(int class_id, InputGeometry geom = {3, 32, 32});

enum class CorruptionFamily {
    kGaussianNoise,
    kShotNoise,
    kImpulseNoise,
    kDefocusBlur,
    kMotionBlur,
    kFog,
    kBrightness,
    kContrast,
    kPixelate,
    kJpegLike,
};

constexpr int kCorruptionFamilyCount = 10;
const std::vector<CorruptionFamily>& all_corruption_families();
const char* family_name(CorruptionFamily family);
CorruptionFamily parse_family(const std::string& name);
bool is_noise_family(CorruptionFamily family);

// Severity parameter tables (index = severity - 1); monotone by construction.
double gaussian_sigma(int severity);
double shot_rate(int severity);
double impulse_fraction(int severity);
int defocus_radius(int severity);
int motion_length(int severity);
double fog_strength(int severity);
double brightness_shift(int severity);
double contrast_factor(int severity);
int pixelate_block(int severity);
int jpeg_levels(int severity);

struct CorruptionSpec {
    CorruptionFamily family = CorruptionFamily::kGaussianNoise;
    int severity = 1;  // 0 = identity
    std::uint64_t seed = 0;
};

// Applies the family transform; output clipped to [0,1], deterministic for a
// fixed seed, severity 0 is the identity.
Tensor corrupt(const Tensor& images, const CorruptionSpec& spec);

enum class ScheduleKind { kStandard, kGradual, kRounds };

struct ScheduleEntry {
    CorruptionFamily family;
    int severity;
    int round = 1;
};

struct Schedule {
    ScheduleKind kind = ScheduleKind::kStandard;
    std::vector<CorruptionFamily> families;
    int severity = 4;  // standard / rounds
    int rounds = 3;    // rounds only

    std::vector<ScheduleEntry> expand() const;
};

struct StreamBatch {
    Tensor images;
    std::vector<int> labels;  // hidden: evaluation only, never fed to adaptation
    int domain_index = 0;
    CorruptionFamily family = CorruptionFamily::kGaussianNoise;
    int severity = 0;
    int round = 1;
};

struct DomainStream {
    std::vector<StreamBatch> batches;
    int domain_count = 0;
};

DomainStream build_stream(const GlyphDataset& test_set, const Schedule& schedule, int batch_size,
                          std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const GlyphDataset& train, const GlyphDataset& test);
std::pair<GlyphDataset, GlyphDataset> load_dataset(const std::filesystem::path& path);

}  // namespace padapt

#include "padapt/data.hpp"

#include <algorithm>
#include <cmath>

#include "padapt/checkpoint.hpp"
#include "padapt/rng.hpp"

namespace padapt {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double quantize1024(double v) { return std::round(v * 1024.0) / 1024.0; }

struct GlyphJitter {
    double shift_y = 0.0;  // pixels
    double shift_x = 0.0;
    double phase = 0.0;        // radians
    double amplitude = 0.85;   // pattern contrast
    double background = 0.08;  // floor intensity
    double channel_gain[3] = {1.0, 1.0, 1.0};
};

// Pattern intensity in [0,1] before color/contrast modulation. y/x are pixel
// coordinates already shifted by the jitter; cy/cx is the image center.
double pattern_value(int class_id, double y, double x, double cy, double cx, double phase) {
    const double dy = y - cy;
    const double dx = x - cx;
    switch (class_id) {
        case 0:  // horizontal stripes, period 8 px
            return std::sin(2.0 * kPi * y / 8.0 + phase) > 0.0 ? 1.0 : 0.0;
        case 1:  // vertical stripes
            return std::sin(2.0 * kPi * x / 8.0 + phase) > 0.0 ? 1.0 : 0.0;
        case 2:  // diagonal stripes
            return std::sin(2.0 * kPi * (x + y) / 11.0 + phase) > 0.0 ? 1.0 : 0.0;
        case 3:  // anti-diagonal stripes
            return std::sin(2.0 * kPi * (x - y) / 11.0 + phase) > 0.0 ? 1.0 : 0.0;
        case 4:  // concentric rings
            return std::sin(2.0 * kPi * std::hypot(dy, dx) / 7.0 + phase) > 0.0 ? 1.0 : 0.0;
        case 5:  // checkerboard, 4 px cells
            return (static_cast<int>(std::floor(y / 4.0)) + static_cast<int>(std::floor(x / 4.0))) % 2 == 0
                       ? 1.0
                       : 0.0;
        case 6:  // upright cross
            return (std::abs(dy) < 3.5 || std::abs(dx) < 3.5) ? 1.0 : 0.0;
        case 7:  // filled disk
            return std::hypot(dy, dx) < 9.0 ? 1.0 : 0.0;
        case 8:  // X cross
            return std::abs(std::abs(dy) - std::abs(dx)) < 3.0 ? 1.0 : 0.0;
        case 9:  // radial gradient
            return clamp01(1.0 - std::hypot(dy, dx) / 14.0);
        default:
            return 0.0;
    }
}

void render_glyph(Tensor& images, int index, int class_id, const GlyphJitter& jitter, InputGeometry geom,
                  Rng& noise_rng) {
    const double cy = (geom.height - 1) / 2.0;
    const double cx = (geom.width - 1) / 2.0;
    for (int h = 0; h < geom.height; ++h) {
        for (int w = 0; w < geom.width; ++w) {
            const double y = h - jitter.shift_y;
            const double x = w - jitter.shift_x;
            const double p = pattern_value(class_id, y, x, cy, cx, jitter.phase);
            for (int c = 0; c < geom.channels; ++c) {
                const double gain = jitter.channel_gain[std::min(c, 2)];
                double v = jitter.background + jitter.amplitude * gain * p;
                v += noise_rng.normal(0.0, 0.02);
                images.at4(index, c, h, w) = quantize1024(clamp01(v));
            }
        }
    }
}

Rng per_image_rng(std::uint64_t seed, CorruptionFamily family, std::int64_t image_index) {
    const std::uint64_t mixed =
        seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(image_index + 1);
    return Rng(Rng::derive(mixed, family_name(family)));
}

int image_count(const Tensor& images) { return images.extent(0); }

// Convolves one image with an arbitrary normalized kernel, replicating edges.
void blur_image(const Tensor& src, Tensor& dst, int index, const std::vector<double>& kernel,
                const std::vector<std::pair<int, int>>& offsets) {
    const int chans = src.extent(1), height = src.extent(2), width = src.extent(3);
    for (int c = 0; c < chans; ++c) {
        for (int h = 0; h < height; ++h) {
            for (int w = 0; w < width; ++w) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kernel.size(); ++k) {
                    const int sh = std::clamp(h + offsets[k].first, 0, height - 1);
                    const int sw = std::clamp(w + offsets[k].second, 0, width - 1);
                    acc += kernel[k] * src.at4(index, c, sh, sw);
                }
                dst.at4(index, c, h, w) = clamp01(acc);
            }
        }
    }
}

}  // namespace

GlyphDataset GlyphDataset::subset(int from, int count) const {
    check<std::out_of_range>(from >= 0 && count >= 0 && from + count <= size(), "dataset subset [", from,
                             ",", from + count, ") out of range for ", size(), " samples");
    const InputGeometry geom = geometry();
    const int chw = geom.channels * geom.height * geom.width;
    GlyphDataset out;
    out.classes = classes;
    out.seed = seed;
    out.images = Tensor({count, geom.channels, geom.height, geom.width});
    std::copy_n(images.data() + static_cast<std::int64_t>(from) * chw,
                static_cast<std::int64_t>(count) * chw, out.images.data());
    out.labels.assign(labels.begin() + from, labels.begin() + from + count);
    return out;
}

GlyphDataset generate_glyphs(int n, int classes, std::uint64_t seed, InputGeometry geom) {
    check<ConfigError>(classes >= 2 && classes <= 10, "glyphs: classes must be in [2,10], got ", classes);
    check<ConfigError>(n >= classes, "glyphs: need at least ", classes, " samples, got ", n);

    GlyphDataset ds;
    ds.classes = classes;
    ds.seed = seed;
    ds.images = Tensor({n, geom.channels, geom.height, geom.width});
    ds.labels.resize(static_cast<std::size_t>(n));

    Rng rng(Rng::derive(seed, "glyphs"));
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;  // interleaved so every batch is class-balanced
        ds.labels[static_cast<std::size_t>(i)] = label;
        GlyphJitter jitter;
        jitter.shift_y = rng.uniform(-3.0, 3.0);
        jitter.shift_x = rng.uniform(-3.0, 3.0);
        jitter.phase = rng.uniform(0.0, 2.0 * kPi);
        jitter.amplitude = rng.uniform(0.55, 0.9);
        jitter.background = rng.uniform(0.02, 0.12);
        for (double& gain : jitter.channel_gain) {
            gain = rng.uniform(0.7, 1.0);
        }
        render_glyph(ds.images, i, label, jitter, geom, rng);
    }
    return ds;
}

Tensor glyph_template(int class_id, InputGeometry geom) {
    Tensor out({geom.channels, geom.height, geom.width});
    const double cy = (geom.height - 1) / 2.0;
    const double cx = (geom.width - 1) / 2.0;
    for (int h = 0; h < geom.height; ++h) {
        for (int w = 0; w < geom.width; ++w) {
            const double p = pattern_value(class_id, h, w, cy, cx, 0.0);
            for (int c = 0; c < geom.channels; ++c) {
                out[(static_cast<std::int64_t>(c) * geom.height + h) * geom.width + w] = 0.08 + 0.85 * p;
            }
        }
    }
    return out;
}

const std::vector<CorruptionFamily>& all_corruption_families() {
    static const std::vector<CorruptionFamily> families = {
        CorruptionFamily::kGaussianNoise, CorruptionFamily::kShotNoise, CorruptionFamily::kImpulseNoise,
        CorruptionFamily::kDefocusBlur,   CorruptionFamily::kMotionBlur, CorruptionFamily::kFog,
        CorruptionFamily::kBrightness,    CorruptionFamily::kContrast,   CorruptionFamily::kPixelate,
        CorruptionFamily::kJpegLike,
    };
    return families;
}

const char* family_name(CorruptionFamily family) {
    switch (family) {
        case CorruptionFamily::kGaussianNoise: return "gaussian_noise";
        case CorruptionFamily::kShotNoise: return "shot_noise";
        case CorruptionFamily::kImpulseNoise: return "impulse_noise";
        case CorruptionFamily::kDefocusBlur: return "defocus_blur";
        case CorruptionFamily::kMotionBlur: return "motion_blur";
        case CorruptionFamily::kFog: return "fog";
        case CorruptionFamily::kBrightness: return "brightness";
        case CorruptionFamily::kContrast: return "contrast";
        case CorruptionFamily::kPixelate: return "pixelate";
        case CorruptionFamily::kJpegLike: return "jpeg_like";
    }
    return "unknown";
}

CorruptionFamily parse_family(const std::string& name) {
    for (const CorruptionFamily family : all_corruption_families()) {
        if (name == family_name(family)) {
            return family;
        }
    }
    throw ConfigError(concat("unknown corruption family '", name, "'"));
}

bool is_noise_family(CorruptionFamily family) {
    return family == CorruptionFamily::kGaussianNoise || family == CorruptionFamily::kShotNoise ||
           family == CorruptionFamily::kImpulseNoise;
}

namespace {

int severity_index(int severity) {
    check<ConfigError>(severity >= 1 && severity <= 5, "severity must be in [1,5], got ", severity);
    return severity - 1;
}

}  // namespace

double gaussian_sigma(int s) {
    static constexpr double table[5] = {0.04, 0.08, 0.12, 0.16, 0.20};
    return table[severity_index(s)];
}
double shot_rate(int s) {
    static constexpr double table[5] = {50.0, 25.0, 12.0, 6.0, 3.0};
    return table[severity_index(s)];
}
double impulse_fraction(int s) {
    static constexpr double table[5] = {0.03, 0.07, 0.12, 0.18, 0.25};
    return table[severity_index(s)];
}
int defocus_radius(int s) {
    static constexpr int table[5] = {1, 2, 3, 4, 5};
    return table[severity_index(s)];
}
int motion_length(int s) {
    static constexpr int table[5] = {3, 5, 7, 9, 11};
    return table[severity_index(s)];
}
double fog_strength(int s) {
    static constexpr double table[5] = {0.15, 0.30, 0.45, 0.60, 0.75};
    return table[severity_index(s)];
}
double brightness_shift(int s) {
    static constexpr double table[5] = {0.10, 0.20, 0.30, 0.40, 0.50};
    return table[severity_index(s)];
}
double contrast_factor(int s) {
    static constexpr double table[5] = {0.60, 0.45, 0.32, 0.20, 0.10};
    return table[severity_index(s)];
}
int pixelate_block(int s) {
    static constexpr int table[5] = {2, 3, 4, 6, 8};
    return table[severity_index(s)];
}
int jpeg_levels(int s) {
    static constexpr int table[5] = {32, 16, 10, 6, 4};
    return table[severity_index(s)];
}

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec) {
    check<ShapeError>(images.rank() == 4, "corrupt: images must be rank 4, got ",
                      shape_str(images.shape()));
    if (spec.severity == 0) {
        return images;
    }
    (void)severity_index(spec.severity);

    const int count = image_count(images);
    const int chans = images.extent(1), height = images.extent(2), width = images.extent(3);
    Tensor out = images;

    switch (spec.family) {
        case CorruptionFamily::kGaussianNoise: {
            const double sigma = gaussian_sigma(spec.severity);
            for (int i = 0; i < count; ++i) {
                Rng rng = per_image_rng(spec.seed, spec.family, i);
                const std::int64_t base = images.index4(i, 0, 0, 0);
                const std::int64_t chw = static_cast<std::int64_t>(chans) * height * width;
                for (std::int64_t k = 0; k < chw; ++k) {
                    out[base + k] = clamp01(images[base + k] + rng.normal(0.0, sigma));
                }
            }
            break;
        }
        case CorruptionFamily::kShotNoise: {
            const double rate = shot_rate(spec.severity);
            for (int i = 0; i < count; ++i) {
                Rng rng = per_image_rng(spec.seed, spec.family, i);
                const std::int64_t base = images.index4(i, 0, 0, 0);
                const std::int64_t chw = static_cast<std::int64_t>(chans) * height * width;
                for (std::int64_t k = 0; k < chw; ++k) {
                    out[base + k] = clamp01(rng.poisson(images[base + k] * rate) / rate);
                }
            }
            break;
        }
        case CorruptionFamily::kImpulseNoise: {
            const double fraction = impulse_fraction(spec.severity);
            for (int i = 0; i < count; ++i) {
                Rng rng = per_image_rng(spec.seed, spec.family, i);
                const std::int64_t base = images.index4(i, 0, 0, 0);
                const std::int64_t chw = static_cast<std::int64_t>(chans) * height * width;
                for (std::int64_t k = 0; k < chw; ++k) {
                    if (rng.bernoulli(fraction)) {
                        out[base + k] = rng.bernoulli(0.5) ? 1.0 : 0.0;
                    }
                }
            }
            break;
        }
        case CorruptionFamily::kDefocusBlur: {
            const int radius = defocus_radius(spec.severity);
            std::vector<double> kernel;
            std::vector<std::pair<int, int>> offsets;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dy * dy + dx * dx <= radius * radius) {
                        kernel.push_back(1.0);
                        offsets.emplace_back(dy, dx);
                    }
                }
            }
            for (double& k : kernel) {
                k /= static_cast<double>(offsets.size());
            }
            for (int i = 0; i < count; ++i) {
                blur_image(images, out, i, kernel, offsets);
            }
            break;
        }
        case CorruptionFamily::kMotionBlur: {
            const int length = motion_length(spec.severity);
            const double angle = 20.0 * kPi / 180.0;
            std::vector<double> kernel(static_cast<std::size_t>(length), 1.0 / length);
            std::vector<std::pair<int, int>> offsets;
            const double mid = (length - 1) / 2.0;
            for (int t = 0; t < length; ++t) {
                const double d = t - mid;
                offsets.emplace_back(static_cast<int>(std::lround(d * std::sin(angle))),
                                     static_cast<int>(std::lround(d * std::cos(angle))));
            }
            for (int i = 0; i < count; ++i) {
                blur_image(images, out, i, kernel, offsets);
            }
            break;
        }
        case CorruptionFamily::kFog: {
            const double t = fog_strength(spec.severity);
            constexpr int kGrid = 4;
            for (int i = 0; i < count; ++i) {
                Rng rng = per_image_rng(spec.seed, spec.family, i);
                double grid[kGrid + 1][kGrid + 1];
                for (auto& row : grid) {
                    for (double& cell : row) {
                        cell = rng.uniform(0.7, 1.0);
                    }
                }
                for (int h = 0; h < height; ++h) {
                    const double gy = static_cast<double>(h) * kGrid / height;
                    const int y0 = static_cast<int>(gy);
                    const double fy = gy - y0;
                    for (int w = 0; w < width; ++w) {
                        const double gx = static_cast<double>(w) * kGrid / width;
                        const int x0 = static_cast<int>(gx);
                        const double fx = gx - x0;
                        const double haze = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                                            fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
                        for (int c = 0; c < chans; ++c) {
                            out.at4(i, c, h, w) = clamp01((1.0 - t) * images.at4(i, c, h, w) + t * haze);
                        }
                    }
                }
            }
            break;
        }
        case CorruptionFamily::kBrightness: {
            const double shift = brightness_shift(spec.severity);
            for (double& v : out.values()) {
                v = clamp01(v + shift);
            }
            break;
        }
        case CorruptionFamily::kContrast: {
            // Non-idempotent: the per-image mean is recomputed on every
            // application, so corrupt(corrupt(x)) keeps shrinking contrast.
            const double factor = contrast_factor(spec.severity);
            const std::int64_t chw = static_cast<std::int64_t>(chans) * height * width;
            for (int i = 0; i < count; ++i) {
                const std::int64_t base = images.index4(i, 0, 0, 0);
                double mean = 0.0;
                for (std::int64_t k = 0; k < chw; ++k) {
                    mean += images[base + k];
                }
                mean /= static_cast<double>(chw);
                for (std::int64_t k = 0; k < chw; ++k) {
                    out[base + k] = clamp01((images[base + k] - mean) * factor + mean);
                }
            }
            break;
        }
        case CorruptionFamily::kPixelate: {
            const int block = pixelate_block(spec.severity);
            for (int i = 0; i < count; ++i) {
                for (int c = 0; c < chans; ++c) {
                    for (int by = 0; by < height; by += block) {
                        for (int bx = 0; bx < width; bx += block) {
                            const int y1 = std::min(by + block, height);
                            const int x1 = std::min(bx + block, width);
                            double acc = 0.0;
                            for (int h = by; h < y1; ++h) {
                                for (int w = bx; w < x1; ++w) {
                                    acc += images.at4(i, c, h, w);
                                }
                            }
                            acc /= static_cast<double>((y1 - by) * (x1 - bx));
                            for (int h = by; h < y1; ++h) {
                                for (int w = bx; w < x1; ++w) {
                                    out.at4(i, c, h, w) = acc;
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case CorruptionFamily::kJpegLike: {
            // Stand-in for transform coding loss: 4x4 block averaging plus
            // uniform intensity quantization; no DCT.
            const int levels = jpeg_levels(spec.severity);
            constexpr int kBlock = 4;
            for (int i = 0; i < count; ++i) {
                for (int c = 0; c < chans; ++c) {
                    for (int by = 0; by < height; by += kBlock) {
                        for (int bx = 0; bx < width; bx += kBlock) {
                            const int y1 = std::min(by + kBlock, height);
                            const int x1 = std::min(bx + kBlock, width);
                            double acc = 0.0;
                            for (int h = by; h < y1; ++h) {
                                for (int w = bx; w < x1; ++w) {
                                    acc += images.at4(i, c, h, w);
                                }
                            }
                            acc /= static_cast<double>((y1 - by) * (x1 - bx));
                            const double q =
                                std::round(acc * (levels - 1)) / static_cast<double>(levels - 1);
                            for (int h = by; h < y1; ++h) {
                                for (int w = bx; w < x1; ++w) {
                                    out.at4(i, c, h, w) = clamp01(q);
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
    }
    return out;
}

std::vector<ScheduleEntry> Schedule::expand() const {
    check<ConfigError>(!families.empty(), "schedule: family list is empty");
    std::vector<ScheduleEntry> entries;
    switch (kind) {
        case ScheduleKind::kStandard:
            for (const CorruptionFamily family : families) {
                entries.push_back({family, severity, 1});
            }
            break;
        case ScheduleKind::kGradual:
            for (const CorruptionFamily family : families) {
                for (const int s : {1, 2, 3, 4, 5, 4, 3, 2, 1}) {
                    entries.push_back({family, s, 1});
                }
            }
            break;
        case ScheduleKind::kRounds:
            check<ConfigError>(rounds >= 1, "schedule: rounds must be >= 1, got ", rounds);
            for (int r = 1; r <= rounds; ++r) {
                for (const CorruptionFamily family : families) {
                    entries.push_back({family, severity, r});
                }
            }
            break;
    }
    return entries;
}

DomainStream build_stream(const GlyphDataset& test_set, const Schedule& schedule, int batch_size,
                          std::uint64_t seed) {
    check<ConfigError>(batch_size >= 1, "stream: batch size must be >= 1, got ", batch_size);
    check<ConfigError>(test_set.size() > 0, "stream: empty test set");
    const std::vector<ScheduleEntry> entries = schedule.expand();

    DomainStream stream;
    stream.domain_count = static_cast<int>(entries.size());
    const InputGeometry geom = test_set.geometry();
    const int chw = geom.channels * geom.height * geom.width;
    for (std::size_t d = 0; d < entries.size(); ++d) {
        const ScheduleEntry& entry = entries[d];
        CorruptionSpec spec;
        spec.family = entry.family;
        spec.severity = entry.severity;
        // Keyed by family and severity, not stream position: a reoccurring
        // domain presents identical images on every visit.
        spec.seed = Rng::derive(seed + static_cast<std::uint64_t>(entry.severity) * 131ull,
                                family_name(entry.family));
        const Tensor corrupted = corrupt(test_set.images, spec);
        for (int start = 0; start < test_set.size(); start += batch_size) {
            const int count = std::min(batch_size, test_set.size() - start);
            StreamBatch batch;
            batch.images = Tensor({count, geom.channels, geom.height, geom.width});
            std::copy_n(corrupted.data() + static_cast<std::int64_t>(start) * chw,
                        static_cast<std::int64_t>(count) * chw, batch.images.data());
            batch.labels.assign(test_set.labels.begin() + start, test_set.labels.begin() + start + count);
            batch.domain_index = static_cast<int>(d);
            batch.family = entry.family;
            batch.severity = entry.severity;
            batch.round = entry.round;
            stream.batches.push_back(std::move(batch));
        }
    }
    return stream;
}

void save_dataset(const std::filesystem::path& path, const GlyphDataset& train, const GlyphDataset& test) {
    Checkpoint ckpt;
    ckpt.add_meta("kind", "glyph-dataset");
    ckpt.add_meta("classes", std::to_string(train.classes));
    ckpt.add_meta("seed", std::to_string(train.seed));
    ckpt.add_meta("train_size", std::to_string(train.size()));
    ckpt.add_meta("test_size", std::to_string(test.size()));
    const auto label_tensor = [](const std::vector<int>& labels) {
        Tensor t({static_cast<int>(labels.size())});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            t[static_cast<std::int64_t>(i)] = labels[i];
        }
        return t;
    };
    ckpt.add_tensor("train.images", train.images);
    ckpt.add_tensor("train.labels", label_tensor(train.labels));
    ckpt.add_tensor("test.images", test.images);
    ckpt.add_tensor("test.labels", label_tensor(test.labels));
    write_checkpoint_file(path, ckpt);
}

std::pair<GlyphDataset, GlyphDataset> load_dataset(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint_file(path);
    check<IoError>(ckpt.has_meta("kind") && ckpt.meta_value("kind") == "glyph-dataset", path.string(),
                   ": not a dataset file");
    const auto to_labels = [&](const Tensor& t) {
        std::vector<int> labels(static_cast<std::size_t>(t.size()));
        for (std::int64_t i = 0; i < t.size(); ++i) {
            labels[static_cast<std::size_t>(i)] = static_cast<int>(t[i]);
        }
        return labels;
    };
    GlyphDataset train;
    train.classes = std::stoi(ckpt.meta_value("classes"));
    train.seed = std::stoull(ckpt.meta_value("seed"));
    train.images = ckpt.tensor("train.images");
    train.labels = to_labels(ckpt.tensor("train.labels"));
    GlyphDataset test;
    test.classes = train.classes;
    test.seed = train.seed;
    test.images = ckpt.tensor("test.images");
    test.labels = to_labels(ckpt.tensor("test.labels"));
    return {std::move(train), std::move(test)};
}

}  // namespace padapt

#pragma once

#include <cstdint>
#include <utility>

#include "padapt/classifier.hpp"
#include "padapt/rng.hpp"
#include "padapt/tensor.hpp"

namespace padapt {

enum class PromptRole { kDsp, kDap };

struct PromptPatch {
    Tensor values;  // [channels, h, w]
    PromptRole role = PromptRole::kDsp;

    int channels() const { return values.extent(0); }
    int height() const { return values.extent(1); }
    int width() const { return values.extent(2); }
};

enum class PlacementPolicy { kFixedAnchor, kRandomPerBatch };

// The two learnable additive patches plus their placement behaviour. The DAP
// anchor follows the DSP anchor at a signed column offset (rows aligned),
// clipped into bounds.
struct PromptPair {
    PromptPatch dsp;
    PromptPatch dap;
    PlacementPolicy policy = PlacementPolicy::kRandomPerBatch;
    int fixed_row = 0;
    int fixed_col = 0;
    int relative_offset = 0;
};

PromptPair make_zero_prompts(int channels, int height, int width,
                             PlacementPolicy policy = PlacementPolicy::kRandomPerBatch,
                             int relative_offset = 0);

struct Placement {
    int dsp_row = 0;
    int dsp_col = 0;
    int dap_row = 0;
    int dap_col = 0;
};

// Anchors for one batch. Fixed policy returns the configured anchor
// (validated against bounds); random policy draws the DSP anchor uniformly
// over all valid anchors. Errors when a patch cannot fit at all.
Placement sample_placement(const PromptPair& pair, const InputGeometry& geom, Rng& rng);

// x_p = images with each patch added elementwise on its support; pixels
// outside both supports are untouched, overlapping supports receive both.
Tensor apply_prompts(const Tensor& images, const PromptPair& pair, const Placement& placement);

// Gradient of a loss w.r.t. each patch given the gradient w.r.t. the prompted
// images: the sum over the batch of the input gradient on the patch support.
std::pair<Tensor, Tensor> prompt_gradients(const Tensor& grad_images, const PromptPair& pair,
                                           const Placement& placement);

struct WarmupConfig {
    int epochs = 3;
    double lr = 0.05;
    int batch_size = 100;
    std::uint64_t seed = 0;
    bool train_dsp = true;
    bool train_dap = true;
};

// Source-domain warm-up: starts from zero patches and minimizes hard-label
// cross entropy of the frozen model on prompted source images.
void init_prompts(PromptPair& pair, const Classifier& frozen, const Tensor& images,
                  const std::vector<int>& labels, const WarmupConfig& cfg);

}  // namespace padapt

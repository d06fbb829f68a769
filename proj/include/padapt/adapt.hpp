#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "padapt/classifier.hpp"
#include "padapt/data.hpp"
#include "padapt/homeostasis.hpp"
#include "padapt/prompts.hpp"
#include "padapt/rng.hpp"

namespace padapt {

struct AugmentPolicy {
    bool flip = true;        // horizontal, p = 0.5
    bool translate = true;   // integer shift within +-max_shift px, zero fill
    bool noise = true;       // additive gaussian
    int max_shift = 2;
    double noise_sigma = 0.02;

    static AugmentPolicy identity() { return {false, false, false, 2, 0.02}; }
    bool is_identity() const { return !flip && !translate && !noise; }
};

struct AdaptConfig {
    double prompt_lr = 0.05;
    double prompt_momentum = 0.0;
    double ema_momentum = 0.9;
    double alpha = 1.0;
    double shift_threshold = 0.25;
    double xi = 0.01;
    int batch_size = 100;
    AugmentPolicy augment;
    PlacementPolicy placement = PlacementPolicy::kRandomPerBatch;
    int fixed_row = 0;
    int fixed_col = 0;
    int prompt_size = 8;
    int relative_offset = 0;
    int warmup_epochs = 3;
    bool signed_delta_conf = false;
    bool nonneg_eta = false;
    bool disable_dsp = false;
    bool disable_dap = false;
    std::uint64_t seed = 7;

    void validate() const;
};

// Online state: student prompts trained by gradient, teacher prompts tracking
// them by EMA, importance bookkeeping and the shift detector.
struct AdaptState {
    PromptPair student;
    PromptPair teacher;
    ImportanceState importance;
    ShiftDetector detector;
    Tensor dsp_velocity;
    Tensor dap_velocity;
    long step = 0;
    Rng placement_rng;
    Rng augment_rng;
    AdaptConfig cfg;

    static AdaptState init(const AdaptConfig& cfg, const InputGeometry& geom);
};

Tensor augment(const Tensor& images, const AugmentPolicy& policy, Rng& rng);

// Mirror along the width axis; applying it twice restores the input.
Tensor flip_horizontal(const Tensor& images);

// teacher <- m * teacher + (1 - m) * student, elementwise on both patches.
void ema_update(PromptPair& teacher, const PromptPair& student, double m);

struct BatchResult {
    Tensor probs;               // evaluation predictions (pre-update teacher prompts)
    std::vector<int> predicted;
    double confidence = 0.0;    // batch mean of per-sample max teacher probability
    double delta_conf = 0.0;
    bool shift = false;
    double sum_eta = 0.0;       // total eta consolidated at a shift (0 otherwise)
    double loss_dsp = 0.0;
    double loss_dap = 0.0;
    double loss_penalty = 0.0;
};

// One online step: evaluate with current teacher prompts, detect shifts,
// compute the self-training losses, update the student prompts, accumulate
// importance, EMA the teacher.
BatchResult adapt_batch(AdaptState& state, const Classifier& frozen, const Tensor& images);

struct MetricsRow {
    long step = 0;
    int domain_index = 0;
    std::string corruption;
    int severity = 0;
    int round = 1;
    double batch_error = 0.0;
    double confidence = 0.0;
    double delta_conf = 0.0;
    bool shift = false;
    double loss_dsp = 0.0;
    double loss_dap = 0.0;
    double loss_penalty = 0.0;
};

struct ShiftEvent {
    long step = 0;
    double delta_conf = 0.0;
    double sum_eta = 0.0;
    int domain_after = 0;  // importance-state domain counter after consolidation
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    std::vector<ShiftEvent> events;
};

MetricsLog run_stream(AdaptState& state, const Classifier& frozen, const DomainStream& stream);

// Plain frozen-model evaluation of the same stream; the reference for the
// source-only baseline and the harness-equivalence check.
std::vector<double> evaluate_stream(const Classifier& frozen, const DomainStream& stream);

double fraction_wrong(const std::vector<int>& predicted, const std::vector<int>& labels);

}  // namespace padapt

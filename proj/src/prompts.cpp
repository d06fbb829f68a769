#include "padapt/prompts.hpp"

#include <algorithm>

#include "padapt/tape.hpp"

namespace padapt {

namespace {

void check_patch_fits(const PromptPatch& patch, const InputGeometry& geom, const char* label) {
    check<ConfigError>(patch.channels() == geom.channels, label, ": patch channels ", patch.channels(),
                       " vs image channels ", geom.channels);
    check<ConfigError>(patch.height() <= geom.height && patch.width() <= geom.width, label, ": patch ",
                       patch.height(), "x", patch.width(), " larger than image ", geom.height, "x",
                       geom.width);
}

void check_anchor(int row, int col, const PromptPatch& patch, const InputGeometry& geom,
                  const char* label) {
    check<ConfigError>(row >= 0 && col >= 0 && row + patch.height() <= geom.height &&
                           col + patch.width() <= geom.width,
                       label, ": anchor (", row, ",", col, ") with patch ", patch.height(), "x",
                       patch.width(), " exceeds ", geom.height, "x", geom.width, " image");
}

void add_patch_support(Tensor& images, const PromptPatch& patch, int row, int col) {
    const int batch = images.extent(0);
    const int chans = patch.channels(), p_h = patch.height(), p_w = patch.width();
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < chans; ++c) {
            for (int i = 0; i < p_h; ++i) {
                for (int j = 0; j < p_w; ++j) {
                    images.at4(b, c, row + i, col + j) +=
                        patch.values[(static_cast<std::int64_t>(c) * p_h + i) * p_w + j];
                }
            }
        }
    }
}

Tensor sum_support(const Tensor& grad_images, const PromptPatch& patch, int row, int col) {
    Tensor out(patch.values.shape());
    const int batch = grad_images.extent(0);
    const int chans = patch.channels(), p_h = patch.height(), p_w = patch.width();
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < chans; ++c) {
            for (int i = 0; i < p_h; ++i) {
                for (int j = 0; j < p_w; ++j) {
                    out[(static_cast<std::int64_t>(c) * p_h + i) * p_w + j] +=
                        grad_images.at4(b, c, row + i, col + j);
                }
            }
        }
    }
    return out;
}

}  // namespace

PromptPair make_zero_prompts(int channels, int height, int width, PlacementPolicy policy,
                             int relative_offset) {
    PromptPair pair;
    pair.dsp = {Tensor({channels, height, width}), PromptRole::kDsp};
    pair.dap = {Tensor({channels, height, width}), PromptRole::kDap};
    pair.policy = policy;
    pair.relative_offset = relative_offset;
    return pair;
}

Placement sample_placement(const PromptPair& pair, const InputGeometry& geom, Rng& rng) {
    check_patch_fits(pair.dsp, geom, "placement");
    check_patch_fits(pair.dap, geom, "placement");

    Placement placement;
    if (pair.policy == PlacementPolicy::kFixedAnchor) {
        placement.dsp_row = pair.fixed_row;
        placement.dsp_col = pair.fixed_col;
    } else {
        placement.dsp_row = rng.uniform_int(0, geom.height - pair.dsp.height());
        placement.dsp_col = rng.uniform_int(0, geom.width - pair.dsp.width());
    }
    check_anchor(placement.dsp_row, placement.dsp_col, pair.dsp, geom, "placement");

    placement.dap_row = std::clamp(placement.dsp_row, 0, geom.height - pair.dap.height());
    placement.dap_col =
        std::clamp(placement.dsp_col + pair.relative_offset, 0, geom.width - pair.dap.width());
    check_anchor(placement.dap_row, placement.dap_col, pair.dap, geom, "placement");
    return placement;
}

Tensor apply_prompts(const Tensor& images, const PromptPair& pair, const Placement& placement) {
    check<ShapeError>(images.rank() == 4, "apply_prompts: images must be rank 4, got ",
                      shape_str(images.shape()));
    const InputGeometry geom{images.extent(1), images.extent(2), images.extent(3)};
    check_anchor(placement.dsp_row, placement.dsp_col, pair.dsp, geom, "apply_prompts");
    check_anchor(placement.dap_row, placement.dap_col, pair.dap, geom, "apply_prompts");

    Tensor out = images;
    add_patch_support(out, pair.dsp, placement.dsp_row, placement.dsp_col);
    add_patch_support(out, pair.dap, placement.dap_row, placement.dap_col);
    return out;
}

std::pair<Tensor, Tensor> prompt_gradients(const Tensor& grad_images, const PromptPair& pair,
                                           const Placement& placement) {
    check<ShapeError>(grad_images.rank() == 4, "prompt_gradients: gradient must be rank 4, got ",
                      shape_str(grad_images.shape()));
    const InputGeometry geom{grad_images.extent(1), grad_images.extent(2), grad_images.extent(3)};
    check_anchor(placement.dsp_row, placement.dsp_col, pair.dsp, geom, "prompt_gradients");
    check_anchor(placement.dap_row, placement.dap_col, pair.dap, geom, "prompt_gradients");
    return {sum_support(grad_images, pair.dsp, placement.dsp_row, placement.dsp_col),
            sum_support(grad_images, pair.dap, placement.dap_row, placement.dap_col)};
}

void init_prompts(PromptPair& pair, const Classifier& frozen, const Tensor& images,
                  const std::vector<int>& labels, const WarmupConfig& cfg) {
    check<std::logic_error>(frozen.frozen(), "init_prompts: model must be frozen");
    frozen.check_geometry(images);
    const int total = images.extent(0);
    check<std::invalid_argument>(total > 0, "init_prompts: empty dataset");
    check<std::invalid_argument>(static_cast<std::size_t>(total) == labels.size(), "init_prompts: ",
                                 total, " images vs ", labels.size(), " labels");

    pair.dsp.values.fill(0.0);
    pair.dap.values.fill(0.0);
    if (cfg.epochs <= 0 || (!cfg.train_dsp && !cfg.train_dap)) {
        return;
    }

    const InputGeometry geom = frozen.geometry();
    const int chw = geom.channels * geom.height * geom.width;
    Rng rng(Rng::derive(cfg.seed, "prompt-warmup"));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int start = 0; start < total; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, total - start);
            Tensor batch({count, geom.channels, geom.height, geom.width});
            std::copy_n(images.data() + static_cast<std::int64_t>(start) * chw,
                        static_cast<std::int64_t>(count) * chw, batch.data());
            const std::vector<int> batch_labels(labels.begin() + start, labels.begin() + start + count);

            const Placement placement = sample_placement(pair, geom, rng);
            const Tensor prompted = apply_prompts(batch, pair, placement);

            Tape tape;
            const NodeId in = tape.leaf(prompted, true);
            const Classifier::ForwardNodes fwd = frozen.forward_logits(tape, in, false);
            const NodeId log_probs = tape.log_softmax(fwd.logits);
            const NodeId targets = tape.leaf(one_hot(batch_labels, frozen.classes()), false);
            const NodeId loss = tape.soft_cross_entropy(targets, log_probs);
            const GradientMap grads = tape.backward(loss);

            const auto [g_dsp, g_dap] = prompt_gradients(grads.at(in), pair, placement);
            if (cfg.train_dsp) {
                add_scaled_inplace(pair.dsp.values, g_dsp, -cfg.lr);
            }
            if (cfg.train_dap) {
                add_scaled_inplace(pair.dap.values, g_dap, -cfg.lr);
            }
        }
    }
}

}  // namespace padapt

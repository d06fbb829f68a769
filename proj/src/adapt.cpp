#include "padapt/adapt.hpp"

#include <algorithm>
#include <cmath>

#include "padapt/tape.hpp"

namespace padapt {

void AdaptConfig::validate() const {
    check<ConfigError>(prompt_lr >= 0.0, "adapt: prompt_lr must be >= 0, got ", prompt_lr);
    check<ConfigError>(prompt_momentum >= 0.0 && prompt_momentum < 1.0,
                       "adapt: prompt_momentum must be in [0,1), got ", prompt_momentum);
    check<ConfigError>(ema_momentum >= 0.0 && ema_momentum < 1.0,
                       "adapt: ema_momentum must be in [0,1), got ", ema_momentum);
    check<ConfigError>(alpha >= 0.0, "adapt: alpha must be >= 0, got ", alpha);
    check<ConfigError>(shift_threshold > 0.0, "adapt: shift threshold must be > 0, got ", shift_threshold);
    check<ConfigError>(xi > 0.0, "adapt: xi must be > 0, got ", xi);
    check<ConfigError>(batch_size >= 1, "adapt: batch_size must be >= 1, got ", batch_size);
    check<ConfigError>(prompt_size >= 1, "adapt: prompt_size must be >= 1, got ", prompt_size);
    check<ConfigError>(warmup_epochs >= 0, "adapt: warmup_epochs must be >= 0, got ", warmup_epochs);
    check<ConfigError>(augment.max_shift >= 0, "adapt: augment max_shift must be >= 0");
    check<ConfigError>(augment.noise_sigma >= 0.0, "adapt: augment noise_sigma must be >= 0");
}

AdaptState AdaptState::init(const AdaptConfig& cfg, const InputGeometry& geom) {
    cfg.validate();
    check<ConfigError>(cfg.prompt_size <= geom.height && cfg.prompt_size <= geom.width,
                       "adapt: prompt_size ", cfg.prompt_size, " exceeds image ", geom.height, "x",
                       geom.width);
    AdaptState state{
        make_zero_prompts(geom.channels, cfg.prompt_size, cfg.prompt_size, cfg.placement,
                          cfg.relative_offset),
        make_zero_prompts(geom.channels, cfg.prompt_size, cfg.prompt_size, cfg.placement,
                          cfg.relative_offset),
        ImportanceState(),
        ShiftDetector(cfg.shift_threshold, cfg.signed_delta_conf),
        Tensor({geom.channels, cfg.prompt_size, cfg.prompt_size}),
        Tensor({geom.channels, cfg.prompt_size, cfg.prompt_size}),
        0,
        Rng(Rng::derive(cfg.seed, "placement")),
        Rng(Rng::derive(cfg.seed, "augment")),
        cfg,
    };
    state.student.fixed_row = cfg.fixed_row;
    state.student.fixed_col = cfg.fixed_col;
    state.teacher.fixed_row = cfg.fixed_row;
    state.teacher.fixed_col = cfg.fixed_col;
    state.importance = ImportanceState::init(state.student.dap.values);
    return state;
}

Tensor flip_horizontal(const Tensor& images) {
    check<ShapeError>(images.rank() == 4, "flip_horizontal: images must be rank 4, got ",
                      shape_str(images.shape()));
    Tensor out(images.shape());
    const int count = images.extent(0), chans = images.extent(1);
    const int height = images.extent(2), width = images.extent(3);
    for (int i = 0; i < count; ++i) {
        for (int c = 0; c < chans; ++c) {
            for (int h = 0; h < height; ++h) {
                for (int w = 0; w < width; ++w) {
                    out.at4(i, c, h, w) = images.at4(i, c, h, width - 1 - w);
                }
            }
        }
    }
    return out;
}

Tensor augment(const Tensor& images, const AugmentPolicy& policy, Rng& rng) {
    check<ShapeError>(images.rank() == 4, "augment: images must be rank 4, got ",
                      shape_str(images.shape()));
    if (policy.is_identity()) {
        return images;
    }
    const int count = images.extent(0), chans = images.extent(1);
    const int height = images.extent(2), width = images.extent(3);
    Tensor out(images.shape());
    for (int i = 0; i < count; ++i) {
        const bool flip = policy.flip && rng.bernoulli(0.5);
        int dy = 0, dx = 0;
        if (policy.translate && policy.max_shift > 0) {
            dy = rng.uniform_int(-policy.max_shift, policy.max_shift);
            dx = rng.uniform_int(-policy.max_shift, policy.max_shift);
        }
        for (int c = 0; c < chans; ++c) {
            for (int h = 0; h < height; ++h) {
                const int sh = h - dy;
                for (int w = 0; w < width; ++w) {
                    const int sw_pre = w - dx;
                    const int sw = flip ? width - 1 - sw_pre : sw_pre;
                    double v = 0.0;
                    if (sh >= 0 && sh < height && sw_pre >= 0 && sw_pre < width) {
                        v = images.at4(i, c, sh, sw);
                    }
                    out.at4(i, c, h, w) = v;
                }
            }
        }
        if (policy.noise && policy.noise_sigma > 0.0) {
            for (int c = 0; c < chans; ++c) {
                for (int h = 0; h < height; ++h) {
                    for (int w = 0; w < width; ++w) {
                        out.at4(i, c, h, w) += rng.normal(0.0, policy.noise_sigma);
                    }
                }
            }
        }
    }
    return out;
}

void ema_update(PromptPair& teacher, const PromptPair& student, double m) {
    check<ConfigError>(m >= 0.0 && m < 1.0, "ema_update: momentum must be in [0,1), got ", m);
    const auto blend = [m](Tensor& t, const Tensor& s) {
        check<ShapeError>(t.same_shape(s), "ema_update: teacher ", shape_str(t.shape()), " vs student ",
                          shape_str(s.shape()));
        for (std::int64_t i = 0; i < t.size(); ++i) {
            t[i] = m * t[i] + (1.0 - m) * s[i];
        }
    };
    blend(teacher.dsp.values, student.dsp.values);
    blend(teacher.dap.values, student.dap.values);
}

BatchResult adapt_batch(AdaptState& state, const Classifier& frozen, const Tensor& images) {
    frozen.check_geometry(images);
    const AdaptConfig& cfg = state.cfg;
    const InputGeometry geom = frozen.geometry();

    // One placement per batch, shared by evaluation, teacher and student.
    const Placement placement = sample_placement(state.student, geom, state.placement_rng);

    BatchResult result;

    // 1) Evaluation with the current (pre-update) teacher prompts.
    const Tensor teacher_prompted = apply_prompts(images, state.teacher, placement);
    {
        const Prediction pred = frozen.predict(teacher_prompted);
        result.probs = pred.probs;
        result.predicted = pred.predicted;
        double conf_sum = 0.0;
        for (const double c : pred.confidence) {
            conf_sum += c;
        }
        result.confidence = conf_sum / static_cast<double>(pred.confidence.size());
    }
    check<NumericError>(std::isfinite(result.confidence), "adapt: non-finite predictions at step ",
                        state.step);

    // 2) Shift detection on the batch confidence; consolidate before updating.
    {
        const ShiftDetector::Observation obs = state.detector.observe(result.confidence);
        result.delta_conf = obs.delta;
        result.shift = obs.triggered;
        if (obs.triggered) {
            result.sum_eta = total_eta(state.importance);
            consolidate_on_shift(state.importance, state.student.dap.values, cfg.xi);
        }
    }

    // 3) Teacher soft targets from augmented prompted images (no gradients).
    const Tensor teacher_view = augment(teacher_prompted, cfg.augment, state.augment_rng);
    const Tensor teacher_probs = frozen.predict(teacher_view).probs;

    // 4) Student forward on unaugmented images with student prompts; one
    //    shared backward pass yields the cross-entropy gradient for both
    //    prompts via their supports.
    const Tensor student_prompted = apply_prompts(images, state.student, placement);
    Tape tape;
    const NodeId input = tape.leaf(student_prompted, true);
    const Classifier::ForwardNodes fwd = frozen.forward_logits(tape, input, false);
    const NodeId log_probs = tape.log_softmax(fwd.logits);
    const NodeId teacher_node = tape.leaf(teacher_probs, false);
    const NodeId ce_node = tape.soft_cross_entropy(teacher_node, log_probs);
    const double ce = tape.value(ce_node)[0];

    const PenaltyResult pen = cfg.disable_dap
                                  ? PenaltyResult{0.0, Tensor(state.student.dap.values.shape())}
                                  : penalty(state.importance, state.student.dap.values, cfg.alpha);

    result.loss_dsp = ce;
    result.loss_penalty = pen.loss;
    result.loss_dap = ce + pen.loss;
    check<NumericError>(std::isfinite(result.loss_dsp) && std::isfinite(result.loss_dap),
                        "adapt: non-finite loss at step ", state.step, " (ce=", ce, ", penalty=",
                        pen.loss, ")");

    // 5) Gradient step on the student prompts only.
    const GradientMap grads = tape.backward(ce_node);
    const auto [g_dsp, g_dap_ce] = prompt_gradients(grads.at(input), state.student, placement);

    if (!cfg.disable_dsp) {
        for (std::int64_t i = 0; i < g_dsp.size(); ++i) {
            state.dsp_velocity[i] = cfg.prompt_momentum * state.dsp_velocity[i] + g_dsp[i];
            state.student.dsp.values[i] -= cfg.prompt_lr * state.dsp_velocity[i];
        }
    }
    if (!cfg.disable_dap) {
        Tensor g_dap = g_dap_ce;
        add_scaled_inplace(g_dap, pen.grad, 1.0);
        Tensor realized_step(g_dap.shape());
        for (std::int64_t i = 0; i < g_dap.size(); ++i) {
            state.dap_velocity[i] = cfg.prompt_momentum * state.dap_velocity[i] + g_dap[i];
            const double delta = -cfg.prompt_lr * state.dap_velocity[i];
            state.student.dap.values[i] += delta;
            realized_step[i] = delta;
        }
        // 6) Path-integral importance with the DAP gradient and realized step.
        accumulate_importance(state.importance, g_dap, realized_step, cfg.nonneg_eta);
    }

    // 7) Teacher tracks the student.
    ema_update(state.teacher, state.student, cfg.ema_momentum);

    ++state.step;
    return result;
}

MetricsLog run_stream(AdaptState& state, const Classifier& frozen, const DomainStream& stream) {
    check<std::invalid_argument>(!stream.batches.empty(), "run_stream: empty stream");
    MetricsLog log;
    log.rows.reserve(stream.batches.size());
    for (const StreamBatch& batch : stream.batches) {
        const long step = state.step;
        const BatchResult res = adapt_batch(state, frozen, batch.images);
        MetricsRow row;
        row.step = step;
        row.domain_index = batch.domain_index;
        row.corruption = family_name(batch.family);
        row.severity = batch.severity;
        row.round = batch.round;
        row.batch_error = fraction_wrong(res.predicted, batch.labels);
        row.confidence = res.confidence;
        row.delta_conf = res.delta_conf;
        row.shift = res.shift;
        row.loss_dsp = res.loss_dsp;
        row.loss_dap = res.loss_dap;
        row.loss_penalty = res.loss_penalty;
        log.rows.push_back(std::move(row));
        if (res.shift) {
            log.events.push_back({step, res.delta_conf, res.sum_eta, state.importance.domain_index});
        }
    }
    return log;
}

std::vector<double> evaluate_stream(const Classifier& frozen, const DomainStream& stream) {
    std::vector<double> errors;
    errors.reserve(stream.batches.size());
    for (const StreamBatch& batch : stream.batches) {
        const Prediction pred = frozen.predict(batch.images);
        errors.push_back(fraction_wrong(pred.predicted, batch.labels));
    }
    return errors;
}

double fraction_wrong(const std::vector<int>& predicted, const std::vector<int>& labels) {
    check<std::invalid_argument>(predicted.size() == labels.size() && !labels.empty(),
                                 "fraction_wrong: ", predicted.size(), " predictions vs ", labels.size(),
                                 " labels");
    int wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        wrong += predicted[i] != labels[i] ? 1 : 0;
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

}  // namespace padapt

#include "padapt/homeostasis.hpp"

#include <cmath>

namespace padapt {

ImportanceState ImportanceState::init(const Tensor& dap_values) {
    ImportanceState state;
    state.eta = Tensor(dap_values.shape());
    state.lambda = Tensor(dap_values.shape());
    state.theta_star = dap_values;
    state.theta_domain_start = dap_values;
    state.domain_index = 0;
    return state;
}

void accumulate_importance(ImportanceState& state, const Tensor& grad, const Tensor& step,
                           bool nonneg_eta) {
    check<ShapeError>(grad.same_shape(state.eta), "accumulate_importance: gradient ",
                      shape_str(grad.shape()), " vs state ", shape_str(state.eta.shape()));
    check<ShapeError>(step.same_shape(state.eta), "accumulate_importance: step ",
                      shape_str(step.shape()), " vs state ", shape_str(state.eta.shape()));
    for (std::int64_t i = 0; i < state.eta.size(); ++i) {
        const double contribution = -grad[i] * step[i];
        state.eta[i] += nonneg_eta ? std::max(0.0, contribution) : contribution;
    }
}

double total_eta(const ImportanceState& state) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < state.eta.size(); ++i) {
        sum += state.eta[i];
    }
    return sum;
}

void consolidate_on_shift(ImportanceState& state, const Tensor& dap_now, double xi) {
    check<ShapeError>(dap_now.same_shape(state.eta), "consolidate_on_shift: values ",
                      shape_str(dap_now.shape()), " vs state ", shape_str(state.eta.shape()));
    for (std::int64_t i = 0; i < state.eta.size(); ++i) {
        const double delta = dap_now[i] - state.theta_domain_start[i];
        state.lambda[i] += state.eta[i] / (delta * delta + xi);
    }
    state.theta_star = dap_now;
    state.theta_domain_start = dap_now;
    state.eta.fill(0.0);
    ++state.domain_index;
}

PenaltyResult penalty(const ImportanceState& state, const Tensor& dap_values, double alpha) {
    check<ShapeError>(dap_values.same_shape(state.lambda), "penalty: values ",
                      shape_str(dap_values.shape()), " vs state ", shape_str(state.lambda.shape()));
    PenaltyResult result;
    result.grad = Tensor(dap_values.shape());
    if (alpha == 0.0) {
        return result;
    }
    for (std::int64_t i = 0; i < dap_values.size(); ++i) {
        const double diff = dap_values[i] - state.theta_star[i];
        result.loss += alpha * state.lambda[i] * diff * diff;
        result.grad[i] = 2.0 * alpha * state.lambda[i] * diff;
    }
    return result;
}

ShiftDetector::Observation ShiftDetector::observe(double confidence) {
    check<std::out_of_range>(confidence >= 0.0 && confidence <= 1.0,
                             "shift detector: confidence must be in [0,1], got ", confidence);
    Observation obs;
    if (has_previous_) {
        obs.delta = confidence - previous_;
        const double magnitude = signed_delta_ ? obs.delta : std::abs(obs.delta);
        obs.triggered = magnitude > threshold_;
    }
    has_previous_ = true;
    previous_ = confidence;
    return obs;
}

}  // namespace padapt

#pragma once

#include "padapt/tensor.hpp"

namespace padapt {

// Per-parameter importance bookkeeping for the domain-agnostic prompt.
//
// Between shifts, eta accumulates -grad * step per update. At a detected
// shift, lambda absorbs eta / (delta^2 + xi) with delta the total parameter
// change over the finished domain, the anchor snapshot is refreshed and eta
// resets.
struct ImportanceState {
    Tensor eta;
    Tensor lambda;
    Tensor theta_star;          // anchor: values at the last batch of the previous domain
    Tensor theta_domain_start;  // values at entry of the current domain
    int domain_index = 0;

    static ImportanceState init(const Tensor& dap_values);
};

void accumulate_importance(ImportanceState& state, const Tensor& grad, const Tensor& step,
                           bool nonneg_eta = false);

// Sum over parameters of the accumulated eta (event-log payload).
double total_eta(const ImportanceState& state);

void consolidate_on_shift(ImportanceState& state, const Tensor& dap_now, double xi);

struct PenaltyResult {
    double loss = 0.0;
    Tensor grad;
};

// loss = alpha * sum_i lambda_i (theta_i - theta*_i)^2, gradient
// 2 alpha lambda_i (theta_i - theta*_i). Applied to the DAP only.
PenaltyResult penalty(const ImportanceState& state, const Tensor& dap_values, double alpha);

// Batch-level confidence jump detector. The first observation never triggers.
class ShiftDetector {
  public:
    ShiftDetector(double threshold, bool signed_delta)
        : threshold_(threshold), signed_delta_(signed_delta) {}

    struct Observation {
        bool triggered = false;
        double delta = 0.0;  // 0 on the first batch (no previous value)
    };

    Observation observe(double confidence);

    bool has_previous() const { return has_previous_; }
    double previous() const { return previous_; }
    double threshold() const { return threshold_; }

  private:
    double threshold_;
    bool signed_delta_;
    bool has_previous_ = false;
    double previous_ = 0.0;
};

}  // namespace padapt

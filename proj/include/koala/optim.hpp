#pragma once

#include <map>
#include <string>

#include "koala/params.hpp"

namespace koala {

enum class LrSchedule { warmup_cosine, constant };

struct OptimConfig {
    double max_lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.02;
    double warmup_frac = 0.1;
    long total_steps = 2000;
    LrSchedule schedule = LrSchedule::warmup_cosine;
};

// AdamW with decoupled weight decay. Decay is skipped for parameters whose
// store entry has decay=false (gains, biases, the fusion scalar).
class OptimState {
public:
    explicit OptimState(OptimConfig cfg) : cfg_(cfg) {}

    double lr_at(long step) const;
    long step() const { return step_; }
    const OptimConfig& config() const { return cfg_; }

    // Applies one update. Every gradient must belong to a learnable
    // parameter; a gradient for a frozen parameter is a contract violation.
    void apply(ParamStore& store, const std::map<std::string, Tensor>& grads);

private:
    OptimConfig cfg_;
    long step_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

} // namespace koala

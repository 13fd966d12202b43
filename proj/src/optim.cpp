#include "koala/optim.hpp"

#include <cmath>

namespace koala {

double OptimState::lr_at(long step) const {
    if (cfg_.schedule == LrSchedule::constant) return cfg_.max_lr;
    const long warmup = std::lround(cfg_.warmup_frac * static_cast<double>(cfg_.total_steps));
    if (warmup > 0 && step < warmup)
        return cfg_.max_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const long span = cfg_.total_steps - warmup;
    if (span <= 0) return cfg_.max_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    return cfg_.max_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

void OptimState::apply(ParamStore& store, const std::map<std::string, Tensor>& grads) {
    const double lr = lr_at(step_);
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (const auto& [name, g] : grads) {
        ParamStore::Entry& e = store.entry(name);
        if (e.frozen)
            throw ContractError("optimizer: gradient supplied for frozen parameter " + name);
        if (!g.same_shape(e.value))
            throw ContractError("optimizer: gradient shape mismatch for " + name);
        Tensor& m = m_.try_emplace(name, Tensor::zeros(e.value.dims)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(e.value.dims)).first->second;
        const double wd = e.decay ? cfg_.weight_decay : 0.0;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            m.v[i] = cfg_.beta1 * m.v[i] + (1.0 - cfg_.beta1) * g.v[i];
            v.v[i] = cfg_.beta2 * v.v[i] + (1.0 - cfg_.beta2) * g.v[i] * g.v[i];
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            e.value.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * e.value.v[i]);
        }
        e.value.quantize_inplace();
    }
    ++step_;
}

} // namespace koala

#pragma once

#include <cstddef>
#include <vector>

#include "sled/tensor.hpp"

namespace sled {

/// AdamW moment estimates; buffers are allocated on first step.
struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// Decoupled-weight-decay adaptive-moment update. `grads[i]` may be null
/// (treated as zero). Defaults: beta1 0.9, beta2 0.999, eps 1e-8, decay 0.
void adamw_step(const std::vector<Tensor*>& params,
                const std::vector<const Tensor*>& grads, AdamState& state,
                double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double weight_decay = 0.0);

} // namespace sled

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dumpwatch/tensor.hpp"

namespace dumpwatch {

template <typename T>
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update. Moments are allocated on the first call and
/// must keep matching the parameter list afterwards. Gradients are read only.
template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state);

}  // namespace dumpwatch

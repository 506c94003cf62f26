#include "dumpwatch/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace dumpwatch {

template <typename T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& state) {
    if (state.first_moment.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.numel(), T(0));
            state.second_moment.emplace_back(p.numel(), T(0));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw std::invalid_argument("adam_step: parameter list changed since the first step");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has no gradient");
        }
        if (state.first_moment[i].size() != params[i].numel()) {
            throw std::invalid_argument("adam_step: moment shape mismatch for parameter " +
                                        std::to_string(i));
        }
    }

    ++state.step;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].values();
        std::span<const T> grad = params[i].grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double gj = static_cast<double>(grad[j]);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = state.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + state.epsilon);
            values[j] = static_cast<T>(static_cast<double>(values[j]) - update);
        }
    }
}

template void adam_step(std::span<BasicTensor<float>>, AdamState<float>&);
template void adam_step(std::span<BasicTensor<double>>, AdamState<double>&);

}  // namespace dumpwatch

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "eqrgan/mlp.hpp"

namespace eqrgan::diffcore {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every tensor of one ParamStore. Each tensor keeps
// its own moment buffers and step counter so individual slots can be re-based
// (e.g. after the input-standardization rewrite).
template <typename T>
class Adam {
  public:
    Adam(const ParamStore<T>& store, AdamHyper hyper) : hyper_(hyper) {
        states_.reserve(store.size());
        for (const Matrix<T>& p : store.tensors) states_.push_back(State{
            Matrix<T>::zeros(p.rows, p.cols), Matrix<T>::zeros(p.rows, p.cols), 0});
    }

    // Applies one update from slot-indexed gradient buffers; empty buffers
    // are treated as all-zero and skipped (their moments still decay).
    void step(ParamStore<T>& store, const std::vector<Matrix<T>>& grads, double lr,
              const std::vector<double>* lr_scale = nullptr) {
        for (int s = 0; s < store.size(); ++s) {
            State& st = states_[s];
            Matrix<T>& p = store[s];
            st.t += 1;
            const T b1 = static_cast<T>(hyper_.beta1);
            const T b2 = static_cast<T>(hyper_.beta2);
            const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(hyper_.beta1, st.t)));
            const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(hyper_.beta2, st.t)));
            const T step_size =
                static_cast<T>(lr_scale ? lr * (*lr_scale)[s] : lr);
            const T eps = static_cast<T>(hyper_.eps);
            const bool has_grad = s < static_cast<int>(grads.size()) && !grads[s].empty();
            for (size_t i = 0; i < p.size(); ++i) {
                const T g = has_grad ? grads[s].a[i] : T(0);
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericalError("non-finite gradient in tensor slot " +
                                         std::to_string(s));
                st.m.a[i] = b1 * st.m.a[i] + (T(1) - b1) * g;
                st.v.a[i] = b2 * st.v.a[i] + (T(1) - b2) * g * g;
                const T mhat = st.m.a[i] * c1;
                const T vhat = st.v.a[i] * c2;
                p.a[i] -= step_size * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void reset_slot(int slot) {
        states_[slot].m.set_zero();
        states_[slot].v.set_zero();
        states_[slot].t = 0;
    }

    int64_t step_count(int slot) const { return states_[slot].t; }

  private:
    struct State {
        Matrix<T> m, v;
        int64_t t;
    };
    AdamHyper hyper_;
    std::vector<State> states_;
};

}  // namespace eqrgan::diffcore

#pragma once

#include <string>
#include <vector>

#include "eqrgan/common.hpp"
#include "eqrgan/tape.hpp"

namespace eqrgan::diffcore {

// Flat tensor store. Generator and discriminator keep separate stores, so a
// training phase can only ever write its own side.
template <typename T>
struct ParamStore {
    std::vector<Matrix<T>> tensors;

    int add(int rows, int cols) {
        tensors.emplace_back(rows, cols);
        return static_cast<int>(tensors.size()) - 1;
    }
    Matrix<T>& operator[](int slot) { return tensors[slot]; }
    const Matrix<T>& operator[](int slot) const { return tensors[slot]; }
    int size() const { return static_cast<int>(tensors.size()); }

    std::vector<Matrix<T>> make_grad_buffers() const {
        return std::vector<Matrix<T>>(tensors.size());
    }
};

// tanh multilayer perceptron over slots of a ParamStore. Hidden layers are
// affine followed by tanh; the output layer is affine. An optional linear
// bypass from the (standardized) input to the output keeps near-affine
// targets well-conditioned. An optional per-input affine standardization
// (x - mean) * inv_std is applied before layer 0.
template <typename T>
struct Mlp {
    std::vector<int> widths;            // in, hidden..., out
    std::vector<int> weight_slots;      // one per layer
    std::vector<int> bias_slots;
    int skip_slot = -1;                 // out x in linear bypass, optional
    std::vector<T> in_mean, in_inv_std; // empty until standardization is set

    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }
    int layers() const { return static_cast<int>(widths.size()) - 1; }
    bool has_skip() const { return skip_slot >= 0; }

    static Mlp create(ParamStore<T>& store, std::vector<int> widths_, bool with_skip = false) {
        if (widths_.size() < 2) throw ConfigError("mlp: need at least input and output widths");
        Mlp m;
        m.widths = std::move(widths_);
        for (int l = 0; l < m.layers(); ++l) {
            m.weight_slots.push_back(store.add(m.widths[l + 1], m.widths[l]));
            m.bias_slots.push_back(store.add(m.widths[l + 1], 1));
        }
        if (with_skip) m.skip_slot = store.add(m.out_dim(), m.in_dim());
        return m;
    }

    // Xavier-uniform hidden layers; the output layer starts at zero when
    // zero_last is set, so freshly built policies are the null map. The
    // bypass always starts at zero.
    void init(ParamStore<T>& store, Rng& rng, bool zero_last) const {
        for (int l = 0; l < layers(); ++l) {
            Matrix<T>& w = store[weight_slots[l]];
            Matrix<T>& b = store[bias_slots[l]];
            b.set_zero();
            if (zero_last && l == layers() - 1) {
                w.set_zero();
                continue;
            }
            const double bound = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
            for (T& v : w.a) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        if (has_skip()) store[skip_slot].set_zero();
    }

    NodeId apply(Tape<T>& tape, const ParamStore<T>& store, NodeId input) const {
        if (tape.val(input).rows != in_dim())
            throw ConfigError("mlp: input rows " + std::to_string(tape.val(input).rows) +
                              " do not match first-layer width " + std::to_string(in_dim()));
        NodeId x = standardize_tape(tape, input);
        NodeId h = x;
        for (int l = 0; l < layers(); ++l) {
            NodeId w = tape.param(store[weight_slots[l]], weight_slots[l]);
            NodeId b = tape.param(store[bias_slots[l]], bias_slots[l]);
            h = tape.add_bias(tape.matmul(w, h), b);
            if (l + 1 < layers()) h = tape.tanh_(h);
        }
        if (has_skip())
            h = tape.add(h, tape.matmul(tape.param(store[skip_slot], skip_slot), x));
        return h;
    }

    // Graph-free evaluation with identical arithmetic to apply(); used when a
    // network is consumed as a frozen callback.
    Matrix<T> apply_plain(const ParamStore<T>& store, const Matrix<T>& input) const {
        if (input.rows != in_dim())
            throw ConfigError("mlp: input rows do not match first-layer width");
        Matrix<T> x = standardize_plain(input);
        Matrix<T> h = x;
        Matrix<T> next;
        for (int l = 0; l < layers(); ++l) {
            next = Matrix<T>(widths[l + 1], h.cols);
            kernels::gemm(store[weight_slots[l]], h, next);
            kernels::add_col_bias(next, store[bias_slots[l]]);
            if (l + 1 < layers()) kernels::tanh_inplace(next);
            h = std::move(next);
        }
        if (has_skip()) {
            Matrix<T> bypass(out_dim(), x.cols);
            kernels::gemm(store[skip_slot], x, bypass);
            for (size_t i = 0; i < h.size(); ++i) h.a[i] += bypass.a[i];
        }
        return h;
    }

    void set_standardization(std::vector<T> mean, std::vector<T> inv_std) {
        if (static_cast<int>(mean.size()) != in_dim() ||
            static_cast<int>(inv_std.size()) != in_dim())
            throw ConfigError("mlp: standardization size mismatch");
        in_mean = std::move(mean);
        in_inv_std = std::move(inv_std);
    }

    // Installs standardization mid-training without changing the realized
    // function: layer 0 (and the bypass) are rewritten so the map of the raw
    // input is unchanged. The caller must reset any optimizer state attached
    // to the rewritten slots.
    void freeze_standardization(ParamStore<T>& store, std::vector<T> mean,
                                std::vector<T> inv_std) {
        if (standardized()) throw UsageError("mlp: standardization already frozen");
        Matrix<T>& w = store[weight_slots[0]];
        Matrix<T>& b = store[bias_slots[0]];
        for (int i = 0; i < w.rows; ++i) {
            T acc = T(0);
            for (int j = 0; j < w.cols; ++j) acc += w(i, j) * mean[j];
            b(i, 0) += acc;
        }
        for (int i = 0; i < w.rows; ++i)
            for (int j = 0; j < w.cols; ++j) w(i, j) /= inv_std[j];
        if (has_skip()) {
            Matrix<T>& ws = store[skip_slot];
            Matrix<T>& bl = store[bias_slots.back()];
            for (int i = 0; i < ws.rows; ++i) {
                T acc = T(0);
                for (int j = 0; j < ws.cols; ++j) acc += ws(i, j) * mean[j];
                bl(i, 0) += acc;
            }
            for (int i = 0; i < ws.rows; ++i)
                for (int j = 0; j < ws.cols; ++j) ws(i, j) /= inv_std[j];
        }
        set_standardization(std::move(mean), std::move(inv_std));
    }

    bool standardized() const { return !in_mean.empty(); }

  private:
    NodeId standardize_tape(Tape<T>& tape, NodeId input) const {
        if (!standardized()) return input;
        Matrix<T> shift(in_dim(), 1), scale(in_dim(), 1);
        for (int i = 0; i < in_dim(); ++i) {
            scale(i, 0) = in_inv_std[i];
            shift(i, 0) = -in_mean[i] * in_inv_std[i];
        }
        // rowwise x*inv_std + shift via Mul with a broadcast-expanded constant
        const int b = tape.val(input).cols;
        Matrix<T> scale_full(in_dim(), b), shift_full(in_dim(), b);
        for (int i = 0; i < in_dim(); ++i)
            for (int j = 0; j < b; ++j) {
                scale_full(i, j) = scale(i, 0);
                shift_full(i, j) = shift(i, 0);
            }
        NodeId scaled = tape.mul(input, tape.constant(std::move(scale_full)));
        return tape.add(scaled, tape.constant(std::move(shift_full)));
    }

    Matrix<T> standardize_plain(const Matrix<T>& input) const {
        if (!standardized()) return input;
        Matrix<T> out = input;
        for (int i = 0; i < out.rows; ++i) {
            T* ri = out.row(i);
            for (int j = 0; j < out.cols; ++j) ri[j] = (ri[j] - in_mean[i]) * in_inv_std[i];
        }
        return out;
    }
};

// Streaming mean/variance accumulator for network inputs, merged in a fixed
// order across shards so the frozen statistics are reproducible.
template <typename T>
struct InputStats {
    std::vector<double> sum, sum_sq;
    int64_t count = 0;

    explicit InputStats(int dim = 0) : sum(dim, 0.0), sum_sq(dim, 0.0) {}

    void observe(const Matrix<T>& input) {
        for (int i = 0; i < input.rows; ++i) {
            const T* ri = input.row(i);
            for (int j = 0; j < input.cols; ++j) {
                sum[i] += static_cast<double>(ri[j]);
                sum_sq[i] += static_cast<double>(ri[j]) * static_cast<double>(ri[j]);
            }
        }
        count += input.cols;
    }

    void merge(const InputStats& o) {
        for (size_t i = 0; i < sum.size(); ++i) {
            sum[i] += o.sum[i];
            sum_sq[i] += o.sum_sq[i];
        }
        count += o.count;
    }

    void finalize(std::vector<T>& mean, std::vector<T>& inv_std) const {
        mean.resize(sum.size());
        inv_std.resize(sum.size());
        for (size_t i = 0; i < sum.size(); ++i) {
            const double m = count > 0 ? sum[i] / static_cast<double>(count) : 0.0;
            double var = count > 0 ? sum_sq[i] / static_cast<double>(count) - m * m : 1.0;
            if (var < 1e-12) var = 1e-12;
            double sd = std::sqrt(var);
            if (sd < 1e-3) sd = 1e-3;
            mean[i] = static_cast<T>(m);
            inv_std[i] = static_cast<T>(1.0 / sd);
        }
    }
};

}  // namespace eqrgan::diffcore

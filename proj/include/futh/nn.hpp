#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "futh/ops.hpp"

namespace futh::nn {

// Mutable per-pass context: training toggles batch-norm statistics and
// dropout; rng (required when training) feeds dropout masks and tuple draws.
struct PassCtx {
    bool training = false;
    Rng* rng = nullptr;
};

// Ordered registry of named parameters and named state tensors (batch-norm
// running statistics). Insertion order is the canonical serialization and
// update order, so construction must be deterministic.
template <class T>
class ParamStore {
public:
    struct Param {
        std::string name;
        std::string group;
        VarT<T> var;
    };
    struct State {
        std::string name;
        TensorT<T> value;
    };

    VarT<T> param(const std::string& name, TensorT<T> init, const std::string& group) {
        if (has_param(name)) throw StateError("ParamStore: duplicate parameter '" + name + "'");
        auto v = make_param(name, std::move(init), group);
        params_.push_back({name, group, v});
        return v;
    }

    TensorT<T>& state(const std::string& name, TensorT<T> init) {
        for (auto& s : states_)
            if (s.name == name) throw StateError("ParamStore: duplicate state '" + name + "'");
        states_.push_back({name, std::move(init)});
        return states_.back().value;
    }

    bool has_param(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return true;
        return false;
    }

    VarT<T> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p.var;
        throw StateError("ParamStore: unknown parameter '" + name + "'");
    }

    TensorT<T>& find_state(const std::string& name) {
        for (auto& s : states_)
            if (s.name == name) return s.value;
        throw StateError("ParamStore: unknown state '" + name + "'");
    }

    const std::vector<Param>& params() const { return params_; }
    std::deque<State>& states() { return states_; }
    const std::deque<State>& states() const { return states_; }

    void freeze_group(const std::string& group, bool frozen) {
        for (auto& p : params_)
            if (p.group == group) p.var->set_frozen(frozen);
    }

    void freeze_all(bool frozen) {
        for (auto& p : params_) p.var->set_frozen(frozen);
    }

    std::vector<VarT<T>> group_params(const std::string& group) const {
        std::vector<VarT<T>> out;
        for (const auto& p : params_)
            if (p.group == group) out.push_back(p.var);
        return out;
    }

    std::vector<VarT<T>> trainable() const {
        std::vector<VarT<T>> out;
        for (const auto& p : params_)
            if (!p.var->frozen) out.push_back(p.var);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.var->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.var->zero_grad();
    }

private:
    std::vector<Param> params_;
    std::deque<State> states_;  // deque: references handed to layers stay valid
};

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> he_normal(const Shape& shape, std::int64_t fan_in, Rng& rng, double gain) {
    auto t = TensorT<T>::randn(shape, rng);
    const T s = static_cast<T>(gain / std::sqrt(static_cast<double>(fan_in)));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= s;
    return t;
}

template <class T>
struct Conv3dLayer {
    VarT<T> w, b;
    ops::Dims3 stride, pad;

    Conv3dLayer(ParamStore<T>& ps, const std::string& name, const std::string& group,
                std::int64_t out_ch, std::int64_t in_ch, ops::Dims3 kernel, ops::Dims3 stride_,
                ops::Dims3 pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const std::int64_t fan_in = in_ch * kernel[0] * kernel[1] * kernel[2];
        w = ps.param(name + ".w",
                     he_normal<T>({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, fan_in, rng,
                                  std::sqrt(2.0)),
                     group);
        b = ps.param(name + ".b", TensorT<T>::zeros({out_ch}), group);
    }

    VarT<T> forward(const VarT<T>& x) const { return ops::conv3d(x, w, b, stride, pad); }
};

template <class T>
struct Conv2dLayer {
    VarT<T> w, b;
    ops::Dims2 stride, pad;

    Conv2dLayer(ParamStore<T>& ps, const std::string& name, const std::string& group,
                std::int64_t out_ch, std::int64_t in_ch, ops::Dims2 kernel, ops::Dims2 stride_,
                ops::Dims2 pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const std::int64_t fan_in = in_ch * kernel[0] * kernel[1];
        w = ps.param(name + ".w",
                     he_normal<T>({out_ch, in_ch, kernel[0], kernel[1]}, fan_in, rng, std::sqrt(2.0)),
                     group);
        b = ps.param(name + ".b", TensorT<T>::zeros({out_ch}), group);
    }

    VarT<T> forward(const VarT<T>& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

template <class T>
struct BatchNormLayer {
    VarT<T> gamma, beta;
    TensorT<T>* running_mean;
    TensorT<T>* running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNormLayer(ParamStore<T>& ps, const std::string& name, const std::string& group,
                   std::int64_t channels) {
        gamma = ps.param(name + ".gamma", TensorT<T>::ones({channels}), group);
        beta = ps.param(name + ".beta", TensorT<T>::zeros({channels}), group);
        running_mean = &ps.state(name + ".running_mean", TensorT<T>::zeros({channels}));
        running_var = &ps.state(name + ".running_var", TensorT<T>::ones({channels}));
    }

    VarT<T> forward(const VarT<T>& x, const PassCtx& ctx) {
        if (!ctx.training)
            return ops::batchnorm_eval(x, gamma, beta, *running_mean, *running_var, eps);
        auto out = ops::batchnorm_train(x, gamma, beta, eps);
        const std::int64_t C = gamma->value.numel();
        const std::int64_t M = x->value.numel() / C;
        // unbiased variance feeds the running estimate, as is conventional
        const T bessel = M > 1 ? static_cast<T>(M) / static_cast<T>(M - 1) : T(1);
        for (std::int64_t c = 0; c < C; ++c) {
            (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * out.batch_mean[c];
            (*running_var)[c] =
                (T(1) - momentum) * (*running_var)[c] + momentum * out.batch_var[c] * bessel;
        }
        return out.y;
    }
};

template <class T>
struct LinearLayer {
    VarT<T> w, b;

    LinearLayer(ParamStore<T>& ps, const std::string& name, const std::string& group,
                std::int64_t out_dim, std::int64_t in_dim, Rng& rng, double gain = 1.0) {
        w = ps.param(name + ".w", he_normal<T>({out_dim, in_dim}, in_dim, rng, gain), group);
        b = ps.param(name + ".b", TensorT<T>::zeros({out_dim}), group);
    }

    VarT<T> forward(const VarT<T>& x) const { return ops::linear(x, w, b); }
};

template <class T>
struct DropoutLayer {
    T rate;

    explicit DropoutLayer(T rate_) : rate(rate_) {
        if (rate < T(0) || rate >= T(1)) throw ConfigError("dropout rate must be in [0,1)");
    }

    VarT<T> forward(const VarT<T>& x, const PassCtx& ctx) const {
        return ops::dropout(x, rate, ctx.training, ctx.rng);
    }
};

}  // namespace futh::nn

#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "futh/ops.hpp"

namespace futh {

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences. make_loss must be a pure function of the leaf values
// (re-invoked under perturbation), and every leaf must already require grad.
inline double grad_check(const std::vector<VarT<double>>& leaves,
                         const std::function<VarT<double>()>& make_loss,
                         double step = 1e-5) {
    if (step <= 0) throw InputError("grad_check: step must be positive");
    for (const auto& l : leaves) {
        if (!l || !l->requires_grad) throw InputError("grad_check: leaf does not require grad");
        l->zero_grad();
    }
    auto root = make_loss();
    backward(root);

    std::vector<TensorT<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves)
        analytic.push_back(l->grad.numel() ? l->grad : TensorT<double>::zeros(l->value.shape()));

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        TensorT<double>& v = leaves[li]->value;
        for (std::int64_t i = 0; i < v.numel(); ++i) {
            const double orig = v[i];
            v[i] = orig + step;
            const double fp = make_loss()->value[0];
            v[i] = orig - step;
            const double fm = make_loss()->value[0];
            v[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            worst = std::max(worst, rel_err(analytic[li][i], numeric));
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// named per-op check suite (also the engine behind the gradcheck command)
// ---------------------------------------------------------------------------

struct GradCheckRow {
    std::string op;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool ok() const { return max_rel_err < tolerance; }
};

namespace gcdetail {

using V = VarT<double>;

inline V leaf_randn(const Shape& s, Rng& rng, double scale = 1.0) {
    auto t = TensorT<double>::randn(s, rng);
    if (scale != 1.0)
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= scale;
    return make_leaf(std::move(t), true);
}

// All-distinct values with pairwise gaps >= 0.01 so a 1e-5 perturbation can
// never flip a max-pool argmax.
inline V leaf_distinct(const Shape& s, Rng& rng) {
    TensorT<double> t(s);
    std::vector<std::int64_t> order(static_cast<std::size_t>(t.numel()));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    rng.shuffle(order);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = 0.01 * static_cast<double>(order[static_cast<std::size_t>(i)] - t.numel() / 2);
    return make_leaf(std::move(t), true);
}

// |x| >= margin everywhere; keeps relu kinks away from the probe step.
inline V leaf_away_from_zero(const Shape& s, Rng& rng, double margin) {
    auto t = TensorT<double>::randn(s, rng);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] += t[i] >= 0.0 ? margin : -margin;
    return make_leaf(std::move(t), true);
}

// Fixed random projection to a scalar; sharper than a plain sum because index
// permutations and dropped terms change the loss.
inline std::function<V(const V&)> make_reducer(const Shape& out_shape, Rng& rng) {
    auto w = make_leaf(TensorT<double>::randn(out_shape, rng), false);
    return [w](const V& y) { return ops::sum(ops::hadamard(y, w)); };
}

// Forwards conv3d but rescales and offsets the upstream gradient — the
// detector fixture for a broken analytic backward.
inline V conv3d_broken(const V& x, const V& w, const V& b, ops::Dims3 stride, ops::Dims3 pad) {
    auto y = ops::conv3d(x, w, b, stride, pad);
    auto n = std::make_shared<NodeT<double>>();
    n->value = y->value;
    n->op = "conv3d_broken";
    n->requires_grad = y->requires_grad;
    n->inputs = {y};
    n->backward_op = [y](NodeT<double>& self) {
        y->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            y->grad[i] += self.grad[i] * 1.05 + 0.01;
    };
    return n;
}

}  // namespace gcdetail

// Runs every differentiable op through grad_check on at least three random
// shapes each. corrupt_conv3d swaps in the broken-backward fixture so callers
// can verify the detector actually fires.
inline std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed, bool corrupt_conv3d = false,
                                                 double step = 1e-5, double tolerance = 1e-4) {
    using namespace gcdetail;
    std::vector<GradCheckRow> rows;
    Rng root(seed);

    auto run = [&](const std::string& name,
                   const std::function<double(Rng&, int)>& one_shape, int n_shapes = 3) {
        GradCheckRow row{name, 0.0, tolerance};
        Rng rng = root.child(std::hash<std::string>{}(name));
        for (int k = 0; k < n_shapes; ++k) row.max_rel_err = std::max(row.max_rel_err, one_shape(rng, k));
        rows.push_back(row);
    };

    const Shape shapes2[3] = {{2, 3}, {4, 5}, {3, 2, 4}};

    run("add", [&](Rng& rng, int k) {
        auto a = leaf_randn(shapes2[k], rng), b = leaf_randn(shapes2[k], rng);
        auto red = make_reducer(shapes2[k], rng);
        return grad_check({a, b}, [&] { return red(ops::add(a, b)); }, step);
    });
    run("scale", [&](Rng& rng, int k) {
        auto x = leaf_randn(shapes2[k], rng);
        auto red = make_reducer(shapes2[k], rng);
        const double alpha = 0.3 + 0.5 * k;
        return grad_check({x}, [&] { return red(ops::scale(x, alpha)); }, step);
    });
    run("hadamard", [&](Rng& rng, int k) {
        auto a = leaf_randn(shapes2[k], rng), b = leaf_randn(shapes2[k], rng);
        auto red = make_reducer(shapes2[k], rng);
        return grad_check({a, b}, [&] { return red(ops::hadamard(a, b)); }, step);
    });
    run("emax", [&](Rng& rng, int k) {
        auto a = leaf_randn(shapes2[k], rng);
        // keep |a-b| >= 0.15 so the probe step cannot flip the winner
        TensorT<double> bt(shapes2[k]);
        for (std::int64_t i = 0; i < bt.numel(); ++i) {
            const double off = rng.next_u64() & 1 ? 0.2 : -0.2;
            bt[i] = a->value[i] + off + 0.05 * (2.0 * rng.next_double() - 1.0);
        }
        auto b = make_leaf(std::move(bt), true);
        auto red = make_reducer(shapes2[k], rng);
        return grad_check({a, b}, [&] { return red(ops::emax(a, b)); }, step);
    });
    run("relu", [&](Rng& rng, int k) {
        auto x = leaf_away_from_zero(shapes2[k], rng, 0.1);
        auto red = make_reducer(shapes2[k], rng);
        return grad_check({x}, [&] { return red(ops::relu(x)); }, step);
    });
    run("sum", [&](Rng& rng, int k) {
        auto x = leaf_randn(shapes2[k], rng);
        return grad_check({x}, [&] { return ops::sum(x); }, step);
    });
    run("reshape", [&](Rng& rng, int k) {
        const Shape in[3] = {{2, 6}, {3, 4}, {2, 2, 3}};
        const Shape out[3] = {{3, 4}, {12}, {6, 2}};
        auto x = leaf_randn(in[k], rng);
        auto red = make_reducer(out[k], rng);
        return grad_check({x}, [&] { return red(ops::reshape(x, out[k])); }, step);
    });
    run("concat", [&](Rng& rng, int k) {
        const std::size_t axis = k == 2 ? 0 : static_cast<std::size_t>(k);
        Shape sa{2, 3}, sb{2, 3};
        sb[axis] = 1 + k;
        auto a = leaf_randn(sa, rng), b = leaf_randn(sb, rng);
        Shape so = sa;
        so[axis] += sb[axis];
        auto red = make_reducer(so, rng);
        return grad_check({a, b}, [&] { return red(ops::concat<double>({a, b}, axis)); }, step);
    });
    run("take_frame", [&](Rng& rng, int k) {
        auto x = leaf_randn({2, 2, 3 + k, 2, 2}, rng);
        auto red = make_reducer({2, 2, 2, 2}, rng);
        return grad_check({x}, [&] { return red(ops::take_frame(x, k)); }, step);
    });
    run("gather_rows", [&](Rng& rng, int k) {
        auto x = leaf_randn({2, 4 + k, 3}, rng);
        std::vector<std::int64_t> idx{0, static_cast<std::int64_t>(k + 1), 2};
        auto red = make_reducer({2, 9}, rng);
        return grad_check({x}, [&] { return red(ops::gather_rows(x, idx)); }, step);
    });
    run("linear", [&](Rng& rng, int k) {
        const std::int64_t B = 2 + k, Din = 3 + k, Dout = 4 - (k % 2);
        auto x = leaf_randn({B, Din}, rng);
        auto w = leaf_randn({Dout, Din}, rng);
        auto b = leaf_randn({Dout}, rng);
        auto red = make_reducer({B, Dout}, rng);
        return grad_check({x, w, b}, [&] { return red(ops::linear(x, w, b)); }, step);
    });
    run("conv2d", [&](Rng& rng, int k) {
        struct Cfg { Shape x, w; ops::Dims2 s, p; } cfg[3] = {
            {{1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1}, {1, 1}},
            {{2, 1, 6, 6}, {2, 1, 3, 3}, {2, 2}, {0, 0}},
            {{1, 3, 4, 5}, {2, 3, 2, 3}, {1, 2}, {1, 0}},
        };
        auto x = leaf_randn(cfg[k].x, rng);
        auto w = leaf_randn(cfg[k].w, rng);
        auto b = leaf_randn({cfg[k].w[0]}, rng);
        auto probe = ops::conv2d(x, w, b, cfg[k].s, cfg[k].p);
        auto red = make_reducer(probe->value.shape(), rng);
        return grad_check({x, w, b},
                          [&] { return red(ops::conv2d(x, w, b, cfg[k].s, cfg[k].p)); }, step);
    });
    run("conv3d", [&](Rng& rng, int k) {
        struct Cfg { Shape x, w; ops::Dims3 s, p; } cfg[3] = {
            {{1, 1, 3, 4, 4}, {2, 1, 2, 2, 2}, {1, 1, 1}, {0, 0, 0}},
            {{1, 2, 4, 5, 5}, {2, 2, 3, 3, 3}, {1, 2, 2}, {1, 1, 1}},
            {{2, 1, 3, 4, 5}, {1, 1, 2, 3, 3}, {2, 1, 2}, {0, 1, 1}},
        };
        auto x = leaf_randn(cfg[k].x, rng);
        auto w = leaf_randn(cfg[k].w, rng);
        auto b = leaf_randn({cfg[k].w[0]}, rng);
        auto make = [&] {
            return corrupt_conv3d ? conv3d_broken(x, w, b, cfg[k].s, cfg[k].p)
                                  : ops::conv3d(x, w, b, cfg[k].s, cfg[k].p);
        };
        auto red = make_reducer(make()->value.shape(), rng);
        return grad_check({x, w, b}, [&] { return red(make()); }, step);
    });
    run("maxpool3d", [&](Rng& rng, int k) {
        struct Cfg { Shape x; ops::Dims3 kz, s; } cfg[3] = {
            {{1, 2, 4, 4, 4}, {2, 2, 2}, {2, 2, 2}},
            {{2, 1, 3, 6, 6}, {1, 3, 3}, {1, 2, 2}},
            {{1, 1, 5, 5, 5}, {2, 3, 3}, {2, 2, 2}},
        };
        auto x = leaf_distinct(cfg[k].x, rng);
        auto probe = ops::maxpool3d(x, cfg[k].kz, cfg[k].s);
        auto red = make_reducer(probe->value.shape(), rng);
        return grad_check({x}, [&] { return red(ops::maxpool3d(x, cfg[k].kz, cfg[k].s)); }, step);
    });
    run("global_avgpool3d", [&](Rng& rng, int k) {
        Shape xs{1 + k, 2, 2, 3, 3};
        auto x = leaf_randn(xs, rng);
        auto red = make_reducer({1 + k, 2}, rng);
        return grad_check(
            {x}, [&] { return red(ops::global_avgpool3d(x, {xs[2], xs[3], xs[4]})); }, step);
    });
    run("batchnorm_train", [&](Rng& rng, int k) {
        const Shape xs[3] = {{4, 2, 3}, {3, 3, 2, 2}, {2, 2, 2, 3, 3}};
        auto x = leaf_randn(xs[k], rng);
        const std::int64_t C = xs[k][1];
        auto gamma = leaf_randn({C}, rng, 0.5);
        auto beta = leaf_randn({C}, rng, 0.5);
        auto red = make_reducer(xs[k], rng);
        return grad_check({x, gamma, beta}, [&] {
            return red(ops::batchnorm_train(x, gamma, beta, 1e-5).y);
        }, step);
    });
    run("batchnorm_eval", [&](Rng& rng, int k) {
        const Shape xs[3] = {{4, 2, 3}, {3, 3, 2, 2}, {2, 2, 2, 3, 3}};
        auto x = leaf_randn(xs[k], rng);
        const std::int64_t C = xs[k][1];
        auto gamma = leaf_randn({C}, rng, 0.5);
        auto beta = leaf_randn({C}, rng, 0.5);
        auto rm = TensorT<double>::randn({C}, rng);
        auto rv = TensorT<double>::uniform({C}, rng, 0.5, 1.5);
        auto red = make_reducer(xs[k], rng);
        return grad_check({x, gamma, beta}, [&] {
            return red(ops::batchnorm_eval(x, gamma, beta, rm, rv, 1e-5));
        }, step);
    });
    run("dropout_mask", [&](Rng& rng, int k) {
        auto x = leaf_randn(shapes2[k], rng);
        Rng mask_rng = rng.child(7);
        auto mask = ops::dropout_mask<double>(shapes2[k], 0.3, mask_rng);
        auto red = make_reducer(shapes2[k], rng);
        return grad_check({x}, [&] { return red(ops::apply_mask(x, mask)); }, step);
    });
    run("softmax_cross_entropy", [&](Rng& rng, int k) {
        const std::int64_t B = 2 + k, K = 3 + k;
        auto logits = leaf_randn({B, K}, rng);
        std::vector<int> labels;
        for (std::int64_t b = 0; b < B; ++b)
            labels.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(K))));
        return grad_check(
            {logits}, [&] { return ops::softmax_cross_entropy(logits, labels).loss; }, step);
    });
    run("resize_nearest", [&](Rng& rng, int k) {
        struct Cfg { Shape x; ops::Dims3 o; } cfg[3] = {
            {{1, 2, 2, 3, 3}, {4, 6, 6}},
            {{2, 1, 4, 4, 4}, {2, 2, 2}},
            {{1, 1, 3, 5, 2}, {3, 4, 4}},
        };
        auto x = leaf_randn(cfg[k].x, rng);
        auto red = make_reducer({cfg[k].x[0], cfg[k].x[1], cfg[k].o[0], cfg[k].o[1], cfg[k].o[2]}, rng);
        return grad_check({x}, [&] { return red(ops::resize_nearest(x, cfg[k].o)); }, step);
    });

    return rows;
}

}  // namespace futh

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "futh/error.hpp"

namespace futh {

// rows = ground truth, columns = prediction
struct ConfusionMatrix {
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::string> class_names;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int k, std::vector<std::string> names = {})
        : counts(static_cast<std::size_t>(k),
                 std::vector<std::int64_t>(static_cast<std::size_t>(k), 0)),
          class_names(std::move(names)) {
        if (k <= 0) throw InputError("confusion matrix: class count must be positive");
        if (!class_names.empty() && static_cast<int>(class_names.size()) != k)
            throw InputError("confusion matrix: name table size != class count");
    }

    int k() const { return static_cast<int>(counts.size()); }

    void add(int truth, int predicted, std::int64_t n = 1) {
        if (truth < 0 || truth >= k() || predicted < 0 || predicted >= k())
            throw InputError("confusion matrix: class index out of range");
        if (n < 0) throw InputError("confusion matrix: negative count");
        counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)] += n;
    }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (const auto& row : counts)
            for (auto v : row) t += v;
        return t;
    }

    std::int64_t trace() const {
        std::int64_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }

    std::string name_of(int cls) const {
        if (!class_names.empty()) return class_names[static_cast<std::size_t>(cls)];
        return "class" + std::to_string(cls);
    }

    static ConfusionMatrix from_predictions(const std::vector<int>& truth,
                                            const std::vector<int>& predicted, int k,
                                            std::vector<std::string> names = {}) {
        if (truth.size() != predicted.size())
            throw InputError("confusion matrix: truth/prediction length mismatch");
        ConfusionMatrix cm(k, std::move(names));
        for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
        return cm;
    }
};

// cm[k][k] / column-sum k; 0 for never-predicted classes
inline std::vector<double> precision_per_class(const ConfusionMatrix& cm) {
    const int K = cm.k();
    std::vector<double> out(static_cast<std::size_t>(K), 0.0);
    for (int c = 0; c < K; ++c) {
        std::int64_t col = 0;
        for (int r = 0; r < K; ++r) col += cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        if (col > 0)
            out[static_cast<std::size_t>(c)] =
                static_cast<double>(cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                static_cast<double>(col);
    }
    return out;
}

inline double overall_accuracy(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw InputError("overall_accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

// Cohen's kappa: (p_o - p_e) / (1 - p_e); 0 when chance agreement is total.
inline double kappa(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw InputError("kappa: empty confusion matrix");
    const int K = cm.k();
    const double p_o = overall_accuracy(cm);
    double p_e = 0.0;
    for (int c = 0; c < K; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < K; ++j) {
            row += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
            col += cm.counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        }
        p_e += static_cast<double>(row) * static_cast<double>(col);
    }
    p_e /= static_cast<double>(total) * static_cast<double>(total);
    if (p_e >= 1.0) return 0.0;
    return (p_o - p_e) / (1.0 - p_e);
}

// each nonzero row rescaled to sum 1; zero rows stay all-zero
inline std::vector<std::vector<double>> normalize_rows(const ConfusionMatrix& cm) {
    const int K = cm.k();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(K),
                                         std::vector<double>(static_cast<std::size_t>(K), 0.0));
    for (int r = 0; r < K; ++r) {
        std::int64_t row = 0;
        for (int c = 0; c < K; ++c) row += cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        if (row == 0) continue;
        for (int c = 0; c < K; ++c)
            out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                static_cast<double>(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) /
                static_cast<double>(row);
    }
    return out;
}

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<double> precision;
    double oa = 0.0;
    double kappa_value = 0.0;
    std::vector<std::vector<double>> normalized;

    // line-oriented: `name,precision` per class, `OA,v`, `kappa,v`, then the
    // normalized matrix rows — fixed 6-digit formatting so output is
    // byte-stable across runs
    std::string to_text() const {
        std::string out;
        char buf[64];
        for (std::size_t c = 0; c < precision.size(); ++c) {
            std::snprintf(buf, sizeof(buf), ",%.6f\n", precision[c]);
            out += class_names[c];
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "OA,%.6f\n", oa);
        out += buf;
        std::snprintf(buf, sizeof(buf), "kappa,%.6f\n", kappa_value);
        out += buf;
        for (const auto& row : normalized) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                std::snprintf(buf, sizeof(buf), c ? ",%.6f" : "%.6f", row[c]);
                out += buf;
            }
            out += "\n";
        }
        return out;
    }
};

inline EvalReport make_eval_report(const ConfusionMatrix& cm) {
    EvalReport r;
    const int K = cm.k();
    r.class_names.reserve(static_cast<std::size_t>(K));
    for (int c = 0; c < K; ++c) r.class_names.push_back(cm.name_of(c));
    r.precision = precision_per_class(cm);
    r.oa = overall_accuracy(cm);
    r.kappa_value = kappa(cm);
    r.normalized = normalize_rows(cm);
    return r;
}

}  // namespace futh

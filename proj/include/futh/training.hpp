#pragma once

#include <array>
#include <cstdio>
#include <utility>

#include "futh/checkpoint.hpp"
#include "futh/data.hpp"
#include "futh/metrics.hpp"
#include "futh/model.hpp"

namespace futh {

// ---------------------------------------------------------------------------
// phases and plans
// ---------------------------------------------------------------------------

enum class PhaseKind { holistic = 0, relation = 1, fusion = 2 };

inline const char* phase_name(PhaseKind k) {
    switch (k) {
        case PhaseKind::holistic: return "holistic";
        case PhaseKind::relation: return "relation";
        case PhaseKind::fusion: return "fusion";
    }
    throw StateError("phase_name: bad phase kind");
}

inline PhaseKind phase_from_string(const std::string& s) {
    if (s == "holistic") return PhaseKind::holistic;
    if (s == "relation") return PhaseKind::relation;
    if (s == "fusion") return PhaseKind::fusion;
    throw ConfigError("unknown phase '" + s + "' (expected holistic|relation|fusion)");
}

struct PhaseSpec {
    PhaseKind kind = PhaseKind::holistic;
    std::int64_t epochs = 0;
    double lr = 1e-3;
};

// Phases must appear in pipeline order (holistic before relation before
// fusion); any ordered subset is a valid plan.
inline void validate_plan(const std::vector<PhaseSpec>& plan) {
    if (plan.empty()) throw ConfigError("training plan has no phases");
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (plan[i].epochs < 0) throw ConfigError("training plan: negative epoch count");
        if (!(plan[i].lr > 0)) throw ConfigError("training plan: learning rate must be positive");
        if (i > 0 && static_cast<int>(plan[i].kind) <= static_cast<int>(plan[i - 1].kind))
            throw ConfigError(std::string("training plan: phase '") + phase_name(plan[i].kind) +
                              "' cannot follow '" + phase_name(plan[i - 1].kind) +
                              "' (order is holistic, relation, fusion)");
    }
}

struct TrainLoopCfg {
    std::int64_t batch = 6;
    std::int64_t eval_batch = 8;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool cache_frozen = true;  // fusion phase: precompute frozen-pathway features once
};

// ---------------------------------------------------------------------------
// heavy-ball SGD
// ---------------------------------------------------------------------------

// One velocity slot per parameter name; slots persist across steps within a
// phase and are serialized into checkpoints.
template <class T>
struct SgdState {
    std::vector<std::pair<std::string, TensorT<T>>> velocity;
};

// v <- momentum * v - lr * (grad + weight_decay * w);  w <- w + v
// Frozen parameters and parameters without gradients are left untouched.
template <class T>
void sgd_step(nn::ParamStore<T>& store, SgdState<T>& state, double lr, double momentum,
              double weight_decay) {
    for (const auto& p : store.params()) {
        if (p.var->frozen || !p.var->requires_grad) continue;
        if (p.var->grad.numel() == 0) continue;
        TensorT<T>* vel = nullptr;
        for (auto& [n, v] : state.velocity)
            if (n == p.name) {
                vel = &v;
                break;
            }
        if (!vel) {
            state.velocity.emplace_back(p.name, TensorT<T>::zeros(p.var->value.shape()));
            vel = &state.velocity.back().second;
        }
        TensorT<T>& w = p.var->value;
        const TensorT<T>& g = p.var->grad;
        TensorT<T>& v = *vel;
        const T m = static_cast<T>(momentum), a = static_cast<T>(lr), wd = static_cast<T>(weight_decay);
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            v[i] = m * v[i] - a * (g[i] + wd * w[i]);
            w[i] += v[i];
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

enum class HeadKind { holistic, relation, fused };

inline HeadKind head_from_string(const std::string& s) {
    if (s == "holistic") return HeadKind::holistic;
    if (s == "relation") return HeadKind::relation;
    if (s == "fused") return HeadKind::fused;
    throw ConfigError("unknown head '" + s + "' (expected holistic|relation|fused)");
}

template <class T>
std::int64_t argmax_row(const TensorT<T>& m, std::int64_t row) {
    const std::int64_t k = m.dim(1);
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j)
        if (m[row * k + j] > m[row * k + best]) best = j;
    return best;
}

// Deterministic whole-dataset evaluation in eval mode (fixed batching, fixed
// order, fixed relation tuples, no dropout).
template <class T>
ConfusionMatrix evaluate_model(FuThNet<T>& model, const Dataset& ds, HeadKind head,
                               std::int64_t batch) {
    if (ds.clips.empty()) throw InputError("evaluate: dataset is empty");
    if (batch < 1) throw ConfigError("evaluate: batch size must be positive");
    ConfusionMatrix cm(static_cast<int>(model.n_classes()), ds.class_names);
    const std::int64_t n = static_cast<std::int64_t>(ds.clips.size());
    for (std::int64_t at = 0; at < n; at += batch) {
        std::vector<std::size_t> rows;
        for (std::int64_t i = at; i < std::min(n, at + batch); ++i)
            rows.push_back(static_cast<std::size_t>(i));
        auto [bt, labels] = make_batch(ds, rows, model.spec().frames);
        auto x = make_input(bt.template cast<T>());
        ModeSet modes = ModeSet::all_eval();
        VarT<T> logits;
        switch (head) {
            case HeadKind::holistic: logits = model.holistic_logits(x, modes.holistic); break;
            case HeadKind::relation: logits = model.relation_logits(x, modes.relation); break;
            case HeadKind::fused: logits = model.fused_logits(x, modes); break;
        }
        for (std::size_t b = 0; b < rows.size(); ++b)
            cm.add(labels[b], static_cast<int>(argmax_row(logits->value, static_cast<std::int64_t>(b))));
    }
    return cm;
}

// ---------------------------------------------------------------------------
// checkpoint <-> model plumbing
// ---------------------------------------------------------------------------

// Copies parameters and running statistics from a checkpoint into the model.
// strict: every model entry must be present with a matching shape. Loose mode
// (warm-starting) copies whatever matches by name and reports the count;
// present-but-mismatched shapes are an error in both modes.
template <class T>
std::int64_t load_model_params(FuThNet<T>& model, const CheckpointFile& ck, bool strict) {
    const std::uint32_t want = std::is_same_v<T, float> ? 32 : 64;
    if (ck.precision != want)
        throw ConfigError("checkpoint precision " + std::to_string(ck.precision) +
                          " does not match model precision " + std::to_string(want));
    std::int64_t loaded = 0;
    for (const auto& p : model.params().params()) {
        const std::string key = "param/" + p.name;
        if (!ck.find(key)) {
            if (strict) throw ConfigError("checkpoint: missing entry '" + key + "'");
            continue;
        }
        TensorT<T> t = ck.template tensor<T>(key);
        if (!t.same_shape(p.var->value))
            throw ConfigError("checkpoint: parameter '" + p.name + "' has shape " +
                              shape_str(t.shape()) + ", model expects " +
                              shape_str(p.var->value.shape()));
        p.var->value = std::move(t);
        ++loaded;
    }
    for (auto& s : model.params().states()) {
        const std::string key = "state/" + s.name;
        if (!ck.find(key)) {
            if (strict) throw ConfigError("checkpoint: missing entry '" + key + "'");
            continue;
        }
        TensorT<T> t = ck.template tensor<T>(key);
        if (!t.same_shape(s.value))
            throw ConfigError("checkpoint: state '" + s.name + "' has shape " +
                              shape_str(t.shape()) + ", model expects " + shape_str(s.value.shape()));
        s.value = std::move(t);
        ++loaded;
    }
    return loaded;
}

// ---------------------------------------------------------------------------
// the staged trainer
// ---------------------------------------------------------------------------

// Runs a phase plan over a model: phase 1 trains the holistic pathway and its
// head, phase 2 the relation pathway and its head (holistic untouched), phase
// 3 the fusion block and its head with both pathways frozen in eval mode.
// Every stochastic choice draws from one per-phase stream derived from the
// train seed, so runs and resumed runs are bit-reproducible.
template <class T>
class Trainer {
public:
    Trainer(FuThNet<T>& model, const Dataset& train_ds, const Dataset& eval_ds,
            std::vector<PhaseSpec> plan, TrainLoopCfg cfg, std::uint64_t train_seed)
        : model_(model),
          train_(train_ds),
          eval_(eval_ds),
          plan_(std::move(plan)),
          cfg_(cfg),
          train_seed_(train_seed) {
        validate_plan(plan_);
        if (train_.clips.empty()) throw InputError("trainer: training set is empty");
        if (eval_.clips.empty()) throw InputError("trainer: evaluation set is empty");
        if (cfg_.batch < 1 || cfg_.eval_batch < 1)
            throw ConfigError("trainer: batch sizes must be positive");
        if (train_.n_classes() > model_.n_classes())
            throw ConfigError("trainer: dataset has more classes than the model head");
    }

    void set_out_dir(std::string dir) { out_dir_ = std::move(dir); }

    const std::string& loss_log() const { return log_; }
    const std::array<std::string, 3>& phase_reports() const { return reports_; }
    const std::string& report(PhaseKind k) const { return reports_[static_cast<std::size_t>(k)]; }

    // Advances the run by one unit (phase entry, one epoch, or phase wrap-up)
    // and saves progress, so a run can stop after any step and resume from the
    // written checkpoint bit-exactly. Returns false once the plan is finished.
    bool step() {
        if (phase_idx_ >= plan_.size()) return false;
        const PhaseSpec& ph = plan_[phase_idx_];
        configure_freeze(ph.kind);
        if (model_.params().trainable().empty())
            throw ConfigError(std::string("phase '") + phase_name(ph.kind) +
                              "' has no trainable parameters");
        if (ph.kind == PhaseKind::fusion && cfg_.cache_frozen) build_cache();
        if (stage_ == 0) {
            phase_rng_ = Rng(train_seed_).child(phase_idx_ + 1);
            sgd_.velocity.clear();
            const auto [l, a] = epoch_metrics_eval(ph.kind);
            append_log(ph.kind, 0, l, a);
            stage_ = 1;
        } else if (epochs_done_ < ph.epochs) {
            const auto [l, a] = train_one_epoch(ph);
            append_log(ph.kind, epochs_done_ + 1, l, a);
            ++epochs_done_;
        } else {
            finish_phase(ph.kind);
            ++phase_idx_;
            epochs_done_ = 0;
            stage_ = 0;
        }
        save_progress();
        return true;
    }

    void run() {
        while (step()) {
        }
        if (!out_dir_.empty()) {
            snapshot().write(out_dir_ + "/final.ckpt");
            write_text(out_dir_ + "/loss.log", log_);
            for (std::size_t k = 0; k < reports_.size(); ++k)
                if (!reports_[k].empty())
                    write_text(out_dir_ + "/report_" + phase_name(static_cast<PhaseKind>(k)) + ".txt",
                               reports_[k]);
        }
    }

    // Everything needed to continue a run bit-exactly: parameters, running
    // stats, optimizer velocity, the phase rng cursor, the plan cursor, and
    // the text artifacts accumulated so far.
    CheckpointFile snapshot() const {
        CheckpointFile ck;
        ck.precision = std::is_same_v<T, float> ? 32 : 64;
        for (const auto& p : model_.params().params()) ck.add_tensor("param/" + p.name, p.var->value);
        for (const auto& s : model_.params().states()) ck.add_tensor("state/" + s.name, s.value);
        for (const auto& p : model_.params().params())
            for (const auto& [n, v] : sgd_.velocity)
                if (n == p.name) ck.add_tensor("vel/" + n, v);
        ck.add_u64("rng/phase", {phase_rng_.seed(), phase_rng_.counter()});
        ck.add_u64("cursor/plan", {static_cast<std::uint64_t>(phase_idx_),
                                   static_cast<std::uint64_t>(epochs_done_),
                                   static_cast<std::uint64_t>(stage_)});
        ck.add_u64("meta/train_seed", {train_seed_});
        ck.add_bytes("meta/loss_log", log_);
        for (std::size_t k = 0; k < reports_.size(); ++k)
            if (!reports_[k].empty())
                ck.add_bytes(std::string("meta/report_") + phase_name(static_cast<PhaseKind>(k)),
                             reports_[k]);
        return ck;
    }

    void resume(const CheckpointFile& ck) {
        const auto seed = ck.u64s("meta/train_seed");
        if (seed.size() != 1 || seed[0] != train_seed_)
            throw ConfigError("checkpoint was produced with a different train seed");
        load_model_params(model_, ck, true);
        sgd_.velocity.clear();
        for (const auto& b : ck.blobs) {
            if (b.name.rfind("vel/", 0) != 0) continue;
            const std::string pname = b.name.substr(4);
            auto var = model_.params().find(pname);
            TensorT<T> v = ck.template tensor<T>(b.name);
            if (!v.same_shape(var->value))
                throw ConfigError("checkpoint: velocity '" + pname + "' has shape " +
                                  shape_str(v.shape()) + ", model expects " +
                                  shape_str(var->value.shape()));
            sgd_.velocity.emplace_back(pname, std::move(v));
        }
        const auto rng = ck.u64s("rng/phase");
        if (rng.size() != 2) throw ConfigError("checkpoint: malformed rng entry");
        phase_rng_.restore(rng[0], rng[1]);
        const auto cur = ck.u64s("cursor/plan");
        if (cur.size() != 3) throw ConfigError("checkpoint: malformed plan cursor");
        phase_idx_ = static_cast<std::size_t>(cur[0]);
        epochs_done_ = static_cast<std::int64_t>(cur[1]);
        stage_ = static_cast<int>(cur[2]);
        if (phase_idx_ > plan_.size())
            throw ConfigError("checkpoint cursor is past the end of the phase plan");
        if (phase_idx_ < plan_.size() && epochs_done_ > plan_[phase_idx_].epochs)
            throw ConfigError("checkpoint cursor exceeds the phase epoch budget");
        log_ = ck.bytes("meta/loss_log");
        for (std::size_t k = 0; k < reports_.size(); ++k)
            reports_[k] = ck.bytes(std::string("meta/report_") + phase_name(static_cast<PhaseKind>(k)));
        cache_ready_ = false;
    }

private:
    struct BatchOut {
        VarT<T> logits;
        std::vector<int> labels;
    };

    // Freezing is group-based; the groups were assigned at construction.
    void configure_freeze(PhaseKind kind) {
        auto& ps = model_.params();
        ps.freeze_all(true);
        switch (kind) {
            case PhaseKind::holistic:
                ps.freeze_group("holistic", false);
                ps.freeze_group("holistic_head", false);
                break;
            case PhaseKind::relation:
                if (!model_.spec().relation.freeze_extractor_in_phase2)
                    ps.freeze_group("relation_ext", false);
                ps.freeze_group("relation_mlp", false);
                ps.freeze_group("relation_head", false);
                break;
            case PhaseKind::fusion:
                ps.freeze_group("fusion", false);
                ps.freeze_group("fusion_head", false);
                break;
        }
    }

    BatchOut forward_batch(PhaseKind kind, const Dataset& ds, const std::vector<std::size_t>& rows,
                           bool train) {
        BatchOut out;
        if (kind == PhaseKind::fusion && cache_ready_ && &ds == &train_) {
            out.labels = labels_for(ds, rows);
            typename FuThNet<T>::Features f;
            f.g = make_input(gather_cached(cache_g_, rows));
            f.l = make_input(gather_cached(cache_l_, rows));
            if (!cache_hvol_.empty()) {
                f.hvol = make_input(gather_cached(cache_hvol_, rows));
                f.rvol = make_input(gather_cached(cache_rvol_, rows));
            }
            ModeSet modes = ModeSet::all_eval();
            modes.fusion = {train, &phase_rng_};
            out.logits = model_.head_logits_over_z(model_.fuse(f, modes));
            return out;
        }
        auto [bt, labels] = make_batch(ds, rows, model_.spec().frames);
        out.labels = std::move(labels);
        auto x = make_input(bt.template cast<T>());
        switch (kind) {
            case PhaseKind::holistic: {
                nn::PassCtx ctx{train, &phase_rng_};
                out.logits = model_.holistic_logits(x, ctx);
                break;
            }
            case PhaseKind::relation: {
                const bool ext_train = train && !model_.spec().relation.freeze_extractor_in_phase2;
                nn::PassCtx ext_ctx{ext_train, &phase_rng_};
                nn::PassCtx mlp_ctx{train, &phase_rng_};
                auto feats = model_.relation().extractor().forward(x, ext_ctx);
                auto l = model_.relation().bank_from_features(feats, mlp_ctx);
                out.logits = model_.head_logits_over_l(l);
                break;
            }
            case PhaseKind::fusion: {
                ModeSet modes = ModeSet::all_eval();
                modes.fusion = {train, &phase_rng_};
                auto f = model_.features(x, modes, model_.fusion().spec().needs_volumes());
                out.logits = model_.head_logits_over_z(model_.fuse(f, modes));
                break;
            }
        }
        return out;
    }

    std::pair<double, double> train_one_epoch(const PhaseSpec& ph) {
        const std::int64_t n = static_cast<std::int64_t>(train_.clips.size());
        std::vector<std::size_t> order(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        phase_rng_.shuffle(order);
        double loss_sum = 0;
        std::int64_t correct = 0;
        for (std::int64_t at = 0; at < n; at += cfg_.batch) {
            std::vector<std::size_t> rows(order.begin() + at,
                                          order.begin() + std::min(n, at + cfg_.batch));
            model_.params().zero_grads();
            auto fb = forward_batch(ph.kind, train_, rows, true);
            auto sl = ops::softmax_cross_entropy(fb.logits, fb.labels);
            backward(sl.loss);
            sgd_step(model_.params(), sgd_, ph.lr, cfg_.momentum, cfg_.weight_decay);
            loss_sum += static_cast<double>(sl.loss->value[0]) * static_cast<double>(rows.size());
            for (std::size_t b = 0; b < rows.size(); ++b)
                if (argmax_row(sl.probs, static_cast<std::int64_t>(b)) == fb.labels[b]) ++correct;
        }
        return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    }

    // Pre-update loss/accuracy over the training set in eval mode; logged as
    // the phase's epoch-0 row so loss curves start from a measured baseline.
    std::pair<double, double> epoch_metrics_eval(PhaseKind kind) {
        const std::int64_t n = static_cast<std::int64_t>(train_.clips.size());
        double loss_sum = 0;
        std::int64_t correct = 0;
        for (std::int64_t at = 0; at < n; at += cfg_.batch) {
            std::vector<std::size_t> rows;
            for (std::int64_t i = at; i < std::min(n, at + cfg_.batch); ++i)
                rows.push_back(static_cast<std::size_t>(i));
            auto fb = forward_batch(kind, train_, rows, false);
            auto sl = ops::softmax_cross_entropy(fb.logits, fb.labels);
            loss_sum += static_cast<double>(sl.loss->value[0]) * static_cast<double>(rows.size());
            for (std::size_t b = 0; b < rows.size(); ++b)
                if (argmax_row(sl.probs, static_cast<std::int64_t>(b)) == fb.labels[b]) ++correct;
        }
        return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    }

    void finish_phase(PhaseKind kind) {
        const HeadKind head = kind == PhaseKind::holistic  ? HeadKind::holistic
                              : kind == PhaseKind::relation ? HeadKind::relation
                                                            : HeadKind::fused;
        auto cm = evaluate_model(model_, eval_, head, cfg_.eval_batch);
        reports_[static_cast<std::size_t>(kind)] = make_eval_report(cm).to_text();
    }

    // The fusion phase never updates the pathways, so their outputs per clip
    // are constants; computing them once turns each step into a cheap fusion
    // head pass. Values are bit-identical to the uncached path because eval
    // forward is per-sample independent.
    void build_cache() {
        if (cache_ready_) return;
        const bool vols = model_.fusion().spec().needs_volumes();
        const std::int64_t n = static_cast<std::int64_t>(train_.clips.size());
        cache_g_.clear();
        cache_l_.clear();
        cache_hvol_.clear();
        cache_rvol_.clear();
        for (std::int64_t at = 0; at < n; at += cfg_.batch) {
            std::vector<std::size_t> rows;
            for (std::int64_t i = at; i < std::min(n, at + cfg_.batch); ++i)
                rows.push_back(static_cast<std::size_t>(i));
            auto [bt, labels] = make_batch(train_, rows, model_.spec().frames);
            auto x = make_input(bt.template cast<T>());
            ModeSet modes = ModeSet::all_eval();
            auto f = model_.features(x, modes, vols);
            for (std::size_t b = 0; b < rows.size(); ++b) {
                cache_g_.push_back(row_slice(f.g->value, static_cast<std::int64_t>(b)));
                cache_l_.push_back(row_slice(f.l->value, static_cast<std::int64_t>(b)));
                if (vols) {
                    cache_hvol_.push_back(row_slice(f.hvol->value, static_cast<std::int64_t>(b)));
                    cache_rvol_.push_back(row_slice(f.rvol->value, static_cast<std::int64_t>(b)));
                }
            }
        }
        cache_ready_ = true;
    }

    static TensorT<T> row_slice(const TensorT<T>& t, std::int64_t b) {
        Shape s(t.shape().begin() + 1, t.shape().end());
        TensorT<T> out(s);
        const std::int64_t k = out.numel();
        for (std::int64_t i = 0; i < k; ++i) out[i] = t[b * k + i];
        return out;
    }

    static TensorT<T> gather_cached(const std::vector<TensorT<T>>& cache,
                                    const std::vector<std::size_t>& rows) {
        Shape s = cache[rows[0]].shape();
        s.insert(s.begin(), static_cast<std::int64_t>(rows.size()));
        TensorT<T> out(s);
        const std::int64_t k = cache[rows[0]].numel();
        for (std::size_t b = 0; b < rows.size(); ++b)
            for (std::int64_t i = 0; i < k; ++i)
                out[static_cast<std::int64_t>(b) * k + i] = cache[rows[b]][i];
        return out;
    }

    static std::vector<int> labels_for(const Dataset& ds, const std::vector<std::size_t>& rows) {
        std::vector<int> out;
        out.reserve(rows.size());
        for (auto r : rows) out.push_back(ds.labels[r]);
        return out;
    }

    void append_log(PhaseKind kind, std::int64_t epoch, double loss, double acc) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.6f,%.6f\n", phase_name(kind),
                      static_cast<long long>(epoch), loss, acc);
        log_ += buf;
    }

    void save_progress() const {
        if (out_dir_.empty()) return;
        snapshot().write(out_dir_ + "/latest.ckpt");
        write_text(out_dir_ + "/loss.log", log_);
    }

    static void write_text(const std::string& path, const std::string& text) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!f) throw IoError("short write to '" + path + "'");
    }

    FuThNet<T>& model_;
    const Dataset& train_;
    const Dataset& eval_;
    std::vector<PhaseSpec> plan_;
    TrainLoopCfg cfg_;
    std::uint64_t train_seed_;
    std::string out_dir_;

    std::size_t phase_idx_ = 0;
    std::int64_t epochs_done_ = 0;
    int stage_ = 0;  // 0: phase entry pending (rng reset + epoch-0 row), 1: inside phase
    Rng phase_rng_{1};
    SgdState<T> sgd_;
    std::string log_;
    std::array<std::string, 3> reports_{};

    bool cache_ready_ = false;
    std::vector<TensorT<T>> cache_g_, cache_l_, cache_hvol_, cache_rvol_;
};

// ---------------------------------------------------------------------------
// appearance baseline
// ---------------------------------------------------------------------------

struct BaselineCfg {
    std::int64_t epochs = 20;
    std::int64_t batch = 16;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// Single-frame classifier over the relation pathway's frame-extractor
// architecture: trains on one random frame per clip and evaluates on the
// middle frame. On a motion-defined task this ceiling is chance-level, which
// is the control that shows the clips carry no appearance shortcut.
template <class T>
EvalReport train_appearance_baseline(const Dataset& train_ds, const Dataset& eval_ds,
                                     const ExtractorSpec& ext_spec, std::int64_t n_classes,
                                     const BaselineCfg& cfg, std::uint64_t seed) {
    if (train_ds.clips.empty() || eval_ds.clips.empty())
        throw InputError("appearance baseline: empty dataset");
    const Shape& s0 = train_ds.clips[0].data.shape();
    nn::ParamStore<T> ps;
    Rng init_rng = Rng(seed).child(1);
    FrameFeatureExtractor<T> ext(ps, ext_spec, {s0[2], s0[3]}, init_rng, "baseline");
    nn::LinearLayer<T> head(ps, "baseline_head.fc", "baseline", n_classes, ext_spec.d_f, init_rng,
                            1.0);
    Rng rng = Rng(seed).child(2);
    SgdState<T> sgd;

    const std::int64_t n = static_cast<std::int64_t>(train_ds.clips.size());
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        for (std::int64_t at = 0; at < n; at += cfg.batch) {
            std::vector<std::size_t> rows(order.begin() + at,
                                          order.begin() + std::min(n, at + cfg.batch));
            ps.zero_grads();
            auto [bt, labels] = make_frame_batch(train_ds, rows, -1, &rng);
            auto x = make_input(bt.template cast<T>());
            nn::PassCtx ctx{true, &rng};
            auto feats = ext.forward(x, ctx);
            auto logits = head.forward(
                ops::reshape(feats, {static_cast<std::int64_t>(rows.size()), ext_spec.d_f}));
            auto sl = ops::softmax_cross_entropy(logits, labels);
            backward(sl.loss);
            sgd_step(ps, sgd, cfg.lr, cfg.momentum, cfg.weight_decay);
        }
    }

    ConfusionMatrix cm(static_cast<int>(n_classes), eval_ds.class_names);
    const std::int64_t m = static_cast<std::int64_t>(eval_ds.clips.size());
    const std::int64_t mid = eval_ds.clips[0].data.dim(0) / 2;
    for (std::int64_t at = 0; at < m; at += cfg.batch) {
        std::vector<std::size_t> rows;
        for (std::int64_t i = at; i < std::min(m, at + cfg.batch); ++i)
            rows.push_back(static_cast<std::size_t>(i));
        auto [bt, labels] = make_frame_batch(eval_ds, rows, mid, nullptr);
        auto x = make_input(bt.template cast<T>());
        nn::PassCtx ctx{false, nullptr};
        auto feats = ext.forward(x, ctx);
        auto logits = head.forward(
            ops::reshape(feats, {static_cast<std::int64_t>(rows.size()), ext_spec.d_f}));
        for (std::size_t b = 0; b < rows.size(); ++b)
            cm.add(labels[b], static_cast<int>(argmax_row(logits->value, static_cast<std::int64_t>(b))));
    }
    return make_eval_report(cm);
}

}  // namespace futh

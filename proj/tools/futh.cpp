// futh — synthetic-data generation, staged training, evaluation, and the
// numeric self-checks (gradcheck, inflate-check), all driven by a flat
// key=value config. Exit codes: 0 success, 1 config/input error, 2 internal
// check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "futh/futh.hpp"

namespace {

using namespace futh;

RunConfig load_config(const std::string& path, bool seed_set, std::uint64_t seed) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
    if (seed_set) {
        cfg.seed = seed;
        cfg.seed_init.reset();
        cfg.seed_train.reset();
    }
    cfg.validate();
    return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("short write to '" + path + "'");
}

// ---------------------------------------------------------------- synth-gen

int cmd_synth_gen(const RunConfig& cfg, const std::string& out_dir) {
    const SyntheticSpec spec = cfg.synth_spec();
    const struct { const char* split; std::int64_t count; } splits[] = {
        {"train", cfg.synth_train_clips},
        {"test", cfg.synth_test_clips},
    };
    for (const auto& [split, count] : splits) {
        const std::string manifest = generate_synthetic_dataset(spec, out_dir, split, count, cfg.seed);
        const DatasetManifest m = read_manifest(manifest);
        std::map<int, std::int64_t> balance;
        for (const auto& [path, cls] : m.entries) ++balance[cls];
        std::printf("%s: %lld clips -> %s\n", split, static_cast<long long>(m.entries.size()),
                    manifest.c_str());
        std::printf(" ");
        for (const auto& [cls, n] : balance)
            std::printf(" %s:%lld", synthetic_class_name(cls), static_cast<long long>(n));
        std::printf("\n");
    }
    return 0;
}

// -------------------------------------------------------------------- train

std::vector<PhaseSpec> build_plan(const RunConfig& cfg, const std::string& phases_csv) {
    std::vector<PhaseSpec> plan;
    for (const auto& item : split_csv(phases_csv)) {
        PhaseSpec ph;
        ph.kind = phase_from_string(item);
        switch (ph.kind) {
            case PhaseKind::holistic: ph.epochs = cfg.epochs_holistic; ph.lr = cfg.lr_holistic; break;
            case PhaseKind::relation: ph.epochs = cfg.epochs_relation; ph.lr = cfg.lr_relation; break;
            case PhaseKind::fusion: ph.epochs = cfg.epochs_fusion; ph.lr = cfg.lr_fusion; break;
        }
        plan.push_back(ph);
    }
    validate_plan(plan);
    return plan;
}

std::string report_oa_line(const std::string& report) {
    std::size_t at = 0;
    while (at < report.size()) {
        std::size_t end = report.find('\n', at);
        if (end == std::string::npos) end = report.size();
        const std::string line = report.substr(at, end - at);
        if (line.rfind("OA,", 0) == 0) return line.substr(3);
        at = end + 1;
    }
    return "?";
}

template <class T>
int run_train(const RunConfig& cfg, const std::string& out_dir, const std::string& phases_csv,
              const std::string& resume_path) {
    std::filesystem::create_directories(out_dir);
    const std::string effective = cfg.effective();
    write_text_file(out_dir + "/effective.conf", effective);
    std::printf("[config] effective values -> %s/effective.conf\n%s", out_dir.c_str(),
                effective.c_str());

    const Dataset train_ds = load_dataset(cfg.train_manifest);
    const Dataset test_ds = load_dataset(cfg.test_manifest);
    std::printf("[data] train %zu clips, eval %zu clips, %d classes\n", train_ds.size(),
                test_ds.size(), train_ds.n_classes());

    FuThNet<T> model(cfg.model_spec(), cfg.resolved_seed_init());
    if (!cfg.init_from.empty()) {
        const auto ck = CheckpointFile::read(cfg.init_from);
        const std::int64_t n = load_model_params(model, ck, false);
        std::printf("[init] warm start: %lld entries from %s\n", static_cast<long long>(n),
                    cfg.init_from.c_str());
    }

    TrainLoopCfg lc;
    lc.batch = cfg.batch;
    lc.eval_batch = cfg.batch;
    lc.momentum = cfg.momentum;
    lc.weight_decay = cfg.weight_decay;
    lc.cache_frozen = cfg.cache_frozen;

    Trainer<T> trainer(model, train_ds, test_ds, build_plan(cfg, phases_csv), lc,
                       cfg.resolved_seed_train());
    trainer.set_out_dir(out_dir);
    if (!resume_path.empty()) {
        trainer.resume(CheckpointFile::read(resume_path));
        std::printf("[resume] %s\n", resume_path.c_str());
    }
    trainer.run();

    for (int k = 0; k < 3; ++k) {
        const auto kind = static_cast<PhaseKind>(k);
        const std::string& rep = trainer.report(kind);
        if (rep.empty()) continue;
        std::printf("[phase %s] OA %s -> %s/report_%s.txt\n", phase_name(kind),
                    report_oa_line(rep).c_str(), out_dir.c_str(), phase_name(kind));
    }
    std::printf("[done] %s\n", out_dir.c_str());
    return 0;
}

// --------------------------------------------------------------------- eval

template <class T>
int run_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& head,
             const std::string& out_file) {
    const Dataset ds = load_dataset(cfg.test_manifest);
    FuThNet<T> model(cfg.model_spec(), cfg.resolved_seed_init());
    load_model_params(model, CheckpointFile::read(ckpt_path), true);
    const ConfusionMatrix cm = evaluate_model(model, ds, head_from_string(head), cfg.batch);
    const std::string text = make_eval_report(cm).to_text();
    std::fputs(text.c_str(), stdout);
    if (!out_file.empty()) write_text_file(out_file, text);
    return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed, bool corrupt_conv3d) {
    const auto rows = gradcheck_suite(seed, corrupt_conv3d);
    int failed = 0;
    std::printf("%-24s %14s %11s  %s\n", "op", "max rel err", "tolerance", "status");
    for (const auto& r : rows) {
        if (!r.ok()) ++failed;
        std::printf("%-24s %14.3e %11.0e  %s\n", r.op.c_str(), r.max_rel_err, r.tolerance,
                    r.ok() ? "PASS" : "FAIL");
    }
    std::printf("gradcheck: %zu/%zu ops within tolerance\n", rows.size() - failed, rows.size());
    return failed ? 2 : 0;
}

// ------------------------------------------------------------ inflate-check

int cmd_inflate_check(std::uint64_t seed) {
    const double dev_tol = 1e-5, sum_tol = 1e-6;
    Rng rng(seed);
    double max_dev = 0.0, max_sum_rel = 0.0;
    int failed = 0;
    std::printf("%-6s %-12s %-14s %3s %6s %12s %12s  %s\n", "pair", "frame", "kernel", "n_t",
                "stride", "deviation", "t-sum rel", "status");
    for (int rep = 0; rep < 10; ++rep) {
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng.next_below(3));
        const std::int64_t f = 1 + static_cast<std::int64_t>(rng.next_below(4));
        const std::int64_t hw = 8 + static_cast<std::int64_t>(rng.next_below(9));
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.next_below(3));
        const std::int64_t nt = 1 + static_cast<std::int64_t>(rng.next_below(4));
        const std::int64_t s = 1 + static_cast<std::int64_t>(rng.next_below(2));
        const auto frame = TensorT<float>::randn({c, hw, hw}, rng);
        const auto w2d = TensorT<float>::randn({f, c, k, k}, rng);
        const auto bias = TensorT<float>::randn({f}, rng);

        const double dev = boring_video_equivalence(frame, w2d, bias, nt, {s, s});

        const auto w3d = inflate_2d_to_3d(w2d, nt);
        double sum_rel = 0.0;
        const std::int64_t plane = k * k;
        for (std::int64_t fc = 0; fc < f * c; ++fc)
            for (std::int64_t i = 0; i < plane; ++i) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < nt; ++t) acc += w3d[(fc * nt + t) * plane + i];
                sum_rel = std::max(sum_rel, rel_err(acc, w2d[fc * plane + i]));
            }

        const bool ok = dev < dev_tol && sum_rel < sum_tol;
        if (!ok) ++failed;
        max_dev = std::max(max_dev, dev);
        max_sum_rel = std::max(max_sum_rel, sum_rel);
        char fs[32], ks[32];
        std::snprintf(fs, sizeof(fs), "[%lld,%lld,%lld]", static_cast<long long>(c),
                      static_cast<long long>(hw), static_cast<long long>(hw));
        std::snprintf(ks, sizeof(ks), "[%lld,%lld,%lld,%lld]", static_cast<long long>(f),
                      static_cast<long long>(c), static_cast<long long>(k),
                      static_cast<long long>(k));
        std::printf("%-6d %-12s %-14s %3lld %6lld %12.3e %12.3e  %s\n", rep, fs, ks,
                    static_cast<long long>(nt), static_cast<long long>(s), dev, sum_rel,
                    ok ? "PASS" : "FAIL");
    }
    std::printf("boring-video deviation (max over 10 pairs): %.3e  tolerance %.0e\n", max_dev,
                dev_tol);
    std::printf("temporal-sum relative error (max): %.3e  tolerance %.0e\n", max_sum_rel, sum_tol);
    std::printf("inflate-check: %s\n", failed ? "FAIL" : "PASS");
    return failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"futh: two-pathway video classifier toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "data", phases = "holistic,relation,fusion", resume_path;
    std::string head = "fused", out_file;
    std::uint64_t seed = 0;
    std::uint64_t check_seed = 1234;
    bool corrupt_conv3d = false;

    auto* gen = app.add_subcommand("synth-gen", "generate the synthetic motion dataset");
    gen->add_option("--config", config_path, "run config file");
    gen->add_option("--out", out_dir, "output directory")->capture_default_str();
    gen->add_option("--seed", seed, "override the config seed");

    auto* train = app.add_subcommand("train", "run the staged training plan");
    train->add_option("--config", config_path, "run config file");
    train->add_option("--out", out_dir, "run directory for checkpoints and reports")->required();
    train->add_option("--phases", phases, "comma-separated subset of holistic,relation,fusion")
        ->capture_default_str();
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--seed", seed, "override the config seed");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test manifest");
    ev->add_option("--config", config_path, "run config file");
    ev->add_option("--resume", resume_path, "checkpoint to evaluate")->required();
    ev->add_option("--head", head, "holistic|relation|fused")->capture_default_str();
    ev->add_option("--out", out_file, "also write the report to this file");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op backward");
    gc->add_option("--seed", check_seed, "rng seed for the probe shapes")->capture_default_str();
    gc->add_flag("--corrupt-conv3d", corrupt_conv3d,
                 "test fixture: break the conv3d backward so the detector must fire");

    auto* ic = app.add_subcommand("inflate-check", "2D->3D inflation equivalence checks");
    ic->add_option("--seed", check_seed, "rng seed for the probe shapes")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gc->parsed()) return cmd_gradcheck(check_seed, corrupt_conv3d);
        if (ic->parsed()) return cmd_inflate_check(check_seed);

        const RunConfig cfg =
            load_config(config_path, gen->count("--seed") || train->count("--seed"), seed);
        worker_threads() = static_cast<int>(cfg.threads);

        if (gen->parsed()) return cmd_synth_gen(cfg, out_dir);
        if (train->parsed())
            return cfg.precision == 64 ? run_train<double>(cfg, out_dir, phases, resume_path)
                                       : run_train<float>(cfg, out_dir, phases, resume_path);
        if (ev->parsed())
            return cfg.precision == 64 ? run_eval<double>(cfg, resume_path, head, out_file)
                                       : run_eval<float>(cfg, resume_path, head, out_file);
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
}

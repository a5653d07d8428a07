#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "futh/futh.hpp"

using namespace futh;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

RunConfig parse(const std::string& text) { return RunConfig::from_text(text, "<test>"); }

std::set<std::string> key_names() {
    std::set<std::string> names;
    for (const auto& k : RunConfig::key_table()) names.insert(k.name);
    return names;
}

}  // namespace

TEST_CASE("config: empty text yields the documented defaults") {
    RunConfig c = parse("");
    REQUIRE(c.model_arch == "desk");
    REQUIRE(c.classes == 4);
    REQUIRE(c.frames == 16);
    REQUIRE(c.height == 32);
    REQUIRE(c.width == 32);
    REQUIRE(c.channels == 3);
    REQUIRE(c.d_g == 64);
    REQUIRE(c.d_f == 64);
    REQUIRE(c.d_r == 128);
    REQUIRE(c.tuples_per_scale == 16);
    REQUIRE_FALSE(c.freeze_extractor);
    REQUIRE(c.fusion_method == "eq2");
    REQUIRE(c.fusion_append == "holistic");
    REQUIRE(c.fusion_dropout == 0.5);
    REQUIRE(c.bilinear_rank == 8);
    REQUIRE(c.batch == 6);
    REQUIRE(c.momentum == 0.9);
    REQUIRE(c.weight_decay == 0.0005);
    REQUIRE(c.epochs_holistic == 20);
    REQUIRE(c.epochs_relation == 20);
    REQUIRE(c.epochs_fusion == 30);
    REQUIRE(c.lr_holistic == 1e-3);
    REQUIRE(c.lr_relation == 1e-4);
    REQUIRE(c.lr_fusion == 1e-4);
    REQUIRE(c.cache_frozen);
    REQUIRE(c.init_from.empty());
    REQUIRE(c.train_manifest == "data/train.manifest");
    REQUIRE(c.test_manifest == "data/test.manifest");
    REQUIRE(c.synth_train_clips == 200);
    REQUIRE(c.synth_test_clips == 100);
    REQUIRE(c.synth_patch == 12);
    REQUIRE(c.synth_speed == 2.0);
    REQUIRE(c.synth_noise == 0.03);
    REQUIRE_FALSE(c.synth_reversal);
    REQUIRE(c.seed == 42);
    REQUIRE_FALSE(c.seed_init.has_value());
    REQUIRE_FALSE(c.seed_train.has_value());
    REQUIRE(c.threads == 1);
    REQUIRE(c.deterministic);
    REQUIRE(c.precision == 32);
}

TEST_CASE("config: comments, blank lines, whitespace and CRLF are tolerated") {
    RunConfig c = parse(
        "# a comment\r\n"
        "\r\n"
        "   \t \n"
        "  model.classes   =  7 \r\n"
        "\t# indented comment\n"
        "seed=9\n");
    REQUIRE(c.classes == 7);
    REQUIRE(c.seed == 9);
}

TEST_CASE("config: every table key accepts a value and reads back through effective()") {
    const std::string text =
        "model.arch = paper\n"
        "model.classes = 25\n"
        "model.frames = 8\n"
        "model.height = 16\n"
        "model.width = 24\n"
        "model.channels = 1\n"
        "model.d_g = 32\n"
        "model.d_f = 16\n"
        "model.d_r = 8\n"
        "relation.tuples_per_scale = 3\n"
        "relation.freeze_extractor = true\n"
        "fusion.method = bilinear\n"
        "fusion.append = relation\n"
        "fusion.dropout = 0.25\n"
        "fusion.bilinear_rank = 4\n"
        "train.batch = 2\n"
        "train.momentum = 0.8\n"
        "train.weight_decay = 0.001\n"
        "train.epochs.holistic = 1\n"
        "train.epochs.relation = 2\n"
        "train.epochs.fusion = 3\n"
        "train.lr.holistic = 0.01\n"
        "train.lr.relation = 0.02\n"
        "train.lr.fusion = 0.03\n"
        "train.cache_frozen = false\n"
        "train.init_from = warm.ckpt\n"
        "data.train_manifest = a/tr.manifest\n"
        "data.test_manifest = a/te.manifest\n"
        "synth.train_clips = 12\n"
        "synth.test_clips = 8\n"
        "synth.patch = 5\n"
        "synth.speed = 1.5\n"
        "synth.noise = 0.1\n"
        "synth.reversal = true\n"
        "seed = 7\n"
        "seed.init = 101\n"
        "seed.train = 102\n"
        "threads = 2\n"
        "deterministic = false\n"
        "precision = 64\n";
    RunConfig c = parse(text);
    const std::string eff = c.effective();

    // effective() must list exactly the table keys, in table order, one per line
    std::istringstream in(eff);
    std::string line;
    std::size_t idx = 0;
    const auto& table = RunConfig::key_table();
    while (std::getline(in, line)) {
        REQUIRE(idx < table.size());
        const std::string expect_prefix = std::string(table[idx].name) + " = ";
        REQUIRE(line.substr(0, expect_prefix.size()) == expect_prefix);
        ++idx;
    }
    REQUIRE(idx == table.size());

    REQUIRE_THAT(eff, ContainsSubstring("model.arch = paper\n"));
    REQUIRE_THAT(eff, ContainsSubstring("fusion.method = bilinear\n"));
    REQUIRE_THAT(eff, ContainsSubstring("fusion.dropout = 0.25\n"));
    REQUIRE_THAT(eff, ContainsSubstring("train.init_from = warm.ckpt\n"));
    REQUIRE_THAT(eff, ContainsSubstring("seed.init = 101\n"));
    REQUIRE_THAT(eff, ContainsSubstring("seed.train = 102\n"));
    REQUIRE_THAT(eff, ContainsSubstring("precision = 64\n"));

    // re-parsing the effective text reproduces it exactly (canonical fixed point)
    RunConfig c2 = parse(eff);
    REQUIRE(c2.effective() == eff);
}

TEST_CASE("config: defaults round-trip through effective() too") {
    RunConfig c;
    const std::string eff = c.effective();
    RunConfig c2 = parse(eff);
    REQUIRE(c2.effective() == eff);
}

TEST_CASE("config: unknown key is rejected with its line number") {
    REQUIRE_THROWS_MATCHES(
        parse("seed = 1\n\n# ok\nbogus.key = 3\n"), ConfigError,
        MessageMatches(ContainsSubstring("line 4") && ContainsSubstring("unknown key 'bogus.key'")));
    REQUIRE_THROWS_MATCHES(parse("model.classses = 4\n"), ConfigError,
                           MessageMatches(ContainsSubstring("line 1") &&
                                          ContainsSubstring("unknown key")));
}

TEST_CASE("config: malformed lines name the offending line") {
    REQUIRE_THROWS_MATCHES(parse("seed\n"), ConfigError,
                           MessageMatches(ContainsSubstring("line 1") &&
                                          ContainsSubstring("key = value")));
    REQUIRE_THROWS_MATCHES(parse("seed = 1\n= 5\n"), ConfigError,
                           MessageMatches(ContainsSubstring("line 2") &&
                                          ContainsSubstring("empty key")));
}

TEST_CASE("config: bad values are rejected with type diagnostics") {
    REQUIRE_THROWS_MATCHES(parse("model.classes = four\n"), ConfigError,
                           MessageMatches(ContainsSubstring("not an integer") &&
                                          ContainsSubstring("line 1")));
    REQUIRE_THROWS_MATCHES(parse("train.momentum = fast\n"), ConfigError,
                           MessageMatches(ContainsSubstring("not a number")));
    REQUIRE_THROWS_MATCHES(parse("train.cache_frozen = yes\n"), ConfigError,
                           MessageMatches(ContainsSubstring("not a boolean")));
    REQUIRE_THROWS_MATCHES(parse("seed = -3\n"), ConfigError,
                           MessageMatches(ContainsSubstring("not an unsigned integer")));
    REQUIRE_THROWS_MATCHES(parse("model.classes = 4x\n"), ConfigError,
                           MessageMatches(ContainsSubstring("not an integer")));
    REQUIRE_THROWS_MATCHES(parse("model.arch = resnet\n"), ConfigError,
                           MessageMatches(ContainsSubstring("desk|paper")));
    REQUIRE_THROWS_MATCHES(parse("fusion.method = stack\n"), ConfigError,
                           MessageMatches(ContainsSubstring("line 1")));
    REQUIRE_THROWS_MATCHES(parse("fusion.append = everything\n"), ConfigError,
                           MessageMatches(ContainsSubstring("line 1")));
    REQUIRE_THROWS_MATCHES(parse("precision = 16\n"), ConfigError,
                           MessageMatches(ContainsSubstring("32 or 64")));
}

TEST_CASE("config: semantic validation catches out-of-range settings") {
    REQUIRE_THROWS_AS(parse("model.classes = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.batch = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("threads = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.epochs.relation = -1\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.lr.fusion = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.momentum = 1.0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.momentum = -0.1\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("train.weight_decay = -1e-4\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("fusion.dropout = 1.0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("synth.train_clips = 0\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("synth.test_clips = 0\n"), ConfigError);
}

TEST_CASE("config: init and train seeds derive from the master seed") {
    RunConfig c = parse("seed = 42\n");
    REQUIRE(c.resolved_seed_init() == Rng(42).child(1).seed());
    REQUIRE(c.resolved_seed_train() == Rng(42).child(2).seed());
    REQUIRE(c.resolved_seed_init() != c.resolved_seed_train());
    REQUIRE(c.resolved_seed_init() != 42);

    // explicit override pins one stream without disturbing the other
    RunConfig c2 = parse("seed = 42\nseed.init = 5\n");
    REQUIRE(c2.resolved_seed_init() == 5);
    REQUIRE(c2.resolved_seed_train() == Rng(42).child(2).seed());

    // a different master seed moves both derived streams
    RunConfig c3 = parse("seed = 43\n");
    REQUIRE(c3.resolved_seed_init() != c.resolved_seed_init());
    REQUIRE(c3.resolved_seed_train() != c.resolved_seed_train());
}

TEST_CASE("config: desk model spec picks up the dimension knobs") {
    RunConfig c = parse(
        "model.classes = 3\n"
        "model.frames = 8\n"
        "model.height = 16\n"
        "model.width = 16\n"
        "model.channels = 1\n"
        "model.d_g = 32\n"
        "model.d_f = 16\n"
        "model.d_r = 8\n"
        "relation.tuples_per_scale = 2\n"
        "relation.freeze_extractor = true\n"
        "fusion.method = concat\n"
        "fusion.append = none\n"
        "fusion.dropout = 0.1\n"
        "fusion.bilinear_rank = 4\n");
    ModelSpec s = c.model_spec();
    REQUIRE(s.n_classes == 3);
    REQUIRE(s.frames == 8);
    REQUIRE(s.height == 16);
    REQUIRE(s.width == 16);
    REQUIRE(s.in_channels == 1);
    REQUIRE(s.holistic.d_g() == 32);
    REQUIRE(s.relation.d_r == 8);
    REQUIRE(s.relation.tuples_per_scale == 2);
    REQUIRE(s.relation.freeze_extractor_in_phase2);
    REQUIRE(s.fusion.method == FusionMethod::concat);
    REQUIRE(s.fusion.append == AppendChoice::none);
    REQUIRE(s.fusion.dropout == 0.1);
    REQUIRE(s.fusion.bilinear_rank == 4);
    REQUIRE(s.fusion.d_g == 32);
    // bank width after finalize: d_r per scale times scales times tuples
    REQUIRE(s.fusion.d_l == s.relation.bank_width());
    REQUIRE(s.fusion.fused_width() == s.fusion.d_g + s.fusion.d_l);
}

TEST_CASE("config: default desk spec matches the published desk widths") {
    ModelSpec s = RunConfig{}.model_spec();
    REQUIRE(s.holistic.d_g() == 64);
    REQUIRE(s.relation.bank_width() == 1920);
    REQUIRE(s.fusion.fused_width() == 128);
}

TEST_CASE("config: paper arch ignores desk-only extents and forces 3 channels") {
    RunConfig c = parse(
        "model.arch = paper\n"
        "model.classes = 25\n"
        "model.frames = 8\n"     // ignored by the paper trunk
        "model.channels = 1\n"   // ignored: paper trunk is RGB
        "fusion.method = eq2\n"
        "fusion.append = holistic\n");
    ModelSpec s = c.model_spec();
    REQUIRE(s.n_classes == 25);
    REQUIRE(s.frames == 16);
    REQUIRE(s.height == 112);
    REQUIRE(s.width == 112);
    REQUIRE(s.in_channels == 3);
    REQUIRE(s.holistic.d_g() == 1024);
    REQUIRE(s.relation.bank_width() == 3840);
    REQUIRE(s.fusion.fused_width() == 2048);
}

TEST_CASE("config: synth spec copies clip geometry and validates it") {
    RunConfig c = parse(
        "model.frames = 12\n"
        "model.channels = 2\n"
        "model.height = 20\n"
        "model.width = 24\n"
        "synth.patch = 6\n"
        "synth.speed = 1.5\n"
        "synth.noise = 0.2\n"
        "synth.reversal = true\n");
    SyntheticSpec s = c.synth_spec();
    REQUIRE(s.frames == 12);
    REQUIRE(s.channels == 2);
    REQUIRE(s.height == 20);
    REQUIRE(s.width == 24);
    REQUIRE(s.patch == 6);
    REQUIRE(s.speed == 1.5);
    REQUIRE(s.noise == 0.2);
    REQUIRE(s.reversal);

    RunConfig bad = parse("model.height = 8\nmodel.width = 8\nsynth.patch = 9\n");
    REQUIRE_THROWS_AS(bad.synth_spec(), ConfigError);
}

TEST_CASE("config: from_file matches from_text and reports missing files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("futh-conf-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const fs::path path = dir / "run.conf";
    {
        std::ofstream f(path);
        f << "seed = 77\nmodel.classes = 5\n";
    }
    RunConfig c = RunConfig::from_file(path.string());
    REQUIRE(c.seed == 77);
    REQUIRE(c.classes == 5);

    {
        std::ofstream f(path);
        f << "seed = 77\nwat = 1\n";
    }
    REQUIRE_THROWS_MATCHES(RunConfig::from_file(path.string()), ConfigError,
                           MessageMatches(ContainsSubstring(path.string()) &&
                                          ContainsSubstring("line 2")));

    REQUIRE_THROWS_MATCHES(RunConfig::from_file((dir / "nope.conf").string()), IoError,
                           MessageMatches(ContainsSubstring("cannot open")));
    fs::remove_all(dir);
}

TEST_CASE("config: key table has no duplicate names") {
    REQUIRE(key_names().size() == RunConfig::key_table().size());
}

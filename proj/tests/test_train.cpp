#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sattag/trainer.hpp"
#include "support/temp_dir.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace sattag;

namespace {

double brute_auroc(const std::vector<double>& s, const std::vector<double>& l) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (l[i] != 1.0 || l[j] != 0.0) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

// One threshold per distinct score, highest first.
double brute_aupr(const std::vector<double>& s, const std::vector<double>& l) {
    std::vector<double> thresholds = s;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double positives = 0.0;
    for (double v : l) positives += v;
    double area = 0.0, prev_recall = 0.0;
    for (double th : thresholds) {
        double tp = 0.0, predicted = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= th) {
                predicted += 1.0;
                tp += l[i];
            }
        }
        area += (tp / positives - prev_recall) * (tp / predicted);
        prev_recall = tp / positives;
    }
    return area;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.scale = 0.125;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.ff_dim = 32;
    cfg.n_tags = 3;
    cfg.input_frames = 8;
    return cfg;
}

// Log-mel-like clips whose tag k brightens band k; lengths in frames.
FeatureSet toy_set(std::size_t n, std::uint64_t seed, std::vector<std::size_t> lengths = {}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    FeatureSet set;
    set.kind = InputKind::Spec;
    set.chunk_length = 8;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t frames = lengths.empty() ? 8 : lengths[i % lengths.size()];
        std::vector<double> labels = {double(i % 2), double((i / 2) % 2), double(i % 3 == 0)};
        std::vector<double> f(96 * frames);
        for (std::size_t b = 0; b < 96; ++b) {
            for (std::size_t t = 0; t < frames; ++t) {
                const std::size_t band = b / 32;
                f[b * frames + t] = noise(rng) + 2.0 * labels[band];
            }
        }
        set.ids.push_back("toy" + std::to_string(i));
        set.features.push_back(std::move(f));
        set.lengths.push_back(frames);
        set.labels.push_back(std::move(labels));
    }
    return set;
}

const std::vector<std::string> kTags = {"a", "b", "c"};

TrainConfig short_schedule() {
    TrainConfig cfg;
    cfg.adam_epochs = 3;
    cfg.total_epochs = 7;
    cfg.lr_drop_epochs = {4, 5};
    cfg.batch_size = 4;
    cfg.adam_lr = 1e-3;
    cfg.sgd_lr = 1e-3;
    cfg.seed = 17;
    return cfg;
}

std::string csv_of(const std::vector<EpochRecord>& log) {
    std::string out = log_csv_header() + "\n";
    for (const auto& r : log) out += log_csv_row(r) + "\n";
    return out;
}

}  // namespace

TEST_CASE("auroc fixtures") {
    const std::vector<double> perfect = {0.9, 0.8, 0.2, 0.1}, labels = {1, 1, 0, 0};
    CHECK(*auroc(perfect, labels) == 1.0);
    const std::vector<double> flat = {0.3, 0.3, 0.3, 0.3};
    CHECK(*auroc(flat, labels) == 0.5);
    const std::vector<double> reversed = {0.1, 0.2, 0.8, 0.9};
    CHECK(*auroc(reversed, labels) == 0.0);
    const std::vector<double> ones = {1, 1, 1, 1};
    CHECK_FALSE(auroc(perfect, ones).has_value());
    CHECK_FALSE(aupr(perfect, std::vector<double>{0, 0, 0, 0}).has_value());
    CHECK(aupr(perfect, ones).has_value());
    CHECK_THROWS_AS(auroc(perfect, std::vector<double>{1, 0}), DimensionError);
}

TEST_CASE("auroc and aupr match brute-force oracles") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_roc = 0.0, worst_pr = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(30), l(30);
        for (std::size_t i = 0; i < 30; ++i) {
            // every fourth trial rounds scores to force ties
            s[i] = trial % 4 == 0 ? std::round(u(rng) * 5.0) / 5.0 : u(rng);
            l[i] = u(rng) < 0.3 ? 1.0 : 0.0;
        }
        l[0] = 1.0;
        l[1] = 0.0;
        worst_roc = std::max(worst_roc, std::abs(*auroc(s, l) - brute_auroc(s, l)));
        worst_pr = std::max(worst_pr, std::abs(*aupr(s, l) - brute_aupr(s, l)));

        std::vector<double> t(30);
        for (std::size_t i = 0; i < 30; ++i) t[i] = std::exp(3.0 * s[i]) + s[i];
        CHECK(*auroc(t, l) == *auroc(s, l));
    }
    CHECK(worst_roc <= 1e-12);
    CHECK(worst_pr <= 1e-12);
}

TEST_CASE("aupr closed forms") {
    for (std::size_t n : {2u, 5u, 17u}) {
        std::vector<double> s(n), l(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(n - i);
        l[n - 1] = 1.0;
        CHECK(*aupr(s, l) == doctest::Approx(1.0 / static_cast<double>(n)).epsilon(1e-15));
    }
    const std::vector<double> s = {0.9, 0.8, 0.7, 0.1}, l = {1, 1, 1, 0};
    CHECK(*aupr(s, l) == 1.0);
    // positives at ranks 1 and 3: 1/2 * 1 + 1/2 * 2/3
    const std::vector<double> l2 = {1, 0, 1, 0};
    CHECK(*aupr(s, l2) == doctest::Approx(0.5 + 1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("report excludes undefined tags and ignores duplication") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> scores, labels;
    for (std::size_t c = 0; c < 12; ++c) {
        scores.push_back({u(rng), u(rng), u(rng)});
        labels.push_back({double(c % 2), 1.0, double(c % 3 == 0)});
    }
    const EvalReport r = make_report(scores, labels, kTags);
    CHECK_FALSE(r.tag_auroc[1].has_value());
    CHECK(r.tag_aupr[1].has_value());
    CHECK(r.defined_auroc_tags() == 2);
    CHECK(r.macro_auroc == doctest::Approx((*r.tag_auroc[0] + *r.tag_auroc[2]) / 2.0).epsilon(1e-15));
    CHECK(r.macro_aupr == doctest::Approx((*r.tag_aupr[0] + *r.tag_aupr[1] + *r.tag_aupr[2]) / 3.0).epsilon(1e-15));

    auto s2 = scores, l2 = labels;
    s2.insert(s2.end(), scores.begin(), scores.end());
    l2.insert(l2.end(), labels.begin(), labels.end());
    const EvalReport d = make_report(s2, l2, kTags);
    CHECK(std::abs(d.macro_auroc - r.macro_auroc) <= 1e-12);
    CHECK(std::abs(d.macro_aupr - r.macro_aupr) <= 1e-12);
}

TEST_CASE("evaluate averages chunk probabilities per clip") {
    Model model(tiny_model(), 5);
    const FeatureSet one_chunk = toy_set(6, 1);
    std::vector<std::vector<double>> direct;
    for (std::size_t c = 0; c < one_chunk.size(); ++c) {
        const Tensor p = sigmoid(model.forward(chunk_tensor(one_chunk, c, 0)).logits);
        direct.emplace_back(p.data().begin(), p.data().end());
    }
    const EvalReport expect = make_report(direct, one_chunk.labels, kTags);
    const EvalReport got = evaluate(model, one_chunk, 4, kTags);
    CHECK(std::abs(got.macro_auroc - expect.macro_auroc) <= 1e-12);
    CHECK(std::abs(got.macro_aupr - expect.macro_aupr) <= 1e-12);

    const FeatureSet two_chunks = toy_set(3, 2, {16});
    const auto scores = predict_clips(model, two_chunks, 2);
    for (std::size_t c = 0; c < 3; ++c) {
        const Tensor a = sigmoid(model.forward(chunk_tensor(two_chunks, c, 0)).logits);
        const Tensor b = sigmoid(model.forward(chunk_tensor(two_chunks, c, 8)).logits);
        for (std::size_t t = 0; t < 3; ++t) {
            CHECK(scores[c][t] == doctest::Approx((a.data()[t] + b.data()[t]) / 2.0).epsilon(1e-14));
        }
    }
    CHECK_THROWS_AS(evaluate(model, FeatureSet{}, 4, kTags), ConfigError);
}

TEST_CASE("schedule for the default configuration") {
    const TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    for (int e = 1; e <= 120; ++e) {
        INFO(e);
        CHECK(cfg.phase(e) == (e <= 60 ? OptimizerKind::Adam : OptimizerKind::Sgd));
        const double expect = e <= 80 ? 1e-4 : (e <= 100 ? 1e-5 : 1e-6);
        CHECK(cfg.learning_rate(e) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(cfg.reloads_at(e) == (e == 61 || e == 81 || e == 101));
    }

    TrainConfig bad;
    bad.adam_epochs = 120;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lr_drop_epochs = {100, 80};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.lr_drop_epochs = {50};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint container") {
    Model model(tiny_model(), 8);
    Checkpoint c = snapshot(model);
    c.meta = model_settings(model.config());
    c.meta.emplace_back("data.tags", "a,b,c");
    c.epoch = 4;
    c.best_epoch = 2;
    c.best_val_auroc = 0.75;
    c.optimizer = OptimizerKind::Adam;
    c.adam = AdamState::for_params(model.parameter_tensors(), 1e-3);
    c.adam.t = 12;
    c.adam.m[0][0] = 0.25;
    c.best_params = c.params;
    c.best_buffers = c.buffers;

    testing::TempDir dir("ckpt");
    save_checkpoint(c, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(back, dir / "b.ckpt");
    CHECK(encode_checkpoint(back) == encode_checkpoint(c));
    CHECK(back.adam.t == 12);
    CHECK(back.adam.m[0][0] == 0.25);
    CHECK(back.find("data.tags") == "a,b,c");
    CHECK(parameter_hash(back.params) == parameter_hash(model));
    CHECK(model_config_from(back.meta).name() == "Spec_Att");

    Model other(tiny_model(), 9);
    CHECK(parameter_hash(other) != parameter_hash(model));
    restore(other, back);
    CHECK(parameter_hash(other) == parameter_hash(model));
    Model twin(tiny_model(), 8);
    CHECK(TensorTable::capture(twin.parameters()).names == back.params.names);

    SUBCASE("corruption is reported by kind") {
        const auto bytes = encode_checkpoint(c);
        const auto kind_of = [](const std::vector<std::uint8_t>& b) {
            try {
                decode_checkpoint(b);
            } catch (const CheckpointError& e) {
                return e.kind();
            }
            FAIL("decode accepted corrupt input");
            return CheckpointError::Kind::Malformed;
        };
        auto flipped = bytes;
        flipped[bytes.size() / 2] ^= 0x01;
        CHECK(kind_of(flipped) == CheckpointError::Kind::ChecksumMismatch);
        auto magic = bytes;
        magic[0] = 'X';
        CHECK(kind_of(magic) == CheckpointError::Kind::BadMagic);
        auto version = bytes;
        version[6] = 2;
        CHECK(kind_of(version) == CheckpointError::Kind::UnsupportedVersion);
        const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() - 9));
        CHECK(kind_of(cut) == CheckpointError::Kind::Truncated);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    }
    SUBCASE("shape mismatch is incompatible") {
        ModelConfig wider = tiny_model();
        wider.d_model = 32;
        Model wide(wider);
        try {
            restore(wide, back);
            FAIL("restore accepted a mismatched model");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::Incompatible);
        }
    }
}

TEST_CASE("settings round-trip") {
    ModelConfig m = tiny_model();
    m.frontend = Frontend::Raw;
    m.backend = Backend::CnnL;
    m.dropout = 0.3;
    const ModelConfig back = model_config_from(model_settings(m));
    CHECK(back.name() == "Raw_CNN_L");
    CHECK(back.dropout == 0.3);
    CHECK(back.scale == 0.125);

    TrainConfig t;
    TrainConfig u;
    u.lr_drop_epochs.clear();
    for (const auto& [k, v] : train_settings(t)) CHECK(apply_train_setting(u, k, v));
    CHECK(u.lr_drop_epochs == t.lr_drop_epochs);
    CHECK(u.sgd_lr == t.sgd_lr);
    CHECK_FALSE(apply_train_setting(u, "train.warmup", "3"));
    CHECK_THROWS_AS(apply_train_setting(u, "train.total_epochs", "12x"), ConfigError);
    CHECK_THROWS_AS(apply_model_setting(m, "model.backend", "gru"), ConfigError);
}

TEST_CASE("instrumented schedule run") {
    const FeatureSet tr = toy_set(8, 21), va = toy_set(6, 22);
    Model model(tiny_model(), 23);
    const TrainConfig cfg = short_schedule();
    std::map<int, std::uint64_t> end_hash;
    std::vector<EpochStart> starts;
    std::vector<std::uint64_t> start_hash;
    TrainOptions opts;
    opts.hooks.on_epoch_start = [&](const EpochStart& s, const Model& m) {
        starts.push_back(s);
        start_hash.push_back(parameter_hash(m));
    };
    // Validation peaks at epoch 2 regardless of the model.
    opts.hooks.on_validation = [](int epoch, EvalReport& r) { r.macro_auroc = epoch == 2 ? 0.9 : 0.5 + 0.01 * epoch; };
    opts.hooks.on_epoch_end = [&](const EpochRecord& r, const Model& m) { end_hash[r.epoch] = parameter_hash(m); };
    const TrainResult res = train(model, tr, va, kTags, cfg, opts);

    REQUIRE(res.log.size() == 7);
    REQUIRE(starts.size() == 7);
    const std::vector<double> lrs = {1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-5, 1e-5};
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(res.log[i].phase == (i < 3 ? OptimizerKind::Adam : OptimizerKind::Sgd));
        CHECK(res.log[i].lr == doctest::Approx(lrs[i]).epsilon(1e-12));
        CHECK(res.log[i].best_epoch == (i == 0 ? 1 : 2));
    }
    CHECK_FALSE(starts[2].reloaded_from.has_value());
    for (int e : {4, 5, 6}) {
        CHECK(starts[e - 1].reloaded_from == 2);
        CHECK(start_hash[e - 1] == end_hash[2]);
    }
    CHECK_FALSE(starts[6].reloaded_from.has_value());
    CHECK(start_hash[6] == end_hash[6]);
    CHECK(parameter_hash(res.best.params) == end_hash[2]);
    CHECK(res.best.best_val_auroc == 0.9);
    CHECK(res.last.epoch == 7);
    CHECK(res.last.optimizer == OptimizerKind::Sgd);
    for (std::size_t i = 1; i < res.log.size(); ++i) CHECK(res.log[i].best_val_auroc >= res.log[i - 1].best_val_auroc);
}

TEST_CASE("seeded runs repeat and resume exactly") {
    const FeatureSet tr = toy_set(8, 31), va = toy_set(6, 32);
    const TrainConfig cfg = short_schedule();
    Model a(tiny_model(), 33), b(tiny_model(), 33);
    const TrainResult ra = train(a, tr, va, kTags, cfg);
    const TrainResult rb = train(b, tr, va, kTags, cfg);
    CHECK(csv_of(ra.log) == csv_of(rb.log));
    CHECK(parameter_hash(a) == parameter_hash(b));

    Model c(tiny_model(), 33);
    TrainOptions first;
    first.stop_after = 4;
    const TrainResult part = train(c, tr, va, kTags, cfg, first);
    CHECK(part.log.size() == 4);
    Model d(tiny_model(), 77);
    TrainOptions rest;
    rest.resume = decode_checkpoint(encode_checkpoint(part.last));
    const TrainResult tail = train(d, tr, va, kTags, cfg, rest);
    REQUIRE(tail.log.size() == 3);
    std::vector<EpochRecord> joined = part.log;
    joined.insert(joined.end(), tail.log.begin(), tail.log.end());
    CHECK(csv_of(joined) == csv_of(ra.log));
    CHECK(parameter_hash(d) == parameter_hash(a));
    CHECK(encode_checkpoint(tail.best) == encode_checkpoint(ra.best));

    Model e(tiny_model(), 33);
    TrainOptions early;
    early.hooks.stop_early = [](const EpochRecord& r, Model&) { return r.epoch == 4; };
    const TrainResult cut = train(e, tr, va, kTags, cfg, early);
    CHECK(cut.log.size() == 4);
    CHECK(cut.last.epoch == 4);
    CHECK(encode_checkpoint(cut.last) == encode_checkpoint(part.last));
}

TEST_CASE("degenerate schedules and failures") {
    const FeatureSet tr = toy_set(8, 41), va = toy_set(6, 42);
    SUBCASE("no ADAM phase") {
        TrainConfig cfg = short_schedule();
        cfg.adam_epochs = 0;
        cfg.total_epochs = 3;
        cfg.lr_drop_epochs = {};
        Model m(tiny_model(), 1);
        std::vector<EpochStart> starts;
        TrainOptions opts;
        opts.hooks.on_epoch_start = [&](const EpochStart& s, const Model&) { starts.push_back(s); };
        const TrainResult r = train(m, tr, va, kTags, cfg, opts);
        for (const auto& rec : r.log) CHECK(rec.phase == OptimizerKind::Sgd);
        for (const auto& s : starts) CHECK_FALSE(s.reloaded_from.has_value());
    }
    SUBCASE("non-finite loss names the step") {
        Model m(tiny_model(), 2);
        Tensor w = m.parameter("backend.classifier.bias");
        w.data()[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_WITH_AS(train(m, tr, va, kTags, short_schedule()), doctest::Contains("epoch 1, step 1"),
                             NumericalError);
    }
    SUBCASE("empty or degenerate splits") {
        Model m(tiny_model(), 3);
        CHECK_THROWS_AS(train(m, FeatureSet{}, va, kTags, short_schedule()), ConfigError);
        FeatureSet flat = va;
        for (auto& l : flat.labels) l = {1.0, 1.0, 1.0};
        CHECK_THROWS_AS(train(m, tr, flat, kTags, short_schedule()), ConfigError);
    }
}

TEST_CASE("learning-curve CSV") {
    EpochRecord r{3, OptimizerKind::Sgd, 1e-5, 0.5, 0.75, 0.5, 2, 0.8};
    CHECK(log_csv_header() == "epoch,phase,lr,train_loss,val_auroc,val_aupr");
    CHECK(log_csv_row(r) == "3,sgd,1e-05,0.50000000,0.750000,0.500000");
    testing::TempDir dir("log");
    write_log_csv(dir / "log.csv", {r});
    write_log_csv(dir / "log.csv", {r}, true);
    std::ifstream in(dir / "log.csv");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text == log_csv_header() + "\n" + log_csv_row(r) + "\n" + log_csv_row(r) + "\n");
}

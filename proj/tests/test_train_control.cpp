#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "hedet/train_control.hpp"

using namespace hedet;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.encoder_layers = 1;
    cfg.num_categories = 3;
    cfg.decoder.L = 2;
    cfg.decoder.K = 1;
    cfg.decoder.tau = 0.5;
    cfg.decoder.n_q = 4;
    cfg.decoder.d_model = 16;
    cfg.decoder.n_heads = 2;
    cfg.decoder.ffn_dim = 24;
    return cfg;
}

TrainExample blob_example(int category, double cx, double cy) {
    TrainExample ex;
    ex.image = Image::filled(32, 32, 0.1, 0.1, 0.15);
    int x0 = static_cast<int>((cx - 0.125) * 32), y0 = static_cast<int>((cy - 0.125) * 32);
    for (int y = y0; y < y0 + 8; ++y)
        for (int x = x0; x < x0 + 8; ++x) {
            ex.image.at(x, y, 0) = 0.9;
            ex.image.at(x, y, 1) = 0.2 + 0.3 * category;
        }
    ex.objects.push_back({Box::center_size(cx, cy, 0.25, 0.25), category});
    return ex;
}

Checkpoint tiny_checkpoint(std::uint64_t seed) {
    Checkpoint ck;
    ck.config = tiny_config();
    register_model_params(ck.params, ck.config);
    init_params(ck.params, RandomStream(seed));
    return ck;
}

} // namespace

TEST_CASE("plateau scheduler follows the decay rules") {
    PlateauConfig pc;
    pc.patience = 3;
    PlateauState s = make_plateau(pc, {1e-4, 2e-5});

    SUBCASE("strictly improving metrics never decay") {
        for (int i = 0; i < 20; ++i) CHECK(!plateau_step(s, i));
        CHECK(s.current_lr[0] == 1e-4);
        CHECK(s.current_lr[1] == 2e-5);
        CHECK(s.best_metric == 19.0);
    }

    SUBCASE("flat metrics decay after patience runs out") {
        CHECK(!plateau_step(s, 10.0)); // first call improves over -inf
        CHECK(!plateau_step(s, 10.0)); // counter 1
        CHECK(!plateau_step(s, 10.0)); // counter 2
        CHECK(!plateau_step(s, 10.0)); // counter 3 == patience
        CHECK(plateau_step(s, 10.0));  // counter 4 > patience -> decay
        CHECK(s.current_lr[0] == 5e-5);
        CHECK(s.current_lr[1] == 1e-5);
        CHECK(s.epochs_since_improve == 0);
        // the counter restarted: next decay needs four more flat epochs
        for (int i = 0; i < 3; ++i) CHECK(!plateau_step(s, 10.0));
        CHECK(plateau_step(s, 10.0));
        CHECK(s.current_lr[0] == 2.5e-5);
    }

    SUBCASE("sub-eps improvement counts as no improvement") {
        CHECK(!plateau_step(s, 10.0));
        for (int i = 0; i < 3; ++i) CHECK(!plateau_step(s, 10.0 + 1e-12));
        CHECK(plateau_step(s, 10.0 + 1e-12));
    }

    SUBCASE("learning rate clamps at the floor") {
        plateau_step(s, 10.0);
        for (int round = 0; round < 40; ++round)
            for (int i = 0; i <= pc.patience; ++i) plateau_step(s, 10.0);
        CHECK(s.current_lr[0] == 1e-6);
        CHECK(s.current_lr[1] == 1e-6);
    }

    SUBCASE("non-finite metrics are rejected") {
        CHECK_THROWS_AS(plateau_step(s, std::numeric_limits<double>::quiet_NaN()),
                        std::invalid_argument);
        CHECK_THROWS_AS(plateau_step(s, std::numeric_limits<double>::infinity()),
                        std::invalid_argument);
    }
}

TEST_CASE("progressive controller transitions once, on a decay") {
    ProgressiveConfig cfg;
    PlateauConfig pc;
    pc.patience = cfg.stage1_patience;
    PlateauState s = make_plateau(pc, {1e-4, 2e-5});
    ProgressiveState p;

    CHECK(!progressive_step(p, s, cfg, false));
    CHECK(p.stage == 1);
    CHECK(p.encoder_frozen);

    CHECK(progressive_step(p, s, cfg, true));
    CHECK(p.stage == 2);
    CHECK(!p.encoder_frozen);
    CHECK(s.config.patience == 8);

    CHECK(!progressive_step(p, s, cfg, true)); // stays in stage 2
    CHECK(p.stage == 2);

    ProgressiveConfig off;
    off.enabled = false;
    ProgressiveState q;
    CHECK(!progressive_step(q, s, off, true));
    CHECK(q.stage == 1);
}

TEST_CASE("param groups partition the store") {
    Checkpoint ck = tiny_checkpoint(7);
    std::vector<ParamGroup> groups = make_param_groups(ck.params);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].name == "decoder");
    CHECK(groups[0].init_lr == 1e-4);
    CHECK(groups[1].name == "encoder");
    CHECK(groups[1].init_lr == 2e-5);

    std::set<std::string> seen;
    for (const ParamGroup& g : groups)
        for (const std::string& name : g.params) {
            CHECK(seen.insert(name).second); // no double assignment
            CHECK((name.rfind("enc.", 0) == 0) == (g.name == "encoder"));
        }
    CHECK(seen.size() == ck.params.all().size());
    CHECK(!groups[0].params.empty());
    CHECK(!groups[1].params.empty());
}

TEST_CASE("unfrozen encoder resumes at the decayed learning rate") {
    PlateauConfig pc;
    pc.patience = 3;
    PlateauState s = make_plateau(pc, {1e-4, 2e-5});
    plateau_step(s, 10.0);
    for (int i = 0; i < 4; ++i) plateau_step(s, 10.0); // one decay
    CHECK(s.current_lr[1] == doctest::Approx(1e-5).epsilon(1e-15)); // 2e-5 * 0.5
}

TEST_CASE("adamw single-step arithmetic") {
    ParamStore params;
    params.add("dec.w", 1, 2) << 1.0, -2.0;
    std::vector<ParamGroup> groups = make_param_groups(params, 0.1, 0.1);

    AdamWConfig oc;
    oc.weight_decay = 0.0;
    oc.clip_norm = 0.0; // disabled
    AdamW opt(oc);
    std::map<std::string, ad::Mat> grads;
    grads["dec.w"] = (ad::Mat(1, 2) << 4.0, -4.0).finished();
    opt.step(params, groups, {0.1, 0.1}, {true, true}, grads);
    // bias-corrected m = g, v = g*g -> update = lr * g / (|g| + eps)
    double expect = 0.1 * 4.0 / (4.0 + oc.eps);
    CHECK(params.at("dec.w")(0, 0) == doctest::Approx(1.0 - expect).epsilon(1e-12));
    CHECK(params.at("dec.w")(0, 1) == doctest::Approx(-2.0 + expect).epsilon(1e-12));
}

TEST_CASE("adamw decoupled weight decay shrinks zero-gradient weights") {
    ParamStore params;
    params.add("dec.w", 1, 1) << 2.0;
    std::vector<ParamGroup> groups = make_param_groups(params, 0.5, 0.5);
    AdamWConfig oc;
    oc.weight_decay = 0.1;
    AdamW opt(oc);
    std::map<std::string, ad::Mat> grads;
    grads["dec.w"] = ad::Mat::Zero(1, 1);
    opt.step(params, groups, {0.5, 0.5}, {true, true}, grads);
    CHECK(params.at("dec.w")(0, 0) == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
}

TEST_CASE("adamw skips frozen groups and missing grads") {
    ParamStore params;
    params.add("dec.w", 1, 1) << 1.0;
    params.add("dec.other", 1, 1) << 3.0;
    params.add("enc.w", 1, 1) << 1.0;
    std::vector<ParamGroup> groups = make_param_groups(params, 0.1, 0.1);
    AdamW opt(AdamWConfig{});
    std::map<std::string, ad::Mat> grads;
    grads["dec.w"] = ad::Mat::Constant(1, 1, 1.0);
    grads["enc.w"] = ad::Mat::Constant(1, 1, 1.0);
    opt.step(params, groups, {0.1, 0.1}, {true, false}, grads);
    CHECK(params.at("enc.w")(0, 0) == 1.0);    // frozen: no grad step, no decay
    CHECK(params.at("dec.other")(0, 0) == 3.0); // no grad entry: untouched
    CHECK(params.at("dec.w")(0, 0) != 1.0);
}

TEST_CASE("adamw clips the global gradient norm over active groups") {
    ParamStore params;
    params.add("dec.a", 1, 1) << 0.0;
    params.add("dec.b", 1, 1) << 0.0;
    params.add("enc.w", 1, 1) << 0.0;
    std::vector<ParamGroup> groups = make_param_groups(params, 0.1, 0.1);
    AdamWConfig oc;
    oc.clip_norm = 1.0;
    AdamW opt(oc);
    std::map<std::string, ad::Mat> grads;
    grads["dec.a"] = ad::Mat::Constant(1, 1, 3.0);
    grads["dec.b"] = ad::Mat::Constant(1, 1, 4.0);   // norm 5 over active groups
    grads["enc.w"] = ad::Mat::Constant(1, 1, 100.0); // frozen, excluded
    opt.step(params, groups, {0.1, 0.1}, {true, false}, grads);
    CHECK(grads["dec.a"](0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(grads["dec.b"](0, 0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(grads["enc.w"](0, 0) == 100.0);
}

TEST_CASE("augmentation policy contracts") {
    TrainExample a = blob_example(0, 0.3, 0.5);
    TrainExample b = blob_example(1, 0.6, 0.4);

    SUBCASE("zero probabilities are the identity") {
        AugmentPolicy off{0.0, 0.0, 0.0, 0.2};
        RandomStream rng(1);
        TrainExample out = augment(a, b, off, rng);
        CHECK(out.image.pixels == a.image.pixels);
        REQUIRE(out.objects.size() == 1);
        CHECK(out.objects[0].box.cx == a.objects[0].box.cx);
    }

    SUBCASE("forced flip is an involution and mirrors boxes") {
        AugmentPolicy flip{1.0, 0.0, 0.0, 0.2};
        RandomStream rng(1);
        TrainExample once = augment(a, b, flip, rng);
        CHECK(once.objects[0].box.cx == doctest::Approx(0.7).epsilon(1e-15));
        CHECK(once.objects[0].box.cy == a.objects[0].box.cy);
        CHECK(once.image.pixels != a.image.pixels);
        TrainExample twice = augment(once, b, flip, rng);
        CHECK(twice.image.pixels == a.image.pixels);
        CHECK(twice.objects[0].box.cx == doctest::Approx(0.3).epsilon(1e-15));
    }

    SUBCASE("forced jitter perturbs channels only") {
        AugmentPolicy jit{0.0, 1.0, 0.0, 0.2};
        RandomStream rng(5);
        TrainExample out = augment(a, b, jit, rng);
        CHECK(out.objects[0].box.cx == a.objects[0].box.cx);
        CHECK(out.image.pixels != a.image.pixels);
        for (double v : out.image.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    SUBCASE("forced mixup blends pixels convexly and unions annotations") {
        TrainExample a3 = a;
        a3.objects.push_back({Box::center_size(0.7, 0.7, 0.2, 0.2), 2});
        AugmentPolicy mix{0.0, 0.0, 1.0, 0.2};
        RandomStream rng(9);
        TrainExample out = augment(a3, b, mix, rng);
        CHECK(out.objects.size() == 3); // 2 + 1
        // recover lambda from one differing pixel and verify it blends all
        std::size_t probe = 0;
        while (a3.image.pixels[probe] == b.image.pixels[probe]) ++probe;
        double lambda = (out.image.pixels[probe] - b.image.pixels[probe]) /
                        (a3.image.pixels[probe] - b.image.pixels[probe]);
        CHECK(lambda >= 0.3);
        CHECK(lambda <= 0.7);
        for (std::size_t i = 0; i < out.image.pixels.size(); ++i)
            CHECK(out.image.pixels[i] ==
                  doctest::Approx(lambda * a3.image.pixels[i] + (1.0 - lambda) * b.image.pixels[i])
                      .epsilon(1e-12));
    }

    SUBCASE("mixup partner must match the image size") {
        AugmentPolicy mix{0.0, 0.0, 1.0, 0.2};
        TrainExample small;
        small.image = Image::filled(16, 16, 0.0, 0.0, 0.0);
        RandomStream rng(2);
        CHECK_THROWS_AS(augment(a, small, mix, rng), std::invalid_argument);
    }

    SUBCASE("invalid probabilities are rejected") {
        AugmentPolicy bad{1.5, 0.0, 0.0, 0.2};
        RandomStream rng(2);
        CHECK_THROWS_AS(augment(a, b, bad, rng), std::invalid_argument);
    }
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
    CHECK(cosine_lr(1e-4, 1e-6, 1, 100) == 1e-4);
    CHECK(cosine_lr(1e-4, 1e-6, 100, 100) == doctest::Approx(1e-6).epsilon(1e-9));
    CHECK(cosine_lr(1e-4, 1e-6, 51, 101) == doctest::Approx((1e-4 + 1e-6) / 2.0).epsilon(1e-12));
    CHECK(cosine_lr(1e-4, 1e-6, 1, 1) == 1e-4);
    double prev = 1e-4;
    for (int e = 1; e <= 60; ++e) {
        double lr = cosine_lr(1e-4, 1e-6, e, 60);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(cosine_lr(1e-4, 1e-6, 0, 10), std::invalid_argument);
}

TEST_CASE("fit contract on a tiny model") {
    Checkpoint ck = tiny_checkpoint(11);
    std::vector<TrainExample> train = {blob_example(0, 0.3, 0.5), blob_example(1, 0.6, 0.4),
                                       blob_example(2, 0.5, 0.7), blob_example(0, 0.7, 0.3)};
    std::vector<TrainExample> val = {blob_example(1, 0.4, 0.6), blob_example(2, 0.6, 0.6)};

    FitConfig fc;
    fc.epochs = 1;
    fc.batch_size = 4;
    fc.seed = 3;

    SUBCASE("one epoch emits one log row and one checkpoint") {
        FitResult r = fit(ck, train, val, fc);
        REQUIRE(r.log.size() == 1);
        CHECK(r.log[0].epoch == 1);
        CHECK(r.best_epoch == 1);
        CHECK(r.best_val_map == r.log[0].val_map);
        CHECK(std::isfinite(r.log[0].train_loss));
        CHECK(r.best.params.count_scalars() == ck.params.count_scalars());
    }

    SUBCASE("stage 1 freezes the encoder, stage-free mode does not") {
        FitResult r = fit(ck, train, val, fc);
        CHECK(r.log[0].stage == 1);
        bool enc_changed = false, dec_changed = false;
        for (const auto& [name, m] : r.best.params.all()) {
            bool diff = (m - ck.params.at(name)).cwiseAbs().maxCoeff() > 0.0;
            (name.rfind("enc.", 0) == 0 ? enc_changed : dec_changed) |= diff;
        }
        CHECK(!enc_changed);
        CHECK(dec_changed);

        FitConfig single = fc;
        single.progressive = false;
        FitResult r2 = fit(ck, train, val, single);
        CHECK(r2.log[0].stage == 2);
        bool enc_changed2 = false;
        for (const auto& [name, m] : r2.best.params.all())
            if (name.rfind("enc.", 0) == 0)
                enc_changed2 |= (m - ck.params.at(name)).cwiseAbs().maxCoeff() > 0.0;
        CHECK(enc_changed2);
    }

    SUBCASE("identical seeds reproduce the run bitwise") {
        FitConfig two = fc;
        two.epochs = 2;
        FitResult a = fit(ck, train, val, two);
        FitResult b = fit(ck, train, val, two);
        REQUIRE(a.log.size() == b.log.size());
        for (std::size_t i = 0; i < a.log.size(); ++i) {
            CHECK(a.log[i].train_loss == b.log[i].train_loss);
            CHECK(a.log[i].val_map == b.log[i].val_map);
        }
        for (const auto& [name, m] : a.best.params.all())
            CHECK((m - b.best.params.at(name)).cwiseAbs().maxCoeff() == 0.0);

        FitConfig other = two;
        other.seed = 4;
        FitResult c = fit(ck, train, val, other);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.log.size(); ++i)
            any_diff |= a.log[i].train_loss != c.log[i].train_loss;
        CHECK(any_diff);
    }

    SUBCASE("recorded schedule replays through the unit state machines") {
        FitConfig sched = fc;
        sched.epochs = 8;
        sched.patience_stage1 = 0; // decay as soon as the metric stalls
        sched.patience_stage2 = 1;
        FitResult r = fit(ck, train, val, sched);
        REQUIRE(r.log.size() == 8);

        PlateauConfig pc;
        pc.factor = sched.plateau_factor;
        pc.min_lr = sched.min_lr;
        pc.eps = sched.plateau_eps;
        pc.patience = sched.patience_stage1;
        PlateauState s = make_plateau(pc, {sched.lr_main, sched.lr_encoder});
        ProgressiveConfig pcfg;
        pcfg.stage1_patience = sched.patience_stage1;
        pcfg.stage2_patience = sched.patience_stage2;
        ProgressiveState p;
        int transitions = 0;
        for (const EpochRecord& rec : r.log) {
            CHECK(rec.lr_main == s.current_lr[0]);
            CHECK(rec.lr_encoder == s.current_lr[1]);
            CHECK(rec.stage == p.stage);
            bool decayed = plateau_step(s, rec.val_map);
            CHECK(rec.decayed == decayed);
            transitions += progressive_step(p, s, pcfg, decayed) ? 1 : 0;
        }
        CHECK(transitions <= 1);

        // lr trajectory is non-increasing and floored; stage is monotone
        for (std::size_t i = 1; i < r.log.size(); ++i) {
            CHECK(r.log[i].lr_main <= r.log[i - 1].lr_main);
            CHECK(r.log[i].lr_main >= sched.min_lr);
            CHECK(r.log[i].stage >= r.log[i - 1].stage);
        }
        // best checkpoint carries the max validation metric in the log
        double best = -1.0;
        for (const EpochRecord& rec : r.log) best = std::max(best, rec.val_map);
        CHECK(r.best_val_map == best);
    }

    SUBCASE("cosine mode switches stages at half the epochs") {
        FitConfig cos = fc;
        cos.scheduler = "cosine";
        cos.epochs = 4;
        FitResult r = fit(ck, train, val, cos);
        REQUIRE(r.log.size() == 4);
        for (int e = 1; e <= 4; ++e) {
            CHECK(r.log[e - 1].lr_main == cosine_lr(cos.lr_main, cos.min_lr, e, 4));
            CHECK(r.log[e - 1].stage == (e > 2 ? 2 : 1));
            CHECK(!r.log[e - 1].decayed);
        }
    }

    SUBCASE("non-finite loss aborts with a diagnostic") {
        // +inf class bias saturates every logit, so the no-object BCE terms
        // are infinite while attention and matching stay well-defined
        Checkpoint bad = ck;
        bad.params.at("head.cls.b").setConstant(std::numeric_limits<double>::infinity());
        CHECK_THROWS_WITH_AS(fit(bad, train, val, fc),
                             doctest::Contains("non-finite loss"), std::runtime_error);
    }

    SUBCASE("empty sets are rejected") {
        CHECK_THROWS_AS(fit(ck, {}, val, fc), std::invalid_argument);
        CHECK_THROWS_AS(fit(ck, train, {}, fc), std::invalid_argument);
    }
}

TEST_CASE("training log round trip") {
    std::vector<EpochRecord> log = {{1, 2.5, 10.0, 1e-4, 2e-5, 1, false},
                                    {2, 2.25, 12.5, 1e-4, 2e-5, 1, true},
                                    {3, 2.0, 12.5, 5e-5, 1e-5, 2, false}};
    std::string path = "/tmp/hedet_fitlog.jsonl";
    save_log(path, log);
    std::vector<EpochRecord> back = load_log(path);
    REQUIRE(back.size() == log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(back[i].epoch == log[i].epoch);
        CHECK(back[i].train_loss == log[i].train_loss);
        CHECK(back[i].val_map == log[i].val_map);
        CHECK(back[i].lr_main == log[i].lr_main);
        CHECK(back[i].lr_encoder == log[i].lr_encoder);
        CHECK(back[i].stage == log[i].stage);
        CHECK(back[i].decayed == log[i].decayed);
    }
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_log(path), std::runtime_error);
    CHECK(log_to_jsonl(log).find("\"stage\":1") != std::string::npos);
}

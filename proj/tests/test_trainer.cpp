#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "data/metrics.hpp"
#include "data/phantom.hpp"
#include "model/checkpoint.hpp"
#include "train/adam.hpp"
#include "train/experiment.hpp"
#include "train/run_config.hpp"
#include "train/trainer.hpp"
#include "test_util.hpp"

using namespace sscm;
using namespace sscm::train;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Small but complete: every component on, 16x16 phantoms.
RunConfig small_run(std::size_t iterations, std::uint64_t seed)
{
    auto cfg = parse_run_config(R"({
        "preset": "tiny",
        "model": {"channels": 4, "num_blocks": 1},
        "data": {"size": 16, "train_pairs": 3, "test_pairs": 2, "seed": 77},
        "train": {"iterations": )" + std::to_string(iterations) +
                                R"(, "seed": )" + std::to_string(seed) + "}}");
    return cfg;
}

} // namespace

TEST_CASE("l1 loss")
{
    Tensor<double> a({3}, {0.5, -1.0, 2.0});
    CHECK(l1_loss(a, a).item() == 0.0);
    CHECK(l1_loss(Tensor<double>({1}, {1.0}), Tensor<double>({1}, {0.0})).item() == 1.0);
    auto p = Tensor<double>({4}, {1.0, -2.0, 3.0, 0.5}, true);
    Tensor<double> t({4}, {0.0, 0.0, 3.0, 1.0});
    Tape<double> tape;
    Tensor<double> loss;
    {
        TapeScope<double> scope(tape);
        loss = l1_loss(p, t);
    }
    backward(loss, tape);
    const std::vector<double> expect{0.25, -0.25, 0.0, -0.25};
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(p.grad()[i] == expect[i]);
    CHECK_THROWS_AS(l1_loss(p, Tensor<double>({3}, {0, 0, 0})), ShapeError);
}

TEST_CASE("adam")
{
    ParamRegistry<double> reg;
    Tensor<double> w({3}, {0.1, -0.2, 0.3});
    Tensor<double> theta({1}, {0.7});
    reg.add("w", w, true);
    reg.add("theta", theta, true);
    AdamState<double> state;
    AdamConfig cfg;

    // No gradient anywhere: nothing moves.
    adam_step(reg, state, cfg);
    CHECK(w.data()[0] == 0.1);
    CHECK(theta.data()[0] == 0.7);
    CHECK(state.step == 1);

    // Scalar recurrence against the closed-form update.
    AdamState<double> s2;
    double m = 0, v = 0, x = 0.7;
    const std::vector<double> grads{0.5, 0.5, -0.25, 1e-3, 2.0, 0.5, 0.5};
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        reg.zero_grad();
        theta.node()->ensure_grad()[0] = grads[t - 1];
        adam_step(reg, s2, cfg);
        const double g = grads[t - 1];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, double(t))), vh = v / (1 - std::pow(0.999, double(t)));
        x -= 2e-4 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(std::abs(theta.data()[0] - x) <= 1e-15);
    }
    CHECK(s2.step == grads.size());

    // Non-finite gradient: named, and nothing is modified.
    reg.zero_grad();
    theta.node()->ensure_grad()[0] = 1.0;
    w.node()->ensure_grad()[1] = std::nan("");
    const double before = theta.data()[0];
    try {
        adam_step(reg, s2, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
    CHECK(theta.data()[0] == before);
    CHECK(s2.step == grads.size());
}

TEST_CASE("frozen parameters are skipped")
{
    ParamRegistry<double> reg;
    Tensor<double> a({1}, {1.0}), b({1}, {1.0});
    reg.add("a", a, true);
    reg.add("b", b, false);
    a.node()->ensure_grad()[0] = 1.0;
    b.node()->ensure_grad()[0] = 1.0;
    AdamState<double> s;
    adam_step(reg, s, AdamConfig{});
    CHECK(a.data()[0] < 1.0);
    CHECK(b.data()[0] == 1.0);
}

TEST_CASE("overfitting one pair lowers the loss")
{
    data::PhantomSpec ps;
    ps.seed = 3;
    ps.size = 32;
    ps.offset = {2, 1};
    const std::vector<data::ImagePair<float>> one{data::generate_phantom_pair<float>(ps)};
    auto mc = model::preset("desk");
    mc.channels = 8;
    mc.num_blocks = 1;
    mc.heads = 2;
    mc.sub_group = 32;
    mc.height = mc.width = 32;
    model::SscmModel<float> m(mc, 5);

    // Untrained: the identity on the LR input.
    CHECK(bitwise_equal(m.forward(one[0].tar_lr, one[0].ref_hr), one[0].tar_lr));

    TrainConfig tc;
    tc.iterations = 500;
    tc.lr = 1e-3;
    AdamState<float> st;
    const auto r = train::train(m, one, tc, st);
    REQUIRE(r.losses.size() == 500);
    double tail = 0;
    for (std::size_t i = 480; i < 500; ++i)
        tail += r.losses[i];
    tail /= 20;
    MESSAGE("initial L1 " << r.losses.front() << ", mean of last 20 " << tail);
    CHECK(tail < r.losses.front());
    CHECK(r.losses.back() < r.losses.front());
    for (double l : r.losses)
        CHECK(l >= 0.0);
}

TEST_CASE("non-finite loss aborts")
{
    data::PhantomSpec ps;
    ps.size = 8;
    auto pair = data::generate_phantom_pair<float>(ps);
    auto bad = pair.tar_lr.mutable_data();
    bad[5] = std::numeric_limits<float>::quiet_NaN();
    model::SscmModel<float> m(model::preset("tiny"), 1);
    AdamState<float> st;
    TrainConfig tc;
    tc.iterations = 3;
    CHECK_THROWS_AS(train::train(m, std::vector<data::ImagePair<float>>{pair}, tc, st), TrainingError);
}

TEST_CASE("seeded runs: determinism and seed sensitivity")
{
    auto dir = testutil::temp_dir("trainer_det");
    const auto data = make_datasets(small_run(1, 1).data);
    auto run = [&](std::uint64_t seed, const std::string& tag) {
        TrainOutputs out;
        out.checkpoint = dir / (tag + ".ssck");
        out.loss_csv = dir / (tag + ".csv");
        return run_experiment(small_run(15, seed), data, out);
    };
    const auto a = run(4, "a");
    const auto b = run(4, "b");
    const auto c = run(5, "c");
    CHECK(a.training.losses == b.training.losses);
    CHECK(testutil::read_bytes(dir / "a.ssck") == testutil::read_bytes(dir / "b.ssck"));
    CHECK(testutil::read_bytes(dir / "a.csv") == testutil::read_bytes(dir / "b.csv"));
    CHECK(a.training.losses != c.training.losses);
    CHECK(a.model.psnr_db == b.model.psnr_db);

    const auto csv = read_text(dir / "a.csv");
    CHECK(csv.rfind("iter,l1_loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
}

TEST_CASE("checkpoint cadence and optimizer state")
{
    auto dir = testutil::temp_dir("trainer_ckpt");
    const auto cfg = small_run(6, 2);
    const auto data = make_datasets(cfg.data);
    model::SscmModel<float> m(cfg.model, cfg.train.seed);
    auto tc = cfg.train;
    tc.checkpoint_every = 3;
    AdamState<float> st;
    TrainOutputs out;
    out.checkpoint = dir / "run.ssck";
    (void)train::train(m, data.train, tc, st, out);
    CHECK(std::filesystem::exists(dir / "run.ssck.3"));
    // The last iteration goes to the bare path only.
    CHECK_FALSE(std::filesystem::exists(dir / "run.ssck.6"));
    CHECK(std::filesystem::exists(dir / "run.ssck"));
    CHECK(st.step == 6);

    const auto archive = model::read_archive(dir / "run.ssck");
    const auto back = load_optimizer_state<float>(archive);
    CHECK(back.step == st.step);
    CHECK(back.m == st.m);
    CHECK(back.v == st.v);

    auto loaded = model::load_model<float>(dir / "run.ssck");
    const auto& p = data.test[0];
    CHECK(bitwise_equal(loaded->predict(p.tar_lr, p.ref_hr), m.predict(p.tar_lr, p.ref_hr)));
}

TEST_CASE("zero-padding baseline evaluation")
{
    const auto data = make_datasets(small_run(1, 1).data);
    const auto zp = evaluate_zero_padding(data.test);
    double mean = 0;
    for (const auto& p : data.test)
        mean += data::evaluate_pair(p.tar_lr, p.tar_hr).psnr_db;
    mean /= double(data.test.size());
    CHECK(zp.psnr_db == doctest::Approx(mean).epsilon(1e-12));
    model::SscmModel<float> fresh(small_run(1, 1).model, 3);
    CHECK(evaluate_model(fresh, data.test).psnr_db == doctest::Approx(zp.psnr_db).epsilon(1e-12));
}

TEST_CASE("run config")
{
    const auto d = parse_run_config("{}");
    CHECK(d.preset == "desk");
    CHECK(d.train.lr == 2e-4);
    CHECK(d.model.height == d.data.size);

    auto c = parse_run_config(R"({"preset":"tiny","data":{"size":32},"model":{"channels":8}})");
    CHECK(c.model.channels == 8);
    CHECK(c.model.height == 32);
    CHECK(c.model.prototypes == model::preset("tiny").prototypes);

    CHECK_THROWS_AS(parse_run_config(R"({"trian":{}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train":{"iters":5}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"height":8}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train":{"lr":-1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train":{"iterations":0}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"model":{"channels":6,"heads":4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data":{"size":48}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"preset":"huge"})"), ConfigError);

    apply_override(c, "train.iterations=7");
    CHECK(c.train.iterations == 7);
    apply_override(c, "model.use_sffb=false");
    CHECK_FALSE(c.model.use_sffb);
    CHECK_THROWS_AS(apply_override(c, "train.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "garbage"), ConfigError);

    const auto again = parse_run_config(to_json(c));
    CHECK(again.model == c.model);
    CHECK(again.train.iterations == c.train.iterations);
    CHECK(again.ablation_seeds == c.ablation_seeds);

    setenv("SSCM_SEED", "99", 1);
    apply_seed_env(c);
    CHECK(c.train.seed == 99);
    setenv("SSCM_SEED", "x9", 1);
    CHECK_THROWS_AS(apply_seed_env(c), ConfigError);
    unsetenv("SSCM_SEED");
}

TEST_CASE("ablation bookkeeping")
{
    const auto& v = ablation_variants();
    REQUIRE(v.size() == 5);
    CHECK((!v.front().dswm && !v.front().satab && !v.front().sffb));
    CHECK((v.back().dswm && v.back().satab && v.back().sffb));

    auto row = [](AblationVariant var, double p) {
        AblationRow r{var, {p}, {0.9}, p, 0.9};
        return r;
    };
    std::vector<AblationRow> rows{row(v[0], 20.0), row(v[1], 21.0), row(v[2], 21.2), row(v[3], 21.1),
                                  row(v[4], 22.0)};
    CHECK(check_ablation_order(rows).passed);
    rows[1].mean_psnr = 22.03; // within tolerance above the full model
    auto tie = check_ablation_order(rows);
    CHECK(tie.passed);
    CHECK(tie.ties.size() == 1);
    rows[1].mean_psnr = 19.5; // below the baseline
    auto bad = check_ablation_order(rows);
    CHECK_FALSE(bad.passed);
    CHECK(bad.violations.size() == 1);

    auto dir = testutil::temp_dir("trainer_ablate");
    write_ablation_csv(dir / "a.csv", rows);
    const auto text = read_text(dir / "a.csv");
    CHECK(text.rfind("dswm,satab,sffb,psnr,ssim\n", 0) == 0);
    CHECK(text.find("true,true,true,") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}

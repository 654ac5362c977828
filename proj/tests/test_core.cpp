#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "lipsync/core/csv.hpp"
#include "lipsync/core/graph.hpp"
#include "lipsync/core/nn.hpp"
#include "lipsync/core/optim.hpp"
#include "lipsync/core/serialize.hpp"
#include "lipsync/core/wav.hpp"

using namespace lipsync;

namespace {

// Central finite differences against the analytic gradient, for the graph
// input and every trainable parameter touched by the loss.
struct GradCheck {
    std::function<Var(Graph<double>&, Var)> loss_fn;
    Tensor64 x0;
    ParamStore<double>* store = nullptr;
    double h = 1e-5;
    double tol = 1e-6;

    double eval(const Tensor64& x) const {
        Graph<double> g;
        Var xv = g.input(x, true);
        Var loss = loss_fn(g, xv);
        return g.val(loss)[0];
    }

    void run() const {
        Graph<double> g;
        Var xv = g.input(x0, true);
        Var loss = loss_fn(g, xv);
        if (store) store->zero_grads();
        g.backward(loss);
        Tensor64 gx = g.grad_of(xv);

        double max_rel = 0;
        for (int64_t k = 0; k < x0.numel(); ++k) {
            Tensor64 xp = x0.clone(), xm = x0.clone();
            xp[k] += h;
            xm[k] -= h;
            const double fd = (eval(xp) - eval(xm)) / (2 * h);
            const double rel = std::abs(gx[k] - fd) / std::max({std::abs(fd), std::abs(gx[k]), 1e-4});
            max_rel = std::max(max_rel, rel);
        }
        CHECK(max_rel < tol);

        if (store) {
            for (auto& p : store->all()) {
                if (!p.trainable) continue;
                for (int64_t k = 0; k < p.value.numel(); ++k) {
                    const double keep = p.value[k];
                    p.value[k] = keep + h;
                    const double lp = eval(x0);
                    p.value[k] = keep - h;
                    const double lm = eval(x0);
                    p.value[k] = keep;
                    const double fd = (lp - lm) / (2 * h);
                    const double an = p.grad[k];
                    const double rel = std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1e-4});
                    CHECK_MESSAGE(rel < tol, p.name, "[", k, "] analytic=", an, " fd=", fd);
                }
            }
        }
    }
};

Tensor64 randn(Shape s, uint64_t seed, double sd = 1.0) {
    Rng rng(seed);
    return Tensor64::randn(std::move(s), rng, sd);
}

}  // namespace

TEST_CASE("rng determinism and moments") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(7);
    double mean = 0, var = 0;
    const int n = 20000;
    std::vector<double> xs(n);
    for (auto& x : xs) x = c.normal();
    for (double x : xs) mean += x / n;
    for (double x : xs) var += (x - mean) * (x - mean) / n;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);

    Rng d(9);
    d.normal();
    const auto st = d.save_state();
    const double next = d.normal();
    d.restore_state(st);
    CHECK(d.normal() == next);

    Rng e(11);
    const std::string hex = e.state_hex();
    Rng f(0);
    f.restore_state_hex(hex);
    CHECK(e.next_u64() == f.next_u64());
}

TEST_CASE("tensor basics") {
    Tensor64 t({2, 3});
    CHECK(t.numel() == 6);
    t.at({1, 2}) = 5.0;
    CHECK(t[5] == 5.0);
    Tensor64 r = t.reshaped({3, 2});
    CHECK(r.at({2, 1}) == 5.0);
    r[0] = 1.0;  // shared buffer
    CHECK(t[0] == 1.0);
    Tensor64 c = t.clone();
    c[0] = 9.0;
    CHECK(t[0] == 1.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor64({-1, 2}), ShapeError);
}

TEST_CASE("elementwise and activation gradients") {
    auto x = randn({3, 4}, 1);
    // keep relu/clamp inputs away from their kinks
    for (auto& v : x)
        if (std::abs(v) < 0.05) v += 0.1;

    GradCheck{[](Graph<double>& g, Var v) {
                  Var a = g.mul(v, g.add_const(v, 0.5));
                  Var b = g.sub(g.relu(a), g.scale(g.silu(v), 0.3));
                  Var c = g.add(b, g.leaky_relu(v, 0.2));
                  Var d = g.mul(g.sigmoid(c), g.tanh_op(v));
                  return g.mean_all(g.add(d, g.clamp(v, -0.8, 0.8)));
              },
              x}
        .run();

    auto xp = Tensor64::rand_uniform({2, 5}, *[] { static Rng r(3); return &r; }(), 0.2, 2.0);
    GradCheck{[](Graph<double>& g, Var v) {
                  return g.sum_all(g.add(g.log_op(v), g.sqrt_op(g.exp_op(v))));
              },
              xp}
        .run();
}

TEST_CASE("shaping gradients") {
    auto x = randn({2, 3, 4}, 5);
    GradCheck{[](Graph<double>& g, Var v) {
                  Var p = g.permute(v, {2, 0, 1});       // [4,2,3]
                  Var r = g.reshape(p, {4, 6});
                  Var s = g.slice(r, 1, 1, 3);           // [4,3]
                  Var cat = g.concat({s, s}, 0);         // [8,3]
                  return g.mean_all(g.mul(cat, cat));
              },
              x}
        .run();
}

TEST_CASE("broadcast add gradients") {
    auto x = randn({2, 3, 2, 2}, 7);
    ParamStore<double> store;
    Rng rng(11);
    auto* bias = store.create("b", Tensor64::randn({3}, rng));
    auto* sbias = store.create("s", Tensor64::randn({2, 3}, rng));
    auto* pos = store.create("p", Tensor64::randn({1, 3, 4}, rng));
    GradCheck{[&](Graph<double>& g, Var v) {
                  Var a = g.add_bias(v, g.param(bias));
                  Var b = g.add_sample_bias(a, g.param(sbias));
                  Var t = g.reshape(b, {2, 3, 4});
                  Var c = g.add_broadcast0(t, g.param(pos));
                  return g.mean_all(g.mul(c, c));
              },
              x, &store}
        .run();
}

TEST_CASE("matmul gradients, all transpose combinations") {
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            CAPTURE(ta);
            CAPTURE(tb);
            // logical A[3,4] x B[4,2]
            Tensor64 a = randn(ta ? Shape{4, 3} : Shape{3, 4}, 21);
            ParamStore<double> store;
            Rng rng(31);
            auto* b = store.create("b", Tensor64::randn(tb ? Shape{2, 4} : Shape{4, 2}, rng));
            GradCheck{[&, ta, tb](Graph<double>& g, Var v) {
                          return g.mean_all(g.matmul(v, g.param(b), ta, tb));
                      },
                      a, &store}
                .run();
        }
}

TEST_CASE("batch matmul gradients") {
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            CAPTURE(ta);
            CAPTURE(tb);
            Tensor64 a = randn(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, 23);
            ParamStore<double> store;
            Rng rng(33);
            auto* b = store.create("b", Tensor64::randn(tb ? Shape{2, 2, 4} : Shape{2, 4, 2}, rng));
            GradCheck{[&, ta, tb](Graph<double>& g, Var v) {
                          Var m = g.batch_matmul(v, g.param(b), ta, tb);
                          return g.mean_all(g.mul(m, m));
                      },
                      a, &store}
                .run();
        }
}

TEST_CASE("conv2d gradients") {
    for (int stride : {1, 2}) {
        CAPTURE(stride);
        auto x = randn({2, 3, 5, 5}, 41);
        ParamStore<double> store;
        Rng rng(43);
        auto* w = store.create("w", Tensor64::randn({4, 3, 3, 3}, rng, 0.5));
        auto* b = store.create("b", Tensor64::randn({4}, rng, 0.5));
        GradCheck{[&, stride](Graph<double>& g, Var v) {
                      Var y = g.conv2d(v, g.param(w), g.param(b), stride, 1);
                      return g.mean_all(g.mul(y, y));
                  },
                  x, &store}
            .run();
    }
}

TEST_CASE("conv2d matches a direct convolution oracle") {
    Rng rng(5);
    Tensor64 x = Tensor64::randn({1, 2, 4, 4}, rng);
    Tensor64 w = Tensor64::randn({3, 2, 3, 3}, rng);
    Graph<double> g;
    Var y = g.conv2d(g.input(x), g.input(w), Var{}, 1, 1);
    // brute-force direct convolution
    for (int co = 0; co < 3; ++co)
        for (int oh = 0; oh < 4; ++oh)
            for (int ow = 0; ow < 4; ++ow) {
                double acc = 0;
                for (int ci = 0; ci < 2; ++ci)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            const int ih = oh - 1 + i, iw = ow - 1 + j;
                            if (ih < 0 || ih >= 4 || iw < 0 || iw >= 4) continue;
                            acc += x.at({0, ci, ih, iw}) * w.at({co, ci, i, j});
                        }
                CHECK(g.val(y).at({0, co, oh, ow}) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("group norm gradients") {
    auto x = randn({2, 4, 3, 3}, 51);
    ParamStore<double> store;
    Rng rng(53);
    auto* gm = store.create("gamma", Tensor64::rand_uniform({4}, rng, 0.5, 1.5));
    auto* bt = store.create("beta", Tensor64::randn({4}, rng, 0.3));
    GradCheck{[&](Graph<double>& g, Var v) {
                  Var y = g.group_norm(v, g.param(gm), g.param(bt), 2);
                  return g.mean_all(g.mul(y, y));
              },
              x, &store, 1e-5, 1e-5}
        .run();
}

TEST_CASE("softmax, pooling, upsample gradients") {
    auto x = randn({2, 3, 4}, 61);
    GradCheck{[](Graph<double>& g, Var v) {
                  Var y = g.softmax_last(v);
                  return g.mean_all(g.mul(y, y));
              },
              x}
        .run();

    auto xi = randn({2, 3, 4, 4}, 63);
    GradCheck{[](Graph<double>& g, Var v) {
                  Var p = g.global_avg_pool(v);
                  Var u = g.upsample_nearest2x(v);
                  return g.add(g.mean_all(g.mul(p, p)), g.mean_all(g.mul(u, u)));
              },
              xi}
        .run();
}

TEST_CASE("vector and loss op gradients") {
    auto x = randn({3, 5}, 71);
    ParamStore<double> store;
    Rng rng(73);
    auto* other = store.create("o", Tensor64::randn({3, 5}, rng));
    GradCheck{[&](Graph<double>& g, Var v) {
                  Var vn = g.l2_normalize_rows(v);
                  Var on = g.l2_normalize_rows(g.param(other));
                  Var cosv = g.rows_dot(vn, on);
                  Var q = g.clamp(g.scale(g.add_const(cosv, 1.0), 0.5), 1e-7, 1.0 - 1e-7);
                  Tensor64 labels({3}, {1.0, 0.0, 1.0});
                  Var bce = g.bce_mean(q, labels);
                  return g.add(bce, g.mse(v, g.param(other)));
              },
              x, &store}
        .run();

    Graph<double> g;
    CHECK_THROWS_AS(g.l2_normalize_rows(g.input(Tensor64::zeros({2, 3}), true)), NumericError);
}

TEST_CASE("nn layers end-to-end gradients") {
    Rng rng(81);
    ParamStore<double> store;
    auto res = ResBlock<double>::create(store, "res", 4, 6, rng, 8);
    auto attn = SelfAttention2d<double>::create(store, "attn", 6, rng);
    auto down = Downsample<double>::create(store, "down", 6, 6, rng);
    auto up = Upsample<double>::create(store, "up", 6, 4, rng);
    // zero-initialized projections would hide gradient bugs behind exact
    // zeros; nudge them off zero for the check
    for (auto& p : store.all())
        if (p.value.max_abs() == 0.0 && p.name.find(".b") == std::string::npos) {
            Rng jitter(91);
            p.value = Tensor64::randn(p.value.shape(), jitter, 0.05);
        }
    auto x = randn({2, 4, 4, 4}, 83, 0.7);
    auto emb = randn({2, 8}, 85);
    GradCheck{[&](Graph<double>& g, Var v) {
                  Var e = g.input(emb);
                  Var h = res.forward(g, v, e);
                  h = attn.forward(g, h);
                  h = down.forward(g, h);
                  h = up.forward(g, h);
                  return g.mean_all(g.mul(h, h));
              },
              x, &store, 1e-5, 2e-5}
        .run();
}

TEST_CASE("cross and temporal attention gradients") {
    Rng rng(101);
    ParamStore<double> store;
    auto cross = CrossAttention2d<double>::create(store, "cross", 4, 6, rng);
    auto temp = TemporalAttention<double>::create(store, "temp", 4, 5, rng);
    for (auto& p : store.all())
        if (p.value.max_abs() == 0.0 && p.name.find(".b") == std::string::npos) {
            Rng jitter(103);
            p.value = Tensor64::randn(p.value.shape(), jitter, 0.05);
        }
    auto x = randn({3, 4, 2, 2}, 105, 0.7);  // 3 frames, one clip
    auto ctx = randn({3, 2, 6}, 107);
    GradCheck{[&](Graph<double>& g, Var v) {
                  Var h = cross.forward(g, v, g.input(ctx));
                  h = temp.forward(g, h, 3);
                  return g.mean_all(g.mul(h, h));
              },
              x, &store, 1e-5, 2e-5}
        .run();
}

TEST_CASE("adam optimizes a quadratic and honors freezing") {
    ParamStore<double> store;
    Rng rng(111);
    auto* w = store.create("w", Tensor64::randn({8}, rng));
    auto* frozen = store.create("frozen", Tensor64::randn({4}, rng));
    frozen->trainable = false;
    const Tensor64 frozen_before = frozen->value.clone();

    AdamOptimizer<double> opt;
    opt.lr = 0.05;
    opt.clip_global_norm = 1.0;
    for (int step = 0; step < 400; ++step) {
        Graph<double> g;
        Var loss = g.mean_all(g.mul(g.param(w), g.param(w)));
        store.zero_grads();
        g.backward(loss);
        CHECK(frozen->grad.max_abs() == 0.0);
        opt.step(store);
    }
    CHECK(w->value.max_abs() < 1e-2);
    for (int i = 0; i < 4; ++i) CHECK(frozen->value[i] == frozen_before[i]);
}

TEST_CASE("checkpoint round trip") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "lipsync_test_ckpt.bin").string();
    ParamStore<float> store;
    Rng rng(121);
    store.create("a.w", Tensor32::randn({3, 4}, rng));
    store.create("b.w", Tensor32::randn({5}, rng));
    store.find("b.w")->trainable = false;
    store.find("a.w")->adam_m = Tensor32::randn({3, 4}, rng);
    store.find("a.w")->adam_v = Tensor32::rand_uniform({3, 4}, rng);
    nlohmann::json cfg = {{"kind", "test"}, {"width", 7}};
    save_checkpoint<float>(path, store, cfg, {{"rng", "deadbeef"}}, 42);

    ParamStore<float> loaded;
    Rng rng2(999);
    loaded.create("a.w", Tensor32::randn({3, 4}, rng2));
    loaded.create("b.w", Tensor32::randn({5}, rng2));
    const CheckpointMeta meta = load_checkpoint<float>(path, loaded);
    CHECK(meta.step == 42);
    CHECK(meta.config["width"] == 7);
    CHECK(meta.extra["rng"] == "deadbeef");
    for (int64_t i = 0; i < 12; ++i) {
        CHECK(loaded.find("a.w")->value[i] == store.find("a.w")->value[i]);
        CHECK(loaded.find("a.w")->adam_m[i] == store.find("a.w")->adam_m[i]);
    }
    CHECK(loaded.find("b.w")->trainable == false);
    fs::remove(path);
}

TEST_CASE("wav round trip") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "lipsync_test.wav").string();
    Rng rng(131);
    std::vector<float> samples(1600);
    for (auto& s : samples) s = static_cast<float>(0.8 * std::sin(rng.uniform(0, 6.28)));
    write_wav(path, samples, 16000);
    const WavData back = read_wav(path);
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - samples[i]) < 1.0 / 32000.0);
    fs::remove(path);
}

TEST_CASE("csv round trip") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "lipsync_test.csv").string();
    {
        CsvWriter w(path, {"step", "split", "loss"});
        w.row(std::vector<std::string>{"1", "train", "0.5"});
        w.row(std::vector<std::string>{"2", "val", "0.25"});
    }
    const CsvTable t = read_csv(path);
    CHECK(t.header.size() == 3);
    CHECK(t.rows.size() == 2);
    CHECK(t.num(1, t.col("loss")) == doctest::Approx(0.25));
    CHECK(t.rows[1][t.col("split")] == "val");
    fs::remove(path);
}

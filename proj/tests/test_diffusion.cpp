#include <catch2/catch_amalgamated.hpp>

#include "duet/diffusion.hpp"

using namespace duet;

TEST_CASE("cosine schedule endpoints and monotonicity", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    CHECK(sched.alpha_bar[0] == 1.0f);
    CHECK(sched.alpha_bar[1000] <= 0.01f);
    for (int t = 1; t <= 1000; ++t) {
        CHECK(sched.alpha_bar[size_t(t)] < sched.alpha_bar[size_t(t - 1)]);
        const float ratio = sched.alpha_bar[size_t(t)] / sched.alpha_bar[size_t(t - 1)];
        CHECK(ratio >= 1e-3f * 0.999f);
        CHECK(ratio <= 1.0f);
    }
}

TEST_CASE("cosine schedule matches a direct evaluation of the closed form", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    // independent double-precision evaluation at t = 500
    const double s = 0.008;
    auto f = [&](double t) {
        const double c = std::cos(((t / 1000.0 + s) / (1.0 + s)) * M_PI / 2.0);
        return c * c;
    };
    const double want = f(500.0) / f(0.0);
    CHECK(double(sched.ab(500)) == Catch::Approx(want).epsilon(1e-4));
}

TEST_CASE("forward noising at t=0 returns the input", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(1);
    const Tensor x0 = Tensor::randn({4, 6}, rng);
    const Tensor eps = Tensor::randn({4, 6}, rng);
    const Tensor xt = forward_noise(x0, 0, eps, sched);
    for (long i = 0; i < x0.size(); ++i)
        CHECK(xt.ptr()[i] == Catch::Approx(x0.ptr()[i]).margin(1e-6));
}

TEST_CASE("forward noising with zero noise scales by the signal coefficient", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(100);
    Rng rng(2);
    const Tensor x0 = Tensor::randn({3, 5}, rng);
    const Tensor eps = Tensor::zeros({3, 5});
    const int t = 40;
    const Tensor xt = forward_noise(x0, t, eps, sched);
    const float cs = std::sqrt(sched.ab(t));
    for (long i = 0; i < x0.size(); ++i)
        CHECK(xt.ptr()[i] == Catch::Approx(cs * x0.ptr()[i]).margin(1e-6));
}

TEST_CASE("forward noising preserves unit variance", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(3);
    const int n = 100000;
    for (int t : {100, 500, 900}) {
        double sum = 0.0, sumsq = 0.0;
        Tensor x0 = Tensor::randn({n}, rng);
        Tensor eps = Tensor::randn({n}, rng);
        const Tensor xt = forward_noise(x0, t, eps, sched);
        for (long i = 0; i < n; ++i) {
            sum += xt.ptr()[i];
            sumsq += double(xt.ptr()[i]) * xt.ptr()[i];
        }
        const double var = sumsq / n - (sum / n) * (sum / n);
        CHECK(var == Catch::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("forward noising rejects out-of-range steps", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(100);
    const Tensor x0 = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(forward_noise(x0, 101, x0, sched), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(x0, -1, x0, sched), std::invalid_argument);
}

TEST_CASE("reverse step to zero returns the clean estimate exactly", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(4);
    const Tensor xt = Tensor::randn({4, 4}, rng);
    const Tensor x0h = Tensor::randn({4, 4}, rng);
    const Tensor out = reverse_step(xt, x0h, 500, 0, 0.0f, sched);
    for (long i = 0; i < out.size(); ++i) REQUIRE(out.ptr()[i] == x0h.ptr()[i]);
}

TEST_CASE("reverse step with an oracle reproduces the forward marginal", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(5);
    const Tensor x0 = Tensor::randn({6, 8}, rng);
    const Tensor eps = Tensor::randn({6, 8}, rng);
    for (auto [t, tp] : std::vector<std::pair<int, int>>{{1000, 600}, {700, 350}, {200, 20}}) {
        const Tensor xt = forward_noise(x0, t, eps, sched);
        const Tensor got = reverse_step(xt, x0, t, tp, 0.0f, sched);
        const Tensor want = forward_noise(x0, tp, eps, sched);
        for (long i = 0; i < got.size(); ++i)
            CHECK(got.ptr()[i] == Catch::Approx(want.ptr()[i]).margin(1e-5));
    }
}

TEST_CASE("two oracle reverse steps compose into one", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(6);
    const Tensor x0 = Tensor::randn({5, 5}, rng);
    const Tensor eps = Tensor::randn({5, 5}, rng);
    const Tensor xt = forward_noise(x0, 800, eps, sched);
    const Tensor mid = reverse_step(xt, x0, 800, 400, 0.0f, sched);
    const Tensor two = reverse_step(mid, x0, 400, 100, 0.0f, sched);
    const Tensor one = reverse_step(xt, x0, 800, 100, 0.0f, sched);
    for (long i = 0; i < one.size(); ++i)
        CHECK(two.ptr()[i] == Catch::Approx(one.ptr()[i]).margin(1e-5));
}

TEST_CASE("an oracle denoiser recovers the input through any step list", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    Rng rng(7);
    const Tensor x0 = Tensor::randn({4, 7}, rng);
    const Tensor eps = Tensor::randn({4, 7}, rng);
    for (int num_steps : {3, 10, 50}) {
        Tensor x = forward_noise(x0, 1000, eps, sched);
        const auto steps = sampler_step_list(sched, num_steps);
        for (size_t k = 0; k + 1 < steps.size(); ++k)
            x = reverse_step(x, x0, steps[k], steps[k + 1], 0.0f, sched);
        for (long i = 0; i < x.size(); ++i)
            CHECK(x.ptr()[i] == Catch::Approx(x0.ptr()[i]).margin(1e-4));
    }
}

TEST_CASE("deterministic reverse steps are bit-identical", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(500);
    Rng rng(8);
    const Tensor xt = Tensor::randn({3, 9}, rng);
    const Tensor x0h = Tensor::randn({3, 9}, rng);
    const Tensor a = reverse_step(xt, x0h, 350, 150, 0.0f, sched);
    const Tensor b = reverse_step(xt, x0h, 350, 150, 0.0f, sched);
    for (long i = 0; i < a.size(); ++i) REQUIRE(a.ptr()[i] == b.ptr()[i]);
}

TEST_CASE("reverse step rejects non-decreasing step pairs", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(100);
    const Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(reverse_step(x, x, 50, 50, 0.0f, sched), std::invalid_argument);
    CHECK_THROWS_AS(reverse_step(x, x, 50, 60, 0.0f, sched), std::invalid_argument);
}

TEST_CASE("guidance interpolates between null and conditional estimates", "[diffusion]") {
    Rng rng(9);
    const Tensor cond = Tensor::randn({2, 3}, rng);
    const Tensor null = Tensor::randn({2, 3}, rng);
    const Tensor at1 = guide(cond, null, 1.0f);
    const Tensor at0 = guide(cond, null, 0.0f);
    for (long i = 0; i < cond.size(); ++i) {
        CHECK(at1.ptr()[i] == cond.ptr()[i]);
        CHECK(at0.ptr()[i] == null.ptr()[i]);
    }
    const Tensor c1 = Tensor::scalar(1.0f), c0 = Tensor::scalar(0.0f);
    CHECK(guide(c1, c0, 3.5f).item() == Catch::Approx(3.5));
}

TEST_CASE("sampler step lists run from T to zero strictly decreasing", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(1000);
    for (int n : {1, 7, 50, 999}) {
        const auto steps = sampler_step_list(sched, n);
        CHECK(steps.front() == 1000);
        CHECK(steps.back() == 0);
        for (size_t k = 1; k < steps.size(); ++k) CHECK(steps[k] < steps[k - 1]);
    }
    CHECK(sampler_step_list(sched, 50).size() == 51);
}

TEST_CASE("sampling is deterministic given the seed", "[diffusion]") {
    const NoiseSchedule sched = cosine_schedule(200);
    // stand-in denoiser: pull every state toward zero
    DenoisePairFn fn = [](const Tensor& a, const Tensor& b, int, std::optional<int>) {
        return std::make_pair(mul_scalar(a, 0.1f), mul_scalar(b, 0.1f));
    };
    SamplerConfig cfg;
    cfg.num_steps = 10;
    const SampleResult r1 = sample_normalized(fn, 1, 16, 32, 42, cfg, sched);
    const SampleResult r2 = sample_normalized(fn, 1, 16, 32, 42, cfg, sched);
    for (long i = 0; i < r1.a.size(); ++i) {
        REQUIRE(r1.a.ptr()[i] == r2.a.ptr()[i]);
        REQUIRE(r1.b.ptr()[i] == r2.b.ptr()[i]);
    }
    const SampleResult r3 = sample_normalized(fn, 1, 16, 32, 43, cfg, sched);
    bool any_diff = false;
    for (long i = 0; i < r1.a.size(); ++i) any_diff = any_diff || r1.a.ptr()[i] != r3.a.ptr()[i];
    CHECK(any_diff);
}

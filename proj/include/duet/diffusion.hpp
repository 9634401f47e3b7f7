#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duet/common.hpp"
#include "duet/repr.hpp"
#include "duet/tensor.hpp"

// Variance-preserving forward process on a cosine noise schedule, plus the
// deterministic reverse sampler and classifier-free guidance. The denoiser
// predicts the clean motion (the conditional expectation), so reverse updates
// use the x0 parameterization.

namespace duet {

// ----------------------------- noise schedule -----------------------------

struct NoiseSchedule {
    int T = 1000;
    std::vector<float> alpha_bar;  // cumulative signal coefficients, index 0..T

    float ab(int t) const {
        check(t >= 0 && t <= T, "NoiseSchedule: t = " + std::to_string(t) +
                                    " outside [0, " + std::to_string(T) + "]");
        return alpha_bar[size_t(t)];
    }

    void validate() const {
        check(int(alpha_bar.size()) == T + 1, "NoiseSchedule: wrong table size");
        check(alpha_bar[0] >= 0.999f, "NoiseSchedule: signal at t=0 must be ~1");
        for (int t = 1; t <= T; ++t)
            check(alpha_bar[size_t(t)] < alpha_bar[size_t(t - 1)],
                  "NoiseSchedule: alpha_bar must strictly decrease");
        check(alpha_bar[size_t(T)] <= 0.01f, "NoiseSchedule: terminal signal too large");
    }
};

// alpha_bar(t) = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
// s = 0.008; per-step ratios clipped into [1e-3, 1).
inline NoiseSchedule cosine_schedule(int T) {
    check(T >= 2, "cosine_schedule: need T >= 2");
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.assign(size_t(T) + 1, 0.0f);
    const double s = 0.008;
    auto f = [&](double t) {
        const double arg = ((t / T + s) / (1.0 + s)) * (3.14159265358979323846 / 2.0);
        const double c = std::cos(arg);
        return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    sched.alpha_bar[0] = 1.0f;
    for (int t = 1; t <= T; ++t) {
        double ratio = f(double(t)) / f(double(t - 1));
        ratio = std::min(std::max(ratio, 1e-3), 1.0 - 1e-7);
        const double ab = prev * ratio;
        sched.alpha_bar[size_t(t)] = float(ab);
        prev = ab;
    }
    (void)f0;
    sched.validate();
    return sched;
}

// ----------------------------- forward process -----------------------------

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
inline Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps,
                            const NoiseSchedule& sched) {
    check(eps.shape() == x0.shape(), "forward_noise: eps shape " + shape_str(eps.shape()) +
                                         " does not match x0 " + shape_str(x0.shape()));
    const float ab = sched.ab(t);
    const float cs = std::sqrt(ab);
    const float cn = std::sqrt(1.0f - ab);
    return add(mul_scalar(x0, cs), mul_scalar(eps, cn));
}

// ----------------------------- reverse process -----------------------------

struct SamplerConfig {
    int num_steps = 50;
    float eta = 0.0f;
    float guidance_scale = 3.5f;

    void validate(int T) const {
        check(num_steps >= 1 && num_steps <= T, "SamplerConfig: num_steps outside [1, T]");
        check(eta >= 0.0f, "SamplerConfig: eta must be non-negative");
    }
};

// Evenly spaced over [0, T], rounded to integers, deduplicated, descending,
// ending at 0 and starting at T.
inline std::vector<int> sampler_step_list(const NoiseSchedule& sched, int num_steps) {
    check(num_steps >= 1 && num_steps <= sched.T, "sampler_step_list: bad num_steps");
    std::vector<int> steps;
    for (int i = num_steps; i >= 0; --i) {
        const int t = int(std::lround(double(sched.T) * i / num_steps));
        if (steps.empty() || t < steps.back()) steps.push_back(t);
    }
    check(steps.front() == sched.T && steps.back() == 0,
          "sampler_step_list: endpoints must be T and 0");
    return steps;
}

// One deterministic (eta = 0) or stochastic reverse update from t to t_prev,
// given the denoiser's clean-motion estimate.
inline Tensor reverse_step(const Tensor& x_t, const Tensor& x0_hat, int t, int t_prev,
                           float eta, const NoiseSchedule& sched, Rng* rng = nullptr) {
    check(t_prev < t, "reverse_step: t_prev = " + std::to_string(t_prev) +
                          " must be below t = " + std::to_string(t));
    check(t_prev >= 0, "reverse_step: t_prev must be non-negative");
    check(x_t.shape() == x0_hat.shape(), "reverse_step: shape mismatch");
    const float ab_t = sched.ab(t);
    const float ab_p = sched.ab(t_prev);
    const long n = x_t.size();
    Tensor out(x_t.shape());

    const float denom = std::sqrt(1.0f - ab_t);
    float sigma = 0.0f;
    if (eta > 0.0f) {
        check(rng != nullptr, "reverse_step: eta > 0 needs a noise source");
        sigma = eta * std::sqrt((1.0f - ab_p) / (1.0f - ab_t)) *
                std::sqrt(1.0f - ab_t / ab_p);
    }
    const float dir = std::sqrt(std::max(1.0f - ab_p - sigma * sigma, 0.0f));
    const float cs = std::sqrt(ab_p);
    for (long i = 0; i < n; ++i) {
        const float eps_hat = (x_t.ptr()[i] - std::sqrt(ab_t) * x0_hat.ptr()[i]) / denom;
        float v = cs * x0_hat.ptr()[i] + dir * eps_hat;
        if (sigma > 0.0f) v += sigma * rng->normal();
        out.ptr()[i] = v;
    }
    return out;
}

// classifier-free guidance in clean-motion space; the endpoints return the
// corresponding estimate exactly
inline Tensor guide(const Tensor& x0_cond, const Tensor& x0_null, float scale) {
    check(x0_cond.shape() == x0_null.shape(), "guide: shape mismatch");
    if (scale == 1.0f) return x0_cond.clone();
    if (scale == 0.0f) return x0_null.clone();
    Tensor out(x0_cond.shape());
    for (long i = 0; i < x0_cond.size(); ++i)
        out.ptr()[i] = x0_null.ptr()[i] + scale * (x0_cond.ptr()[i] - x0_null.ptr()[i]);
    return out;
}

// ----------------------------- sampling loop -----------------------------

// Denoises both streams in one call; the label is empty for the null token.
using DenoisePairFn = std::function<std::pair<Tensor, Tensor>(
    const Tensor& x_a, const Tensor& x_b, int t, std::optional<int> label)>;

struct SampleResult {
    Tensor a;  // normalized streams, L x dim
    Tensor b;
};

// Reverse diffusion from unit Gaussian noise in normalized state space. Each
// step evaluates the denoiser with the condition and with the null token and
// combines the two estimates with classifier-free guidance.
inline SampleResult sample_normalized(const DenoisePairFn& denoise_fn,
                                      std::optional<int> label, int length, int state_dim,
                                      uint64_t seed, const SamplerConfig& cfg,
                                      const NoiseSchedule& sched) {
    cfg.validate(sched.T);
    check(length >= 2 && length <= kMaxClipFrames, "sample: length outside [2, 300]");
    NoGrad guard;
    Rng rng(seed);
    Tensor x_a = Tensor::randn({length, state_dim}, rng);
    Tensor x_b = Tensor::randn({length, state_dim}, rng);
    const std::vector<int> steps = sampler_step_list(sched, cfg.num_steps);
    for (size_t k = 0; k + 1 < steps.size(); ++k) {
        const int t = steps[k];
        const int t_prev = steps[k + 1];
        auto [cond_a, cond_b] = denoise_fn(x_a, x_b, t, label);
        Tensor guided_a = cond_a, guided_b = cond_b;
        if (label.has_value()) {
            auto [null_a, null_b] = denoise_fn(x_a, x_b, t, std::nullopt);
            guided_a = guide(cond_a, null_a, cfg.guidance_scale);
            guided_b = guide(cond_b, null_b, cfg.guidance_scale);
        }
        x_a = reverse_step(x_a, guided_a, t, t_prev, cfg.eta, sched, &rng);
        x_b = reverse_step(x_b, guided_b, t, t_prev, cfg.eta, sched, &rng);
        if (!x_a.all_finite() || !x_b.all_finite())
            fail_runtime("sample: non-finite state at reverse step t = " + std::to_string(t));
    }
    return {x_a, x_b};
}

// Full pipeline: sample in normalized space, then denormalize into a clip.
inline InteractionClip sample_clip(const DenoisePairFn& denoise_fn, std::optional<int> label,
                                   const std::string& label_name, const std::string& text,
                                   int length, uint64_t seed, const SamplerConfig& cfg,
                                   const NoiseSchedule& sched, const NormStats& stats,
                                   int n_joints, const std::string& skeleton_ref) {
    const int dim = NonCanonicalLayout{n_joints}.dim();
    check(stats.dim() == dim, "sample_clip: normalization stats do not match the skeleton");
    const SampleResult res =
        sample_normalized(denoise_fn, label, length, dim, seed, cfg, sched);
    InteractionClip clip;
    clip.n_joints = n_joints;
    clip.fps = kDefaultFps;
    clip.length = length;
    clip.label = label_name;
    clip.text = text;
    clip.skeleton_ref = skeleton_ref;
    clip.person_a = denormalize(res.a.data(), stats);
    clip.person_b = denormalize(res.b.data(), stats);
    clip.validate();
    return clip;
}

}  // namespace duet

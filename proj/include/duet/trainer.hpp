#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/denoiser.hpp"
#include "duet/diffusion.hpp"
#include "duet/losses.hpp"
#include "duet/repr.hpp"
#include "duet/synth.hpp"
#include "duet/tensor.hpp"

// Training loop: decoupled-weight-decay Adam, linear warm-up into cosine
// decay, per-example timestep sampling with the gated regularizer, condition
// dropout, checkpointing, and a delimited metrics log.

namespace duet {

// ----------------------------- configuration -----------------------------

struct TrainConfig {
    int batch_size = 16;
    int epochs = 300;
    float max_lr = 1e-4f;
    int warmup_epochs = 10;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float weight_decay = 2e-5f;
    float grad_clip = 1.0f;
    float null_cond_prob = 0.1f;
    float p2p_finetune_prob = 0.0f;  // person-freeze fine-tuning mode
    int T = 1000;
    uint64_t seed = 0;
    int val_every = 10;  // epochs between validation passes
    LossWeights loss;
    DenoiserConfig model;

    void validate() const {
        check(batch_size >= 1, "TrainConfig: batch_size must be positive");
        check(epochs >= 1, "TrainConfig: epochs must be positive");
        check(warmup_epochs >= 0 && warmup_epochs <= epochs,
              "TrainConfig: warm-up must fit inside the run");
        check(max_lr > 0.0f, "TrainConfig: max_lr must be positive");
        check(null_cond_prob >= 0.0f && null_cond_prob <= 1.0f,
              "TrainConfig: null_cond_prob outside [0, 1]");
        check(p2p_finetune_prob >= 0.0f && p2p_finetune_prob <= 1.0f,
              "TrainConfig: p2p_finetune_prob outside [0, 1]");
        check(T >= 2, "TrainConfig: T must be at least 2");
        check(val_every >= 1, "TrainConfig: val_every must be positive");
        loss.validate();
        model.validate();
    }
};

// linear ramp to max_lr over the warm-up steps, then cosine decay to zero
inline float lr_at(long step, const TrainConfig& cfg, long steps_per_epoch) {
    check(step >= 0, "lr_at: negative step");
    check(steps_per_epoch >= 1, "lr_at: steps_per_epoch must be positive");
    const long warmup = cfg.warmup_epochs * steps_per_epoch;
    const long total = long(cfg.epochs) * steps_per_epoch;
    if (step >= total) return 0.0f;
    if (warmup > 0 && step < warmup) return cfg.max_lr * float(step) / float(warmup);
    const double progress = double(step - warmup) / double(std::max<long>(total - warmup, 1));
    return float(0.5 * double(cfg.max_lr) * (1.0 + std::cos(3.14159265358979323846 * progress)));
}

// the null token with probability p, otherwise the label itself
inline std::optional<int> condition_dropout(int label, float p, Rng& rng) {
    check(p >= 0.0f && p <= 1.0f, "condition_dropout: p outside [0, 1]");
    if (rng.uniform() < double(p)) return std::nullopt;
    return label;
}

// ----------------------------- optimizer -----------------------------

// Adam with decoupled weight decay. Parameters are shared tensor handles, so
// updates are visible to the model that owns them.
class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<Tensor> params, float beta1, float beta2, float weight_decay,
          float eps = 1e-8f)
        : params_(std::move(params)),
          beta1_(beta1),
          beta2_(beta2),
          weight_decay_(weight_decay),
          eps_(eps) {
        for (auto& p : params_) {
            // handles must already track gradients so this copy shares the
            // same gradient buffer as the owning model
            check(p.requires_grad(), "AdamW: parameter does not track gradients");
            m_.push_back(std::vector<float>(size_t(p.size()), 0.0f));
            v_.push_back(std::vector<float>(size_t(p.size()), 0.0f));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // global gradient norm over every parameter
    double grad_norm() const {
        double acc = 0.0;
        for (const auto& p : params_)
            for (float g : p.grad()) acc += double(g) * g;
        return std::sqrt(acc);
    }

    void clip_gradients(float max_norm) {
        if (max_norm <= 0.0f) return;
        const double norm = grad_norm();
        if (norm <= double(max_norm)) return;
        const float scale = float(double(max_norm) / norm);
        for (auto& p : params_)
            for (float& g : p.grad()) g *= scale;
    }

    void step(float lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(double(beta1_), double(t_));
        const double bc2 = 1.0 - std::pow(double(beta2_), double(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            const auto& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            float* w = p.ptr();
            for (size_t k = 0; k < g.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0f - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0f - beta2_) * g[k] * g[k];
                const float mhat = float(double(m[k]) / bc1);
                const float vhat = float(double(v[k]) / bc2);
                w[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[k]);
            }
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    std::vector<Tensor>& params() { return params_; }
    std::vector<std::vector<float>>& moments_m() { return m_; }
    std::vector<std::vector<float>>& moments_v() { return v_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    float beta1_ = 0.9f, beta2_ = 0.999f, weight_decay_ = 0.0f, eps_ = 1e-8f;
    long t_ = 0;
};

// ----------------------------- training examples -----------------------------

struct TrainExample {
    StatePair states;  // normalized
    int label = 0;
};

inline std::vector<TrainExample> normalize_clips(const std::vector<const InteractionClip*>& clips,
                                                 const NormStats& stats) {
    std::vector<TrainExample> out;
    out.reserve(clips.size());
    for (const auto* c : clips) {
        TrainExample e;
        const Shape shape{c->length, c->dim()};
        e.states.a = Tensor::from(shape, normalize(c->person_a, stats));
        e.states.b = Tensor::from(shape, normalize(c->person_b, stats));
        e.label = family_id(c->label);
        out.push_back(std::move(e));
    }
    return out;
}

// ----------------------------- trainer -----------------------------

struct StepStats {
    float total = 0.0f;
    float simple = 0.0f;
    float vel = 0.0f, foot = 0.0f, bl = 0.0f, dm = 0.0f, ro = 0.0f;
    float regularizer = 0.0f;  // weighted contribution actually added
    float lr = 0.0f;
    double grad_norm = 0.0;
    bool rejected = false;  // non-finite loss: weights unchanged
    std::vector<std::pair<int, float>> sampled;  // (t, regularizer value) per example
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const Skeleton& skel, const NormStats& stats,
            uint64_t init_seed = 1)
        : cfg_(cfg),
          skel_(skel),
          stats_(stats),
          denoiser_(Denoiser::init(cfg.model, init_seed)),
          sched_(cosine_schedule(cfg.T)),
          rng_(cfg.seed) {
        cfg_.validate();
        check(skel.n_joints == cfg.model.n_joints, "Trainer: skeleton/model joint mismatch");
        check(stats.dim() == cfg.model.state_dim(), "Trainer: stats/model dim mismatch");
        denoiser_.weights().set_requires_grad();
        opt_ = AdamW(denoiser_.weights().params(), cfg.adam_beta1, cfg.adam_beta2,
                     cfg.weight_decay);
    }

    Denoiser& denoiser() { return denoiser_; }
    const Denoiser& denoiser() const { return denoiser_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const NormStats& stats() const { return stats_; }
    const TrainConfig& config() const { return cfg_; }
    AdamW& optimizer() { return opt_; }
    long step() const { return step_; }
    void set_step(long s) { step_ = s; }
    Rng& rng() { return rng_; }

    // One optimizer update over a batch: per-example timestep, independent
    // per-person noise, condition dropout, gated loss, gradient accumulation.
    StepStats train_step(const std::vector<const TrainExample*>& batch, float lr) {
        check(!batch.empty(), "train_step: empty batch");
        StepStats stats;
        stats.lr = lr;
        opt_.zero_grad();
        const float inv_b = 1.0f / float(batch.size());
        for (const auto* ex : batch) {
            const int t = 1 + int(rng_.below(uint64_t(cfg_.T)));
            const std::optional<int> label =
                condition_dropout(ex->label, cfg_.null_cond_prob, rng_);
            const bool freeze_a = cfg_.p2p_finetune_prob > 0.0f &&
                                  rng_.uniform() < double(cfg_.p2p_finetune_prob);
            const Tensor eps_a = Tensor::randn(ex->states.a.shape(), rng_);
            const Tensor eps_b = Tensor::randn(ex->states.b.shape(), rng_);
            const Tensor x_a =
                freeze_a ? ex->states.a : forward_noise(ex->states.a, t, eps_a, sched_);
            const Tensor x_b = forward_noise(ex->states.b, t, eps_b, sched_);
            auto [pred_a, pred_b] = denoiser_.denoise(x_a, x_b, t, label);
            if (freeze_a) pred_a = ex->states.a;  // frozen stream carries no loss
            const LossTerms terms =
                loss_total({pred_a, pred_b}, ex->states, t, cfg_.loss, cfg_.T, stats_, skel_);
            const float total = terms.total.item();
            if (!std::isfinite(total)) {
                stats.rejected = true;
                opt_.zero_grad();
                return stats;
            }
            backward(mul_scalar(terms.total, inv_b));
            stats.total += total * inv_b;
            stats.simple += terms.simple.item() * inv_b;
            stats.vel += terms.vel.item() * inv_b;
            stats.foot += terms.foot.item() * inv_b;
            stats.bl += terms.bl.item() * inv_b;
            stats.dm += terms.dm.item() * inv_b;
            stats.ro += terms.ro.item() * inv_b;
            const float reg = terms.regularizer_value(cfg_.loss);
            stats.regularizer += reg * inv_b;
            stats.sampled.push_back({t, reg});
        }
        opt_.clip_gradients(cfg_.grad_clip);
        stats.grad_norm = opt_.grad_norm();
        if (lr > 0.0f) opt_.step(lr);
        ++step_;
        return stats;
    }

    // Deterministic validation pass: a fixed noise/timestep stream makes the
    // values comparable across epochs.
    float validation_loss(const std::vector<TrainExample>& examples) {
        check(!examples.empty(), "validation_loss: empty split");
        Rng vrng(cfg_.seed ^ 0x5A17ull);
        double acc = 0.0;
        NoGrad guard;
        for (const auto& ex : examples) {
            const int t = 1 + int(vrng.below(uint64_t(cfg_.T)));
            const Tensor eps_a = Tensor::randn(ex.states.a.shape(), vrng);
            const Tensor eps_b = Tensor::randn(ex.states.b.shape(), vrng);
            const Tensor x_a = forward_noise(ex.states.a, t, eps_a, sched_);
            const Tensor x_b = forward_noise(ex.states.b, t, eps_b, sched_);
            const auto [pa, pb] = denoiser_.denoise(x_a, x_b, t, ex.label);
            acc += double(loss_simple({pa, pb}, ex.states).item());
        }
        return float(acc / double(examples.size()));
    }

private:
    TrainConfig cfg_;
    Skeleton skel_;
    NormStats stats_;
    Denoiser denoiser_;
    NoiseSchedule sched_;
    AdamW opt_;
    Rng rng_{0};
    long step_ = 0;
};

// ----------------------------- fit -----------------------------

struct FitResult {
    Checkpoint best;         // lowest validation loss
    Checkpoint final;        // last epoch
    float best_val = 0.0f;
    float final_val = 0.0f;
    float baseline_val = 0.0f;  // untrained model on the validation split
    std::string log;            // delimited metrics (step, lr, losses, wall time)
};

// Full training run over a corpus. The normalization statistics come from the
// training split only; the best-validation checkpoint is retained.
inline FitResult fit(const Corpus& corpus, const TrainConfig& cfg,
                     const std::string& log_path = "", uint64_t init_seed = 1,
                     const Checkpoint* resume = nullptr) {
    cfg.validate();
    std::vector<const InteractionClip*> train_clips, val_clips;
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        if (corpus.split[i] == 0) train_clips.push_back(&corpus.clips[i]);
        if (corpus.split[i] == 1) val_clips.push_back(&corpus.clips[i]);
    }
    check(!train_clips.empty(), "fit: empty training split");
    check(!val_clips.empty(), "fit: empty validation split");

    std::vector<const std::vector<float>*> train_streams;
    for (const auto* c : train_clips) {
        train_streams.push_back(&c->person_a);
        train_streams.push_back(&c->person_b);
    }
    const NormStats stats = compute_norm_stats(train_streams, cfg.model.state_dim());

    Trainer trainer(cfg, corpus.skeleton, stats, init_seed);
    int start_epoch = 0;
    if (resume != nullptr) {
        trainer.denoiser() = Denoiser(weights_from_checkpoint(*resume));
        trainer.denoiser().weights().set_requires_grad();
        trainer.optimizer() = AdamW(trainer.denoiser().weights().params(), cfg.adam_beta1,
                                    cfg.adam_beta2, cfg.weight_decay);
        trainer.set_step(resume->step);
        trainer.optimizer().set_step_count(resume->step);
        start_epoch = resume->epoch;
    }

    const std::vector<TrainExample> train = normalize_clips(train_clips, stats);
    const std::vector<TrainExample> val = normalize_clips(val_clips, stats);
    const long steps_per_epoch =
        (long(train.size()) + cfg.batch_size - 1) / cfg.batch_size;

    FitResult out;
    out.baseline_val = trainer.validation_loss(val);
    out.best_val = out.baseline_val;
    out.best = make_checkpoint(trainer.denoiser().weights(), stats, trainer.step(), start_epoch);

    std::ostringstream log;
    log << "step\tlr\ttotal\tsimple\tvel\tfoot\tbl\tdm\tro\twall_s\n";
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    std::vector<int> order(train.size());
    for (size_t i = 0; i < train.size(); ++i) order[i] = int(i);

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        trainer.rng().shuffle(order);
        for (size_t ofs = 0; ofs < order.size(); ofs += size_t(cfg.batch_size)) {
            std::vector<const TrainExample*> batch;
            for (size_t k = ofs; k < std::min(order.size(), ofs + size_t(cfg.batch_size)); ++k)
                batch.push_back(&train[size_t(order[k])]);
            const float lr = lr_at(trainer.step(), cfg, steps_per_epoch);
            const StepStats st = trainer.train_step(batch, lr);
            if (st.rejected) {
                log << trainer.step() << "\t" << lr << "\trejected\t-\t-\t-\t-\t-\t-\t"
                    << wall() << "\n";
                continue;
            }
            log << trainer.step() << "\t" << st.lr << "\t" << st.total << "\t" << st.simple
                << "\t" << st.vel << "\t" << st.foot << "\t" << st.bl << "\t" << st.dm << "\t"
                << st.ro << "\t" << wall() << "\n";
        }
        const bool last = epoch + 1 == cfg.epochs;
        if ((epoch + 1) % cfg.val_every == 0 || last) {
            const float vl = trainer.validation_loss(val);
            log << "# epoch " << epoch + 1 << " val_simple " << vl << "\n";
            if (vl < out.best_val) {
                out.best_val = vl;
                out.best =
                    make_checkpoint(trainer.denoiser().weights(), stats, trainer.step(), epoch + 1);
            }
            if (last) out.final_val = vl;
        }
    }
    out.final = make_checkpoint(trainer.denoiser().weights(), stats, trainer.step(), cfg.epochs);
    out.log = log.str();
    if (!log_path.empty()) {
        std::ofstream f(log_path, std::ios::app);
        if (!f) fail_runtime("fit: cannot open log " + log_path);
        f << out.log;
    }
    return out;
}

}  // namespace duet

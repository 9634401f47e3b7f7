#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/denoiser.hpp"
#include "duet/linalg.hpp"
#include "duet/repr.hpp"
#include "duet/synth.hpp"
#include "duet/tensor.hpp"
#include "duet/trainer.hpp"

// Generation-quality metrics over embedding space: a jointly trained
// motion/condition embedder pair (contrastive objective), Frechet distance,
// retrieval precision, matched-pair distance, diversity, and per-condition
// multimodality.

namespace duet {

// ----------------------------- embedder pair -----------------------------

struct EmbedderConfig {
    int n_joints = 22;
    int d_model = 64;
    int n_heads = 4;
    int ff_mult = 4;
    int d_embed = 32;
    int n_labels = kNumFamilies;

    int input_dim() const { return 2 * NonCanonicalLayout{n_joints}.dim(); }

    void validate() const {
        check(d_model % n_heads == 0, "EmbedderConfig: heads must divide d_model");
        check(d_embed > 0 && n_labels >= 2, "EmbedderConfig: bad sizes");
    }
};

// Motion encoder: both persons' normalized states concatenated feature-wise,
// one self-attention block, temporal mean pool, linear head. Condition
// encoder: codebook row plus a projection.
struct EmbedderPair {
    EmbedderConfig config;
    NormStats stats;  // normalization the encoder was trained with
    Tensor in_w, in_b;
    Tensor attn_wq, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor head_w, head_b;
    Tensor text_codebook;  // n_labels x d_embed
    Tensor text_w, text_b;
    Tensor logit_scale;  // trainable contrastive temperature (log scale)

    template <class Fn>
    void for_each_param(Fn&& fn) {
        fn("in.w", in_w);
        fn("in.b", in_b);
        fn("attn.wq", attn_wq);
        fn("attn.bq", attn_bq);
        fn("attn.wk", attn_wk);
        fn("attn.bk", attn_bk);
        fn("attn.wv", attn_wv);
        fn("attn.bv", attn_bv);
        fn("attn.wo", attn_wo);
        fn("attn.bo", attn_bo);
        fn("ff.w1", ff_w1);
        fn("ff.b1", ff_b1);
        fn("ff.w2", ff_w2);
        fn("ff.b2", ff_b2);
        fn("head.w", head_w);
        fn("head.b", head_b);
        fn("text.codebook", text_codebook);
        fn("text.w", text_w);
        fn("text.b", text_b);
        fn("logit_scale", logit_scale);
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> out;
        for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    void set_requires_grad() {
        for_each_param([](const std::string&, Tensor& t) { t.set_requires_grad(); });
    }

    static EmbedderPair init(const EmbedderConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        const int d = cfg.d_model;
        const float ws = 0.02f;
        auto w = [&](int r, int c) { return Tensor::randn({r, c}, rng, ws); };
        EmbedderPair e;
        e.config = cfg;
        e.in_w = w(cfg.input_dim(), d);
        e.in_b = Tensor::zeros({d});
        e.attn_wq = w(d, d);
        e.attn_bq = Tensor::zeros({d});
        e.attn_wk = w(d, d);
        e.attn_bk = Tensor::zeros({d});
        e.attn_wv = w(d, d);
        e.attn_bv = Tensor::zeros({d});
        e.attn_wo = w(d, d);
        e.attn_bo = Tensor::zeros({d});
        e.ff_w1 = w(d, cfg.ff_mult * d);
        e.ff_b1 = Tensor::zeros({cfg.ff_mult * d});
        e.ff_w2 = w(cfg.ff_mult * d, d);
        e.ff_b2 = Tensor::zeros({d});
        e.head_w = w(d, cfg.d_embed);
        e.head_b = Tensor::zeros({cfg.d_embed});
        e.text_codebook = w(cfg.n_labels, cfg.d_embed);
        e.text_w = w(cfg.d_embed, cfg.d_embed);
        e.text_b = Tensor::zeros({cfg.d_embed});
        e.logit_scale = Tensor::scalar(std::log(1.0f / 0.07f));
        return e;
    }

    // normalized state pair -> (1, d_embed)
    Tensor embed_motion_normalized(const StatePair& states) const {
        const Tensor x = concat_last({states.a, states.b});
        check(x.last_dim() == config.input_dim(), "embed_motion: state width mismatch");
        const int L = x.shape()[0];
        Tensor h = add(add_row(matmul(x, in_w), in_b),
                       detail::positional_encoding(L, config.d_model));
        const Tensor hn = layernorm_last(h);
        const Tensor sa = attention(add_row(matmul(hn, attn_wq), attn_bq),
                                    add_row(matmul(hn, attn_wk), attn_bk),
                                    add_row(matmul(hn, attn_wv), attn_bv), config.n_heads);
        h = add(h, add_row(matmul(sa, attn_wo), attn_bo));
        const Tensor fn = layernorm_last(h);
        h = add(h, add_row(matmul(gelu(add_row(matmul(fn, ff_w1), ff_b1)), ff_w2), ff_b2));
        // temporal mean pool
        const Tensor pooled = mul_scalar(reshape(sum_last(transpose(h)), {1, config.d_model}),
                                         1.0f / float(L));
        return add_row(matmul(pooled, head_w), head_b);
    }

    Tensor embed_clip(const InteractionClip& clip) const {
        const Shape shape{clip.length, clip.dim()};
        const StatePair norm{Tensor::from(shape, normalize(clip.person_a, stats)),
                             Tensor::from(shape, normalize(clip.person_b, stats))};
        return embed_motion_normalized(norm);
    }

    Tensor embed_label(int label) const {
        check(label >= 0 && label < config.n_labels, "embed_label: label out of range");
        return add_row(matmul(slice_rows(text_codebook, label, 1), text_w), text_b);
    }
};

// ----------------------------- contrastive training -----------------------------

namespace detail {

// per-row L2 normalization of a (B, d) matrix, differentiable
inline Tensor normalize_rows(const Tensor& x) {
    const Tensor norms = sqrt_t(add_scalar(sum_last(square(x)), 1e-8f));  // (B)
    const Tensor inv = div(Tensor::full(norms.shape(), 1.0f), norms);
    return transpose(mul_row(transpose(x), inv));
}

}  // namespace detail

// Symmetric in-batch contrastive objective over matched (motion, label) pairs.
inline Tensor contrastive_loss(const Tensor& motion_emb, const Tensor& text_emb,
                               const Tensor& logit_scale) {
    check(motion_emb.shape() == text_emb.shape(), "contrastive_loss: shape mismatch");
    const Tensor mn = detail::normalize_rows(motion_emb);
    const Tensor tn = detail::normalize_rows(text_emb);
    const Tensor logits = scale_by(matmul_nt(mn, tn), exp_t(logit_scale));
    const Tensor ce_rows = sub(mean_all(logsumexp_last(logits)), diag_mean(logits));
    const Tensor logits_t = transpose(logits);
    const Tensor ce_cols = sub(mean_all(logsumexp_last(logits_t)), diag_mean(logits_t));
    return mul_scalar(add(ce_rows, ce_cols), 0.5f);
}

struct EmbedderTrainConfig {
    int epochs = 40;
    int batch_size = 32;
    float lr = 1e-3f;
    uint64_t seed = 17;
};

// Trains the embedder pair on the labeled training split. Rejects splits with
// fewer than two distinct conditions (the contrastive task is undefined).
inline EmbedderPair train_embedders(const std::vector<const InteractionClip*>& train_clips,
                                    const NormStats& stats, const EmbedderConfig& cfg,
                                    const EmbedderTrainConfig& tc = {}) {
    check(!train_clips.empty(), "train_embedders: empty split");
    std::vector<int> labels;
    for (const auto* c : train_clips) labels.push_back(family_id(c->label));
    bool multi = false;
    for (int l : labels) multi = multi || l != labels[0];
    check(multi, "train_embedders: need at least two distinct conditions");

    EmbedderPair emb = EmbedderPair::init(cfg, tc.seed);
    emb.stats = stats;
    // the member handles must track gradients before the optimizer copies them
    emb.set_requires_grad();
    std::vector<TrainExample> examples = normalize_clips(train_clips, stats);
    AdamW opt(emb.params(), 0.9f, 0.999f, 1e-4f);
    Rng rng(tc.seed);
    std::vector<int> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t ofs = 0; ofs < order.size(); ofs += size_t(tc.batch_size)) {
            const size_t end = std::min(order.size(), ofs + size_t(tc.batch_size));
            if (end - ofs < 2) continue;
            std::vector<Tensor> motion_rows, text_rows;
            for (size_t k = ofs; k < end; ++k) {
                const TrainExample& ex = examples[size_t(order[k])];
                motion_rows.push_back(emb.embed_motion_normalized(ex.states));
                text_rows.push_back(emb.embed_label(ex.label));
            }
            const Tensor loss = contrastive_loss(concat_rows(motion_rows),
                                                 concat_rows(text_rows), emb.logit_scale);
            opt.zero_grad();
            backward(loss);
            opt.clip_gradients(1.0f);
            opt.step(tc.lr);
        }
    }
    return emb;
}

// fraction of clips whose nearest label embedding is their own label
inline double label_retrieval_accuracy(const EmbedderPair& emb,
                                       const std::vector<const InteractionClip*>& clips) {
    NoGrad guard;
    int hits = 0;
    for (const auto* c : clips) {
        const Tensor m = emb.embed_clip(*c);
        int best = -1;
        double best_d = 0.0;
        for (int l = 0; l < emb.config.n_labels; ++l) {
            const Tensor t = emb.embed_label(l);
            double d = 0.0;
            for (long i = 0; i < m.size(); ++i) {
                const double diff = double(m.ptr()[i]) - t.ptr()[i];
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best = l;
                best_d = d;
            }
        }
        if (best == family_id(c->label)) ++hits;
    }
    return double(hits) / double(clips.size());
}

// ----------------------------- embedding sets -----------------------------

// rows of float64 vectors for the metric computations
using EmbeddingSet = std::vector<std::vector<double>>;

inline EmbeddingSet embed_clips(const EmbedderPair& emb,
                                const std::vector<const InteractionClip*>& clips) {
    NoGrad guard;
    EmbeddingSet out;
    for (const auto* c : clips) {
        const Tensor e = emb.embed_clip(*c);
        std::vector<double> row(size_t(e.size()));
        for (long i = 0; i < e.size(); ++i) row[size_t(i)] = double(e.ptr()[i]);
        out.push_back(std::move(row));
    }
    return out;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

// ----------------------------- FID -----------------------------

// Frechet distance between Gaussian fits:
// |mu_x - mu_y|^2 + tr(Sx + Sy - 2 (Sx Sy)^{1/2}).
// The matrix square root comes from eigendecompositions of symmetrized
// products; negative eigenvalues are clamped to zero.
inline double fid(const EmbeddingSet& x, const EmbeddingSet& y) {
    check(!x.empty() && !y.empty(), "fid: empty embedding set");
    const int d = int(x[0].size());
    check(int(x.size()) > d && int(y.size()) > d,
          "fid: need more samples than dimensions, got " + std::to_string(x.size()) + "/" +
              std::to_string(y.size()) + " for d = " + std::to_string(d));

    auto fit = [&](const EmbeddingSet& s, std::vector<double>& mean,
                   std::vector<double>& cov) {
        const double n = double(s.size());
        mean.assign(size_t(d), 0.0);
        for (const auto& row : s)
            for (int i = 0; i < d; ++i) mean[size_t(i)] += row[size_t(i)] / n;
        cov.assign(size_t(d) * d, 0.0);
        for (const auto& row : s)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[size_t(i) * d + j] +=
                        (row[size_t(i)] - mean[size_t(i)]) * (row[size_t(j)] - mean[size_t(j)]) /
                        (n - 1.0);
    };
    std::vector<double> mx, my, sx, sy;
    fit(x, mx, sx);
    fit(y, my, sy);

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) mean_term += (mx[size_t(i)] - my[size_t(i)]) * (mx[size_t(i)] - my[size_t(i)]);
    double tr_x = 0.0, tr_y = 0.0;
    for (int i = 0; i < d; ++i) {
        tr_x += sx[size_t(i) * d + i];
        tr_y += sy[size_t(i) * d + i];
    }

    // A = Sx^{1/2} via eigendecomposition, eigenvalues clamped at zero
    std::vector<double> evals, evecs;
    jacobi_eigh(d, sx, evals, evecs);
    std::vector<double> a(size_t(d) * d, 0.0);
    for (int k = 0; k < d; ++k) {
        const double lam = std::sqrt(std::max(evals[size_t(k)], 0.0));
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                a[size_t(i) * d + j] += lam * evecs[size_t(i) * d + k] * evecs[size_t(j) * d + k];
    }
    // B = A Sy A shares the spectrum of Sx Sy and is symmetric
    std::vector<double> tmp(size_t(d) * d, 0.0), b(size_t(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double av = a[size_t(i) * d + k];
            if (av == 0.0) continue;
            for (int j = 0; j < d; ++j) tmp[size_t(i) * d + j] += av * sy[size_t(k) * d + j];
        }
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double tv = tmp[size_t(i) * d + k];
            if (tv == 0.0) continue;
            for (int j = 0; j < d; ++j) b[size_t(i) * d + j] += tv * a[size_t(k) * d + j];
        }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double s = 0.5 * (b[size_t(i) * d + j] + b[size_t(j) * d + i]);
            b[size_t(i) * d + j] = b[size_t(j) * d + i] = s;
        }
    jacobi_eigh(d, b, evals, evecs);
    double tr_sqrt = 0.0;
    for (int k = 0; k < d; ++k) tr_sqrt += std::sqrt(std::max(evals[size_t(k)], 0.0));

    return mean_term + tr_x + tr_y - 2.0 * tr_sqrt;
}

// ----------------------------- retrieval metrics -----------------------------

struct RPrecision {
    double top1 = 0.0, top2 = 0.0, top3 = 0.0;
};

// Ranks each motion's true condition among pool_size-1 random distractor
// texts by Euclidean distance.
inline RPrecision r_precision(const EmbeddingSet& motions, const EmbeddingSet& texts,
                              int pool_size, uint64_t seed) {
    check(motions.size() == texts.size(), "r_precision: need matched pairs");
    check(pool_size >= 2, "r_precision: pool must hold at least 2 entries");
    check(int(motions.size()) >= pool_size,
          "r_precision: pool of " + std::to_string(pool_size) + " exceeds the " +
              std::to_string(motions.size()) + " available pairs");
    Rng rng(seed);
    RPrecision out;
    const size_t n = motions.size();
    for (size_t i = 0; i < n; ++i) {
        const double d_true = euclidean(motions[i], texts[i]);
        int less = 0;
        for (int k = 0; k < pool_size - 1; ++k) {
            size_t j = i;
            while (j == i) j = size_t(rng.below(n));
            if (euclidean(motions[i], texts[j]) < d_true) ++less;
        }
        if (less < 1) out.top1 += 1.0;
        if (less < 2) out.top2 += 1.0;
        if (less < 3) out.top3 += 1.0;
    }
    out.top1 /= double(n);
    out.top2 /= double(n);
    out.top3 /= double(n);
    return out;
}

// mean Euclidean distance between matched motion/text embeddings
inline double mm_dist(const EmbeddingSet& motions, const EmbeddingSet& texts) {
    check(motions.size() == texts.size() && !motions.empty(), "mm_dist: need matched pairs");
    double acc = 0.0;
    for (size_t i = 0; i < motions.size(); ++i) acc += euclidean(motions[i], texts[i]);
    return acc / double(motions.size());
}

// mean distance over seeded random distinct pairs
inline double diversity(const EmbeddingSet& embs, int n_pairs, uint64_t seed) {
    check(embs.size() >= 2, "diversity: need at least two embeddings");
    Rng rng(seed);
    double acc = 0.0;
    for (int k = 0; k < n_pairs; ++k) {
        const size_t i = size_t(rng.below(embs.size()));
        size_t j = i;
        while (j == i) j = size_t(rng.below(embs.size()));
        acc += euclidean(embs[size_t(i)], embs[size_t(j)]);
    }
    return acc / double(n_pairs);
}

// Per condition: per_condition samples paired off disjointly (0-1, 2-3, ...),
// mean pair distance, then the mean over conditions.
inline double mmodality(const std::function<InteractionClip(int, uint64_t)>& sampler,
                        const EmbedderPair& emb, const std::vector<int>& conditions,
                        int per_condition, uint64_t seed) {
    check(per_condition >= 2 && per_condition % 2 == 0,
          "mmodality: per_condition must be even and at least 2");
    double total = 0.0;
    for (size_t c = 0; c < conditions.size(); ++c) {
        std::vector<std::vector<double>> embs;
        for (int s = 0; s < per_condition; ++s) {
            const InteractionClip clip =
                sampler(conditions[c], seed + 1000003ull * c + uint64_t(s));
            const Tensor e = emb.embed_clip(clip);
            std::vector<double> row(size_t(e.size()));
            for (long i = 0; i < e.size(); ++i) row[size_t(i)] = double(e.ptr()[i]);
            embs.push_back(std::move(row));
        }
        double acc = 0.0;
        for (int p = 0; p + 1 < per_condition; p += 2)
            acc += euclidean(embs[size_t(p)], embs[size_t(p + 1)]);
        total += acc / double(per_condition / 2);
    }
    return total / double(conditions.size());
}

// ----------------------------- evaluation report -----------------------------

struct MetricStat {
    double mean = 0.0;
    double ci95 = 0.0;  // half-width over the evaluation repetitions
};

struct MetricsReport {
    MetricStat fid, top1, top2, top3, mm, div;
    double mmodality = 0.0;
    int repetitions = 0;
    int pool_size = 0;
    uint64_t seed = 0;
};

inline MetricStat summarize(const std::vector<double>& values) {
    MetricStat s;
    const double n = double(values.size());
    for (double v : values) s.mean += v / n;
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean) / std::max(n - 1.0, 1.0);
    s.ci95 = 1.96 * std::sqrt(var / n);
    return s;
}

// Repeated evaluation over fixed real/generated sets: the pools and pairings
// are re-drawn per repetition, matching the usual reporting protocol.
inline MetricsReport evaluate_generation(const EmbedderPair& emb,
                                         const std::vector<const InteractionClip*>& real,
                                         const std::vector<const InteractionClip*>& generated,
                                         double mmodality_value, int repetitions,
                                         int pool_size, uint64_t seed) {
    check(repetitions >= 1, "evaluate_generation: need at least one repetition");
    const EmbeddingSet real_m = embed_clips(emb, real);
    const EmbeddingSet gen_m = embed_clips(emb, generated);
    EmbeddingSet gen_t;
    {
        NoGrad guard;
        for (const auto* c : generated) {
            const Tensor t = emb.embed_label(family_id(c->label));
            std::vector<double> row(size_t(t.size()));
            for (long i = 0; i < t.size(); ++i) row[size_t(i)] = double(t.ptr()[i]);
            gen_t.push_back(std::move(row));
        }
    }
    std::vector<double> fids, t1, t2, t3, mms, divs;
    for (int rep = 0; rep < repetitions; ++rep) {
        const uint64_t s = seed + uint64_t(rep) * 7919ull;
        fids.push_back(fid(real_m, gen_m));
        const RPrecision rp = r_precision(gen_m, gen_t, pool_size, s);
        t1.push_back(rp.top1);
        t2.push_back(rp.top2);
        t3.push_back(rp.top3);
        mms.push_back(mm_dist(gen_m, gen_t));
        divs.push_back(diversity(gen_m, 300, s ^ 0xD1Cull));
    }
    MetricsReport rep;
    rep.fid = summarize(fids);
    rep.top1 = summarize(t1);
    rep.top2 = summarize(t2);
    rep.top3 = summarize(t3);
    rep.mm = summarize(mms);
    rep.div = summarize(divs);
    rep.mmodality = mmodality_value;
    rep.repetitions = repetitions;
    rep.pool_size = pool_size;
    rep.seed = seed;
    return rep;
}

inline std::string report_to_text(const MetricsReport& r) {
    std::ostringstream os;
    os << "# generation metrics\n";
    os << "repetitions " << r.repetitions << "\n";
    os << "pool_size " << r.pool_size << "\n";
    os << "seed " << r.seed << "\n";
    auto line = [&](const char* name, const MetricStat& s) {
        os << name << " " << s.mean << " ci95 " << s.ci95 << "\n";
    };
    line("fid", r.fid);
    line("r_precision_top1", r.top1);
    line("r_precision_top2", r.top2);
    line("r_precision_top3", r.top3);
    line("mm_dist", r.mm);
    line("diversity", r.div);
    os << "mmodality " << r.mmodality << "\n";
    return os.str();
}

}  // namespace duet

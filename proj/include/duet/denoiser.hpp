#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duet/common.hpp"
#include "duet/diffusion.hpp"
#include "duet/repr.hpp"
#include "duet/tensor.hpp"

// Cooperative transformer denoiser: two streams, one parameter set. Each
// block runs adaptive-norm self-attention, mutual attention whose keys and
// values come from the counterpart stream's block input, and a feed-forward,
// all with residual connections. Because both streams evaluate the identical
// weights, swapping the inputs swaps the outputs bit-exactly.

namespace duet {

// ----------------------------- configuration -----------------------------

struct DenoiserConfig {
    int n_joints = 22;
    int d_model = 64;
    int n_blocks = 2;
    int n_heads = 4;
    int ff_mult = 4;
    int n_labels = 4;
    int T = 1000;

    int state_dim() const { return NonCanonicalLayout{n_joints}.dim(); }

    void validate() const {
        check(n_joints >= 2, "DenoiserConfig: bad n_joints");
        check(d_model > 0 && n_blocks > 0 && n_heads > 0 && ff_mult > 0,
              "DenoiserConfig: non-positive size");
        check(d_model % n_heads == 0, "DenoiserConfig: d_model " + std::to_string(d_model) +
                                          " not divisible by " + std::to_string(n_heads) +
                                          " heads");
        check(n_labels >= 1, "DenoiserConfig: need at least one label");
        check(T >= 2, "DenoiserConfig: bad T");
    }
};

// ----------------------------- weights -----------------------------

struct BlockWeights {
    Tensor mod1_w, mod1_b;  // adaptive-norm modulation before self-attention
    Tensor mod2_w, mod2_b;  // before mutual attention
    Tensor mod3_w, mod3_b;  // before the feed-forward
    Tensor self_wq, self_bq, self_wk, self_bk, self_wv, self_bv, self_wo, self_bo;
    Tensor mut_wq, mut_bq, mut_wk, mut_bk, mut_wv, mut_bv, mut_wo, mut_bo;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DenoiserWeights {
    DenoiserConfig config;
    Tensor embed_w, embed_b;  // state -> latent
    Tensor out_w, out_b;      // latent -> state
    Tensor time_w1, time_b1, time_w2, time_b2;  // timestep embedding MLP
    Tensor cond_codebook;     // n_labels x d; the null condition is the zero vector
    Tensor cond_proj;         // d x d, no bias so the null token stays exactly zero
    std::vector<BlockWeights> blocks;

    template <class Fn>
    void for_each_param(Fn&& fn) {
        fn("embed.w", embed_w);
        fn("embed.b", embed_b);
        fn("out.w", out_w);
        fn("out.b", out_b);
        fn("time.w1", time_w1);
        fn("time.b1", time_b1);
        fn("time.w2", time_w2);
        fn("time.b2", time_b2);
        fn("cond.codebook", cond_codebook);
        fn("cond.proj", cond_proj);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + ".";
            BlockWeights& b = blocks[i];
            fn(p + "mod1.w", b.mod1_w);
            fn(p + "mod1.b", b.mod1_b);
            fn(p + "mod2.w", b.mod2_w);
            fn(p + "mod2.b", b.mod2_b);
            fn(p + "mod3.w", b.mod3_w);
            fn(p + "mod3.b", b.mod3_b);
            fn(p + "self.wq", b.self_wq);
            fn(p + "self.bq", b.self_bq);
            fn(p + "self.wk", b.self_wk);
            fn(p + "self.bk", b.self_bk);
            fn(p + "self.wv", b.self_wv);
            fn(p + "self.bv", b.self_bv);
            fn(p + "self.wo", b.self_wo);
            fn(p + "self.bo", b.self_bo);
            fn(p + "mutual.wq", b.mut_wq);
            fn(p + "mutual.bq", b.mut_bq);
            fn(p + "mutual.wk", b.mut_wk);
            fn(p + "mutual.bk", b.mut_bk);
            fn(p + "mutual.wv", b.mut_wv);
            fn(p + "mutual.bv", b.mut_bv);
            fn(p + "mutual.wo", b.mut_wo);
            fn(p + "mutual.bo", b.mut_bo);
            fn(p + "ff.w1", b.ff_w1);
            fn(p + "ff.b1", b.ff_b1);
            fn(p + "ff.w2", b.ff_w2);
            fn(p + "ff.b2", b.ff_b2);
        }
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> out;
        for_each_param([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
        return out;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> out;
        for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    void set_requires_grad() {
        for_each_param([](const std::string&, Tensor& t) { t.set_requires_grad(); });
    }

    long param_count() {
        long n = 0;
        for_each_param([&](const std::string&, Tensor& t) { n += t.size(); });
        return n;
    }

    static DenoiserWeights init(const DenoiserConfig& cfg, uint64_t seed);
};

inline DenoiserWeights DenoiserWeights::init(const DenoiserConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.d_model;
    const int ds = cfg.state_dim();
    const float ws = 0.02f;
    auto w = [&](int r, int c) { return Tensor::randn({r, c}, rng, ws); };
    auto zeros_vec = [&](int n) { return Tensor::zeros({n}); };

    DenoiserWeights out;
    out.config = cfg;
    out.embed_w = w(ds, d);
    out.embed_b = zeros_vec(d);
    out.out_w = w(d, ds);
    out.out_b = zeros_vec(ds);
    out.time_w1 = w(d, d);
    out.time_b1 = zeros_vec(d);
    out.time_w2 = w(d, d);
    out.time_b2 = zeros_vec(d);
    out.cond_codebook = w(cfg.n_labels, d);
    out.cond_proj = w(d, d);
    out.blocks.resize(size_t(cfg.n_blocks));
    // Modulation projections start near zero so each block begins as an
    // identity-like residual map; a tiny spread keeps gradients flowing into
    // the timestep/condition pathway from the first step.
    const float ms = 1e-3f;
    for (auto& b : out.blocks) {
        b.mod1_w = Tensor::randn({d, 2 * d}, rng, ms);
        b.mod1_b = zeros_vec(2 * d);
        b.mod2_w = Tensor::randn({d, 2 * d}, rng, ms);
        b.mod2_b = zeros_vec(2 * d);
        b.mod3_w = Tensor::randn({d, 2 * d}, rng, ms);
        b.mod3_b = zeros_vec(2 * d);
        b.self_wq = w(d, d);
        b.self_bq = zeros_vec(d);
        b.self_wk = w(d, d);
        b.self_bk = zeros_vec(d);
        b.self_wv = w(d, d);
        b.self_bv = zeros_vec(d);
        b.self_wo = w(d, d);
        b.self_bo = zeros_vec(d);
        b.mut_wq = w(d, d);
        b.mut_bq = zeros_vec(d);
        b.mut_wk = w(d, d);
        b.mut_bk = zeros_vec(d);
        b.mut_wv = w(d, d);
        b.mut_bv = zeros_vec(d);
        b.mut_wo = w(d, d);
        b.mut_bo = zeros_vec(d);
        b.ff_w1 = w(d, cfg.ff_mult * d);
        b.ff_b1 = zeros_vec(cfg.ff_mult * d);
        b.ff_w2 = w(cfg.ff_mult * d, d);
        b.ff_b2 = zeros_vec(d);
    }
    return out;
}

// ----------------------------- building blocks -----------------------------

// Scaled dot-product attention: per-head softmax(Q K^T / sqrt(dh)) V, heads
// concatenated. Q: Lq x C, K/V: Lk x C; C must split evenly across heads.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads) {
    check(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2,
          "attention: expected matrices");
    const int c = q.shape()[1];
    check(k.shape()[1] == c && v.shape()[1] == c,
          "attention: channel counts differ, Q " + shape_str(q.shape()) + " K " +
              shape_str(k.shape()) + " V " + shape_str(v.shape()));
    check(k.shape()[0] == v.shape()[0], "attention: K/V row counts differ");
    check(n_heads >= 1 && c % n_heads == 0,
          "attention: " + std::to_string(c) + " channels not divisible by " +
              std::to_string(n_heads) + " heads");
    const int dh = c / n_heads;
    const float scale = 1.0f / std::sqrt(float(dh));
    std::vector<Tensor> heads;
    heads.reserve(size_t(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        const Tensor qh = slice_last(q, h * dh, dh);
        const Tensor kh = slice_last(k, h * dh, dh);
        const Tensor vh = slice_last(v, h * dh, dh);
        const Tensor scores = mul_scalar(matmul_nt(qh, kh), scale);
        heads.push_back(matmul(softmax_last(scores), vh));
    }
    return n_heads == 1 ? heads[0] : concat_last(heads);
}

namespace detail {

// sinusoidal features of a scalar position, shape (1, dim)
inline Tensor sinusoid_features(float position, int dim) {
    Tensor out({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        out.ptr()[i] = float(std::sin(double(position) * freq));
        out.ptr()[half + i] = float(std::cos(double(position) * freq));
    }
    if (dim % 2 == 1) out.ptr()[dim - 1] = 0.0f;
    return out;
}

inline Tensor positional_encoding(int length, int dim) {
    Tensor out({length, dim});
    const int half = dim / 2;
    for (int p = 0; p < length; ++p)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
            out.ptr()[size_t(p) * dim + size_t(i)] = float(std::sin(p * freq));
            out.ptr()[size_t(p) * dim + size_t(half + i)] = float(std::cos(p * freq));
        }
    return out;
}

// layer norm followed by the regressed (1 + scale, shift) modulation
inline Tensor ada_norm(const Tensor& h, const Tensor& cond, const Tensor& mod_w,
                       const Tensor& mod_b) {
    const int d = h.last_dim();
    const Tensor mod = add_row(matmul(cond, mod_w), mod_b);  // (1, 2d)
    const Tensor scale = reshape(slice_last(mod, 0, d), {d});
    const Tensor shift = reshape(slice_last(mod, d, d), {d});
    return add_row(mul_row(layernorm_last(h), add_scalar(scale, 1.0f)), shift);
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_row(matmul(x, w), b);
}

}  // namespace detail

// One stream through one block; the counterpart's block input supplies the
// mutual-attention keys and values.
inline Tensor interaction_block_stream(const Tensor& h_self, const Tensor& h_counter,
                                       const Tensor& cond, const BlockWeights& w,
                                       int n_heads) {
    check(h_self.shape() == h_counter.shape(),
          "interaction_block: stream shapes differ, " + shape_str(h_self.shape()) + " vs " +
              shape_str(h_counter.shape()));
    // self-attention over the adaptively normalized hidden states
    const Tensor hn = detail::ada_norm(h_self, cond, w.mod1_w, w.mod1_b);
    const Tensor sa = attention(detail::linear(hn, w.self_wq, w.self_bq),
                                detail::linear(hn, w.self_wk, w.self_bk),
                                detail::linear(hn, w.self_wv, w.self_bv), n_heads);
    const Tensor context = add(h_self, detail::linear(sa, w.self_wo, w.self_bo));

    // mutual attention: queries from the own context, keys/values from the
    // counterpart's pre-block hidden states
    const Tensor cn = detail::ada_norm(context, cond, w.mod2_w, w.mod2_b);
    const Tensor ma = attention(detail::linear(cn, w.mut_wq, w.mut_bq),
                                detail::linear(h_counter, w.mut_wk, w.mut_bk),
                                detail::linear(h_counter, w.mut_wv, w.mut_bv), n_heads);
    const Tensor mixed = add(context, detail::linear(ma, w.mut_wo, w.mut_bo));

    const Tensor fn = detail::ada_norm(mixed, cond, w.mod3_w, w.mod3_b);
    const Tensor ff =
        detail::linear(gelu(detail::linear(fn, w.ff_w1, w.ff_b1)), w.ff_w2, w.ff_b2);
    return add(mixed, ff);
}

inline std::pair<Tensor, Tensor> interaction_block(const Tensor& h_a, const Tensor& h_b,
                                                   const Tensor& cond,
                                                   const BlockWeights& w, int n_heads) {
    return {interaction_block_stream(h_a, h_b, cond, w, n_heads),
            interaction_block_stream(h_b, h_a, cond, w, n_heads)};
}

// ----------------------------- denoiser -----------------------------

class Denoiser {
public:
    Denoiser() = default;
    explicit Denoiser(DenoiserWeights weights) : w_(std::move(weights)) {
        w_.config.validate();
    }

    static Denoiser init(const DenoiserConfig& cfg, uint64_t seed) {
        return Denoiser(DenoiserWeights::init(cfg, seed));
    }

    DenoiserWeights& weights() { return w_; }
    const DenoiserWeights& weights() const { return w_; }
    const DenoiserConfig& config() const { return w_.config; }

    // condition vector shared by every adaptive-norm site: timestep embedding
    // plus the projected label row (zero for the null token)
    Tensor condition_vector(int t, std::optional<int> label) const {
        const int d = w_.config.d_model;
        const Tensor tf = detail::sinusoid_features(float(t), d);
        Tensor e = detail::linear(silu(detail::linear(tf, w_.time_w1, w_.time_b1)),
                                  w_.time_w2, w_.time_b2);
        if (label.has_value()) {
            check(*label >= 0 && *label < w_.config.n_labels,
                  "denoise: label " + std::to_string(*label) + " out of range");
            const Tensor row = slice_rows(w_.cond_codebook, *label, 1);
            e = add(e, matmul(row, w_.cond_proj));
        }
        return e;
    }

    // Both clean-motion estimates in one pass. Inputs are normalized state
    // sequences of equal length; the outputs have the same shapes.
    std::pair<Tensor, Tensor> denoise(const Tensor& x_a, const Tensor& x_b, int t,
                                      std::optional<int> label) const {
        const DenoiserConfig& cfg = w_.config;
        check(x_a.shape().size() == 2 && x_a.shape() == x_b.shape(),
              "denoise: inputs must be matching (length, state) matrices, got " +
                  shape_str(x_a.shape()) + " and " + shape_str(x_b.shape()));
        check(x_a.shape()[1] == cfg.state_dim(),
              "denoise: state dim " + std::to_string(x_a.shape()[1]) + " != " +
                  std::to_string(cfg.state_dim()));
        check(t >= 0 && t <= cfg.T, "denoise: t outside [0, T]");
        check(x_a.all_finite() && x_b.all_finite(), "denoise: non-finite input");
        const int length = x_a.shape()[0];

        const Tensor cond = condition_vector(t, label);
        const Tensor pe = detail::positional_encoding(length, cfg.d_model);
        Tensor h_a = add(detail::linear(x_a, w_.embed_w, w_.embed_b), pe);
        Tensor h_b = add(detail::linear(x_b, w_.embed_w, w_.embed_b), pe);
        for (const auto& block : w_.blocks) {
            auto [na, nb] = interaction_block(h_a, h_b, cond, block, cfg.n_heads);
            h_a = na;
            h_b = nb;
        }
        return {detail::linear(h_a, w_.out_w, w_.out_b),
                detail::linear(h_b, w_.out_w, w_.out_b)};
    }

    DenoisePairFn as_denoise_fn() const {
        return [this](const Tensor& a, const Tensor& b, int t, std::optional<int> label) {
            return denoise(a, b, t, label);
        };
    }

private:
    DenoiserWeights w_;
};

// ----------------------------- checkpoint IO -----------------------------
// Text header with the architecture and training counters, then named
// little-endian float32 blobs. Round trips are bit-exact.

struct Checkpoint {
    DenoiserConfig config;
    long step = 0;
    int epoch = 0;
    NormStats stats;
    std::vector<std::pair<std::string, Tensor>> tensors;  // weights + extras
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_runtime("save_checkpoint: cannot open " + path);
    os << "DCK1\n";
    os << "version 1\n";
    const DenoiserConfig& c = ck.config;
    os << "n_joints " << c.n_joints << "\n";
    os << "d_model " << c.d_model << "\n";
    os << "n_blocks " << c.n_blocks << "\n";
    os << "n_heads " << c.n_heads << "\n";
    os << "ff_mult " << c.ff_mult << "\n";
    os << "n_labels " << c.n_labels << "\n";
    os << "T " << c.T << "\n";
    os << "step " << ck.step << "\n";
    os << "epoch " << ck.epoch << "\n";
    os << "norm_dim " << ck.stats.dim() << "\n";
    os << "tensors " << ck.tensors.size() << "\n";
    for (const auto& [name, t] : ck.tensors) {
        os << "tensor " << name << " " << t.shape().size();
        for (int e : t.shape()) os << " " << e;
        os << "\n";
    }
    os << "data\n";
    write_f32_blob(os, ck.stats.mean.data(), ck.stats.mean.size());
    write_f32_blob(os, ck.stats.std.data(), ck.stats.std.size());
    for (const auto& [name, t] : ck.tensors) write_f32_blob(os, t.ptr(), size_t(t.size()));
    if (!os) fail_runtime("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_runtime("load_checkpoint: cannot open " + path);
    std::string line;
    check(std::getline(is, line) && line == "DCK1", "load_checkpoint: bad magic");
    Checkpoint ck;
    int norm_dim = 0;
    size_t n_tensors = 0;
    std::vector<std::pair<std::string, Shape>> specs;
    bool saw_data = false;
    while (std::getline(is, line)) {
        if (line == "data") {
            saw_data = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "version") {
            int v;
            ls >> v;
            check(v == 1, "load_checkpoint: unsupported version");
        } else if (key == "n_joints") {
            ls >> ck.config.n_joints;
        } else if (key == "d_model") {
            ls >> ck.config.d_model;
        } else if (key == "n_blocks") {
            ls >> ck.config.n_blocks;
        } else if (key == "n_heads") {
            ls >> ck.config.n_heads;
        } else if (key == "ff_mult") {
            ls >> ck.config.ff_mult;
        } else if (key == "n_labels") {
            ls >> ck.config.n_labels;
        } else if (key == "T") {
            ls >> ck.config.T;
        } else if (key == "step") {
            ls >> ck.step;
        } else if (key == "epoch") {
            ls >> ck.epoch;
        } else if (key == "norm_dim") {
            ls >> norm_dim;
        } else if (key == "tensors") {
            ls >> n_tensors;
        } else if (key == "tensor") {
            std::string name;
            int ndims = 0;
            ls >> name >> ndims;
            Shape shape(size_t(ndims), 0);
            for (int i = 0; i < ndims; ++i) ls >> shape[size_t(i)];
            specs.push_back({name, shape});
        } else {
            fail("load_checkpoint: unknown header key '" + key + "'");
        }
    }
    check(saw_data, "load_checkpoint: missing data section");
    check(specs.size() == n_tensors, "load_checkpoint: tensor count mismatch");
    ck.stats.mean.assign(size_t(norm_dim), 0.0f);
    ck.stats.std.assign(size_t(norm_dim), 1.0f);
    if (norm_dim > 0) {
        read_f32_blob(is, ck.stats.mean.data(), size_t(norm_dim));
        read_f32_blob(is, ck.stats.std.data(), size_t(norm_dim));
    }
    for (auto& [name, shape] : specs) {
        Tensor t(shape);
        read_f32_blob(is, t.ptr(), size_t(t.size()));
        ck.tensors.push_back({name, t});
    }
    return ck;
}

// weights <-> checkpoint tensor list
inline Checkpoint make_checkpoint(DenoiserWeights& weights, const NormStats& stats,
                                  long step, int epoch) {
    Checkpoint ck;
    ck.config = weights.config;
    ck.step = step;
    ck.epoch = epoch;
    ck.stats = stats;
    for (auto& [name, t] : weights.named_params()) ck.tensors.push_back({name, t.clone()});
    return ck;
}

inline DenoiserWeights weights_from_checkpoint(const Checkpoint& ck) {
    DenoiserWeights w = DenoiserWeights::init(ck.config, 0);
    size_t found = 0;
    for (auto& [name, t] : w.named_params()) {
        bool hit = false;
        for (const auto& [cname, ct] : ck.tensors) {
            if (cname != name) continue;
            check(ct.shape() == t.shape(), "checkpoint: shape mismatch for " + name);
            std::copy_n(ct.ptr(), ct.size(), t.ptr());
            hit = true;
            ++found;
            break;
        }
        check(hit, "checkpoint: missing tensor " + name);
    }
    (void)found;
    return w;
}

}  // namespace duet

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "duet/common.hpp"
#include "duet/kinematics.hpp"
#include "duet/repr.hpp"
#include "duet/tensor.hpp"

// Training objectives: the clean-motion regression loss, geometric
// regularizers (joint velocity, foot contact, bone length), the two
// interaction regularizers (masked cross-person distance map and relative
// orientation), and the timestep-gated total.

namespace duet {

struct LossWeights {
    float lambda_vel = 30.0f;
    float lambda_foot = 30.0f;
    float lambda_bl = 10.0f;
    float lambda_dm = 3.0f;
    float lambda_ro = 0.01f;
    float lambda_reg = 1.0f;
    float t_bar_fraction = 0.7f;  // regularizers apply for t <= t_bar_fraction * T
    float dm_threshold = 1.0f;    // meters, XZ-plane gate for the distance map

    void validate() const {
        check(lambda_vel >= 0 && lambda_foot >= 0 && lambda_bl >= 0 && lambda_dm >= 0 &&
                  lambda_ro >= 0 && lambda_reg >= 0,
              "LossWeights: weights must be non-negative");
        check(t_bar_fraction >= 0.0f && t_bar_fraction <= 1.0f,
              "LossWeights: t_bar_fraction outside [0, 1]");
        check(dm_threshold > 0.0f, "LossWeights: dm_threshold must be positive");
    }
};

// two synchronized state streams, (L, dim) each
struct StatePair {
    Tensor a, b;

    StatePair swapped() const { return {b, a}; }
};

// ----------------------------- fused geometry ops -----------------------------

// Cross-person joint distance map: pa (L, 3*Na), pb (L, 3*Nb) -> (L, Na*Nb)
// Euclidean distances, entry (i*Nb + j) pairing joint i of a with joint j of b.
inline Tensor cross_distance_map(const Tensor& pa, const Tensor& pb) {
    check(pa.shape().size() == 2 && pb.shape().size() == 2 && pa.shape()[0] == pb.shape()[0],
          "cross_distance_map: expect matching (L, 3N) matrices");
    check(pa.shape()[1] % 3 == 0 && pb.shape()[1] % 3 == 0,
          "cross_distance_map: columns must be xyz triples");
    const int L = pa.shape()[0];
    const int na = pa.shape()[1] / 3;
    const int nb = pb.shape()[1] / 3;
    constexpr float eps = 1e-12f;
    Tensor out({L, na * nb});
    for (int f = 0; f < L; ++f) {
        const float* ra = pa.ptr() + size_t(f) * pa.shape()[1];
        const float* rb = pb.ptr() + size_t(f) * pb.shape()[1];
        float* ro = out.ptr() + size_t(f) * na * nb;
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nb; ++j) {
                const float dx = ra[3 * i] - rb[3 * j];
                const float dy = ra[3 * i + 1] - rb[3 * j + 1];
                const float dz = ra[3 * i + 2] - rb[3 * j + 2];
                ro[i * nb + j] = std::sqrt(dx * dx + dy * dy + dz * dz + eps);
            }
    }
    if (detail::track2(pa, pb)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor ppa = pa, ppb = pb, po = out;
        detail::attach(out, {pa, pb}, [ppa, ppb, po, og, L, na, nb]() mutable {
            const float* g = og->data();
            const float* d = po.ptr();
            const int ca = 3 * na, cb = 3 * nb;
            for (int f = 0; f < L; ++f) {
                const float* ra = ppa.ptr() + size_t(f) * ca;
                const float* rb = ppb.ptr() + size_t(f) * cb;
                for (int i = 0; i < na; ++i)
                    for (int j = 0; j < nb; ++j) {
                        const float gv = g[size_t(f) * na * nb + size_t(i * nb + j)];
                        if (gv == 0.0f) continue;
                        const float dist = d[size_t(f) * na * nb + size_t(i * nb + j)];
                        const float s = gv / dist;
                        const float dx = ra[3 * i] - rb[3 * j];
                        const float dy = ra[3 * i + 1] - rb[3 * j + 1];
                        const float dz = ra[3 * i + 2] - rb[3 * j + 2];
                        if (ppa.requires_grad()) {
                            auto& ga = ppa.grad();
                            ga[size_t(f) * ca + size_t(3 * i)] += s * dx;
                            ga[size_t(f) * ca + size_t(3 * i + 1)] += s * dy;
                            ga[size_t(f) * ca + size_t(3 * i + 2)] += s * dz;
                        }
                        if (ppb.requires_grad()) {
                            auto& gb = ppb.grad();
                            gb[size_t(f) * cb + size_t(3 * j)] -= s * dx;
                            gb[size_t(f) * cb + size_t(3 * j + 1)] -= s * dy;
                            gb[size_t(f) * cb + size_t(3 * j + 2)] -= s * dz;
                        }
                    }
            }
        });
    }
    return out;
}

// Per-frame bone lengths from stacked joint positions: (L, 3N) -> (L, N-1)
inline Tensor bone_lengths_t(const Tensor& pos, const Skeleton& skel) {
    check(pos.shape().size() == 2 && pos.shape()[1] == 3 * skel.n_joints,
          "bone_lengths_t: expected (L, 3N) positions for N = " +
              std::to_string(skel.n_joints));
    const int L = pos.shape()[0];
    const int n = skel.n_joints;
    constexpr float eps = 1e-12f;
    Tensor out({L, n - 1});
    for (int f = 0; f < L; ++f) {
        const float* r = pos.ptr() + size_t(f) * 3 * n;
        float* ro = out.ptr() + size_t(f) * (n - 1);
        for (int j = 1; j < n; ++j) {
            const int p = skel.parent[size_t(j)];
            const float dx = r[3 * j] - r[3 * p];
            const float dy = r[3 * j + 1] - r[3 * p + 1];
            const float dz = r[3 * j + 2] - r[3 * p + 2];
            ro[j - 1] = std::sqrt(dx * dx + dy * dy + dz * dz + eps);
        }
    }
    if (detail::track(pos)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pp = pos, po = out;
        std::vector<int> parents = skel.parent;
        detail::attach(out, {pos}, [pp, po, og, parents, L, n]() mutable {
            const float* g = og->data();
            const float* d = po.ptr();
            auto& gp = pp.grad();
            for (int f = 0; f < L; ++f) {
                const float* r = pp.ptr() + size_t(f) * 3 * n;
                for (int j = 1; j < n; ++j) {
                    const float gv = g[size_t(f) * (n - 1) + size_t(j - 1)];
                    if (gv == 0.0f) continue;
                    const int p = parents[size_t(j)];
                    const float s = gv / d[size_t(f) * (n - 1) + size_t(j - 1)];
                    const float dx = r[3 * j] - r[3 * p];
                    const float dy = r[3 * j + 1] - r[3 * p + 1];
                    const float dz = r[3 * j + 2] - r[3 * p + 2];
                    gp[size_t(f) * 3 * n + size_t(3 * j)] += s * dx;
                    gp[size_t(f) * 3 * n + size_t(3 * j + 1)] += s * dy;
                    gp[size_t(f) * 3 * n + size_t(3 * j + 2)] += s * dz;
                    gp[size_t(f) * 3 * n + size_t(3 * p)] -= s * dx;
                    gp[size_t(f) * 3 * n + size_t(3 * p + 1)] -= s * dy;
                    gp[size_t(f) * 3 * n + size_t(3 * p + 2)] -= s * dz;
                }
            }
        });
    }
    return out;
}

// ----------------------------- helpers -----------------------------

namespace detail {

inline Tensor joint_positions(const Tensor& states, int n_joints) {
    return slice_last(states, 0, 3 * n_joints);
}

// forward position differences, (L, 3N) -> (L-1, 3N)
inline Tensor frame_velocities(const Tensor& pos) {
    const int L = pos.shape()[0];
    check(L >= 2, "frame_velocities: need at least 2 frames");
    return sub(slice_rows(pos, 1, L - 1), slice_rows(pos, 0, L - 1));
}

// per-frame facing direction (cos yaw, sin yaw) from stacked positions
inline std::pair<Tensor, Tensor> facing_cos_sin(const Tensor& pos, const Skeleton& skel) {
    Tensor ax, az;
    bool first = true;
    for (auto [l, r] : skel.facing_joints) {
        Tensor dx = sub(slice_last(pos, 3 * l, 1), slice_last(pos, 3 * r, 1));
        Tensor dz = sub(slice_last(pos, 3 * l + 2, 1), slice_last(pos, 3 * r + 2, 1));
        ax = first ? dx : add(ax, dx);
        az = first ? dz : add(az, dz);
        first = false;
    }
    // forward = across x Y = (-a_z, 0, a_x); yaw measured from +Z
    const Tensor fx = neg(az);
    const Tensor fz = ax;
    const Tensor norm =
        sqrt_t(add_scalar(add(square(fx), square(fz)), 1e-12f));
    return {div(fz, norm), div(fx, norm)};  // (cos, sin)
}

// non-differentiable XZ facing magnitude, for the degeneracy skip mask
inline std::vector<float> facing_strength(const Tensor& pos, const Skeleton& skel) {
    const int L = pos.shape()[0];
    std::vector<float> out(size_t(L), 0.0f);
    const int cols = pos.shape()[1];
    for (int f = 0; f < L; ++f) {
        const float* r = pos.ptr() + size_t(f) * cols;
        float ax = 0.0f, az = 0.0f;
        for (auto [l, rr] : skel.facing_joints) {
            ax += r[3 * l] - r[3 * rr];
            az += r[3 * l + 2] - r[3 * rr + 2];
        }
        out[size_t(f)] = std::sqrt(ax * ax + az * az);
    }
    return out;
}

inline Tensor masked_mean(const Tensor& values, const Tensor& mask, double active) {
    if (active < 0.5) return Tensor::scalar(0.0f);
    return mul_scalar(sum_all(mul(values, mask)), float(1.0 / active));
}

}  // namespace detail

// ----------------------------- individual losses -----------------------------

// Clean-motion regression in normalized state space, both streams summed.
inline Tensor loss_simple(const StatePair& pred, const StatePair& target) {
    check(pred.a.shape() == target.a.shape() && pred.b.shape() == target.b.shape(),
          "loss_simple: shape mismatch");
    return add(mean_all(square(sub(pred.a, target.a))),
               mean_all(square(sub(pred.b, target.b))));
}

struct GeometricLosses {
    Tensor vel;
    Tensor foot;
};

// L_vel: squared error of frame-difference joint velocities, mean over both
// persons' entries. L_foot: mean squared predicted foot-joint speed over the
// (frame, joint) pairs the target marks as in contact.
inline GeometricLosses loss_geometric(const StatePair& pred, const StatePair& target,
                                      const Skeleton& skel) {
    const NonCanonicalLayout lay{skel.n_joints};
    GeometricLosses out;
    {
        std::vector<Tensor> pv, tv;
        for (const auto* p : {&pred.a, &pred.b})
            pv.push_back(detail::frame_velocities(detail::joint_positions(*p, skel.n_joints)));
        for (const auto* t : {&target.a, &target.b})
            tv.push_back(detail::frame_velocities(detail::joint_positions(*t, skel.n_joints)));
        out.vel = mean_all(square(sub(concat_rows(pv), concat_rows(tv))));
    }
    {
        Tensor total = Tensor::scalar(0.0f);
        double active = 0.0;
        std::vector<Tensor> parts;
        const Tensor* preds[2] = {&pred.a, &pred.b};
        const Tensor* tgts[2] = {&target.a, &target.b};
        for (int person = 0; person < 2; ++person) {
            const Tensor pos = detail::joint_positions(*preds[person], skel.n_joints);
            const int L = pos.shape()[0];
            for (int k = 0; k < 4; ++k) {
                const int j = skel.heel_toe[size_t(k)];
                const Tensor foot_pos = slice_last(pos, 3 * j, 3);
                const Tensor speed_sq = sum_last(square(detail::frame_velocities(foot_pos)));
                Tensor mask({L - 1});
                const int cc = lay.contacts() + k;
                for (int f = 0; f + 1 < L; ++f) {
                    const float c = tgts[person]->ptr()[size_t(f) * lay.dim() + size_t(cc)];
                    mask.ptr()[f] = c > 0.5f ? 1.0f : 0.0f;
                    active += mask.ptr()[f];
                }
                total = add(total, sum_all(mul(speed_sq, mask)));
            }
        }
        out.foot = active < 0.5 ? Tensor::scalar(0.0f)
                                : mul_scalar(total, float(1.0 / active));
    }
    return out;
}

// Squared bone-length error against the target, mean over bones and frames,
// summed over the two persons.
inline Tensor loss_bone_length(const StatePair& pred, const StatePair& target,
                               const Skeleton& skel) {
    auto person_term = [&](const Tensor& p, const Tensor& t) {
        const Tensor bp = bone_lengths_t(detail::joint_positions(p, skel.n_joints), skel);
        const Tensor bt = bone_lengths_t(detail::joint_positions(t, skel.n_joints), skel);
        return mean_all(square(sub(bp, bt)));
    };
    return add(person_term(pred.a, target.a), person_term(pred.b, target.b));
}

// Masked squared error on the cross-person joint distance map. The mask keeps
// entries whose ground-truth XZ-projected distance is below the threshold and
// the loss is the mean over active entries (zero when none are active).
inline Tensor loss_distance_map(const StatePair& pred, const StatePair& target,
                                const Skeleton& skel, float dm_threshold) {
    const int n = skel.n_joints;
    const Tensor map_p = cross_distance_map(detail::joint_positions(pred.a, n),
                                            detail::joint_positions(pred.b, n));
    const Tensor map_t = cross_distance_map(detail::joint_positions(target.a, n),
                                            detail::joint_positions(target.b, n));
    // XZ-projected gate from the ground truth, constant for the gradient
    const int L = map_t.shape()[0];
    Tensor mask({L, n * n});
    double active = 0.0;
    const NonCanonicalLayout lay{n};
    for (int f = 0; f < L; ++f) {
        const float* ra = target.a.ptr() + size_t(f) * lay.dim();
        const float* rb = target.b.ptr() + size_t(f) * lay.dim();
        float* m = mask.ptr() + size_t(f) * n * n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const float dx = ra[3 * i] - rb[3 * j];
                const float dz = ra[3 * i + 2] - rb[3 * j + 2];
                const bool on = std::sqrt(dx * dx + dz * dz) < dm_threshold;
                m[i * n + j] = on ? 1.0f : 0.0f;
                active += on ? 1.0 : 0.0;
            }
    }
    return detail::masked_mean(square(sub(map_p, map_t)), mask, active);
}

// Squared error on the relative heading 2-vector (cos, sin of the yaw
// difference), mean over frames. Frames with a degenerate facing pose in
// either clip are skipped; more than half skipped rejects the batch.
inline Tensor loss_relative_orientation(const StatePair& pred, const StatePair& target,
                                        const Skeleton& skel) {
    const int n = skel.n_joints;
    const Tensor ppa = detail::joint_positions(pred.a, n);
    const Tensor ppb = detail::joint_positions(pred.b, n);
    const Tensor tpa = detail::joint_positions(target.a, n);
    const Tensor tpb = detail::joint_positions(target.b, n);

    const int L = ppa.shape()[0];
    Tensor mask({L, 1});
    int skipped = 0;
    constexpr float degeneracy = 1e-4f;
    for (const Tensor* pos : {&ppa, &ppb, &tpa, &tpb}) {
        const auto strength = detail::facing_strength(*pos, skel);
        for (int f = 0; f < L; ++f)
            if (strength[size_t(f)] < degeneracy) mask.ptr()[f] = -1.0f;
    }
    double active = 0.0;
    for (int f = 0; f < L; ++f) {
        if (mask.ptr()[f] < 0.0f) {
            mask.ptr()[f] = 0.0f;
            ++skipped;
        } else {
            mask.ptr()[f] = 1.0f;
            active += 1.0;
        }
    }
    if (skipped * 2 > L)
        fail("loss_relative_orientation: " + std::to_string(skipped) + " of " +
             std::to_string(L) + " frames have degenerate facing poses");

    auto rel = [&](const Tensor& pa, const Tensor& pb) {
        auto [ca, sa] = detail::facing_cos_sin(pa, skel);
        auto [cb, sb] = detail::facing_cos_sin(pb, skel);
        // (cos, sin) of yaw_a - yaw_b
        const Tensor c = add(mul(ca, cb), mul(sa, sb));
        const Tensor s = sub(mul(sa, cb), mul(ca, sb));
        return std::pair<Tensor, Tensor>{c, s};
    };
    auto [pc, ps] = rel(ppa, ppb);
    auto [tc, ts] = rel(tpa, tpb);
    const Tensor sq = add(square(sub(pc, tc)), square(sub(ps, ts)));  // (L, 1)
    return detail::masked_mean(sq, mask, active);
}

// ----------------------------- gated total -----------------------------

struct LossTerms {
    Tensor total;
    Tensor simple;
    Tensor vel, foot, bl, dm, ro;
    bool regularized = false;  // t <= t_bar

    float regularizer_value(const LossWeights& w) const {
        if (!regularized) return 0.0f;
        return w.lambda_reg *
               (w.lambda_vel * vel.item() + w.lambda_foot * foot.item() +
                w.lambda_bl * bl.item() + w.lambda_dm * dm.item() + w.lambda_ro * ro.item());
    }
};

// Clean-motion loss plus the gated regularizer. Inputs are normalized state
// pairs; the geometric terms run on the denormalized decodes. The gate is a
// hard indicator: above t_bar the regularizer is exactly zero and the
// auxiliary terms are not evaluated.
inline LossTerms loss_total(const StatePair& pred_norm, const StatePair& target_norm, int t,
                            const LossWeights& w, int T, const NormStats& stats,
                            const Skeleton& skel) {
    w.validate();
    check(t >= 0 && t <= T, "loss_total: t outside [0, T]");
    LossTerms out;
    out.simple = loss_simple(pred_norm, target_norm);
    const float t_bar = w.t_bar_fraction * float(T);
    out.regularized = float(t) <= t_bar;
    if (!out.regularized) {
        out.total = out.simple;
        out.vel = out.foot = out.bl = out.dm = out.ro = Tensor::scalar(0.0f);
        return out;
    }

    const Tensor mean_t = Tensor::from({stats.dim()}, stats.mean);
    const Tensor std_t = Tensor::from({stats.dim()}, stats.std);
    auto denorm = [&](const Tensor& x) { return add_row(mul_row(x, std_t), mean_t); };
    const StatePair pred{denorm(pred_norm.a), denorm(pred_norm.b)};
    const StatePair target{denorm(target_norm.a), denorm(target_norm.b)};

    const GeometricLosses geo = loss_geometric(pred, target, skel);
    out.vel = geo.vel;
    out.foot = geo.foot;
    out.bl = loss_bone_length(pred, target, skel);
    out.dm = loss_distance_map(pred, target, skel, w.dm_threshold);
    out.ro = loss_relative_orientation(pred, target, skel);

    Tensor reg = mul_scalar(out.vel, w.lambda_vel);
    reg = add(reg, mul_scalar(out.foot, w.lambda_foot));
    reg = add(reg, mul_scalar(out.bl, w.lambda_bl));
    reg = add(reg, mul_scalar(out.dm, w.lambda_dm));
    reg = add(reg, mul_scalar(out.ro, w.lambda_ro));
    out.total = add(out.simple, mul_scalar(reg, w.lambda_reg));
    return out;
}

}  // namespace duet

#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/kinematics.hpp"

// Two per-frame motion representations and the codecs between them.
//
// Non-canonical state (length 12*Nj + 4): global joint positions, global
// joint velocities, local 6D rotations, foot contacts. World-frame positions
// make two-person spatial relations directly available and decoding free of
// velocity integration.
//
// Canonical state (length 12*Nj + 12): root yaw/XZ velocities and height,
// root-frame joint positions/velocities, local rotations, contacts, plus the
// relative heading (cos, sin) and root-frame XZ offset of the other person.
// World trajectories are recovered by integrating the root velocities.

namespace duet {

constexpr int kMaxClipFrames = 300;
constexpr int kDefaultFps = 30;
constexpr float kContactVelThreshold = 0.02f;  // m/frame at 30 fps

// ----------------------------- channel layouts -----------------------------

struct NonCanonicalLayout {
    int n_joints = 0;

    int dim() const { return 12 * n_joints + 4; }
    int pos(int j) const { return 3 * j; }
    int vel(int j) const { return 3 * n_joints + 3 * j; }
    int rot(int j) const { return 6 * n_joints + 6 * j; }
    int contacts() const { return 12 * n_joints; }
};

struct CanonicalLayout {
    int n_joints = 0;

    int dim() const { return 12 * n_joints + 12; }
    int root_ang_vel() const { return 0; }
    int root_vel_x() const { return 1; }
    int root_vel_z() const { return 2; }
    int root_height() const { return 3; }
    int pos(int j) const { return 4 + 3 * j; }
    int vel(int j) const { return 4 + 3 * n_joints + 3 * j; }
    int rot(int j) const { return 4 + 6 * n_joints + 6 * j; }
    int contacts() const { return 4 + 12 * n_joints; }
    int rel_rot() const { return 8 + 12 * n_joints; }    // (cos, sin), 2 channels
    int rel_trans() const { return 10 + 12 * n_joints; } // root-frame XZ, 2 channels
};

// ----------------------------- state views -----------------------------

// One frame of a non-canonical stream.
struct MotionState {
    const float* v = nullptr;
    NonCanonicalLayout layout;

    Vec3 position(int j) const {
        const int o = layout.pos(j);
        return {v[o], v[o + 1], v[o + 2]};
    }
    Vec3 velocity(int j) const {
        const int o = layout.vel(j);
        return {v[o], v[o + 1], v[o + 2]};
    }
    Rot6D rotation(int j) const {
        const int o = layout.rot(j);
        Rot6D r;
        for (int k = 0; k < 6; ++k) r.v[size_t(k)] = v[o + k];
        return r;
    }
    float contact(int k) const { return v[layout.contacts() + k]; }

    std::vector<Vec3> positions() const {
        std::vector<Vec3> out(size_t(layout.n_joints));
        for (int j = 0; j < layout.n_joints; ++j) out[size_t(j)] = position(j);
        return out;
    }
};

// One frame of a canonical stream.
struct CanonicalState {
    const float* v = nullptr;
    CanonicalLayout layout;

    float root_ang_vel() const { return v[layout.root_ang_vel()]; }
    float root_vel_x() const { return v[layout.root_vel_x()]; }
    float root_vel_z() const { return v[layout.root_vel_z()]; }
    float root_height() const { return v[layout.root_height()]; }
    Vec3 local_position(int j) const {
        const int o = layout.pos(j);
        return {v[o], v[o + 1], v[o + 2]};
    }
    std::array<float, 2> rel_rot() const {
        return {v[layout.rel_rot()], v[layout.rel_rot() + 1]};
    }
    std::array<float, 2> rel_trans() const {
        return {v[layout.rel_trans()], v[layout.rel_trans() + 1]};
    }
};

// ----------------------------- interaction clip -----------------------------

// Synchronized two-person sequence in the non-canonical representation, plus
// its condition. Streams are row-major (length x dim).
struct InteractionClip {
    int n_joints = 0;
    int fps = kDefaultFps;
    int length = 0;
    std::string label;
    std::string text;
    std::string skeleton_ref;
    std::vector<float> person_a;
    std::vector<float> person_b;

    NonCanonicalLayout layout() const { return {n_joints}; }
    int dim() const { return layout().dim(); }

    void validate() const {
        check(n_joints > 0, "InteractionClip: n_joints not set");
        check(length >= 2, "InteractionClip: need at least 2 frames");
        check(length <= kMaxClipFrames,
              "InteractionClip: length " + std::to_string(length) + " exceeds " +
                  std::to_string(kMaxClipFrames));
        check(long(person_a.size()) == long(length) * dim() &&
                  person_a.size() == person_b.size(),
              "InteractionClip: stream sizes do not match length x dim");
    }

    const float* frame(int person, int i) const {
        return (person == 0 ? person_a.data() : person_b.data()) + size_t(i) * dim();
    }
    float* frame(int person, int i) {
        return (person == 0 ? person_a.data() : person_b.data()) + size_t(i) * dim();
    }
    MotionState state(int person, int i) const { return {frame(person, i), layout()}; }

    InteractionClip swapped() const {
        InteractionClip c = *this;
        std::swap(c.person_a, c.person_b);
        return c;
    }
};

// ----------------------------- encoding -----------------------------

// Builds one person's non-canonical stream from per-frame joint positions and
// local rotations (root entry heading-relative). Velocities are forward
// differences with the last frame repeated; contacts come from thresholded
// heel/toe speeds. Rejects position data whose bone lengths deviate from the
// rest skeleton by more than 1%.
inline std::vector<float> encode_noncanonical(
    const std::vector<std::vector<Vec3>>& positions,
    const std::vector<std::vector<Rot6D>>& rotations, const Skeleton& skel,
    float contact_threshold = kContactVelThreshold) {
    const int frames = int(positions.size());
    check(frames >= 2, "encode_noncanonical: need at least 2 frames");
    check(rotations.size() == positions.size(),
          "encode_noncanonical: rotations/positions length mismatch");

    const auto rest = bone_lengths(
        forward_kinematics(skel, {0, 0, 0},
                           std::vector<Rot6D>(size_t(skel.n_joints), Rot6D::identity())),
        skel);
    float max_dev = 0.0f;
    for (const auto& frame : positions) {
        const auto lens = bone_lengths(frame, skel);
        for (size_t b = 0; b < lens.size(); ++b) {
            if (rest[b] < 1e-6f) continue;
            max_dev = std::max(max_dev, std::abs(lens[b] - rest[b]) / rest[b]);
        }
    }
    if (max_dev > 0.01f)
        fail("encode_noncanonical: bone lengths deviate from rest by " +
             std::to_string(max_dev * 100.0f) + "%");

    const auto contacts = detect_foot_contacts(positions, skel, contact_threshold);
    const NonCanonicalLayout lay{skel.n_joints};
    std::vector<float> out(size_t(frames) * lay.dim(), 0.0f);
    for (int i = 0; i < frames; ++i) {
        float* f = out.data() + size_t(i) * lay.dim();
        const int inext = std::min(i + 1, frames - 1);
        const int iprev = inext - 1;  // velocity source pair (last frame repeats)
        for (int j = 0; j < skel.n_joints; ++j) {
            const Vec3 p = positions[size_t(i)][size_t(j)];
            const Vec3 vel = positions[size_t(iprev + 1)][size_t(j)] -
                             positions[size_t(iprev)][size_t(j)];
            f[lay.pos(j)] = p.x;
            f[lay.pos(j) + 1] = p.y;
            f[lay.pos(j) + 2] = p.z;
            f[lay.vel(j)] = vel.x;
            f[lay.vel(j) + 1] = vel.y;
            f[lay.vel(j) + 2] = vel.z;
            for (int k = 0; k < 6; ++k)
                f[lay.rot(j) + k] = rotations[size_t(i)][size_t(j)].v[size_t(k)];
        }
        for (int k = 0; k < 4; ++k) f[lay.contacts() + k] = contacts[size_t(i)][size_t(k)];
    }
    return out;
}

inline std::vector<std::vector<Vec3>> decode_positions(const std::vector<float>& stream,
                                                       int n_joints) {
    const NonCanonicalLayout lay{n_joints};
    check(stream.size() % size_t(lay.dim()) == 0, "decode_positions: stream size mismatch");
    const int frames = int(stream.size() / size_t(lay.dim()));
    std::vector<std::vector<Vec3>> out(size_t(frames), std::vector<Vec3>{});
    for (int i = 0; i < frames; ++i) {
        MotionState s{stream.data() + size_t(i) * lay.dim(), lay};
        out[size_t(i)] = s.positions();
    }
    return out;
}

// ----------------------------- canonical codec -----------------------------

struct CanonicalSeq {
    int n_joints = 0;
    int length = 0;
    std::vector<float> data;  // length x (12*Nj + 12)

    CanonicalLayout layout() const { return {n_joints}; }
    const float* frame(int i) const { return data.data() + size_t(i) * layout().dim(); }
    float* frame(int i) { return data.data() + size_t(i) * layout().dim(); }
    CanonicalState state(int i) const { return {frame(i), layout()}; }
};

// frame-0 root placement needed to re-anchor a canonical sequence in the world
struct InitPose {
    float yaw = 0.0f;
    float x = 0.0f;
    float z = 0.0f;
};

namespace detail {

inline void rotate_xz(float yaw, float x, float z, float& ox, float& oz) {
    const float c = std::cos(yaw), s = std::sin(yaw);
    // matches Mat3::rot_y applied to (x, 0, z)
    ox = c * x + s * z;
    oz = -s * x + c * z;
}

}  // namespace detail

// Canonicalizes one person's stream given both persons' data; the counterpart
// supplies the relative-heading and relative-translation channels.
inline CanonicalSeq encode_canonical_stream(const InteractionClip& clip, int person,
                                            const Skeleton& skel) {
    clip.validate();
    check(clip.n_joints == skel.n_joints, "encode_canonical: skeleton joint count mismatch");
    const int L = clip.length;
    const int other = 1 - person;
    CanonicalSeq seq;
    seq.n_joints = clip.n_joints;
    seq.length = L;
    const CanonicalLayout lay = seq.layout();
    seq.data.assign(size_t(L) * lay.dim(), 0.0f);

    std::vector<float> yaw_self(size_t(L), 0.0f), yaw_other(size_t(L), 0.0f);
    for (int i = 0; i < L; ++i) {
        yaw_self[size_t(i)] = facing_yaw(skel, clip.state(person, i).positions());
        yaw_other[size_t(i)] = facing_yaw(skel, clip.state(other, i).positions());
    }

    for (int i = 0; i < L; ++i) {
        const MotionState self = clip.state(person, i);
        const MotionState coop = clip.state(other, i);
        float* f = seq.frame(i);
        const float yaw = yaw_self[size_t(i)];
        const Vec3 root = self.position(0);

        const int inext = std::min(i + 1, L - 1);
        const int iprev = inext - 1;
        const float dyaw = wrap_angle(yaw_self[size_t(iprev + 1)] - yaw_self[size_t(iprev)]);
        const Vec3 root_prev = clip.state(person, iprev).position(0);
        const Vec3 root_next = clip.state(person, iprev + 1).position(0);
        float dvx = 0.0f, dvz = 0.0f;
        detail::rotate_xz(-yaw_self[size_t(iprev)], root_next.x - root_prev.x,
                          root_next.z - root_prev.z, dvx, dvz);

        f[lay.root_ang_vel()] = dyaw;
        f[lay.root_vel_x()] = dvx;
        f[lay.root_vel_z()] = dvz;
        f[lay.root_height()] = root.y;

        for (int j = 0; j < clip.n_joints; ++j) {
            const Vec3 p = self.position(j);
            float lx = 0.0f, lz = 0.0f;
            detail::rotate_xz(-yaw, p.x - root.x, p.z - root.z, lx, lz);
            f[lay.pos(j)] = lx;
            f[lay.pos(j) + 1] = p.y;
            f[lay.pos(j) + 2] = lz;
            const Vec3 v = self.velocity(j);
            float lvx = 0.0f, lvz = 0.0f;
            detail::rotate_xz(-yaw, v.x, v.z, lvx, lvz);
            f[lay.vel(j)] = lvx;
            f[lay.vel(j) + 1] = v.y;
            f[lay.vel(j) + 2] = lvz;
            const NonCanonicalLayout nlay = clip.layout();
            for (int k = 0; k < 6; ++k) f[lay.rot(j) + k] = self.v[nlay.rot(j) + k];
        }
        for (int k = 0; k < 4; ++k)
            f[lay.contacts() + k] = self.contact(k);

        const float rel = wrap_angle(yaw_other[size_t(i)] - yaw);
        f[lay.rel_rot()] = std::cos(rel);
        f[lay.rel_rot() + 1] = std::sin(rel);
        const Vec3 other_root = coop.position(0);
        float tx = 0.0f, tz = 0.0f;
        detail::rotate_xz(-yaw, other_root.x - root.x, other_root.z - root.z, tx, tz);
        f[lay.rel_trans()] = tx;
        f[lay.rel_trans() + 1] = tz;
    }
    return seq;
}

inline std::pair<CanonicalSeq, CanonicalSeq> encode_canonical(const InteractionClip& clip,
                                                              const Skeleton& skel) {
    return {encode_canonical_stream(clip, 0, skel), encode_canonical_stream(clip, 1, skel)};
}

inline InitPose initial_pose(const InteractionClip& clip, int person, const Skeleton& skel) {
    InitPose ip;
    const MotionState s = clip.state(person, 0);
    ip.yaw = facing_yaw(skel, s.positions());
    ip.x = s.position(0).x;
    ip.z = s.position(0).z;
    return ip;
}

struct DecodedMotion {
    std::vector<std::vector<Vec3>> positions;   // world frame
    std::vector<std::vector<Vec3>> velocities;  // world frame
    std::vector<float> yaw;                     // integrated heading per frame
};

// Integrates root yaw and XZ velocities from init_pose, then re-poses the
// root-frame joint features in the world.
inline DecodedMotion decode_canonical(const CanonicalSeq& seq, const InitPose& init) {
    const CanonicalLayout lay = seq.layout();
    DecodedMotion out;
    out.positions.assign(size_t(seq.length), {});
    out.velocities.assign(size_t(seq.length), {});
    out.yaw.assign(size_t(seq.length), 0.0f);

    float yaw = init.yaw;
    float rx = init.x, rz = init.z;
    for (int i = 0; i < seq.length; ++i) {
        const CanonicalState s = seq.state(i);
        out.yaw[size_t(i)] = yaw;
        auto& pos = out.positions[size_t(i)];
        auto& vel = out.velocities[size_t(i)];
        pos.assign(size_t(lay.n_joints), Vec3{});
        vel.assign(size_t(lay.n_joints), Vec3{});
        for (int j = 0; j < lay.n_joints; ++j) {
            const Vec3 pl = s.local_position(j);
            float wx = 0.0f, wz = 0.0f;
            detail::rotate_xz(yaw, pl.x, pl.z, wx, wz);
            pos[size_t(j)] = {wx + rx, pl.y, wz + rz};
            const int vo = lay.vel(j);
            float wvx = 0.0f, wvz = 0.0f;
            detail::rotate_xz(yaw, s.v[vo], s.v[vo + 2], wvx, wvz);
            vel[size_t(j)] = {wvx, s.v[vo + 1], wvz};
        }
        // advance the root transform to the next frame
        float dx = 0.0f, dz = 0.0f;
        detail::rotate_xz(yaw, s.root_vel_x(), s.root_vel_z(), dx, dz);
        rx += dx;
        rz += dz;
        yaw = yaw + s.root_ang_vel();
    }
    return out;
}

// canonical -> non-canonical stream (rotations and contacts pass through)
inline std::vector<float> canonical_to_noncanonical(const CanonicalSeq& seq,
                                                    const InitPose& init) {
    const CanonicalLayout clay = seq.layout();
    const NonCanonicalLayout nlay{seq.n_joints};
    const DecodedMotion dec = decode_canonical(seq, init);
    std::vector<float> out(size_t(seq.length) * nlay.dim(), 0.0f);
    for (int i = 0; i < seq.length; ++i) {
        float* f = out.data() + size_t(i) * nlay.dim();
        const float* c = seq.frame(i);
        for (int j = 0; j < seq.n_joints; ++j) {
            const Vec3 p = dec.positions[size_t(i)][size_t(j)];
            const Vec3 v = dec.velocities[size_t(i)][size_t(j)];
            f[nlay.pos(j)] = p.x;
            f[nlay.pos(j) + 1] = p.y;
            f[nlay.pos(j) + 2] = p.z;
            f[nlay.vel(j)] = v.x;
            f[nlay.vel(j) + 1] = v.y;
            f[nlay.vel(j) + 2] = v.z;
            for (int k = 0; k < 6; ++k) f[nlay.rot(j) + k] = c[clay.rot(j) + k];
        }
        for (int k = 0; k < 4; ++k) f[nlay.contacts() + k] = c[clay.contacts() + k];
    }
    return out;
}

// ----------------------------- drift measurement -----------------------------

struct DriftResult {
    std::vector<int> horizons;
    std::vector<float> canonical_rms;     // terminal root error per horizon
    std::vector<float> noncanonical_rms;  // terminal root error per horizon
    // fraction of trials where the canonical error at the longest horizon
    // exceeds the error at the shortest one
    float canonical_growth_fraction = 0.0f;
};

// Corrupts the trajectory-bearing channels of each representation with i.i.d.
// Gaussian noise and reports RMS terminal root-position error per horizon.
// Canonical decoding integrates the noisy root velocities; non-canonical
// decoding reads the noisy root positions directly.
inline DriftResult measure_drift(const InteractionClip& clip, const Skeleton& skel,
                                 float noise, std::vector<int> horizons, int trials,
                                 uint64_t seed) {
    check(noise >= 0.0f, "measure_drift: noise level must be non-negative");
    clip.validate();
    for (int h : horizons)
        check(h >= 2 && h <= clip.length, "measure_drift: horizon out of range");

    const CanonicalSeq clean = encode_canonical_stream(clip, 0, skel);
    const InitPose init = initial_pose(clip, 0, skel);
    const DecodedMotion ref = decode_canonical(clean, init);
    const CanonicalLayout clay = clean.layout();

    DriftResult res;
    res.horizons = horizons;
    res.canonical_rms.assign(horizons.size(), 0.0f);
    res.noncanonical_rms.assign(horizons.size(), 0.0f);

    std::vector<double> can_sq(horizons.size(), 0.0), non_sq(horizons.size(), 0.0);
    int grew = 0;
    Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        CanonicalSeq noisy = clean;
        for (int i = 0; i < noisy.length; ++i) {
            float* f = noisy.frame(i);
            f[clay.root_ang_vel()] += noise * rng.normal();
            f[clay.root_vel_x()] += noise * rng.normal();
            f[clay.root_vel_z()] += noise * rng.normal();
        }
        const DecodedMotion dec = decode_canonical(noisy, init);
        std::vector<float> can_err(horizons.size(), 0.0f);
        for (size_t h = 0; h < horizons.size(); ++h) {
            const int last = horizons[h] - 1;
            const Vec3 e = dec.positions[size_t(last)][0] - ref.positions[size_t(last)][0];
            can_err[h] = e.norm();
            can_sq[h] += double(e.norm()) * e.norm();
        }
        if (can_err.back() > can_err.front()) ++grew;

        // world-frame positions carry the noise directly, no integration
        std::vector<float> noisy_nc = clip.person_a;
        const NonCanonicalLayout nlay = clip.layout();
        for (int i = 0; i < clip.length; ++i) {
            float* f = noisy_nc.data() + size_t(i) * nlay.dim();
            for (int k = 0; k < 3; ++k) f[nlay.pos(0) + k] += noise * rng.normal();
        }
        for (size_t h = 0; h < horizons.size(); ++h) {
            const int last = horizons[h] - 1;
            MotionState noisy_state{noisy_nc.data() + size_t(last) * nlay.dim(), nlay};
            const Vec3 e = noisy_state.position(0) - clip.state(0, last).position(0);
            non_sq[h] += double(e.norm()) * e.norm();
        }
    }
    for (size_t h = 0; h < horizons.size(); ++h) {
        res.canonical_rms[h] = float(std::sqrt(can_sq[h] / trials));
        res.noncanonical_rms[h] = float(std::sqrt(non_sq[h] / trials));
    }
    res.canonical_growth_fraction = trials > 0 ? float(grew) / float(trials) : 0.0f;
    return res;
}

// ----------------------------- normalization -----------------------------

struct NormStats {
    std::vector<float> mean;
    std::vector<float> std;

    int dim() const { return int(mean.size()); }
};

// Per-channel mean/std over a set of streams (both persons pooled). Channels
// with std below 1e-6 are clamped to 1.
inline NormStats compute_norm_stats(const std::vector<const std::vector<float>*>& streams,
                                    int dim) {
    check(dim > 0, "compute_norm_stats: dim must be positive");
    long rows = 0;
    std::vector<double> sum(size_t(dim), 0.0), sumsq(size_t(dim), 0.0);
    for (const auto* s : streams) {
        check(s->size() % size_t(dim) == 0, "compute_norm_stats: stream size mismatch");
        const long r = long(s->size() / size_t(dim));
        rows += r;
        for (long i = 0; i < r; ++i) {
            const float* f = s->data() + size_t(i) * dim;
            for (int c = 0; c < dim; ++c) {
                sum[size_t(c)] += f[c];
                sumsq[size_t(c)] += double(f[c]) * f[c];
            }
        }
    }
    check(rows > 0, "compute_norm_stats: no data");
    NormStats st;
    st.mean.assign(size_t(dim), 0.0f);
    st.std.assign(size_t(dim), 1.0f);
    for (int c = 0; c < dim; ++c) {
        const double m = sum[size_t(c)] / double(rows);
        double var = sumsq[size_t(c)] / double(rows) - m * m;
        var = std::max(var, 0.0);
        st.mean[size_t(c)] = float(m);
        const double sd = std::sqrt(var);
        st.std[size_t(c)] = sd < 1e-6 ? 1.0f : float(sd);
    }
    return st;
}

inline std::vector<float> normalize(const std::vector<float>& stream, const NormStats& st) {
    check(st.dim() > 0 && stream.size() % size_t(st.dim()) == 0,
          "normalize: stats dim " + std::to_string(st.dim()) +
              " does not divide stream size " + std::to_string(stream.size()));
    std::vector<float> out(stream.size());
    const int d = st.dim();
    const long rows = long(stream.size() / size_t(d));
    for (long i = 0; i < rows; ++i)
        for (int c = 0; c < d; ++c)
            out[size_t(i) * d + size_t(c)] =
                (stream[size_t(i) * d + size_t(c)] - st.mean[size_t(c)]) / st.std[size_t(c)];
    return out;
}

inline std::vector<float> denormalize(const std::vector<float>& stream, const NormStats& st) {
    check(st.dim() > 0 && stream.size() % size_t(st.dim()) == 0,
          "denormalize: stats dim " + std::to_string(st.dim()) +
              " does not divide stream size " + std::to_string(stream.size()));
    std::vector<float> out(stream.size());
    const int d = st.dim();
    const long rows = long(stream.size() / size_t(d));
    for (long i = 0; i < rows; ++i)
        for (int c = 0; c < d; ++c)
            out[size_t(i) * d + size_t(c)] =
                stream[size_t(i) * d + size_t(c)] * st.std[size_t(c)] + st.mean[size_t(c)];
    return out;
}

// ----------------------------- world-frame transforms -----------------------------

// Rigid yaw rotation about the origin followed by an XZ translation, applied
// to the world-frame channels; local features are untouched.
inline void transform_clip_stream(std::vector<float>& stream, int n_joints, float yaw,
                                  float dx, float dz) {
    const NonCanonicalLayout lay{n_joints};
    check(stream.size() % size_t(lay.dim()) == 0, "transform_clip_stream: size mismatch");
    const long frames = long(stream.size() / size_t(lay.dim()));
    for (long i = 0; i < frames; ++i) {
        float* f = stream.data() + size_t(i) * lay.dim();
        for (int j = 0; j < n_joints; ++j) {
            float px = 0.0f, pz = 0.0f;
            detail::rotate_xz(yaw, f[lay.pos(j)], f[lay.pos(j) + 2], px, pz);
            f[lay.pos(j)] = px + dx;
            f[lay.pos(j) + 2] = pz + dz;
            float vx = 0.0f, vz = 0.0f;
            detail::rotate_xz(yaw, f[lay.vel(j)], f[lay.vel(j) + 2], vx, vz);
            f[lay.vel(j)] = vx;
            f[lay.vel(j) + 2] = vz;
        }
    }
}

// ----------------------------- IHC1 clip files -----------------------------
// Structured-text header followed by two raw little-endian float32 blobs
// (person a, then person b). Round trips are bit-exact.

inline void save_clip(const InteractionClip& clip, const std::string& path) {
    clip.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_runtime("save_clip: cannot open " + path);
    os << "IHC1\n";
    os << "version 1\n";
    os << "fps " << clip.fps << "\n";
    os << "n_joints " << clip.n_joints << "\n";
    os << "length " << clip.length << "\n";
    os << "label " << (clip.label.empty() ? "none" : clip.label) << "\n";
    os << "text " << clip.text << "\n";
    os << "skeleton " << (clip.skeleton_ref.empty() ? "body22" : clip.skeleton_ref) << "\n";
    os << "data\n";
    write_f32_blob(os, clip.person_a.data(), clip.person_a.size());
    write_f32_blob(os, clip.person_b.data(), clip.person_b.size());
    if (!os) fail_runtime("save_clip: write failed for " + path);
}

// Canonical variant of the clip file: same header plus "repr canonical" and
// the frame-0 root anchors needed to re-enter the world frame.
struct CanonicalClipFile {
    int fps = kDefaultFps;
    std::string label, text, skeleton_ref;
    CanonicalSeq person_a, person_b;
    InitPose init_a, init_b;
};

inline void save_canonical_clip(const CanonicalClipFile& c, const std::string& path) {
    check(c.person_a.length == c.person_b.length && c.person_a.length >= 2,
          "save_canonical_clip: bad stream lengths");
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_runtime("save_canonical_clip: cannot open " + path);
    os << "IHC1\n";
    os << "version 1\n";
    os << "fps " << c.fps << "\n";
    os << "n_joints " << c.person_a.n_joints << "\n";
    os << "length " << c.person_a.length << "\n";
    os << "repr canonical\n";
    os << "init_a " << c.init_a.yaw << " " << c.init_a.x << " " << c.init_a.z << "\n";
    os << "init_b " << c.init_b.yaw << " " << c.init_b.x << " " << c.init_b.z << "\n";
    os << "label " << (c.label.empty() ? "none" : c.label) << "\n";
    os << "text " << c.text << "\n";
    os << "skeleton " << (c.skeleton_ref.empty() ? "body22" : c.skeleton_ref) << "\n";
    os << "data\n";
    write_f32_blob(os, c.person_a.data.data(), c.person_a.data.size());
    write_f32_blob(os, c.person_b.data.data(), c.person_b.data.size());
    if (!os) fail_runtime("save_canonical_clip: write failed for " + path);
}

inline CanonicalClipFile load_canonical_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_runtime("load_canonical_clip: cannot open " + path);
    std::string line;
    check(std::getline(is, line) && line == "IHC1", "load_canonical_clip: bad magic");
    CanonicalClipFile c;
    int n_joints = 0, length = 0;
    bool canonical = false, saw_data = false;
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
            check(v == 1, "load_canonical_clip: unsupported version");
        } else if (key == "fps") {
            ls >> c.fps;
        } else if (key == "n_joints") {
            ls >> n_joints;
        } else if (key == "length") {
            ls >> length;
        } else if (key == "repr") {
            std::string r;
            ls >> r;
            canonical = r == "canonical";
        } else if (key == "init_a") {
            ls >> c.init_a.yaw >> c.init_a.x >> c.init_a.z;
        } else if (key == "init_b") {
            ls >> c.init_b.yaw >> c.init_b.x >> c.init_b.z;
        } else if (key == "label") {
            ls >> c.label;
        } else if (key == "text") {
            if (line.size() > 5) c.text = line.substr(5);
        } else if (key == "skeleton") {
            ls >> c.skeleton_ref;
        } else {
            fail("load_canonical_clip: unknown header key '" + key + "'");
        }
    }
    check(saw_data && canonical, "load_canonical_clip: not a canonical clip file");
    for (auto* seq : {&c.person_a, &c.person_b}) {
        seq->n_joints = n_joints;
        seq->length = length;
        seq->data.assign(size_t(length) * size_t(seq->layout().dim()), 0.0f);
        read_f32_blob(is, seq->data.data(), seq->data.size());
    }
    return c;
}

inline InteractionClip load_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_runtime("load_clip: cannot open " + path);
    std::string line;
    check(std::getline(is, line) && line == "IHC1", "load_clip: bad magic in " + path);
    InteractionClip clip;
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
            int v = 0;
            ls >> v;
            check(v == 1, "load_clip: unsupported version");
        } else if (key == "repr") {
            std::string r;
            ls >> r;
            check(r == "noncanonical",
                  "load_clip: " + path + " holds a " + r +
                      " clip; convert it to the world-frame form first");
        } else if (key == "fps") {
            ls >> clip.fps;
        } else if (key == "n_joints") {
            ls >> clip.n_joints;
        } else if (key == "length") {
            ls >> clip.length;
        } else if (key == "label") {
            ls >> clip.label;
        } else if (key == "text") {
            if (line.size() > 5) clip.text = line.substr(5);
        } else if (key == "skeleton") {
            ls >> clip.skeleton_ref;
        } else {
            fail("load_clip: unknown header key '" + key + "'");
        }
    }
    check(saw_data, "load_clip: missing data section in " + path);
    const size_t count = size_t(clip.length) * size_t(clip.dim());
    clip.person_a.assign(count, 0.0f);
    clip.person_b.assign(count, 0.0f);
    read_f32_blob(is, clip.person_a.data(), count);
    read_f32_blob(is, clip.person_b.data(), count);
    clip.validate();
    return clip;
}

}  // namespace duet

#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/kinematics.hpp"
#include "duet/repr.hpp"

// Procedural two-person interaction generator, augmentation, and dataset
// splits. Poses are driven through forward kinematics so generated clips are
// bone-consistent by construction; the root height is solved per frame so the
// lowest foot joint rests at a small ground clearance.
//
// Families ship with contrasting inter-person distance and relative-heading
// signatures: "circle" keeps a constant wide separation, "approach-retreat"
// ramps the distance down and back up, "mirror-wave" is a facing pair with a
// mirrored arm gesture, "push-pull" oscillates at contact range.

namespace duet {

// ----------------------------- condition labels -----------------------------

enum Family : int {
    kFamilyCircle = 0,
    kFamilyApproachRetreat = 1,
    kFamilyMirrorWave = 2,
    kFamilyPushPull = 3,
};

constexpr int kNumFamilies = 4;

inline const std::string& family_name(int family) {
    static const std::vector<std::string> names = {"circle", "approach-retreat",
                                                   "mirror-wave", "push-pull"};
    check(family >= 0 && family < kNumFamilies, "family_name: unknown family id");
    return names[size_t(family)];
}

inline int family_id(const std::string& name) {
    for (int f = 0; f < kNumFamilies; ++f)
        if (family_name(f) == name) return f;
    fail("family_id: unknown family '" + name + "'");
}

// Label registry for the condition pathway. The trainable embedding rows live
// in the network weights; the null condition is the zero vector and has no
// stored row, so it can never be updated.
struct ConditionCodebook {
    int n_labels = kNumFamilies;

    const std::string& name(int id) const { return family_name(id); }
    int id(const std::string& name) const { return family_id(name); }
};

// ----------------------------- generator parameters -----------------------------

struct GenParams {
    float radius = 1.0f;        // circle: path radius (m)
    float start_dist = 2.6f;    // approach-retreat: initial separation (m)
    float min_dist = 0.7f;      // approach-retreat: closest allowed separation (m)
    float stand_dist = 0.9f;    // mirror-wave / push-pull: separation (m)
    float gait_amp = 0.38f;     // hip swing amplitude (rad)
    float gait_freq = 0.36f;    // gait phase speed (rad/frame)
    float gesture_amp = 0.45f;  // arm swing amplitude (rad)
    float gesture_freq = 0.35f; // arm swing speed (rad/frame)
    float phase = 0.0f;         // starting phase (rad)
};

inline GenParams sample_params(int family, Rng& rng) {
    GenParams p;
    p.radius = rng.uniform_range(0.85f, 1.15f);
    p.start_dist = rng.uniform_range(2.2f, 3.0f);
    p.min_dist = rng.uniform_range(0.55f, 0.8f);
    p.stand_dist = family == kFamilyPushPull ? rng.uniform_range(0.6f, 0.85f)
                                             : rng.uniform_range(1.0f, 1.4f);
    p.gait_amp = rng.uniform_range(0.32f, 0.45f);
    p.gait_freq = rng.uniform_range(0.3f, 0.45f);
    p.gesture_amp = rng.uniform_range(0.3f, 0.6f);
    p.gesture_freq = rng.uniform_range(0.25f, 0.45f);
    p.phase = rng.uniform_range(0.0f, 2.0f * kPi);
    return p;
}

inline void check_params(int family, const GenParams& p) {
    auto in = [](float v, float lo, float hi, const char* what) {
        if (v < lo || v > hi)
            fail(std::string("generate: parameter ") + what + " = " + std::to_string(v) +
                 " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    };
    in(p.gait_amp, 0.1f, 0.6f, "gait_amp");
    in(p.gait_freq, 0.1f, 0.8f, "gait_freq");
    in(p.gesture_amp, 0.05f, 1.0f, "gesture_amp");
    in(p.gesture_freq, 0.05f, 0.8f, "gesture_freq");
    if (family == kFamilyCircle) in(p.radius, 0.5f, 2.0f, "radius");
    if (family == kFamilyApproachRetreat) {
        in(p.start_dist, 1.5f, 4.0f, "start_dist");
        in(p.min_dist, 0.4f, 1.0f, "min_dist");
    }
    if (family == kFamilyMirrorWave) in(p.stand_dist, 0.8f, 1.6f, "stand_dist");
    if (family == kFamilyPushPull) in(p.stand_dist, 0.5f, 1.0f, "stand_dist");
}

inline std::string condition_text(int family, const GenParams& p) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    switch (family) {
        case kFamilyCircle:
            os << "two people circle each other keeping about " << 2.0f * p.radius
               << " meters apart";
            break;
        case kFamilyApproachRetreat:
            os << "two people walk toward each other, pause close, then back away";
            break;
        case kFamilyMirrorWave:
            os << "two people face each other while one waves the left arm and the other "
                  "mirrors with the right";
            break;
        case kFamilyPushPull:
            os << "two people push and pull each other at arm's reach";
            break;
        default:
            fail("condition_text: unknown family");
    }
    return os.str();
}

// ----------------------------- puppet -----------------------------

namespace detail {

// Per-frame animation controls. Every animated joint takes one rotation about
// an axis orthogonal to its bone so positions stay exactly recoverable.
struct PuppetFrame {
    float x = 0.0f, z = 0.0f;  // root ground position
    float yaw = 0.0f;
    float hip_l = 0.0f, hip_r = 0.0f;            // forward leg swing (rad)
    float shoulder_z_l = 0.0f, shoulder_z_r = 0.0f;  // frontal-plane arm angle
    float shoulder_y_l = 0.0f, shoulder_y_r = 0.0f;  // forward arm angle
    float elbow_l = 0.0f, elbow_r = 0.0f;
};

constexpr float kGroundClearance = 0.005f;

// leg length hip->ankle for the stock body
inline float body_leg_length(const Skeleton& skel) {
    return skel.rest_offset[4].norm() + skel.rest_offset[7].norm();
}

// gait-consistent forward speed (m/frame): the planted leg's foot stays
// roughly world-stationary when the root advances this much
inline float gait_speed(float phase, float amp, float freq, float leg_len) {
    return freq * leg_len * amp * std::abs(std::cos(phase)) *
           std::cos(amp * std::sin(phase));
}

inline void pose_body(const Skeleton& skel, const PuppetFrame& f,
                      std::vector<Vec3>& positions, std::vector<Rot6D>& rotations) {
    std::vector<Rot6D> local(size_t(skel.n_joints), Rot6D::identity());
    local[1] = rot6d_from_matrix(Mat3::rot_x(-f.hip_l));
    local[2] = rot6d_from_matrix(Mat3::rot_x(-f.hip_r));
    auto shoulder = [](float about_z, float about_y) {
        // one axis at a time; forward pointing wins when requested
        if (std::abs(about_y) > 1e-6f) return rot6d_from_matrix(Mat3::rot_y(about_y));
        return rot6d_from_matrix(Mat3::rot_z(about_z));
    };
    local[16] = shoulder(f.shoulder_z_l, f.shoulder_y_l);
    local[17] = shoulder(f.shoulder_z_r, f.shoulder_y_r);
    local[18] = rot6d_from_matrix(Mat3::rot_z(f.elbow_l));
    local[19] = rot6d_from_matrix(Mat3::rot_z(-f.elbow_r));

    std::vector<Rot6D> world = local;
    world[0] = rot6d_from_matrix(Mat3::rot_y(f.yaw));
    positions = forward_kinematics(skel, {f.x, 2.0f, f.z}, world);
    float min_foot = 1e9f;
    for (int idx : skel.heel_toe) min_foot = std::min(min_foot, positions[size_t(idx)].y);
    const float dy = kGroundClearance - min_foot;
    for (auto& p : positions) p.y += dy;
    rotations = local;  // root entry stays heading-relative (identity)
}

inline void pose_chain(const Skeleton& skel, const PuppetFrame& f, float sway,
                       std::vector<Vec3>& positions, std::vector<Rot6D>& rotations) {
    std::vector<Rot6D> local(size_t(skel.n_joints), Rot6D::identity());
    local[1] = rot6d_from_matrix(Mat3::rot_x(sway));
    local[2] = rot6d_from_matrix(Mat3::rot_z(0.5f * sway));
    std::vector<Rot6D> world = local;
    world[0] = rot6d_from_matrix(Mat3::rot_y(f.yaw));
    positions = forward_kinematics(skel, {f.x, 1.0f, f.z}, world);
    float min_foot = 1e9f;
    for (int idx : skel.heel_toe) min_foot = std::min(min_foot, positions[size_t(idx)].y);
    const float dy = kGroundClearance - min_foot;
    for (auto& p : positions) p.y += dy;
    rotations = local;
}

inline bool is_body(const Skeleton& skel) { return skel.n_joints == 22; }

}  // namespace detail

// ----------------------------- clip generation -----------------------------

// Deterministic given (family, params, seed, length). Supports the 22-joint
// body and the 5-joint test chain.
inline InteractionClip generate(int family, const GenParams& p, uint64_t seed, int length,
                                const Skeleton& skel) {
    check(length >= 30 && length <= kMaxClipFrames,
          "generate: length " + std::to_string(length) + " outside [30, " +
              std::to_string(kMaxClipFrames) + "]");
    check_params(family, p);
    Rng rng(seed ^ (uint64_t(family) << 32));
    const float leg = detail::is_body(skel) ? detail::body_leg_length(skel) : 0.5f;

    std::vector<detail::PuppetFrame> fa(size_t(length), detail::PuppetFrame{});
    std::vector<detail::PuppetFrame> fb(size_t(length), detail::PuppetFrame{});
    const float arm_rest = -1.1f;  // arms hang near the body

    if (family == kFamilyCircle) {
        float alpha = rng.uniform_range(0.0f, 2.0f * kPi);
        float phase = p.phase;
        for (int i = 0; i < length; ++i) {
            const float s = detail::gait_speed(phase, p.gait_amp, p.gait_freq, leg);
            auto& A = fa[size_t(i)];
            auto& B = fb[size_t(i)];
            A.x = p.radius * std::sin(alpha);
            A.z = p.radius * std::cos(alpha);
            A.yaw = wrap_angle(alpha + 0.5f * kPi);
            B.x = -A.x;
            B.z = -A.z;
            B.yaw = wrap_angle(A.yaw + kPi);
            const float swing = p.gait_amp * std::sin(phase);
            A.hip_l = swing;
            A.hip_r = -swing;
            B.hip_l = swing;
            B.hip_r = -swing;
            A.shoulder_z_l = arm_rest + 0.12f * std::sin(phase);
            A.shoulder_z_r = -arm_rest + 0.12f * std::sin(phase);
            B.shoulder_z_l = A.shoulder_z_l;
            B.shoulder_z_r = A.shoulder_z_r;
            phase += p.gait_freq;
            alpha += s / p.radius;
        }
    } else if (family == kFamilyApproachRetreat) {
        float d = p.start_dist;
        float phase = p.phase;
        const int half = length / 2;
        for (int i = 0; i < length; ++i) {
            const bool approaching = i < half;
            float s = detail::gait_speed(phase, p.gait_amp, p.gait_freq, leg);
            const bool walking = approaching ? (d - 2.0f * s > p.min_dist) : true;
            if (!walking) s = 0.0f;
            d += approaching ? -2.0f * s : 2.0f * s;
            auto& A = fa[size_t(i)];
            auto& B = fb[size_t(i)];
            A.x = -0.5f * d;
            A.z = 0.0f;
            A.yaw = 0.5f * kPi;
            B.x = 0.5f * d;
            B.z = 0.0f;
            B.yaw = -0.5f * kPi;
            // swing flips while backing up so the planted foot stays put
            const float dir = approaching ? 1.0f : -1.0f;
            const float swing = walking ? dir * p.gait_amp * std::sin(phase) : 0.0f;
            A.hip_l = swing;
            A.hip_r = -swing;
            B.hip_l = swing;
            B.hip_r = -swing;
            A.shoulder_z_l = arm_rest;
            A.shoulder_z_r = -arm_rest;
            B.shoulder_z_l = arm_rest;
            B.shoulder_z_r = -arm_rest;
            if (walking) phase += p.gait_freq;
        }
    } else if (family == kFamilyMirrorWave) {
        const float d = p.stand_dist;
        for (int i = 0; i < length; ++i) {
            const float t = p.phase + p.gesture_freq * float(i);
            auto& A = fa[size_t(i)];
            auto& B = fb[size_t(i)];
            A.x = -0.5f * d;
            A.yaw = wrap_angle(0.5f * kPi + 0.02f * std::sin(0.1f * float(i)));
            B.x = 0.5f * d;
            B.yaw = wrap_angle(-0.5f * kPi + 0.02f * std::sin(0.1f * float(i) + 1.7f));
            const float wave = 0.9f + p.gesture_amp * std::sin(t);
            A.shoulder_z_l = wave;       // waving left arm
            A.shoulder_z_r = -arm_rest;  // right arm resting
            A.elbow_l = 0.3f + 0.2f * std::sin(t + 0.5f);
            B.shoulder_z_l = arm_rest;
            B.shoulder_z_r = -wave;      // mirrored: right arm waves
            B.elbow_r = 0.3f + 0.2f * std::sin(t + 0.5f);
        }
    } else if (family == kFamilyPushPull) {
        const float d = p.stand_dist;
        for (int i = 0; i < length; ++i) {
            const float t = p.phase + p.gesture_freq * float(i);
            const float shift = 0.3f * p.gesture_amp * std::sin(t);
            auto& A = fa[size_t(i)];
            auto& B = fb[size_t(i)];
            A.x = -0.5f * d + shift;
            A.yaw = 0.5f * kPi;
            B.x = 0.5f * d + shift;
            B.yaw = -0.5f * kPi;
            const float reach = 1.35f + 0.15f * std::sin(t);
            A.shoulder_y_l = -reach;  // both arms point at the partner
            A.shoulder_y_r = reach;
            B.shoulder_y_l = -reach;
            B.shoulder_y_r = reach;
        }
    } else {
        fail("generate: unknown family id " + std::to_string(family));
    }

    std::vector<std::vector<Vec3>> pos_a(size_t(length), std::vector<Vec3>{});
    std::vector<std::vector<Vec3>> pos_b(size_t(length), std::vector<Vec3>{});
    std::vector<std::vector<Rot6D>> rot_a(size_t(length), std::vector<Rot6D>{});
    std::vector<std::vector<Rot6D>> rot_b(size_t(length), std::vector<Rot6D>{});
    for (int i = 0; i < length; ++i) {
        if (detail::is_body(skel)) {
            detail::pose_body(skel, fa[size_t(i)], pos_a[size_t(i)], rot_a[size_t(i)]);
            detail::pose_body(skel, fb[size_t(i)], pos_b[size_t(i)], rot_b[size_t(i)]);
        } else {
            const float sway = 0.2f * std::sin(p.gesture_freq * float(i) + p.phase);
            detail::pose_chain(skel, fa[size_t(i)], sway, pos_a[size_t(i)], rot_a[size_t(i)]);
            detail::pose_chain(skel, fb[size_t(i)], -sway, pos_b[size_t(i)], rot_b[size_t(i)]);
        }
    }

    InteractionClip clip;
    clip.n_joints = skel.n_joints;
    clip.fps = kDefaultFps;
    clip.length = length;
    clip.label = family_name(family);
    clip.text = condition_text(family, p);
    clip.skeleton_ref = skel.name.empty() ? "body22" : skel.name;
    clip.person_a = encode_noncanonical(pos_a, rot_a, skel);
    clip.person_b = encode_noncanonical(pos_b, rot_b, skel);
    clip.validate();
    return clip;
}

// Constant-velocity straight-line pair, used by the drift study: heading
// fixed, so integrated yaw noise bends the whole remaining path coherently.
inline InteractionClip straight_walk_clip(const Skeleton& skel, int length, float speed,
                                          uint64_t seed = 0) {
    check(length >= 2 && length <= kMaxClipFrames, "straight_walk_clip: bad length");
    Rng rng(seed);
    std::vector<Rot6D> rots(size_t(skel.n_joints), Rot6D::identity());
    std::vector<std::vector<Vec3>> pa(size_t(length), std::vector<Vec3>{});
    std::vector<std::vector<Vec3>> pb(size_t(length), std::vector<Vec3>{});
    std::vector<std::vector<Rot6D>> ra(size_t(length), rots), rb(size_t(length), rots);
    const float height = detail::is_body(skel) ? 0.95f : 1.0f;
    for (int i = 0; i < length; ++i) {
        pa[size_t(i)] = forward_kinematics(skel, {-0.8f, height, speed * float(i)}, rots);
        pb[size_t(i)] = forward_kinematics(skel, {0.8f, height, speed * float(i)}, rots);
    }
    InteractionClip clip;
    clip.n_joints = skel.n_joints;
    clip.length = length;
    clip.label = "none";
    clip.text = "two people walk side by side in a straight line";
    clip.skeleton_ref = skel.name;
    clip.person_a = encode_noncanonical(pa, ra, skel);
    clip.person_b = encode_noncanonical(pb, rb, skel);
    return clip;
}

// ----------------------------- augmentation -----------------------------

namespace detail {

inline void swap_channels(float* f, int off_a, int off_b, int count) {
    for (int k = 0; k < count; ++k) std::swap(f[off_a + k], f[off_b + k]);
}

}  // namespace detail

// X-mirror of one stream: negate X of positions/velocities, conjugate the
// local rotations by the reflection, swap left/right joint blocks and the
// left/right contact channels.
inline void mirror_stream_inplace(std::vector<float>& stream, const Skeleton& skel) {
    const NonCanonicalLayout lay{skel.n_joints};
    check(stream.size() % size_t(lay.dim()) == 0, "mirror_stream: size mismatch");
    const long frames = long(stream.size() / size_t(lay.dim()));
    for (long i = 0; i < frames; ++i) {
        float* f = stream.data() + size_t(i) * lay.dim();
        for (int j = 0; j < skel.n_joints; ++j) {
            f[lay.pos(j)] = -f[lay.pos(j)];
            f[lay.vel(j)] = -f[lay.vel(j)];
            // R' = S R S with S = diag(-1, 1, 1) applied to the stored columns
            f[lay.rot(j) + 1] = -f[lay.rot(j) + 1];
            f[lay.rot(j) + 2] = -f[lay.rot(j) + 2];
            f[lay.rot(j) + 3] = -f[lay.rot(j) + 3];
        }
        for (auto [l, r] : skel.lr_pairs) {
            detail::swap_channels(f, lay.pos(l), lay.pos(r), 3);
            detail::swap_channels(f, lay.vel(l), lay.vel(r), 3);
            detail::swap_channels(f, lay.rot(l), lay.rot(r), 6);
        }
        detail::swap_channels(f, lay.contacts() + 0, lay.contacts() + 1, 1);
        detail::swap_channels(f, lay.contacts() + 2, lay.contacts() + 3, 1);
    }
}

inline std::string mirror_text(const std::string& text) {
    std::string out;
    std::istringstream is(text);
    std::string word;
    bool first = true;
    while (is >> word) {
        if (!first) out += ' ';
        if (word == "left")
            out += "right";
        else if (word == "right")
            out += "left";
        else
            out += word;
        first = false;
    }
    return out;
}

// original, X-mirrored, person-swapped, mirrored + swapped
inline std::vector<InteractionClip> augment(const InteractionClip& clip,
                                            const Skeleton& skel) {
    InteractionClip mirrored = clip;
    mirror_stream_inplace(mirrored.person_a, skel);
    mirror_stream_inplace(mirrored.person_b, skel);
    mirrored.text = mirror_text(clip.text);
    return {clip, mirrored, clip.swapped(), mirrored.swapped()};
}

// ----------------------------- splits & corpus -----------------------------

// Deterministic source-level split; every augmented variant of a source lands
// in the same split. Returns one of {0 train, 1 val, 2 test} per source.
// Rounded counts are nudged so no requested split comes out empty.
inline std::vector<int> split_sources(int n_sources, std::array<float, 3> ratios,
                                      uint64_t seed) {
    const float sum = ratios[0] + ratios[1] + ratios[2];
    check(std::abs(sum - 1.0f) < 1e-5f, "split_sources: ratios must sum to 1");
    std::vector<int> ids(size_t(n_sources), 0);
    for (int i = 0; i < n_sources; ++i) ids[size_t(i)] = i;
    Rng rng(seed);
    rng.shuffle(ids);
    int n_train = int(std::lround(double(ratios[0]) * n_sources));
    int n_val = int(std::lround(double(ratios[1]) * n_sources));
    if (ratios[1] > 0.0f && n_val == 0 && n_sources >= 3) n_val = 1;
    int n_test = n_sources - n_train - n_val;
    if (ratios[2] > 0.0f && n_test <= 0 && n_sources >= 3) {
        n_train -= 1 - n_test;
        n_test = 1;
    }
    check(n_train >= 1 && n_train + n_val <= n_sources, "split_sources: degenerate split");
    std::vector<int> split(size_t(n_sources), 2);
    for (int k = 0; k < n_sources; ++k) {
        if (k < n_train)
            split[size_t(ids[size_t(k)])] = 0;
        else if (k < n_train + n_val)
            split[size_t(ids[size_t(k)])] = 1;
    }
    return split;
}

struct Corpus {
    Skeleton skeleton;
    std::vector<InteractionClip> clips;
    std::vector<int> split;      // per clip: 0 train, 1 val, 2 test
    std::vector<int> source_id;  // per clip

    std::vector<int> indices_of(int which) const {
        std::vector<int> out;
        for (size_t i = 0; i < clips.size(); ++i)
            if (split[i] == which) out.push_back(int(i));
        return out;
    }
};

// n_sources source clips (families round-robin), each augmented 4x.
inline Corpus build_corpus(const Skeleton& skel, int n_sources, int length, uint64_t seed,
                           std::array<float, 3> ratios = {0.8f, 0.05f, 0.15f}) {
    check(n_sources >= kNumFamilies, "build_corpus: need at least one source per family");
    Corpus corpus;
    corpus.skeleton = skel;
    const std::vector<int> src_split = split_sources(n_sources, ratios, seed);
    Rng rng(seed ^ 0xC0FFEEull);
    for (int s = 0; s < n_sources; ++s) {
        const int family = s % kNumFamilies;
        const GenParams params = sample_params(family, rng);
        const InteractionClip base = generate(family, params, rng.next_u64(), length, skel);
        for (auto& variant : augment(base, skel)) {
            corpus.clips.push_back(std::move(variant));
            corpus.split.push_back(src_split[size_t(s)]);
            corpus.source_id.push_back(s);
        }
    }
    return corpus;
}

// ----------------------------- manifest IO -----------------------------

struct ManifestEntry {
    std::string file;
    std::string label;
    std::string split;  // train | val | test
    std::string text;
};

struct Manifest {
    std::string skeleton_file;
    std::vector<ManifestEntry> entries;
};

inline const char* split_name(int split) {
    return split == 0 ? "train" : split == 1 ? "val" : "test";
}

inline std::string manifest_to_text(const Manifest& m) {
    std::ostringstream os;
    os << "# clip\tlabel\tsplit\ttext\n";
    os << "skeleton\t" << m.skeleton_file << "\n";
    for (const auto& e : m.entries)
        os << e.file << "\t" << e.label << "\t" << e.split << "\t" << e.text << "\n";
    return os.str();
}

inline Manifest manifest_from_text(const std::string& text) {
    Manifest m;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() == 2 && fields[0] == "skeleton") {
            m.skeleton_file = fields[1];
            continue;
        }
        check(fields.size() == 4, "manifest: malformed line '" + line + "'");
        m.entries.push_back({fields[0], fields[1], fields[2], fields[3]});
    }
    return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
    write_text_file(path, manifest_to_text(m));
}

inline Manifest load_manifest(const std::string& path) {
    return manifest_from_text(read_text_file(path));
}

}  // namespace duet

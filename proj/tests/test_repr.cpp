#include <catch2/catch_amalgamated.hpp>

#include "duet/repr.hpp"
#include "duet/synth.hpp"

#include <cstdio>
#include <filesystem>

using namespace duet;

namespace {

// static standing clip with both persons apart
InteractionClip static_clip(const Skeleton& skel, int length) {
    std::vector<Rot6D> rots(size_t(skel.n_joints), Rot6D::identity());
    auto world = rots;
    const auto pose_a = forward_kinematics(skel, {0.0f, 0.95f, -1.0f}, world);
    const auto pose_b = forward_kinematics(skel, {0.0f, 0.95f, 1.0f}, world);
    std::vector<std::vector<Vec3>> pa(size_t(length), pose_a), pb(size_t(length), pose_b);
    std::vector<std::vector<Rot6D>> ra(size_t(length), rots), rb(size_t(length), rots);
    InteractionClip clip;
    clip.n_joints = skel.n_joints;
    clip.length = length;
    clip.label = "none";
    clip.text = "two people stand still";
    clip.skeleton_ref = skel.name;
    clip.person_a = encode_noncanonical(pa, ra, skel);
    clip.person_b = encode_noncanonical(pb, rb, skel);
    return clip;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    float m = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("flattened state dimensions match the field sums", "[repr]") {
    CHECK(NonCanonicalLayout{22}.dim() == 268);
    CHECK(CanonicalLayout{22}.dim() == 276);
    CHECK(NonCanonicalLayout{5}.dim() == 64);
    CHECK(CanonicalLayout{5}.dim() == 72);
}

TEST_CASE("static pose encodes to zero velocities and full contacts", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = static_clip(skel, 8);
    const auto lay = clip.layout();
    for (int i = 0; i < clip.length; ++i) {
        const MotionState s = clip.state(0, i);
        for (int j = 0; j < skel.n_joints; ++j) CHECK(s.velocity(j).norm() == 0.0f);
        for (int k = 0; k < 4; ++k) CHECK(s.contact(k) == 1.0f);
    }
    (void)lay;
}

TEST_CASE("constant-velocity translation encodes that velocity everywhere", "[repr]") {
    const Skeleton skel = Skeleton::chain5();
    std::vector<Rot6D> rots(5, Rot6D::identity());
    const Vec3 v{0.03f, 0.0f, -0.01f};
    std::vector<std::vector<Vec3>> frames;
    std::vector<std::vector<Rot6D>> rlist;
    for (int i = 0; i < 6; ++i) {
        frames.push_back(forward_kinematics(skel, Vec3{0, 1, 0} + v * float(i), rots));
        rlist.push_back(rots);
    }
    const auto stream = encode_noncanonical(frames, rlist, skel);
    const NonCanonicalLayout lay{5};
    for (int i = 0; i < 6; ++i) {
        MotionState s{stream.data() + size_t(i) * lay.dim(), lay};
        for (int j = 0; j < 5; ++j) {
            CHECK(s.velocity(j).x == Catch::Approx(v.x).margin(1e-6));
            CHECK(s.velocity(j).y == Catch::Approx(v.y).margin(1e-6));
            CHECK(s.velocity(j).z == Catch::Approx(v.z).margin(1e-6));
        }
    }
}

TEST_CASE("encoded positions are stored verbatim", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyCircle, GenParams{}, 5, 32, skel);
    const auto positions = decode_positions(clip.person_a, skel.n_joints);
    for (int i = 0; i < clip.length; ++i)
        for (int j = 0; j < skel.n_joints; ++j) {
            const Vec3 p = clip.state(0, i).position(j);
            CHECK(p.x == positions[size_t(i)][size_t(j)].x);
            CHECK(p.y == positions[size_t(i)][size_t(j)].y);
            CHECK(p.z == positions[size_t(i)][size_t(j)].z);
        }
}

TEST_CASE("bone-length violations are rejected with the deviation", "[repr]") {
    const Skeleton skel = Skeleton::chain5();
    std::vector<Rot6D> rots(5, Rot6D::identity());
    auto pose = forward_kinematics(skel, {0, 1, 0}, rots);
    std::vector<std::vector<Vec3>> frames(4, pose);
    frames[2][3].x += 0.1f;  // stretch one bone
    std::vector<std::vector<Rot6D>> rlist(4, rots);
    try {
        encode_noncanonical(frames, rlist, skel);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("bone lengths deviate") != std::string::npos);
    }
}

TEST_CASE("velocities equal forward position differences on encoded data", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyApproachRetreat, GenParams{}, 11, 40, skel);
    for (int person = 0; person < 2; ++person)
        for (int i = 0; i + 1 < clip.length; ++i) {
            const MotionState s0 = clip.state(person, i);
            const MotionState s1 = clip.state(person, i + 1);
            for (int j = 0; j < skel.n_joints; ++j) {
                const Vec3 diff = s1.position(j) - s0.position(j);
                CHECK((s0.velocity(j) - diff).norm() < 1e-5f);
            }
        }
}

TEST_CASE("static canonical encoding has zero root velocities", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = static_clip(skel, 6);
    const auto [ca, cb] = encode_canonical(clip, skel);
    const auto base_t = ca.state(0).rel_trans();
    for (int i = 0; i < 6; ++i) {
        const CanonicalState s = ca.state(i);
        CHECK(s.root_ang_vel() == Catch::Approx(0.0).margin(1e-6));
        CHECK(s.root_vel_x() == Catch::Approx(0.0).margin(1e-6));
        CHECK(s.root_vel_z() == Catch::Approx(0.0).margin(1e-6));
        CHECK(s.rel_trans()[0] == Catch::Approx(base_t[0]).margin(1e-5));
        CHECK(s.rel_trans()[1] == Catch::Approx(base_t[1]).margin(1e-5));
    }
}

TEST_CASE("a person rotating in place encodes a constant yaw rate", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const float omega = 0.05f;
    std::vector<std::vector<Vec3>> pa, pb;
    std::vector<std::vector<Rot6D>> ra, rb;
    std::vector<Rot6D> rots(22, Rot6D::identity());
    for (int i = 0; i < 12; ++i) {
        auto world = rots;
        world[0] = rot6d_from_matrix(Mat3::rot_y(omega * float(i)));
        pa.push_back(forward_kinematics(skel, {0, 0.95f, -1}, world));
        pb.push_back(forward_kinematics(skel, {0, 0.95f, 1}, rots));
        ra.push_back(rots);
        rb.push_back(rots);
    }
    InteractionClip clip;
    clip.n_joints = 22;
    clip.length = 12;
    clip.person_a = encode_noncanonical(pa, ra, skel);
    clip.person_b = encode_noncanonical(pb, rb, skel);
    const CanonicalSeq seq = encode_canonical_stream(clip, 0, skel);
    for (int i = 0; i + 1 < 12; ++i)
        CHECK(seq.state(i).root_ang_vel() == Catch::Approx(omega).margin(1e-4));
}

TEST_CASE("canonical decode of zero velocities stays at the initial pose", "[repr]") {
    CanonicalSeq seq;
    seq.n_joints = 5;
    seq.length = 10;
    seq.data.assign(size_t(10) * seq.layout().dim(), 0.0f);
    for (int i = 0; i < 10; ++i) seq.frame(i)[seq.layout().root_height()] = 0.9f;
    const DecodedMotion dec = decode_canonical(seq, {0.3f, 1.0f, -2.0f});
    for (int i = 0; i < 10; ++i) {
        CHECK(dec.positions[size_t(i)][0].x == Catch::Approx(1.0).margin(1e-6));
        CHECK(dec.positions[size_t(i)][0].z == Catch::Approx(-2.0).margin(1e-6));
        CHECK(dec.yaw[size_t(i)] == Catch::Approx(0.3).margin(1e-6));
    }
}

TEST_CASE("constant root velocity integrates exactly along the initial facing", "[repr]") {
    CanonicalSeq seq;
    seq.n_joints = 5;
    seq.length = 101;
    seq.data.assign(size_t(101) * seq.layout().dim(), 0.0f);
    for (int i = 0; i < 101; ++i) seq.frame(i)[seq.layout().root_vel_x()] = 0.01f;
    const float yaw0 = 0.6f;
    const DecodedMotion dec = decode_canonical(seq, {yaw0, 0.0f, 0.0f});
    // root-frame +x maps to world (cos yaw, -sin yaw) on the XZ plane
    const Vec3 end = dec.positions[100][0];
    CHECK(std::sqrt(end.x * end.x + end.z * end.z) == Catch::Approx(1.0).margin(1e-4));
    CHECK(end.x == Catch::Approx(std::cos(yaw0)).margin(1e-4));
    CHECK(end.z == Catch::Approx(-std::sin(yaw0)).margin(1e-4));
}

TEST_CASE("canonical round trip stays within a millimeter over 300 frames", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(19);
    for (int family : {kFamilyCircle, kFamilyApproachRetreat}) {
        const GenParams p = sample_params(family, rng);
        const InteractionClip clip = generate(family, p, rng.next_u64(), 300, skel);
        const CanonicalSeq seq = encode_canonical_stream(clip, 0, skel);
        const InitPose init = initial_pose(clip, 0, skel);
        const DecodedMotion dec = decode_canonical(seq, init);
        float max_err = 0.0f;
        for (int i = 0; i < clip.length; ++i)
            for (int j = 0; j < skel.n_joints; ++j) {
                const Vec3 e = dec.positions[size_t(i)][size_t(j)] -
                               clip.state(0, i).position(j);
                max_err = std::max(max_err, e.norm());
            }
        INFO("family " << family_name(family));
        CHECK(max_err < 1e-3f);
    }
}

TEST_CASE("canonical to non-canonical conversion round trips", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyPushPull, GenParams{}, 23, 48, skel);
    const CanonicalSeq seq = encode_canonical_stream(clip, 0, skel);
    const auto back = canonical_to_noncanonical(seq, initial_pose(clip, 0, skel));
    const NonCanonicalLayout lay = clip.layout();
    float max_err = 0.0f;
    for (int i = 0; i < clip.length; ++i)
        for (int j = 0; j < skel.n_joints; ++j)
            for (int k = 0; k < 3; ++k)
                max_err = std::max(max_err,
                                   std::abs(back[size_t(i) * lay.dim() + size_t(lay.pos(j) + k)] -
                                            clip.person_a[size_t(i) * lay.dim() +
                                                          size_t(lay.pos(j) + k)]));
    CHECK(max_err < 1e-3f);
}

TEST_CASE("relative heading channels are unit norm", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyMirrorWave, GenParams{}, 3, 32, skel);
    const auto [ca, cb] = encode_canonical(clip, skel);
    for (int i = 0; i < clip.length; ++i) {
        const auto r = ca.state(i).rel_rot();
        CHECK(std::abs(r[0] * r[0] + r[1] * r[1] - 1.0f) < 1e-4f);
    }
}

TEST_CASE("drift is zero without noise", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyCircle, GenParams{}, 7, 120, skel);
    const DriftResult res = measure_drift(clip, skel, 0.0f, {30, 120}, 10, 1);
    for (float e : res.canonical_rms) CHECK(e < 1e-5f);
    for (float e : res.noncanonical_rms) CHECK(e < 1e-5f);
}

TEST_CASE("canonical drift grows with horizon, world-frame drift does not", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = straight_walk_clip(skel, 300, 0.04f);
    const DriftResult res = measure_drift(clip, skel, 0.001f, {30, 300}, 1000, 99);
    CHECK(res.canonical_rms[1] > res.canonical_rms[0]);
    CHECK(res.canonical_growth_fraction >= 0.95f);
    // horizon-flat within 10%
    const float ratio = res.noncanonical_rms[1] / res.noncanonical_rms[0];
    CHECK(ratio > 0.9f);
    CHECK(ratio < 1.1f);
}

TEST_CASE("normalization maps the mean vector to zero and round trips", "[repr]") {
    Rng rng(5);
    const int dim = 7;
    std::vector<float> stream(size_t(dim) * 50);
    for (auto& v : stream) v = rng.normal(2.0f, 3.0f);
    const NormStats st = compute_norm_stats({&stream}, dim);
    std::vector<float> mean_row(st.mean);
    const auto z = normalize(mean_row, st);
    for (float v : z) CHECK(std::abs(v) < 1e-5f);
    const auto round = denormalize(normalize(stream, st), st);
    CHECK(max_abs_diff(round, stream) < 1e-4f);
}

TEST_CASE("normalized training data has near-zero mean and unit spread", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const Corpus corpus = build_corpus(skel, 16, 32, 3);
    std::vector<const std::vector<float>*> streams;
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        if (corpus.split[i] != 0) continue;
        streams.push_back(&corpus.clips[i].person_a);
        streams.push_back(&corpus.clips[i].person_b);
    }
    const int dim = corpus.clips[0].dim();
    const NormStats st = compute_norm_stats(streams, dim);
    // re-normalize the same split and recompute the statistics
    std::vector<std::vector<float>> normed;
    for (const auto* s : streams) normed.push_back(normalize(*s, st));
    std::vector<const std::vector<float>*> nptrs;
    for (const auto& s : normed) nptrs.push_back(&s);
    const NormStats st2 = compute_norm_stats(nptrs, dim);
    for (int c = 0; c < dim; ++c) {
        CHECK(std::abs(st2.mean[size_t(c)]) < 1e-3f);
        const bool constant_channel = st.std[size_t(c)] == 1.0f && st2.std[size_t(c)] == 1.0f;
        if (!constant_channel) {
            CHECK(st2.std[size_t(c)] > 0.99f);
            CHECK(st2.std[size_t(c)] < 1.01f);
        }
    }
}

TEST_CASE("normalization rejects dimension mismatches", "[repr]") {
    NormStats st;
    st.mean.assign(4, 0.0f);
    st.std.assign(4, 1.0f);
    std::vector<float> stream(10, 0.0f);
    CHECK_THROWS_AS(normalize(stream, st), std::invalid_argument);
}

TEST_CASE("clip files round trip bit-exactly", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyCircle, GenParams{}, 77, 48, skel);
    const std::string path = (std::filesystem::temp_directory_path() / "duet_roundtrip.ihc").string();
    save_clip(clip, path);
    const InteractionClip back = load_clip(path);
    CHECK(back.length == clip.length);
    CHECK(back.n_joints == clip.n_joints);
    CHECK(back.fps == clip.fps);
    CHECK(back.label == clip.label);
    CHECK(back.text == clip.text);
    CHECK(back.skeleton_ref == clip.skeleton_ref);
    REQUIRE(back.person_a.size() == clip.person_a.size());
    for (size_t i = 0; i < clip.person_a.size(); ++i) {
        REQUIRE(back.person_a[i] == clip.person_a[i]);
        REQUIRE(back.person_b[i] == clip.person_b[i]);
    }
    // and the files themselves are byte-identical on rewrite
    const std::string path2 = path + ".2";
    save_clip(back, path2);
    CHECK(read_text_file(path) == read_text_file(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("world transforms leave canonical local features unchanged", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    InteractionClip clip = generate(kFamilyPushPull, GenParams{}, 13, 32, skel);
    const auto [ca, cb] = encode_canonical(clip, skel);
    InteractionClip moved = clip;
    const float yaw = 1.1f;
    transform_clip_stream(moved.person_a, skel.n_joints, yaw, 2.0f, -3.0f);
    transform_clip_stream(moved.person_b, skel.n_joints, yaw, 2.0f, -3.0f);
    const auto [ma, mb] = encode_canonical(moved, skel);
    CHECK(max_abs_diff(ca.data, ma.data) < 2e-4f);
    CHECK(max_abs_diff(cb.data, mb.data) < 2e-4f);
}

TEST_CASE("swapping persons swaps the encoded sequences exactly", "[repr]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyCircle, GenParams{}, 31, 32, skel);
    const InteractionClip swapped = clip.swapped();
    const auto [ca, cb] = encode_canonical(clip, skel);
    const auto [sa, sb] = encode_canonical(swapped, skel);
    CHECK(max_abs_diff(ca.data, sb.data) == 0.0f);
    CHECK(max_abs_diff(cb.data, sa.data) == 0.0f);
}

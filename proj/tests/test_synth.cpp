#include <catch2/catch_amalgamated.hpp>

#include "duet/synth.hpp"

#include <set>

using namespace duet;

namespace {

float root_xz_distance(const InteractionClip& clip, int frame) {
    const Vec3 a = clip.state(0, frame).position(0);
    const Vec3 b = clip.state(1, frame).position(0);
    const float dx = a.x - b.x, dz = a.z - b.z;
    return std::sqrt(dx * dx + dz * dz);
}

}  // namespace

TEST_CASE("circle pairs keep twice the radius apart", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    GenParams p;
    p.radius = 1.0f;
    const InteractionClip clip = generate(kFamilyCircle, p, 5, 60, skel);
    for (int i = 0; i < clip.length; ++i) {
        const float d = root_xz_distance(clip, i);
        CHECK(d > 2.0f * 0.99f);
        CHECK(d < 2.0f * 1.01f);
    }
}

TEST_CASE("circle distance variance is below one percent of its mean", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(9);
    const InteractionClip clip =
        generate(kFamilyCircle, sample_params(kFamilyCircle, rng), 4, 90, skel);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < clip.length; ++i) {
        const double d = root_xz_distance(clip, i);
        sum += d;
        sumsq += d * d;
    }
    const double mean = sum / clip.length;
    const double var = sumsq / clip.length - mean * mean;
    CHECK(std::sqrt(std::max(var, 0.0)) < 0.01 * mean);
}

TEST_CASE("mirror-wave pairs face each other", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyMirrorWave, GenParams{}, 8, 48, skel);
    for (int i = 0; i < clip.length; ++i) {
        const float ya = facing_yaw(skel, clip.state(0, i).positions());
        const float yb = facing_yaw(skel, clip.state(1, i).positions());
        const float rel = wrap_angle(yb - ya);
        CHECK(std::abs(std::abs(rel) - kPi) < 0.05f);
    }
}

TEST_CASE("approach-retreat dips under the interaction threshold and recovers", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(21);
    const GenParams p = sample_params(kFamilyApproachRetreat, rng);
    const InteractionClip clip = generate(kFamilyApproachRetreat, p, 6, 64, skel);
    float dmin = 1e9f;
    for (int i = 0; i < clip.length; ++i) dmin = std::min(dmin, root_xz_distance(clip, i));
    CHECK(dmin < 1.0f);
    CHECK(root_xz_distance(clip, clip.length - 1) > dmin + 0.3f);
}

TEST_CASE("push-pull stays at contact range", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyPushPull, GenParams{.stand_dist = 0.7f}, 2, 48, skel);
    for (int i = 0; i < clip.length; ++i) {
        CHECK(root_xz_distance(clip, i) > 0.5f);
        CHECK(root_xz_distance(clip, i) < 1.0f);
    }
}

TEST_CASE("identical seeds give bit-identical clips", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(2);
    const GenParams p = sample_params(kFamilyCircle, rng);
    const InteractionClip c1 = generate(kFamilyCircle, p, 42, 40, skel);
    const InteractionClip c2 = generate(kFamilyCircle, p, 42, 40, skel);
    REQUIRE(c1.person_a.size() == c2.person_a.size());
    for (size_t i = 0; i < c1.person_a.size(); ++i) {
        REQUIRE(c1.person_a[i] == c2.person_a[i]);
        REQUIRE(c1.person_b[i] == c2.person_b[i]);
    }
}

TEST_CASE("out-of-range parameters are rejected", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    GenParams p;
    p.radius = 5.0f;
    CHECK_THROWS_AS(generate(kFamilyCircle, p, 1, 40, skel), std::invalid_argument);
    GenParams q;
    CHECK_THROWS_AS(generate(kFamilyCircle, q, 1, 10, skel), std::invalid_argument);
}

TEST_CASE("generated feet never sink below the ground", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(33);
    for (int family = 0; family < kNumFamilies; ++family) {
        const auto p = sample_params(family, rng);
        const InteractionClip clip = generate(family, p, rng.next_u64(), 40, skel);
        for (int i = 0; i < clip.length; ++i)
            for (int person = 0; person < 2; ++person)
                for (int idx : skel.heel_toe)
                    CHECK(clip.state(person, i).position(idx).y >= 0.0f);
    }
}

TEST_CASE("walking clips alternate foot contacts with enough stance time", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    GenParams p;
    const InteractionClip clip = generate(kFamilyCircle, p, 10, 90, skel);
    const auto lay = clip.layout();
    int left = 0, right = 0, both_feet_swinging = 0;
    for (int i = 0; i < clip.length; ++i) {
        const float* f = clip.frame(0, i);
        const bool l = f[lay.contacts() + 0] > 0.5f || f[lay.contacts() + 2] > 0.5f;
        const bool r = f[lay.contacts() + 1] > 0.5f || f[lay.contacts() + 3] > 0.5f;
        left += l;
        right += r;
        both_feet_swinging += (!l && !r);
    }
    CHECK(left >= int(0.3f * clip.length));
    CHECK(right >= int(0.3f * clip.length));
    // walking keeps at least one foot planted almost always
    CHECK(both_feet_swinging < int(0.2f * clip.length));
    // the pattern alternates: neither foot is planted for the whole clip
    CHECK(left < clip.length);
    CHECK(right < clip.length);
}

TEST_CASE("mirroring twice reproduces the original bit-exactly", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyMirrorWave, GenParams{}, 3, 36, skel);
    auto variants = augment(clip, skel);
    REQUIRE(variants.size() == 4);
    InteractionClip twice = variants[1];
    mirror_stream_inplace(twice.person_a, skel);
    mirror_stream_inplace(twice.person_b, skel);
    for (size_t i = 0; i < clip.person_a.size(); ++i) {
        REQUIRE(twice.person_a[i] == clip.person_a[i]);
        REQUIRE(twice.person_b[i] == clip.person_b[i]);
    }
    CHECK(mirror_text(mirror_text(clip.text)) == clip.text);
}

TEST_CASE("mirrored text swaps left and right keywords", "[synth]") {
    CHECK(mirror_text("one waves the left arm") == "one waves the right arm");
    CHECK(mirror_text("right then left") == "left then right");
}

TEST_CASE("the person-swapped variant exchanges the two streams exactly", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyPushPull, GenParams{}, 4, 36, skel);
    const auto variants = augment(clip, skel);
    for (size_t i = 0; i < clip.person_a.size(); ++i) {
        REQUIRE(variants[2].person_a[i] == clip.person_b[i]);
        REQUIRE(variants[2].person_b[i] == clip.person_a[i]);
    }
}

TEST_CASE("mirrored clips keep the original bone lengths", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyCircle, GenParams{}, 12, 36, skel);
    const auto variants = augment(clip, skel);
    const auto orig = decode_positions(clip.person_a, skel.n_joints);
    const auto mirr = decode_positions(variants[1].person_a, skel.n_joints);
    for (int i = 0; i < clip.length; ++i) {
        const auto lo = bone_lengths(orig[size_t(i)], skel);
        const auto lm = bone_lengths(mirr[size_t(i)], skel);
        for (size_t b = 0; b < lo.size(); ++b) CHECK(std::abs(lo[b] - lm[b]) < 1e-5f);
    }
}

TEST_CASE("mirrored streams still encode as valid motion", "[synth]") {
    const Skeleton skel = Skeleton::body22();
    const InteractionClip clip = generate(kFamilyMirrorWave, GenParams{}, 9, 36, skel);
    const auto variants = augment(clip, skel);
    // bone-length precondition holds, so re-encoding from decoded positions works
    const auto pos = decode_positions(variants[1].person_a, skel.n_joints);
    const auto rest = bone_lengths(
        forward_kinematics(skel, {0, 0, 0}, std::vector<Rot6D>(22, Rot6D::identity())), skel);
    for (const auto& frame : pos) {
        const auto lens = bone_lengths(frame, skel);
        for (size_t b = 0; b < lens.size(); ++b)
            if (rest[b] > 1e-6f) CHECK(std::abs(lens[b] - rest[b]) / rest[b] < 0.001f);
    }
}

TEST_CASE("splits follow the requested ratios at source level", "[synth]") {
    const auto split = split_sources(100, {0.8f, 0.05f, 0.15f}, 7);
    int counts[3] = {0, 0, 0};
    for (int s : split) ++counts[s];
    CHECK(counts[0] == 80);
    CHECK(counts[1] == 5);
    CHECK(counts[2] == 15);
}

TEST_CASE("splits are deterministic and disjoint", "[synth]") {
    const auto s1 = split_sources(50, {0.8f, 0.05f, 0.15f}, 123);
    const auto s2 = split_sources(50, {0.8f, 0.05f, 0.15f}, 123);
    CHECK(s1 == s2);
    const auto s3 = split_sources(50, {0.8f, 0.05f, 0.15f}, 124);
    CHECK(s1 != s3);  // different seed shuffles differently (overwhelmingly likely)
}

TEST_CASE("split ratios rejected when they do not sum to one", "[synth]") {
    CHECK_THROWS_AS(split_sources(10, {0.5f, 0.1f, 0.1f}, 1), std::invalid_argument);
}

TEST_CASE("augmented variants of one source stay in one split", "[synth]") {
    const Skeleton skel = Skeleton::chain5();
    const Corpus corpus = build_corpus(skel, 12, 32, 5);
    CHECK(corpus.clips.size() == 48);
    for (size_t i = 0; i < corpus.clips.size(); ++i)
        for (size_t j = 0; j < corpus.clips.size(); ++j)
            if (corpus.source_id[i] == corpus.source_id[j])
                CHECK(corpus.split[i] == corpus.split[j]);
    // all three splits populated and disjoint by construction
    std::set<int> seen(corpus.split.begin(), corpus.split.end());
    CHECK(seen.size() == 3);
}

TEST_CASE("manifests round trip", "[synth]") {
    Manifest m;
    m.skeleton_file = "skeletons/body22.txt";
    m.entries.push_back({"clips/c0.ihc", "circle", "train", "two people circle each other"});
    m.entries.push_back({"clips/c1.ihc", "push-pull", "test", "push and pull at arm's reach"});
    const Manifest back = manifest_from_text(manifest_to_text(m));
    REQUIRE(back.entries.size() == 2);
    CHECK(back.skeleton_file == m.skeleton_file);
    CHECK(back.entries[0].file == m.entries[0].file);
    CHECK(back.entries[0].text == m.entries[0].text);
    CHECK(back.entries[1].label == m.entries[1].label);
    CHECK(back.entries[1].split == m.entries[1].split);
}

TEST_CASE("condition labels map both ways", "[synth]") {
    ConditionCodebook cb;
    for (int f = 0; f < kNumFamilies; ++f) CHECK(cb.id(cb.name(f)) == f);
    CHECK_THROWS_AS(family_id("unknown"), std::invalid_argument);
}

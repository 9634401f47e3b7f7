#include <catch2/catch_amalgamated.hpp>

#include "duet/editing.hpp"
#include "duet/synth.hpp"

using namespace duet;

namespace {

struct EditFixture {
    Skeleton skel = Skeleton::chain5();
    InteractionClip known;
    NormStats stats;
    Denoiser den;
    NoiseSchedule sched = cosine_schedule(1000);
    SamplerConfig cfg;

    EditFixture() : den(Denoiser()) {
        known = generate(kFamilyPushPull, GenParams{}, 3, 32, skel);
        stats = compute_norm_stats({&known.person_a, &known.person_b}, known.dim());
        DenoiserConfig dc;
        dc.n_joints = 5;
        dc.d_model = 16;
        dc.n_blocks = 1;
        dc.n_heads = 2;
        den = Denoiser::init(dc, 9);
        cfg.num_steps = 10;
    }

    InteractionClip run(const FreezeMask& mask, uint64_t seed,
                        std::optional<int> label = 1) const {
        return masked_sample(den.as_denoise_fn(), label, mask, known, cfg, sched, stats, seed);
    }
};

}  // namespace

TEST_CASE("a full-person mask covers exactly half the entries", "[editing]") {
    const FreezeMask m = mask_person(0, 10, 8);
    CHECK(m.count() == 10 * 8);
    const FreezeMask mb = mask_person(1, 10, 8);
    CHECK(mb.count() == 10 * 8);
    // the two person masks mirror each other
    for (size_t i = 0; i < m.person_a.size(); ++i) {
        CHECK(m.person_a[i] == mb.person_b[i]);
        CHECK(m.person_b[i] == mb.person_a[i]);
    }
}

TEST_CASE("inbetween masks freeze both ends and leave the middle", "[editing]") {
    const int L = 12, D = 4;
    const FreezeMask m = mask_inbetween(3, 4, L, D);
    for (int f = 0; f < L; ++f) {
        const bool frozen = f < 3 || f >= L - 4;
        for (int c = 0; c < D; ++c) {
            CHECK(int(m.person_a[size_t(f) * D + size_t(c)]) == int(frozen));
            CHECK(int(m.person_b[size_t(f) * D + size_t(c)]) == int(frozen));
        }
    }
    // boundary: exactly one free frame
    const FreezeMask tight = mask_inbetween(6, 5, 12, 2);
    CHECK(tight.count() == 2 * 11 * 2);
    CHECK_THROWS_AS(mask_inbetween(6, 6, 12, 2), std::invalid_argument);
}

TEST_CASE("full-freeze masked sampling reproduces the reference bit-exactly", "[editing]") {
    const EditFixture fx;
    FreezeMask all = FreezeMask::zeros(fx.known.length, fx.known.dim());
    std::fill(all.person_a.begin(), all.person_a.end(), uint8_t(1));
    std::fill(all.person_b.begin(), all.person_b.end(), uint8_t(1));
    const InteractionClip out = fx.run(all, 5);
    for (size_t i = 0; i < out.person_a.size(); ++i) {
        REQUIRE(out.person_a[i] == fx.known.person_a[i]);
        REQUIRE(out.person_b[i] == fx.known.person_b[i]);
    }
}

TEST_CASE("an empty mask reproduces the plain sampler bit-exactly", "[editing]") {
    const EditFixture fx;
    const FreezeMask none = FreezeMask::zeros(fx.known.length, fx.known.dim());
    const InteractionClip masked = fx.run(none, 21);
    const InteractionClip plain = sample_clip(fx.den.as_denoise_fn(), 1, "push-pull", "",
                                              fx.known.length, 21, fx.cfg, fx.sched, fx.stats,
                                              fx.skel.n_joints, fx.skel.name);
    for (size_t i = 0; i < masked.person_a.size(); ++i) {
        REQUIRE(masked.person_a[i] == plain.person_a[i]);
        REQUIRE(masked.person_b[i] == plain.person_b[i]);
    }
}

TEST_CASE("freezing one person pins them while the other varies by seed", "[editing]") {
    const EditFixture fx;
    const FreezeMask m = mask_person(0, fx.known.length, fx.known.dim());
    const InteractionClip s1 = fx.run(m, 100);
    const InteractionClip s2 = fx.run(m, 101);
    for (size_t i = 0; i < s1.person_a.size(); ++i) {
        REQUIRE(s1.person_a[i] == fx.known.person_a[i]);
        REQUIRE(s2.person_a[i] == fx.known.person_a[i]);
    }
    bool differs = false;
    for (size_t i = 0; i < s1.person_b.size(); ++i)
        differs = differs || s1.person_b[i] != s2.person_b[i];
    CHECK(differs);
}

TEST_CASE("trajectory masks pin the root path and free the rest", "[editing]") {
    const EditFixture fx;
    Trajectory traj;
    for (int f = 0; f < fx.known.length; ++f) {
        traj.x.push_back(0.1f * float(f));
        traj.z.push_back(-0.5f);
    }
    const auto [mask, known] = mask_trajectory(traj, std::nullopt, fx.known);
    const InteractionClip s1 = masked_sample(fx.den.as_denoise_fn(), 1, mask, known, fx.cfg,
                                             fx.sched, fx.stats, 7);
    const InteractionClip s2 = masked_sample(fx.den.as_denoise_fn(), 1, mask, known, fx.cfg,
                                             fx.sched, fx.stats, 8);
    const NonCanonicalLayout lay = fx.known.layout();
    for (int f = 0; f < s1.length; ++f) {
        const float* row = s1.person_a.data() + size_t(f) * lay.dim();
        CHECK(std::abs(row[lay.pos(0)] - 0.1f * float(f)) < 1e-3f);
        CHECK(std::abs(row[lay.pos(0) + 2] + 0.5f) < 1e-3f);
    }
    // non-root joints vary across seeds
    bool differs = false;
    for (int f = 0; f < s1.length; ++f)
        for (int j = 1; j < 5; ++j)
            for (int k = 0; k < 3; ++k) {
                const size_t idx = size_t(f) * size_t(lay.dim()) + size_t(lay.pos(j) + k);
                differs = differs || s1.person_a[idx] != s2.person_a[idx];
            }
    CHECK(differs);
}

TEST_CASE("zero-length trajectories are rejected", "[editing]") {
    const EditFixture fx;
    Trajectory empty;
    CHECK_THROWS_AS(mask_trajectory(empty, std::nullopt, fx.known), std::invalid_argument);
    Trajectory short_traj;
    short_traj.x = {0.0f, 1.0f};
    short_traj.z = {0.0f, 1.0f};
    CHECK_THROWS_AS(mask_trajectory(short_traj, std::nullopt, fx.known),
                    std::invalid_argument);
}

TEST_CASE("enlarging the mask never changes already-frozen entries", "[editing]") {
    const EditFixture fx;
    const FreezeMask small = mask_inbetween(4, 4, fx.known.length, fx.known.dim());
    const FreezeMask big = mask_inbetween(8, 8, fx.known.length, fx.known.dim());
    REQUIRE(small.subset_of(big));
    const InteractionClip s = fx.run(small, 55);
    const InteractionClip b = fx.run(big, 55);
    for (size_t i = 0; i < s.person_a.size(); ++i) {
        if (small.person_a[i]) REQUIRE(s.person_a[i] == b.person_a[i]);
        if (small.person_b[i]) REQUIRE(s.person_b[i] == b.person_b[i]);
    }
}

TEST_CASE("mask/reference shape mismatches are rejected", "[editing]") {
    const EditFixture fx;
    const FreezeMask wrong = FreezeMask::zeros(fx.known.length + 1, fx.known.dim());
    CHECK_THROWS_AS(fx.run(wrong, 1), std::invalid_argument);
}

TEST_CASE("mask spec files parse and build masks", "[editing]") {
    const std::string text =
        "maskspec\n"
        "ref clips/ref.ihc\n"
        "entry a 0 8 all\n"
        "entry b 4 12 root-xz-yaw\n";
    const MaskSpec spec = parse_mask_spec(text);
    CHECK(spec.reference == "clips/ref.ihc");
    REQUIRE(spec.entries.size() == 2);
    CHECK(spec.entries[0].channels == "all");
    CHECK(spec.entries[1].person == 1);

    const EditFixture fx;
    const auto [mask, known] = build_mask(spec, fx.known, std::nullopt, std::nullopt);
    const NonCanonicalLayout lay = fx.known.layout();
    CHECK(mask.person_a[0] == 1);
    CHECK(mask.person_a[size_t(8) * size_t(lay.dim())] == 0);
    CHECK(mask.person_b[size_t(4) * size_t(lay.dim()) + size_t(lay.pos(0))] == 1);
    CHECK(mask.person_b[size_t(4) * size_t(lay.dim()) + size_t(lay.rot(0))] == 0);
}

TEST_CASE("mask specs reject unknown keys and bad ranges", "[editing]") {
    CHECK_THROWS_AS(parse_mask_spec("maskspec\nbogus x\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_mask_spec("ref x\n"), std::invalid_argument);
    const EditFixture fx;
    MaskSpec spec;
    spec.reference = "r";
    spec.entries.push_back({0, 5, 200, "all"});
    CHECK_THROWS_AS(build_mask(spec, fx.known, std::nullopt, std::nullopt),
                    std::invalid_argument);
}

TEST_CASE("trajectory files parse x z and optional yaw columns", "[editing]") {
    const Trajectory t = parse_trajectory("# path\n0.0 1.0 0.5\n0.1 1.1 0.6\n");
    REQUIRE(t.size() == 2);
    CHECK(t.x[1] == Catch::Approx(0.1));
    CHECK(t.yaw[1] == Catch::Approx(0.6));
    CHECK_THROWS_AS(parse_trajectory("abc\n"), std::invalid_argument);
}

#include <catch2/catch_amalgamated.hpp>

#include "duet/kinematics.hpp"
#include "duet/common.hpp"

using namespace duet;

namespace {

// random pose whose rotations are recoverable from positions: heading-only
// root, minimal rotations at single-child joints, small arbitrary rotations
// where several children pin the fit
std::vector<Rot6D> random_twist_free_pose(const Skeleton& skel, Rng& rng, float amount,
                                          float* yaw_out = nullptr) {
    const auto ch = skel.children();
    std::vector<Rot6D> rots(size_t(skel.n_joints), Rot6D::identity());
    const float yaw = rng.uniform_range(-kPi, kPi);
    rots[0] = rot6d_from_matrix(Mat3::rot_y(yaw));
    if (yaw_out) *yaw_out = yaw;
    for (int j = 1; j < skel.n_joints; ++j) {
        if (ch[size_t(j)].empty()) continue;
        if (ch[size_t(j)].size() == 1) {
            const Vec3 rest = skel.rest_offset[size_t(ch[size_t(j)][0])];
            if (rest.norm() < 1e-6f) continue;
            Vec3 target = rest + Vec3{rng.normal(0, amount), rng.normal(0, amount),
                                      rng.normal(0, amount)} * rest.norm();
            rots[size_t(j)] = rot6d_from_matrix(rotation_between(rest, target));
        } else {
            const Vec3 axis = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
            rots[size_t(j)] = rot6d_from_matrix(Mat3::axis_angle(axis, rng.normal(0, amount)));
        }
    }
    return rots;
}

float max_position_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    float m = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).norm());
    return m;
}

}  // namespace

TEST_CASE("canonical 6d of the identity is the identity matrix", "[kinematics]") {
    Rot6D r;
    r.v = {1, 0, 0, 0, 1, 0};
    Mat3 m = matrix_from_rot6d(r);
    for (int i = 0; i < 9; ++i) CHECK(m.m[size_t(i)] == Catch::Approx(Mat3::identity().m[size_t(i)]).margin(1e-7));
}

TEST_CASE("6d of an orthonormal matrix is lossless", "[kinematics]") {
    Rng rng(4);
    for (int it = 0; it < 50; ++it) {
        const Vec3 axis = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
        const Mat3 r = Mat3::axis_angle(axis, rng.uniform_range(-kPi, kPi));
        const Mat3 back = matrix_from_rot6d(rot6d_from_matrix(r));
        for (int i = 0; i < 9; ++i) CHECK(std::abs(back.m[size_t(i)] - r.m[size_t(i)]) < 1e-5f);
    }
}

TEST_CASE("random 6d inputs orthonormalize with det +1", "[kinematics]") {
    Rng rng(12);
    for (int it = 0; it < 100; ++it) {
        Rot6D r;
        for (auto& x : r.v) x = rng.normal();
        Mat3 m;
        try {
            m = matrix_from_rot6d(r);
        } catch (const std::invalid_argument&) {
            continue;  // degenerate draw
        }
        const Mat3 mtm = m.transposed() * m;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(std::abs(mtm.m[size_t(i * 3 + j)] - (i == j ? 1.0f : 0.0f)) < 1e-5f);
        CHECK(m.det() == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("degenerate 6d inputs are rejected with a condition measure", "[kinematics]") {
    Rot6D zero;
    zero.v = {0, 0, 0, 0, 1, 0};
    CHECK_THROWS_AS(matrix_from_rot6d(zero), std::invalid_argument);
    Rot6D parallel;
    parallel.v = {1, 0, 0, 2, 0, 0};
    try {
        matrix_from_rot6d(parallel);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("parallel") != std::string::npos);
    }
}

TEST_CASE("fk with identity rotations accumulates rest offsets", "[kinematics]") {
    const Skeleton skel = Skeleton::chain5();
    std::vector<Rot6D> rots(5, Rot6D::identity());
    const Vec3 root{1.0f, 2.0f, 3.0f};
    const auto pos = forward_kinematics(skel, root, rots);
    Vec3 expect = root;
    CHECK(max_position_error({pos[0]}, {root}) < 1e-6f);
    for (int j = 1; j < 5; ++j) {
        expect += skel.rest_offset[size_t(j)];
        CHECK((pos[size_t(j)] - expect).norm() < 1e-6f);
    }
}

TEST_CASE("root yaw of pi reflects positions through the root in XZ", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    std::vector<Rot6D> rots(22, Rot6D::identity());
    const Vec3 root{0.5f, 0.9f, -0.25f};
    const auto base = forward_kinematics(skel, root, rots);
    rots[0] = rot6d_from_matrix(Mat3::rot_y(kPi));
    const auto flipped = forward_kinematics(skel, root, rots);
    for (int j = 0; j < 22; ++j) {
        const Vec3 d0 = base[size_t(j)] - root;
        const Vec3 d1 = flipped[size_t(j)] - root;
        CHECK(std::abs(d1.x + d0.x) < 1e-5f);
        CHECK(std::abs(d1.z + d0.z) < 1e-5f);
        CHECK(std::abs(d1.y - d0.y) < 1e-5f);
    }
}

TEST_CASE("fk preserves bone lengths on random poses", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(31);
    const auto ref = bone_lengths(forward_kinematics(skel, {0, 0, 0},
                                                     std::vector<Rot6D>(22, Rot6D::identity())),
                                  skel);
    for (int it = 0; it < 10; ++it) {
        auto rots = random_twist_free_pose(skel, rng, 0.3f);
        const auto pos = forward_kinematics(skel, {rng.normal(), 0.9f, rng.normal()}, rots);
        const auto lens = bone_lengths(pos, skel);
        for (size_t b = 0; b < lens.size(); ++b)
            CHECK(std::abs(lens[b] - ref[b]) < 1e-5f);
    }
}

TEST_CASE("bone lengths of rest pose equal rest offset norms and scale linearly",
          "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    auto pos = forward_kinematics(skel, {0, 0, 0}, std::vector<Rot6D>(22, Rot6D::identity()));
    auto lens = bone_lengths(pos, skel);
    for (int j = 1; j < 22; ++j)
        CHECK(lens[size_t(j - 1)] == Catch::Approx(skel.rest_offset[size_t(j)].norm()).margin(1e-6));
    for (auto& p : pos) p = p * 2.0f;
    auto scaled = bone_lengths(pos, skel);
    for (size_t b = 0; b < lens.size(); ++b)
        CHECK(scaled[b] == Catch::Approx(2.0f * lens[b]).margin(1e-5));
}

TEST_CASE("rest pose faces +Z with zero yaw", "[kinematics]") {
    for (const Skeleton& skel : {Skeleton::body22(), Skeleton::chain5()}) {
        const auto pos = forward_kinematics(
            skel, {0, 0.9f, 0}, std::vector<Rot6D>(size_t(skel.n_joints), Rot6D::identity()));
        CHECK(std::abs(facing_yaw(skel, pos)) < 1e-5f);
    }
}

TEST_CASE("yaw is equivariant under rigid yaw rotations and translation", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(41);
    for (int it = 0; it < 20; ++it) {
        auto rots = random_twist_free_pose(skel, rng, 0.2f);
        const auto pos = forward_kinematics(skel, {0, 0.9f, 0}, rots);
        const float yaw0 = facing_yaw(skel, pos);
        const float theta = rng.uniform_range(-kPi, kPi);
        const Mat3 r = Mat3::rot_y(theta);
        const Vec3 t{rng.normal(), 0.0f, rng.normal()};
        std::vector<Vec3> moved(pos.size());
        for (size_t i = 0; i < pos.size(); ++i) moved[i] = r * pos[i] + t;
        const float yaw1 = facing_yaw(skel, moved);
        CHECK(std::abs(wrap_angle(yaw1 - yaw0 - theta)) < 1e-4f);
    }
}

TEST_CASE("orientation extraction round-trips twist-free poses", "[kinematics]") {
    Rng rng(55);
    for (const Skeleton& skel : {Skeleton::body22(), Skeleton::chain5()}) {
        for (int it = 0; it < 20; ++it) {
            float yaw = 0.0f;
            auto rots = random_twist_free_pose(skel, rng, 0.25f, &yaw);
            const Vec3 root{rng.normal(), 0.9f, rng.normal()};
            const auto pos = forward_kinematics(skel, root, rots);
            const auto res = extract_orientation(skel, pos);
            CHECK(std::abs(wrap_angle(res.yaw - yaw)) < 1e-3f);
            auto rebuilt_rots = res.local_rots;
            rebuilt_rots[0] = compose_root_rotation(res.yaw, res.local_rots[0]);
            const auto rebuilt = forward_kinematics(skel, root, rebuilt_rots);
            CHECK(max_position_error(rebuilt, pos) < 1e-4f);
        }
    }
}

TEST_CASE("degenerate facing poses are rejected", "[kinematics]") {
    const Skeleton skel = Skeleton::chain5();
    // put the facing pair exactly on a vertical line
    std::vector<Vec3> pos(5, Vec3{0, 1, 0});
    pos[1] = {0, 0.5f, 0};
    CHECK_THROWS_AS(facing_yaw(skel, pos), std::invalid_argument);
}

TEST_CASE("static sequences are in contact everywhere", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    const auto pose = forward_kinematics(skel, {0, 0.9f, 0},
                                         std::vector<Rot6D>(22, Rot6D::identity()));
    std::vector<std::vector<Vec3>> frames(10, pose);
    const auto contacts = detect_foot_contacts(frames, skel, 0.02f);
    for (const auto& c : contacts)
        for (float v : c) CHECK(v == 1.0f);
}

TEST_CASE("fast feet are never in contact", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    const auto pose = forward_kinematics(skel, {0, 0.9f, 0},
                                         std::vector<Rot6D>(22, Rot6D::identity()));
    std::vector<std::vector<Vec3>> frames;
    for (int i = 0; i < 10; ++i) {
        auto f = pose;
        for (auto& p : f) p.z += 0.1f * float(i);
        frames.push_back(f);
    }
    const auto contacts = detect_foot_contacts(frames, skel, 0.02f);
    for (const auto& c : contacts)
        for (float v : c) CHECK(v == 0.0f);
}

TEST_CASE("last frame copies the contact pattern of its predecessor", "[kinematics]") {
    const Skeleton skel = Skeleton::chain5();
    const auto pose = forward_kinematics(skel, {0, 0.8f, 0},
                                         std::vector<Rot6D>(5, Rot6D::identity()));
    std::vector<std::vector<Vec3>> frames(3, pose);
    const auto contacts = detect_foot_contacts(frames, skel, 0.02f);
    CHECK(contacts[2] == contacts[1]);
}

TEST_CASE("fk is equivariant under root-frame rigid transforms", "[kinematics]") {
    const Skeleton skel = Skeleton::body22();
    Rng rng(77);
    for (int it = 0; it < 10; ++it) {
        auto rots = random_twist_free_pose(skel, rng, 0.25f);
        const Vec3 root{0.3f, 0.9f, -0.2f};
        const auto pos = forward_kinematics(skel, root, rots);
        const float theta = rng.uniform_range(-kPi, kPi);
        const Vec3 shift{rng.normal(), 0.0f, rng.normal()};
        auto rots2 = rots;
        rots2[0] = rot6d_from_matrix(Mat3::rot_y(theta) * matrix_from_rot6d(rots[0]));
        const auto pos2 = forward_kinematics(skel, Mat3::rot_y(theta) * root + shift, rots2);
        for (int j = 0; j < 22; ++j) {
            const Vec3 expect = Mat3::rot_y(theta) * pos[size_t(j)] + shift
                              - Mat3::rot_y(theta) * root + root
                              - root + Mat3::rot_y(theta) * root - Mat3::rot_y(theta) * root;
            // direct form: rotate about origin then shift, relative to transformed root
            const Vec3 want = Mat3::rot_y(theta) * (pos[size_t(j)] - root) +
                              (Mat3::rot_y(theta) * root + shift);
            (void)expect;
            CHECK((pos2[size_t(j)] - want).norm() < 1e-5f);
        }
    }
}

TEST_CASE("skeleton files round trip", "[kinematics]") {
    for (const Skeleton& skel : {Skeleton::body22(), Skeleton::chain5()}) {
        const std::string text = skeleton_to_text(skel);
        const Skeleton back = skeleton_from_text(text);
        CHECK(back.n_joints == skel.n_joints);
        CHECK(back.parent == skel.parent);
        CHECK(back.heel_toe == skel.heel_toe);
        CHECK(back.facing_joints == skel.facing_joints);
        CHECK(back.lr_pairs == skel.lr_pairs);
        for (int j = 0; j < skel.n_joints; ++j)
            CHECK((back.rest_offset[size_t(j)] - skel.rest_offset[size_t(j)]).norm() < 1e-6f);
    }
}

TEST_CASE("skeleton files reject unknown keys", "[kinematics]") {
    const std::string text = "skeleton\nn_joints 2\nparent 0 0\nbogus 1\n";
    CHECK_THROWS_AS(skeleton_from_text(text), std::invalid_argument);
}

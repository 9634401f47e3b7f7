#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "duet/common.hpp"
#include "duet/linalg.hpp"

// Skeleton model, 6D rotations, forward kinematics, orientation extraction
// from joint positions, bone lengths, and foot-contact detection.
//
// Conventions: Y is up, the ground is the XZ-plane, and a character at zero
// yaw faces +Z. yaw = atan2(forward.x, forward.z) where the forward vector is
// (across-body vector) x Y and the across-body vector points right-to-left.

namespace duet {

constexpr float kPi = 3.14159265358979323846f;

inline float wrap_angle(float a) {
    while (a > kPi) a -= 2.0f * kPi;
    while (a <= -kPi) a += 2.0f * kPi;
    return a;
}

struct Vec3 {
    float x = 0.0f, y = 0.0f, z = 0.0f;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    float norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const float n = norm();
        check(n > 1e-12f, "Vec3::normalized: near-zero vector");
        return {x / n, y / n, z / n};
    }
};

// 3x3 rotation matrix, row-major
struct Mat3 {
    std::array<float, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    static Mat3 rot_y(float angle) {
        const float c = std::cos(angle), s = std::sin(angle);
        Mat3 r;
        r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
        return r;
    }

    static Mat3 rot_x(float angle) {
        const float c = std::cos(angle), s = std::sin(angle);
        Mat3 r;
        r.m = {1, 0, 0, 0, c, -s, 0, s, c};
        return r;
    }

    static Mat3 rot_z(float angle) {
        const float c = std::cos(angle), s = std::sin(angle);
        Mat3 r;
        r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
        return r;
    }

    // rotation by angle around a unit axis (Rodrigues)
    static Mat3 axis_angle(const Vec3& axis, float angle) {
        const float c = std::cos(angle), s = std::sin(angle), t = 1.0f - c;
        const float x = axis.x, y = axis.y, z = axis.z;
        Mat3 r;
        r.m = {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
               t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
               t * x * z - s * y, t * y * z + s * x, t * z * z + c};
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                float acc = 0.0f;
                for (int k = 0; k < 3; ++k) acc += m[size_t(i * 3 + k)] * o.m[size_t(k * 3 + j)];
                r.m[size_t(i * 3 + j)] = acc;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[size_t(i * 3 + j)] = m[size_t(j * 3 + i)];
        return r;
    }

    Vec3 col(int j) const { return {m[size_t(j)], m[size_t(3 + j)], m[size_t(6 + j)]}; }

    float det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

// minimal rotation taking unit(from) to unit(to); identity when aligned
inline Mat3 rotation_between(const Vec3& from, const Vec3& to) {
    const Vec3 f = from.normalized();
    const Vec3 t = to.normalized();
    const Vec3 axis = f.cross(t);
    const float s = axis.norm();
    const float c = f.dot(t);
    if (s < 1e-7f) {
        if (c > 0.0f) return Mat3::identity();
        // antipodal: rotate pi about any axis orthogonal to f
        Vec3 ortho = std::abs(f.x) < 0.9f ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        Vec3 axis2 = f.cross(ortho).normalized();
        return Mat3::axis_angle(axis2, kPi);
    }
    return Mat3::axis_angle({axis.x / s, axis.y / s, axis.z / s}, std::atan2(s, c));
}

// ----------------------------- 6D rotations -----------------------------
// Six floats holding the first two columns of a rotation matrix.

struct Rot6D {
    std::array<float, 6> v{1, 0, 0, 0, 1, 0};

    static Rot6D identity() { return {}; }
};

inline Rot6D rot6d_from_matrix(const Mat3& r) {
    Rot6D out;
    const Vec3 c0 = r.col(0), c1 = r.col(1);
    out.v = {c0.x, c0.y, c0.z, c1.x, c1.y, c1.z};
    return out;
}

// Gram-Schmidt orthonormalization of the two stored columns; third column is
// their cross product. Rejects degenerate (near-zero or parallel) inputs and
// reports the condition measure.
inline Mat3 matrix_from_rot6d(const Rot6D& r) {
    Vec3 a1{r.v[0], r.v[1], r.v[2]};
    Vec3 a2{r.v[3], r.v[4], r.v[5]};
    const float n1 = a1.norm();
    if (n1 < 1e-6f)
        fail("matrix_from_rot6d: degenerate first column, |a1| = " + std::to_string(n1));
    const Vec3 b1 = a1 * (1.0f / n1);
    Vec3 r2 = a2 - b1 * b1.dot(a2);
    const float n2 = r2.norm();
    if (n2 < 1e-6f)
        fail("matrix_from_rot6d: columns nearly parallel, residual = " + std::to_string(n2));
    const Vec3 b2 = r2 * (1.0f / n2);
    const Vec3 b3 = b1.cross(b2);
    Mat3 m;
    m.m = {b1.x, b2.x, b3.x, b1.y, b2.y, b3.y, b1.z, b2.z, b3.z};
    return m;
}

// ----------------------------- skeleton -----------------------------

struct Skeleton {
    int n_joints = 0;
    std::vector<int> parent;       // parent[0] == 0 (root is its own parent)
    std::vector<Vec3> rest_offset; // in the parent frame, meters; root offset zero
    std::array<int, 4> heel_toe{}; // left heel, right heel, left toe, right toe
    std::vector<std::pair<int, int>> facing_joints;  // (left, right) pairs
    std::vector<std::pair<int, int>> lr_pairs;       // left/right twins for mirroring
    std::string name;

    void validate() const {
        check(n_joints >= 2, "Skeleton: need at least 2 joints");
        check(int(parent.size()) == n_joints && int(rest_offset.size()) == n_joints,
              "Skeleton: field sizes do not match n_joints");
        check(parent[0] == 0, "Skeleton: joint 0 must be the root");
        check(rest_offset[0].norm() == 0.0f, "Skeleton: root rest offset must be zero");
        for (int j = 1; j < n_joints; ++j)
            check(parent[size_t(j)] >= 0 && parent[size_t(j)] < j,
                  "Skeleton: parent of joint " + std::to_string(j) + " must precede it");
        for (int idx : heel_toe)
            check(idx >= 0 && idx < n_joints, "Skeleton: heel_toe index out of range");
        check(!facing_joints.empty(), "Skeleton: facing_joints must not be empty");
        for (auto [l, r] : facing_joints)
            check(l >= 0 && l < n_joints && r >= 0 && r < n_joints && l != r,
                  "Skeleton: invalid facing pair");
        for (auto [l, r] : lr_pairs)
            check(l >= 0 && l < n_joints && r >= 0 && r < n_joints && l != r,
                  "Skeleton: invalid lr pair");
    }

    int n_bones() const { return n_joints - 1; }

    std::vector<std::vector<int>> children() const {
        std::vector<std::vector<int>> ch;
        ch.resize(size_t(n_joints));
        for (int j = 1; j < n_joints; ++j) ch[size_t(parent[size_t(j)])].push_back(j);
        return ch;
    }

    // 22-joint body (SMPL joint set without hands)
    static Skeleton body22();
    // 5-joint chain used by the fast tests
    static Skeleton chain5();
};

inline Skeleton Skeleton::body22() {
    Skeleton s;
    s.name = "body22";
    s.n_joints = 22;
    s.parent = {0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    s.rest_offset.assign(22, Vec3{});
    auto set = [&](int j, float x, float y, float z) { s.rest_offset[size_t(j)] = {x, y, z}; };
    // pelvis 0 at origin of its frame (root)
    set(1, 0.09f, -0.06f, 0.0f);    // L hip
    set(2, -0.09f, -0.06f, 0.0f);   // R hip
    set(3, 0.0f, 0.11f, 0.0f);      // spine1
    set(4, 0.0f, -0.38f, 0.0f);     // L knee
    set(5, 0.0f, -0.38f, 0.0f);     // R knee
    set(6, 0.0f, 0.13f, 0.0f);      // spine2
    set(7, 0.0f, -0.40f, 0.0f);     // L ankle
    set(8, 0.0f, -0.40f, 0.0f);     // R ankle
    set(9, 0.0f, 0.05f, 0.0f);      // spine3
    set(10, 0.0f, -0.06f, 0.13f);   // L toe
    set(11, -0.0f, -0.06f, 0.13f);  // R toe
    set(12, 0.0f, 0.21f, 0.0f);     // neck
    set(13, 0.08f, 0.12f, 0.0f);    // L collar
    set(14, -0.08f, 0.12f, 0.0f);   // R collar
    set(15, 0.0f, 0.09f, 0.0f);     // head
    set(16, 0.13f, 0.02f, 0.0f);    // L shoulder
    set(17, -0.13f, 0.02f, 0.0f);   // R shoulder
    set(18, 0.26f, 0.0f, 0.0f);     // L elbow
    set(19, -0.26f, 0.0f, 0.0f);    // R elbow
    set(20, 0.25f, 0.0f, 0.0f);     // L wrist
    set(21, -0.25f, 0.0f, 0.0f);    // R wrist
    s.heel_toe = {7, 8, 10, 11};
    // hips only: the across vector then rotates rigidly with the root, so the
    // extracted yaw is exact for heading-only roots whatever the spine does
    s.facing_joints = {{1, 2}};
    s.lr_pairs = {{1, 2}, {4, 5}, {7, 8}, {10, 11}, {13, 14}, {16, 17}, {18, 19}, {20, 21}};
    s.validate();
    return s;
}

inline Skeleton Skeleton::chain5() {
    Skeleton s;
    s.name = "chain5";
    s.n_joints = 5;
    s.parent = {0, 0, 1, 2, 3};
    s.rest_offset = {{0, 0, 0},
                     {-0.10f, -0.20f, 0.0f},
                     {0.05f, -0.25f, 0.0f},
                     {0.05f, -0.25f, 0.05f},
                     {0.0f, -0.05f, 0.15f}};
    s.heel_toe = {3, 3, 4, 4};
    s.facing_joints = {{0, 1}};  // across-body = p0 - p1, horizontal component -x at rest
    s.validate();
    return s;
}

// ----------------------------- forward kinematics -----------------------------

// local_rots[0] is the root's world rotation; every other entry is relative to
// the parent joint's frame.
inline std::vector<Vec3> forward_kinematics(const Skeleton& skel, const Vec3& root_pos,
                                            const std::vector<Rot6D>& local_rots) {
    check(int(local_rots.size()) == skel.n_joints,
          "forward_kinematics: expected " + std::to_string(skel.n_joints) + " rotations, got " +
              std::to_string(local_rots.size()));
    std::vector<Vec3> pos(size_t(skel.n_joints));
    std::vector<Mat3> global(size_t(skel.n_joints));
    pos[0] = root_pos;
    global[0] = matrix_from_rot6d(local_rots[0]);
    for (int j = 1; j < skel.n_joints; ++j) {
        const int p = skel.parent[size_t(j)];
        global[size_t(j)] = global[size_t(p)] * matrix_from_rot6d(local_rots[size_t(j)]);
        pos[size_t(j)] = pos[size_t(p)] + global[size_t(p)] * skel.rest_offset[size_t(j)];
    }
    return pos;
}

// root world rotation from yaw plus the heading-relative root entry
inline Rot6D compose_root_rotation(float yaw, const Rot6D& root_local) {
    return rot6d_from_matrix(Mat3::rot_y(yaw) * matrix_from_rot6d(root_local));
}

// ----------------------------- orientation extraction -----------------------------

struct OrientationResult {
    float yaw = 0.0f;                 // heading about Y, radians
    std::vector<Rot6D> local_rots;    // [0] is heading-relative (identity here)
};

// across-body vector summed over the facing pairs
inline Vec3 across_body(const Skeleton& skel, const std::vector<Vec3>& positions) {
    Vec3 across{};
    for (auto [l, r] : skel.facing_joints)
        across += positions[size_t(l)] - positions[size_t(r)];
    return across;
}

inline float facing_yaw(const Skeleton& skel, const std::vector<Vec3>& positions) {
    const Vec3 a = across_body(skel, positions);
    // forward = across x Y = (-a.z, 0, a.x)
    const float fx = -a.z, fz = a.x;
    const float n = std::sqrt(fx * fx + fz * fz);
    if (n < 1e-5f)
        fail("facing_yaw: degenerate facing vectors, |forward_xz| = " + std::to_string(n));
    return std::atan2(fx, fz);
}

// Best-fit rotation taking each rest direction to the matching observed
// direction (Horn's quaternion method); exact when one such rotation exists.
inline Mat3 fit_rotation(const std::vector<Vec3>& rest_dirs,
                         const std::vector<Vec3>& obs_dirs) {
    check(rest_dirs.size() == obs_dirs.size() && !rest_dirs.empty(),
          "fit_rotation: direction sets must match");
    // correlation M[a][b] = sum rest_a * obs_b
    double M[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (size_t i = 0; i < rest_dirs.size(); ++i) {
        const Vec3 r = rest_dirs[i].normalized();
        const Vec3 o = obs_dirs[i].normalized();
        const double rv[3] = {r.x, r.y, r.z};
        const double ov[3] = {o.x, o.y, o.z};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) M[a][b] += rv[a] * ov[b];
    }
    const double sxx = M[0][0], sxy = M[0][1], sxz = M[0][2];
    const double syx = M[1][0], syy = M[1][1], syz = M[1][2];
    const double szx = M[2][0], szy = M[2][1], szz = M[2][2];
    std::vector<double> n = {
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz};
    std::vector<double> evals, evecs;
    jacobi_eigh(4, n, evals, evecs);
    // eigenvector of the largest eigenvalue = quaternion (w, x, y, z)
    const double w = evecs[size_t(0) * 4 + 3];
    const double x = evecs[size_t(1) * 4 + 3];
    const double y = evecs[size_t(2) * 4 + 3];
    const double z = evecs[size_t(3) * 4 + 3];
    Mat3 r;
    r.m = {float(1 - 2 * (y * y + z * z)), float(2 * (x * y - w * z)), float(2 * (x * z + w * y)),
           float(2 * (x * y + w * z)), float(1 - 2 * (x * x + z * z)), float(2 * (y * z - w * x)),
           float(2 * (x * z - w * y)), float(2 * (y * z + w * x)), float(1 - 2 * (x * x + y * y))};
    return r;
}

// Recovers root yaw and per-joint rotations from global joint positions.
// Twist about bone axes is unobservable from positions; the result carries
// the swing component only, and the root is assumed to be heading-only (a
// rotation about Y). Exact on poses built from such rotations.
inline OrientationResult extract_orientation(const Skeleton& skel,
                                             const std::vector<Vec3>& positions) {
    check(int(positions.size()) == skel.n_joints, "extract_orientation: position count");
    OrientationResult res;
    res.yaw = facing_yaw(skel, positions);
    res.local_rots.assign(size_t(skel.n_joints), Rot6D::identity());

    const auto ch = skel.children();
    std::vector<Mat3> global(size_t(skel.n_joints), Mat3::identity());
    global[0] = Mat3::rot_y(res.yaw);
    for (int j = 0; j < skel.n_joints; ++j) {
        if (ch[size_t(j)].empty()) continue;  // leaf rotation unobservable
        const Mat3 parent_global = (j == 0) ? Mat3::identity() : global[size_t(skel.parent[size_t(j)])];
        const Mat3 inv_parent = parent_global.transposed();
        std::vector<Vec3> rest_dirs, obs_dirs;
        for (int c : ch[size_t(j)]) {
            const Vec3 rest = skel.rest_offset[size_t(c)];
            if (rest.norm() < 1e-8f) continue;
            rest_dirs.push_back(rest);
            obs_dirs.push_back(inv_parent * (positions[size_t(c)] - positions[size_t(j)]));
        }
        Mat3 local = Mat3::identity();
        if (j == 0) {
            local = global[0];  // heading from the facing joints
        } else if (rest_dirs.size() == 1) {
            local = rotation_between(rest_dirs[0], obs_dirs[0]);
        } else if (rest_dirs.size() > 1) {
            local = fit_rotation(rest_dirs, obs_dirs);
        }
        global[size_t(j)] = (j == 0) ? local : parent_global * local;
        res.local_rots[size_t(j)] =
            rot6d_from_matrix(j == 0 ? Mat3::identity() : local);
    }
    return res;
}

// ----------------------------- bone lengths & contacts -----------------------------

// one length per non-root joint, indexed j-1
inline std::vector<float> bone_lengths(const std::vector<Vec3>& positions,
                                       const Skeleton& skel) {
    check(int(positions.size()) == skel.n_joints, "bone_lengths: position count");
    std::vector<float> out(size_t(skel.n_bones()));
    for (int j = 1; j < skel.n_joints; ++j)
        out[size_t(j - 1)] = (positions[size_t(j)] - positions[size_t(skel.parent[size_t(j)])]).norm();
    return out;
}

// Binary contact per heel/toe joint and frame: 1 when the joint moves less
// than vel_threshold (m/frame) to the next frame. The last frame copies its
// predecessor.
inline std::vector<std::array<float, 4>> detect_foot_contacts(
    const std::vector<std::vector<Vec3>>& positions, const Skeleton& skel,
    float vel_threshold) {
    const size_t frames = positions.size();
    check(frames >= 2, "detect_foot_contacts: need at least 2 frames");
    std::vector<std::array<float, 4>> out(frames);
    for (size_t i = 0; i + 1 < frames; ++i) {
        for (int k = 0; k < 4; ++k) {
            const int j = skel.heel_toe[size_t(k)];
            const float v = (positions[i + 1][size_t(j)] - positions[i][size_t(j)]).norm();
            out[i][size_t(k)] = v < vel_threshold ? 1.0f : 0.0f;
        }
    }
    out[frames - 1] = out[frames - 2];
    return out;
}

// ----------------------------- skeleton file IO -----------------------------

inline std::string skeleton_to_text(const Skeleton& s) {
    std::ostringstream os;
    os << "skeleton\n";
    os << "name " << (s.name.empty() ? "unnamed" : s.name) << "\n";
    os << "n_joints " << s.n_joints << "\n";
    os << "parent";
    for (int p : s.parent) os << " " << p;
    os << "\n";
    for (int j = 0; j < s.n_joints; ++j) {
        const Vec3& o = s.rest_offset[size_t(j)];
        os << "offset " << j << " " << o.x << " " << o.y << " " << o.z << "\n";
    }
    os << "heel_toe " << s.heel_toe[0] << " " << s.heel_toe[1] << " " << s.heel_toe[2] << " "
       << s.heel_toe[3] << "\n";
    for (auto [l, r] : s.facing_joints) os << "facing " << l << " " << r << "\n";
    for (auto [l, r] : s.lr_pairs) os << "lr_pair " << l << " " << r << "\n";
    return os.str();
}

inline Skeleton skeleton_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    Skeleton s;
    bool magic_seen = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key) || key[0] == '#') continue;
        if (!magic_seen) {
            check(key == "skeleton", "skeleton file: missing 'skeleton' magic line");
            magic_seen = true;
            continue;
        }
        if (key == "name") {
            ls >> s.name;
        } else if (key == "n_joints") {
            ls >> s.n_joints;
            check(s.n_joints > 0, "skeleton file: bad n_joints");
            s.parent.assign(size_t(s.n_joints), 0);
            s.rest_offset.assign(size_t(s.n_joints), Vec3{});
        } else if (key == "parent") {
            for (int j = 0; j < s.n_joints; ++j) ls >> s.parent[size_t(j)];
        } else if (key == "offset") {
            int j = -1;
            ls >> j;
            check(j >= 0 && j < s.n_joints, "skeleton file: offset index out of range");
            ls >> s.rest_offset[size_t(j)].x >> s.rest_offset[size_t(j)].y >>
                s.rest_offset[size_t(j)].z;
        } else if (key == "heel_toe") {
            ls >> s.heel_toe[0] >> s.heel_toe[1] >> s.heel_toe[2] >> s.heel_toe[3];
        } else if (key == "facing") {
            int l = -1, r = -1;
            ls >> l >> r;
            s.facing_joints.push_back({l, r});
        } else if (key == "lr_pair") {
            int l = -1, r = -1;
            ls >> l >> r;
            s.lr_pairs.push_back({l, r});
        } else {
            fail("skeleton file: unknown key '" + key + "'");
        }
        if (!ls && !ls.eof()) fail("skeleton file: malformed line '" + line + "'");
    }
    s.validate();
    return s;
}

inline void save_skeleton(const Skeleton& s, const std::string& path) {
    write_text_file(path, skeleton_to_text(s));
}

inline Skeleton load_skeleton(const std::string& path) {
    return skeleton_from_text(read_text_file(path));
}

}  // namespace duet

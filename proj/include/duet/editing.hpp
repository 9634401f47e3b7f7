#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duet/common.hpp"
#include "duet/denoiser.hpp"
#include "duet/diffusion.hpp"
#include "duet/repr.hpp"

// Inference-time editing by masked sampling: after every reverse step the
// frozen entries are overwritten with a fresh forward-noised version of the
// known reference, which keeps them on the correct marginal; at the final
// step the signal coefficient is one, so frozen entries equal the reference
// exactly. One mechanism serves person-to-person generation, trajectory
// control, and inbetweening.

namespace duet {

// ----------------------------- freeze masks -----------------------------

struct FreezeMask {
    int length = 0;
    int dim = 0;
    std::vector<uint8_t> person_a;  // length x dim, 1 = frozen
    std::vector<uint8_t> person_b;

    static FreezeMask zeros(int length, int dim) {
        FreezeMask m;
        m.length = length;
        m.dim = dim;
        m.person_a.assign(size_t(length) * size_t(dim), 0);
        m.person_b.assign(size_t(length) * size_t(dim), 0);
        return m;
    }

    void validate() const {
        check(length >= 2 && dim > 0, "FreezeMask: empty mask");
        check(person_a.size() == size_t(length) * size_t(dim) &&
                  person_b.size() == person_a.size(),
              "FreezeMask: buffer sizes do not match length x dim");
    }

    std::vector<uint8_t>& stream(int person) { return person == 0 ? person_a : person_b; }
    const std::vector<uint8_t>& stream(int person) const {
        return person == 0 ? person_a : person_b;
    }

    long count() const {
        long n = 0;
        for (uint8_t v : person_a) n += v;
        for (uint8_t v : person_b) n += v;
        return n;
    }

    // true when every set entry of this mask is also set in other
    bool subset_of(const FreezeMask& other) const {
        check(length == other.length && dim == other.dim, "FreezeMask: shape mismatch");
        for (size_t i = 0; i < person_a.size(); ++i)
            if (person_a[i] && !other.person_a[i]) return false;
        for (size_t i = 0; i < person_b.size(); ++i)
            if (person_b[i] && !other.person_b[i]) return false;
        return true;
    }
};

// every channel and frame of one person
inline FreezeMask mask_person(int person, int length, int dim) {
    check(person == 0 || person == 1, "mask_person: person must be 0 (a) or 1 (b)");
    FreezeMask m = FreezeMask::zeros(length, dim);
    std::fill(m.stream(person).begin(), m.stream(person).end(), uint8_t(1));
    return m;
}

// both persons fully frozen on [0, prefix) and [length - suffix, length)
inline FreezeMask mask_inbetween(int prefix, int suffix, int length, int dim) {
    check(prefix >= 0 && suffix >= 0, "mask_inbetween: negative range");
    check(prefix + suffix < length,
          "mask_inbetween: prefix " + std::to_string(prefix) + " + suffix " +
              std::to_string(suffix) + " overlap a clip of " + std::to_string(length) +
              " frames");
    FreezeMask m = FreezeMask::zeros(length, dim);
    for (int person = 0; person < 2; ++person) {
        auto& s = m.stream(person);
        for (int f = 0; f < prefix; ++f)
            std::fill_n(s.begin() + size_t(f) * size_t(dim), dim, uint8_t(1));
        for (int f = length - suffix; f < length; ++f)
            std::fill_n(s.begin() + size_t(f) * size_t(dim), dim, uint8_t(1));
    }
    return m;
}

// per-frame root ground path for one person
struct Trajectory {
    std::vector<float> x, z, yaw;  // yaw rides along for tools; positions drive the mask

    size_t size() const { return x.size(); }

    void validate() const {
        check(!x.empty(), "Trajectory: empty trajectory");
        check(x.size() == z.size() && (yaw.empty() || yaw.size() == x.size()),
              "Trajectory: column lengths differ");
    }
};

// Freezes only the root-position channels (the root row of the positions and
// its velocity row); the known values come from the reference clip with its
// root path replaced by the trajectory.
inline std::pair<FreezeMask, InteractionClip> mask_trajectory(
    const std::optional<Trajectory>& traj_a, const std::optional<Trajectory>& traj_b,
    const InteractionClip& reference) {
    reference.validate();
    check(traj_a.has_value() || traj_b.has_value(),
          "mask_trajectory: need a trajectory for at least one person");
    const NonCanonicalLayout lay = reference.layout();
    FreezeMask mask = FreezeMask::zeros(reference.length, reference.dim());
    InteractionClip known = reference;

    auto apply = [&](int person, const Trajectory& traj) {
        traj.validate();
        check(int(traj.size()) == reference.length,
              "mask_trajectory: trajectory of " + std::to_string(traj.size()) +
                  " frames does not match the " + std::to_string(reference.length) +
                  "-frame reference");
        auto& ms = mask.stream(person);
        std::vector<float>& stream = person == 0 ? known.person_a : known.person_b;
        for (int f = 0; f < reference.length; ++f) {
            float* row = stream.data() + size_t(f) * lay.dim();
            row[lay.pos(0)] = traj.x[size_t(f)];
            row[lay.pos(0) + 2] = traj.z[size_t(f)];
            for (int k = 0; k < 3; ++k) {
                ms[size_t(f) * size_t(lay.dim()) + size_t(lay.pos(0) + k)] = 1;
                ms[size_t(f) * size_t(lay.dim()) + size_t(lay.vel(0) + k)] = 1;
            }
        }
        // root velocities follow the synthesized path, last frame repeated
        for (int f = 0; f < reference.length; ++f) {
            const int i = std::min(f, reference.length - 2);
            float* row = stream.data() + size_t(f) * lay.dim();
            const float* p0 = stream.data() + size_t(i) * lay.dim() + size_t(lay.pos(0));
            const float* p1 = stream.data() + size_t(i + 1) * lay.dim() + size_t(lay.pos(0));
            row[lay.vel(0)] = p1[0] - p0[0];
            row[lay.vel(0) + 1] = p1[1] - p0[1];
            row[lay.vel(0) + 2] = p1[2] - p0[2];
        }
    };
    if (traj_a.has_value()) apply(0, *traj_a);
    if (traj_b.has_value()) apply(1, *traj_b);
    return {mask, known};
}

// ----------------------------- masked sampling -----------------------------

// Reverse diffusion with the masked entries re-injected after every step as
// forward-noised reference values (fresh noise per step, separate stream so
// an empty mask reproduces the plain sampler bit-exactly). t_prev = 0 carries
// a unit signal coefficient, so frozen entries finish exactly at the
// reference.
inline InteractionClip masked_sample(const DenoisePairFn& denoise_fn, std::optional<int> label,
                                     const FreezeMask& mask, const InteractionClip& known,
                                     const SamplerConfig& cfg, const NoiseSchedule& sched,
                                     const NormStats& stats, uint64_t seed) {
    mask.validate();
    known.validate();
    check(mask.length == known.length && mask.dim == known.dim(),
          "masked_sample: mask " + std::to_string(mask.length) + "x" +
              std::to_string(mask.dim) + " does not match the reference clip");
    cfg.validate(sched.T);
    NoGrad guard;
    const int L = known.length, D = known.dim();
    const Shape shape{L, D};
    const Tensor known_a = Tensor::from(shape, normalize(known.person_a, stats));
    const Tensor known_b = Tensor::from(shape, normalize(known.person_b, stats));

    Rng rng(seed);                    // same stream layout as the plain sampler
    Rng mask_rng(seed ^ 0x9E3779B97F4A7C15ull);  // private to the re-injection
    Tensor x_a = Tensor::randn({L, D}, rng);
    Tensor x_b = Tensor::randn({L, D}, rng);

    auto reinject = [&](Tensor& x, const Tensor& known_t, const std::vector<uint8_t>& m,
                        int t_prev) {
        const Tensor eps = Tensor::randn({L, D}, mask_rng);
        const Tensor noised = forward_noise(known_t, t_prev, eps, sched);
        for (long i = 0; i < x.size(); ++i)
            if (m[size_t(i)]) x.ptr()[i] = noised.ptr()[i];
    };

    const std::vector<int> steps = sampler_step_list(sched, cfg.num_steps);
    for (size_t k = 0; k + 1 < steps.size(); ++k) {
        const int t = steps[k];
        const int t_prev = steps[k + 1];
        auto [cond_a, cond_b] = denoise_fn(x_a, x_b, t, label);
        Tensor guided_a = cond_a, guided_b = cond_b;
        if (label.has_value()) {
            auto [null_a, null_b] = denoise_fn(x_a, x_b, t, std::nullopt);
            guided_a = guide(cond_a, null_a, cfg.guidance_scale);
            guided_b = guide(cond_b, null_b, cfg.guidance_scale);
        }
        x_a = reverse_step(x_a, guided_a, t, t_prev, cfg.eta, sched, &rng);
        x_b = reverse_step(x_b, guided_b, t, t_prev, cfg.eta, sched, &rng);
        reinject(x_a, known_a, mask.person_a, t_prev);
        reinject(x_b, known_b, mask.person_b, t_prev);
        if (!x_a.all_finite() || !x_b.all_finite())
            fail_runtime("masked_sample: non-finite state at reverse step t = " +
                         std::to_string(t));
    }

    InteractionClip out = known;
    out.person_a = denormalize(x_a.data(), stats);
    out.person_b = denormalize(x_b.data(), stats);
    // frozen channels carry the reference bit-exactly rather than a
    // normalization round trip
    for (long i = 0; i < long(out.person_a.size()); ++i) {
        if (mask.person_a[size_t(i)]) out.person_a[size_t(i)] = known.person_a[size_t(i)];
        if (mask.person_b[size_t(i)]) out.person_b[size_t(i)] = known.person_b[size_t(i)];
    }
    return out;
}

// ----------------------------- mask specification files -----------------------------
// Line-oriented text: a reference clip path, optional trajectory files, and
// (person, frame range, channel group) entries.
//
//   maskspec
//   ref <clip path>
//   traj <a|b> <trajectory path>
//   entry <a|b> <first frame> <past-end frame> <all|root-xz-yaw>

struct MaskSpecEntry {
    int person = 0;
    int first = 0;
    int past_end = 0;
    std::string channels;  // "all" or "root-xz-yaw"
};

struct MaskSpec {
    std::string reference;
    std::vector<MaskSpecEntry> entries;
    std::optional<std::string> traj_a, traj_b;
};

inline MaskSpec parse_mask_spec(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    MaskSpec spec;
    bool magic = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (!magic) {
            check(key == "maskspec", "mask spec: missing 'maskspec' magic line");
            magic = true;
            continue;
        }
        if (key == "ref") {
            ls >> spec.reference;
        } else if (key == "traj") {
            std::string person, path;
            ls >> person >> path;
            check(person == "a" || person == "b", "mask spec: traj person must be a or b");
            (person == "a" ? spec.traj_a : spec.traj_b) = path;
        } else if (key == "entry") {
            std::string person;
            MaskSpecEntry e;
            ls >> person >> e.first >> e.past_end >> e.channels;
            check(person == "a" || person == "b", "mask spec: entry person must be a or b");
            check(e.channels == "all" || e.channels == "root-xz-yaw",
                  "mask spec: unknown channel group '" + e.channels + "'");
            e.person = person == "a" ? 0 : 1;
            spec.entries.push_back(e);
        } else {
            fail("mask spec: unknown key '" + key + "'");
        }
        if (!ls && !ls.eof()) fail("mask spec: malformed line '" + line + "'");
    }
    check(!spec.reference.empty(), "mask spec: missing reference clip");
    return spec;
}

// per-line "x z [yaw]" columns
inline Trajectory parse_trajectory(const std::string& text) {
    Trajectory t;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        float x = 0.0f, z = 0.0f, yaw = 0.0f;
        check(bool(ls >> x >> z), "trajectory: malformed line '" + line + "'");
        t.x.push_back(x);
        t.z.push_back(z);
        if (ls >> yaw) t.yaw.push_back(yaw);
    }
    t.validate();
    return t;
}

// materializes the spec against its reference clip
inline std::pair<FreezeMask, InteractionClip> build_mask(const MaskSpec& spec,
                                                         const InteractionClip& reference,
                                                         const std::optional<Trajectory>& ta,
                                                         const std::optional<Trajectory>& tb) {
    const NonCanonicalLayout lay = reference.layout();
    FreezeMask mask = FreezeMask::zeros(reference.length, reference.dim());
    InteractionClip known = reference;
    if (ta.has_value() || tb.has_value()) {
        auto [traj_mask, traj_known] = mask_trajectory(ta, tb, reference);
        mask = traj_mask;
        known = traj_known;
    }
    for (const auto& e : spec.entries) {
        check(e.first >= 0 && e.first < e.past_end && e.past_end <= reference.length,
              "mask spec: frame range [" + std::to_string(e.first) + ", " +
                  std::to_string(e.past_end) + ") out of bounds");
        auto& s = mask.stream(e.person);
        for (int f = e.first; f < e.past_end; ++f) {
            if (e.channels == "all") {
                std::fill_n(s.begin() + size_t(f) * size_t(lay.dim()), lay.dim(), uint8_t(1));
            } else {
                for (int k = 0; k < 3; ++k) {
                    s[size_t(f) * size_t(lay.dim()) + size_t(lay.pos(0) + k)] = 1;
                    s[size_t(f) * size_t(lay.dim()) + size_t(lay.vel(0) + k)] = 1;
                }
            }
        }
    }
    return {mask, known};
}

}  // namespace duet

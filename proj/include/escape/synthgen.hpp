#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "escape/common.hpp"
#include "escape/linalg.hpp"
#include "escape/pose.hpp"
#include "escape/rng.hpp"

namespace escape {

// Simulated backbone: forward-kinematic ground-truth poses plus a
// corruption model shaped like real HPE error (small proximal noise, large
// distal noise, an OOD sub-population with structured limb mistakes).

struct AngleLimitDeg {
    double lo = 0.0;
    double hi = 0.0;
};

struct SkeletonModel {
    // Bone lengths, millimetres. Head/nose segments are stored as canonical
    // offsets so their lengths fall out of the same constants FK uses.
    double hip_half_width = 110.0;
    double femur = 450.0;
    double tibia = 430.0;
    double spine_lower = 250.0;
    double spine_upper = 250.0;
    Vec3 nose_offset{0.0, 80.0, 115.0};   // from neck
    Vec3 head_offset{0.0, 113.0, -40.0};  // from nose
    Vec3 shoulder_offset{160.0, -20.0, 0.0}; // from neck, x mirrored per side
    double humerus = 300.0;
    double forearm = 260.0;

    // Sampled articulation ranges (degrees). One arm per sample is reaching
    // at mid elevation, which keeps the tallest coordinate in a narrow band;
    // the other hangs freely.
    AngleLimitDeg torso_pitch{-15.0, 15.0};
    AngleLimitDeg torso_roll{-10.0, 10.0};
    AngleLimitDeg pelvis_yaw{-25.0, 25.0};  // hip axis vs facing direction
    AngleLimitDeg pelvis_tilt{-14.0, 14.0}; // hip axis vs horizontal
    AngleLimitDeg shoulder_girdle{-18.0, 18.0}; // per-side scapular freedom
    AngleLimitDeg hip_flex{-40.0, 40.0};
    AngleLimitDeg hip_abduct{-8.0, 30.0};
    AngleLimitDeg knee_flex{0.0, 75.0};
    AngleLimitDeg arm_elevation_raised{46.0, 64.0};
    AngleLimitDeg arm_elevation_rest{-80.0, 20.0};
    AngleLimitDeg arm_azimuth{-10.0, 100.0};
    AngleLimitDeg elbow_flex_raised{28.0, 55.0};
    AngleLimitDeg elbow_flex_rest{0.0, 65.0};

    struct Bone {
        std::size_t parent;
        std::size_t child;
        double length;
    };

    std::vector<Bone> bone_table() const {
        const double shoulder_len = shoulder_offset.norm();
        return {{0, 1, hip_half_width}, {1, 2, femur},        {2, 3, tibia},
                {0, 4, hip_half_width}, {4, 5, femur},        {5, 6, tibia},
                {0, 7, spine_lower},    {7, 8, spine_upper},  {8, 9, nose_offset.norm()},
                {9, 10, head_offset.norm()}, {8, 11, shoulder_len}, {11, 12, humerus},
                {12, 13, forearm},      {8, 14, shoulder_len}, {14, 15, humerus},
                {15, 16, forearm}};
    }
};

namespace detail {

inline double clamp_deg(double v, const AngleLimitDeg& lim) {
    return std::min(lim.hi, std::max(lim.lo, v));
}

inline double deg2rad(double d) { return d * 3.14159265358979323846 / 180.0; }

// Direction at `elevation` above horizontal, swept by `azimuth` from the
// body's forward axis toward `outward`.
inline Vec3 arm_direction(double elevation_rad, double azimuth_rad, double outward_sign) {
    const Vec3 horizontal{outward_sign * std::sin(azimuth_rad), 0.0, std::cos(azimuth_rad)};
    return Vec3{horizontal.x * std::cos(elevation_rad), std::sin(elevation_rad),
                horizontal.z * std::cos(elevation_rad)};
}

inline Vec3 stable_perp(const Vec3& dir) {
    const Vec3 ref = std::abs(dir.y) < 0.9 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
    return dir.cross(ref).normalized();
}

} // namespace detail

// One root-relative pose via forward kinematics from seeded joint angles.
// Every bone in the table is reproduced exactly by construction.
inline Pose generate_gt_pose(const SkeletonModel& skel, Rng& rng) {
    using detail::clamp_deg;
    using detail::deg2rad;

    const double yaw = rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
    const Mat3 yaw_rot = axis_angle({0, 1, 0}, yaw);
    const double pitch = deg2rad(clamp_deg(rng.normal(0.0, 7.0), skel.torso_pitch));
    const double roll = deg2rad(clamp_deg(rng.normal(0.0, 4.0), skel.torso_roll));
    const Mat3 lean = yaw_rot * axis_angle({1, 0, 0}, pitch) * axis_angle({0, 0, 1}, roll);

    Pose pose(17);
    pose.joints[0] = {0, 0, 0};

    // Pelvis girdle: the hip axis articulates independently of the facing
    // direction, so hip positions are not a pure function of the torso frame.
    const double pyaw = deg2rad(clamp_deg(rng.normal(0.0, 11.0), skel.pelvis_yaw));
    const double ptilt = deg2rad(clamp_deg(rng.normal(0.0, 7.0), skel.pelvis_tilt));
    const Mat3 pelvis_rot = yaw_rot * axis_angle({0, 1, 0}, pyaw) * axis_angle({0, 0, 1}, ptilt);

    // legs
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? 1.0 : -1.0; // right = +x
        const std::size_t hip = side == 0 ? 1 : 4;
        const std::size_t knee = hip + 1;
        const std::size_t ankle = hip + 2;
        pose.joints[hip] = pelvis_rot.apply({sgn * skel.hip_half_width, 0.0, 0.0});
        const double flex = deg2rad(clamp_deg(rng.normal(0.0, 16.0), skel.hip_flex));
        const double abduct = deg2rad(clamp_deg(rng.normal(6.0, 7.0), skel.hip_abduct));
        const Mat3 hip_rot =
            yaw_rot * axis_angle({0, 0, 1}, -sgn * abduct) * axis_angle({1, 0, 0}, flex);
        const Vec3 thigh_dir = hip_rot.apply({0, -1, 0});
        pose.joints[knee] = pose.joints[hip] + thigh_dir * skel.femur;
        const double kf = deg2rad(clamp_deg(8.0 + std::abs(rng.normal(0.0, 22.0)), skel.knee_flex));
        const Vec3 shank_dir = (hip_rot * axis_angle({1, 0, 0}, -kf)).apply({0, -1, 0});
        pose.joints[ankle] = pose.joints[knee] + shank_dir * skel.tibia;
    }

    // spine and head
    pose.joints[7] = lean.apply({0, skel.spine_lower, 0});
    pose.joints[8] = lean.apply({0, skel.spine_lower + skel.spine_upper, 0});
    pose.joints[9] = pose.joints[8] + lean.apply(skel.nose_offset);
    pose.joints[10] = pose.joints[9] + lean.apply(skel.head_offset);

    // arms; one arm per sample is "active" (raised / reaching)
    const bool right_active = rng.bernoulli(0.5);
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? 1.0 : -1.0;
        const std::size_t shoulder = side == 0 ? 14 : 11;
        const std::size_t elbow = shoulder + 1;
        const std::size_t wrist = shoulder + 2;
        const Vec3 sh_off{sgn * skel.shoulder_offset.x, skel.shoulder_offset.y,
                          skel.shoulder_offset.z};
        const bool active = (side == 0) == right_active;
        const AngleLimitDeg& elev_lim = active ? skel.arm_elevation_raised : skel.arm_elevation_rest;
        const AngleLimitDeg& flex_lim = active ? skel.elbow_flex_raised : skel.elbow_flex_rest;
        const double elev = deg2rad(rng.uniform(elev_lim.lo, elev_lim.hi));
        const double azim = deg2rad(rng.uniform(skel.arm_azimuth.lo, skel.arm_azimuth.hi));
        const Vec3 arm_dir = lean.apply(detail::arm_direction(elev, azim, sgn));
        // scapular articulation: the shoulder rides independently of the
        // torso frame (shrug / protraction)
        const double g1 = deg2rad(clamp_deg(rng.normal(0.0, 9.0), skel.shoulder_girdle));
        const double g2 = deg2rad(clamp_deg(rng.normal(0.0, 9.0), skel.shoulder_girdle));
        const Mat3 girdle = axis_angle({0, 0, 1}, g1) * axis_angle({0, 1, 0}, g2);
        pose.joints[shoulder] = pose.joints[8] + lean.apply(girdle.apply(sh_off));
        pose.joints[elbow] = pose.joints[shoulder] + arm_dir * skel.humerus;
        // forearm bends sideways out of the vertical plane of the arm
        const double ef = deg2rad(rng.uniform(flex_lim.lo, flex_lim.hi));
        Vec3 lateral = arm_dir.cross({0, 1, 0});
        if (lateral.norm() < 0.2) lateral = arm_dir.cross({0, 0, 1});
        const Vec3 fore_dir = arm_dir * std::cos(ef) + lateral.normalized() * std::sin(ef);
        pose.joints[wrist] = pose.joints[elbow] + fore_dir * skel.forearm;
    }
    return pose;
}

inline std::vector<Pose> generate_gt(std::size_t n, const SkeletonModel& skel,
                                     std::uint64_t seed) {
    if (n == 0) throw ArgumentError("generate_gt: n must be positive");
    std::vector<Pose> poses;
    poses.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, i));
        poses.push_back(generate_gt_pose(skel, rng));
    }
    return poses;
}

struct CorruptionModel {
    double sigma_proximal = 8.0;
    double sigma_distal = 35.0;
    double ood_fraction = 0.2;
    double ood_limb_rotation_sigma = 25.0; // degrees
    double torso_misalignment_sigma = 3.0; // degrees
    std::uint64_t seed = 0;

    void validate() const {
        if (sigma_proximal < 0.0 || sigma_distal < 0.0) throw ArgumentError("sigmas must be >= 0");
        if (ood_fraction < 0.0 || ood_fraction > 1.0)
            throw ArgumentError("ood_fraction must be in [0, 1]");
    }
};

enum class Regime { id, ood };

namespace detail {

struct Limb {
    std::size_t base;
    std::size_t mid;
    std::size_t end;
};

inline const std::array<Limb, 4>& limbs() {
    // right leg, left leg, left arm, right arm
    static const std::array<Limb, 4> l = {Limb{1, 2, 3}, Limb{4, 5, 6}, Limb{11, 12, 13},
                                          Limb{14, 15, 16}};
    return l;
}

} // namespace detail

// Corrupts one ground-truth pose into a simulated backbone prediction.
// ID regime: zero-mean Gaussian noise, sigma_proximal on proximal and torso
// joints, sigma_distal on limb ends, with mid-limb joints spatially
// interpolated between their neighbours (real backbone error is coherent
// along a limb). OOD regime: additionally rotates one or two whole limbs
// about their base joint and misrotates the torso, all magnitudes tied to a
// per-sample severity draw. Extended (raised) arms fail preferentially,
// mirroring how backbones mispredict unsupported limbs.
inline SampleRecord corrupt(const Pose& gt, const CorruptionModel& model, std::uint64_t index = 0,
                            std::optional<Regime> force_regime = std::nullopt,
                            Regime* regime_out = nullptr) {
    model.validate();
    if (!gt.finite() || gt.joint_count() != 17) throw InvalidPoseError("corrupt: bad gt pose");
    Rng rng(mix_seed(model.seed, index));

    const Regime regime = force_regime ? *force_regime
                                       : (rng.bernoulli(model.ood_fraction) ? Regime::ood
                                                                            : Regime::id);
    if (regime_out) *regime_out = regime;
    Pose pred = gt;

    if (regime == Regime::ood) {
        const double severity = std::min(std::abs(rng.normal()), 2.5);

        // limb selection: extended (reaching) arms fail preferentially
        std::array<double, 4> weights = {0.15, 0.15, 0.25, 0.25};
        for (int arm = 2; arm < 4; ++arm) {
            const auto& lb = detail::limbs()[arm];
            if (pred.joints[lb.end].y > pred.joints[lb.base].y + 100.0) weights[arm] += 0.6;
        }
        const std::size_t count = rng.bernoulli(0.5) ? 2 : 1;
        std::array<bool, 4> chosen{};
        for (std::size_t c = 0; c < count; ++c) {
            double total = 0.0;
            for (int i = 0; i < 4; ++i)
                if (!chosen[i]) total += weights[i];
            double draw = rng.uniform01() * total;
            for (int i = 0; i < 4; ++i) {
                if (chosen[i]) continue;
                draw -= weights[i];
                if (draw <= 0.0) {
                    chosen[i] = true;
                    break;
                }
            }
        }
        // Each failing limb is either swung whole about its base joint
        // (gross misprediction of the entire limb) or rotated about its own
        // base-bone axis (the mid joint sits on the axis, so the error
        // lands on the limb end alone). Both are rigid rotations about the
        // proximal joint; the angle magnitudes share the severity draw.
        double anchor_angle = 0.0; // signed angle of the first failing limb
        for (int i = 0; i < 4; ++i) {
            if (!chosen[i]) continue;
            const auto& lb = detail::limbs()[i];
            const double angle = detail::deg2rad(model.ood_limb_rotation_sigma) * severity *
                                 (rng.bernoulli(0.5) ? 1.0 : -1.0);
            if (anchor_angle == 0.0) anchor_angle = angle;
            const bool whole_swing = rng.bernoulli(0.5);
            const Vec3 base = pred.joints[lb.base];
            Vec3 axis;
            if (whole_swing) {
                // swing in the limb's vertical plane (maximal height effect)
                Vec3 horiz = pred.joints[lb.end] - base;
                horiz.y = 0.0;
                if (horiz.norm() > 1e-6) {
                    horiz = horiz.normalized();
                    axis = {-horiz.z, 0.0, horiz.x};
                } else {
                    const double psi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                    axis = {std::cos(psi), 0.0, std::sin(psi)};
                }
            } else {
                axis = (pred.joints[lb.mid] - base).normalized();
                if (axis.norm() < 0.5) axis = {0, 1, 0};
            }
            const Mat3 rot = axis_angle(axis, angle);
            pred.joints[lb.mid] = base + rot.apply(pred.joints[lb.mid] - base);
            pred.joints[lb.end] = base + rot.apply(pred.joints[lb.end] - base);
        }

        // Torso misrotation about the root: the torso chain and shoulders
        // tilt while the limbs stay anchored where the backbone "saw" them
        // (the classic torso-misalignment failure). The tilt is the
        // backbone's consistent compensation for the misread limb: its
        // signed angle tracks the anchor limb's rotation, scaled so the
        // marginal stays N(0, torso_misalignment_sigma). The axis slides
        // one shoulder along its upper-arm bone, where the inconsistency is
        // fully exposed by the bone length.
        {
            const double angle = anchor_angle * model.torso_misalignment_sigma /
                                 model.ood_limb_rotation_sigma;
            auto perp_score = [&](std::size_t sh) {
                const Vec3 radius = pred.joints[sh].normalized();
                const Vec3 bone = (pred.joints[sh + 1] - pred.joints[sh]).normalized();
                return radius.cross(bone).norm();
            };
            const std::size_t sh = perp_score(14) >= perp_score(11) ? 14 : 11;
            const Vec3 bone = (pred.joints[sh + 1] - pred.joints[sh]).normalized();
            Vec3 axis = pred.joints[sh].cross(bone);
            if (axis.norm() < 1e-6) axis = {1, 0, 0};
            const Mat3 rot = axis_angle(axis.normalized(), angle);
            for (std::size_t j : {7, 8, 9, 10, 11, 14}) pred.joints[j] = rot.apply(pred.joints[j]);
        }
    }

    // Additive noise field, drawn in a fixed joint order. Distal error has a
    // shared component across the four limb ends (real backbones make
    // correlated scale/depth mistakes) plus an independent per-joint part;
    // each end still sees an exactly N(0, sigma_distal^2) marginal per
    // coordinate. Mid-limb joints carry an interpolated share of their limb
    // end's local error plus jitter, so error is coherent along a limb.
    constexpr double kSharedDistalFraction = 0.49; // variance share of the common part
    std::array<Vec3, 17> noise{};
    auto gauss3 = [&](double sigma) {
        return Vec3{rng.normal(0.0, sigma), rng.normal(0.0, sigma), rng.normal(0.0, sigma)};
    };
    const double sigma_shared = model.sigma_distal * std::sqrt(kSharedDistalFraction);
    const double sigma_local = model.sigma_distal * std::sqrt(1.0 - kSharedDistalFraction);
    const Vec3 shared = gauss3(sigma_shared);
    for (std::size_t j : {1, 4, 11, 14}) noise[j] = gauss3(model.sigma_proximal); // limb bases
    for (std::size_t j : {7, 8, 9, 10}) noise[j] = gauss3(model.sigma_proximal);  // torso chain
    std::array<Vec3, 17> local_distal{};
    for (std::size_t j : {3, 6, 13, 16}) {
        local_distal[j] = gauss3(sigma_local);
        noise[j] = shared + local_distal[j];
    }
    for (const auto& lb : detail::limbs())
        noise[lb.mid] = local_distal[lb.end] * 0.3 + gauss3(0.1 * model.sigma_distal);
    for (std::size_t j = 1; j < 17; ++j) pred.joints[j] += noise[j]; // root stays exact

    SampleRecord rec;
    rec.id = "s" + std::to_string(index);
    rec.predicted = pred;
    rec.ground_truth = gt;
    return rec;
}

struct GeneratedDataset {
    std::vector<SampleRecord> records;
    std::vector<bool> is_ood; // true regime labels, for diagnostics only
};

inline GeneratedDataset generate_records(std::size_t n, const SkeletonModel& skel,
                                         const CorruptionModel& corruption, Split split,
                                         std::uint64_t seed, const std::string& id_prefix) {
    if (n == 0) throw ArgumentError("generate_records: n must be positive");
    GeneratedDataset out;
    out.records.reserve(n);
    out.is_ood.reserve(n);
    CorruptionModel cm = corruption;
    cm.seed = mix_seed(seed, 0xc0ffeeULL);
    for (std::size_t i = 0; i < n; ++i) {
        Rng grng(mix_seed(seed, i));
        const Pose gt = generate_gt_pose(skel, grng);
        Regime regime = Regime::id;
        SampleRecord rec = corrupt(gt, cm, i, std::nullopt, &regime);
        char buf[24];
        std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(i));
        rec.id = id_prefix + buf;
        rec.split = split;
        out.records.push_back(std::move(rec));
        out.is_ood.push_back(regime == Regime::ood);
    }
    return out;
}

} // namespace escape

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "escape/common.hpp"
#include "escape/linalg.hpp"

namespace escape {

// A 3D skeleton in millimetres, root-relative once root_align has run.
// Flattening is joint-major (j0.x, j0.y, j0.z, j1.x, ...).
struct Pose {
    std::vector<Vec3> joints;

    Pose() = default;
    explicit Pose(std::size_t joint_count) : joints(joint_count) {}

    std::size_t joint_count() const { return joints.size(); }

    bool finite() const {
        for (const auto& j : joints)
            if (!j.finite()) return false;
        return true;
    }

    std::vector<double> flatten() const {
        std::vector<double> f;
        f.reserve(joints.size() * 3);
        for (const auto& j : joints) {
            f.push_back(j.x);
            f.push_back(j.y);
            f.push_back(j.z);
        }
        return f;
    }

    static Pose unflatten(const std::vector<double>& f) {
        if (f.size() % 3 != 0) throw SchemaError("flattened pose length not divisible by 3");
        Pose p(f.size() / 3);
        for (std::size_t j = 0; j < p.joints.size(); ++j)
            p.joints[j] = {f[3 * j], f[3 * j + 1], f[3 * j + 2]};
        return p;
    }

    bool operator==(const Pose& o) const {
        if (joints.size() != o.joints.size()) return false;
        for (std::size_t i = 0; i < joints.size(); ++i)
            if (joints[i].x != o.joints[i].x || joints[i].y != o.joints[i].y ||
                joints[i].z != o.joints[i].z)
                return false;
        return true;
    }
};

// Index layout of the skeleton: which joint is the root, which four are the
// limb bases (proximal) and which four are the limb ends (distal).
struct KeypointSchema {
    std::string name;
    std::size_t joint_count = 0;
    std::size_t root_index = 0;
    std::vector<std::size_t> proximal_indices;
    std::vector<std::size_t> distal_indices;
    std::vector<std::string> joint_names;

    void validate() const {
        if (proximal_indices.size() != 4 || distal_indices.size() != 4)
            throw SchemaError("schema requires 4 proximal and 4 distal joints");
        for (std::size_t i : proximal_indices)
            for (std::size_t j : distal_indices)
                if (i == j) throw SchemaError("proximal/distal sets overlap");
        for (std::size_t i : proximal_indices)
            if (i >= joint_count || i == root_index) throw SchemaError("bad proximal index");
        for (std::size_t i : distal_indices)
            if (i >= joint_count || i == root_index) throw SchemaError("bad distal index");
        if (root_index >= joint_count) throw SchemaError("bad root index");
    }
};

// Human3.6M 17-joint layout. Wrists/ankles stand in for the hands/feet since
// this format has no separate end-effector joints.
inline const KeypointSchema& h36m17_schema() {
    static const KeypointSchema schema = [] {
        KeypointSchema s;
        s.name = "h36m17";
        s.joint_count = 17;
        s.root_index = 0;
        s.proximal_indices = {1, 4, 11, 14}; // R-hip, L-hip, L-shoulder, R-shoulder
        s.distal_indices = {3, 6, 13, 16};   // R-ankle, L-ankle, L-wrist, R-wrist
        s.joint_names = {"pelvis",  "r_hip",      "r_knee",  "r_ankle", "l_hip",   "l_knee",
                         "l_ankle", "torso",      "neck",    "nose",    "head",    "l_shoulder",
                         "l_elbow", "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
        s.validate();
        return s;
    }();
    return schema;
}

enum class Split { train, test };

// One unit flowing through the pipeline: a backbone prediction plus the
// optional ground truth used for supervision and evaluation only.
struct SampleRecord {
    std::string id;
    Pose predicted;
    std::optional<Pose> ground_truth;
    Split split = Split::test;
};

// ---------------------------------------------------------------------------

inline Pose root_align(const Pose& pose, const KeypointSchema& schema) {
    if (!pose.finite()) throw InvalidPoseError("root_align: non-finite pose");
    if (pose.joint_count() != schema.joint_count)
        throw SchemaError("root_align: joint count mismatch");
    const Vec3 root = pose.joints[schema.root_index];
    Pose out(pose.joint_count());
    for (std::size_t j = 0; j < pose.joint_count(); ++j) out.joints[j] = pose.joints[j] - root;
    return out;
}

// Mean per-joint position error in millimetres.
inline double mpjpe(const Pose& pred, const Pose& gt) {
    if (pred.joint_count() != gt.joint_count() || pred.joint_count() == 0)
        throw SchemaError("mpjpe: joint count mismatch");
    double sum = 0.0;
    for (std::size_t j = 0; j < pred.joint_count(); ++j)
        sum += (pred.joints[j] - gt.joints[j]).norm();
    return sum / static_cast<double>(pred.joint_count());
}

inline double subset_mpjpe(const Pose& pred, const Pose& gt,
                           const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ArgumentError("subset_mpjpe: empty index set");
    if (pred.joint_count() != gt.joint_count()) throw SchemaError("subset_mpjpe: joint count mismatch");
    double sum = 0.0;
    for (std::size_t j : indices) {
        if (j >= pred.joint_count()) throw SchemaError("subset_mpjpe: index out of range");
        sum += (pred.joints[j] - gt.joints[j]).norm();
    }
    return sum / static_cast<double>(indices.size());
}

// Proper similarity transform (rotation, uniform scale, translation) mapping
// src onto dst with least-squares residual.
struct ProcrustesResult {
    Pose aligned;
    Mat3 rotation;
    double scale = 1.0;
    Vec3 translation;
};

class AlignmentDegenerateError : public Error {
public:
    AlignmentDegenerateError(const std::string& msg, ProcrustesResult best_effort)
        : Error(msg), best_effort(std::move(best_effort)) {}

    ProcrustesResult best_effort;
};

// Umeyama closed-form solution via SVD of the cross-covariance, with the
// reflection-correcting sign on the smallest singular value.
inline ProcrustesResult procrustes_align(const Pose& src, const Pose& dst) {
    if (!src.finite() || !dst.finite()) throw InvalidPoseError("procrustes_align: non-finite pose");
    if (src.joint_count() != dst.joint_count() || src.joint_count() < 3)
        throw SchemaError("procrustes_align: joint count mismatch");
    const double n = static_cast<double>(src.joint_count());

    Vec3 mu_s, mu_d;
    for (std::size_t j = 0; j < src.joint_count(); ++j) {
        mu_s += src.joints[j];
        mu_d += dst.joints[j];
    }
    mu_s = mu_s * (1.0 / n);
    mu_d = mu_d * (1.0 / n);

    Mat3 cov; // (1/n) sum (d - mu_d)(s - mu_s)^T
    double var_s = 0.0;
    double var_d = 0.0;
    for (std::size_t j = 0; j < src.joint_count(); ++j) {
        const Vec3 s = src.joints[j] - mu_s;
        const Vec3 d = dst.joints[j] - mu_d;
        const std::array<double, 3> sv{s.x, s.y, s.z};
        const std::array<double, 3> dv{d.x, d.y, d.z};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cov.m[r][c] += dv[r] * sv[c] / n;
        var_s += s.dot(s) / n;
        var_d += d.dot(d) / n;
    }

    const Svd3 svd = svd3(cov);
    const double det_uv = svd.u.det() * svd.v.det();
    Vec3 signs{1.0, 1.0, det_uv < 0.0 ? -1.0 : 1.0};

    Mat3 rot;
    {
        Mat3 vs = svd.v;
        for (int r = 0; r < 3; ++r) vs.m[r][2] *= signs.z;
        rot = svd.u * vs.transposed();
    }

    const double trace_ds = svd.sigma.x * signs.x + svd.sigma.y * signs.y + svd.sigma.z * signs.z;

    auto finish = [&](double scale) {
        ProcrustesResult res;
        res.rotation = rot;
        res.scale = scale;
        res.translation = mu_d - rot.apply(mu_s) * scale;
        res.aligned = Pose(src.joint_count());
        for (std::size_t j = 0; j < src.joint_count(); ++j)
            res.aligned.joints[j] = rot.apply(src.joints[j]) * scale + res.translation;
        return res;
    };

    // Rank-deficient spread (all joints coincident, or collinear): the
    // similarity transform is not identifiable, so report the failure with
    // the best rigid fit we can still produce.
    const double scale_floor = 1e-12 * (var_d > 0.0 ? var_d : 1.0);
    if (var_s <= scale_floor || svd.sigma.y <= 1e-9 * (svd.sigma.x > 0.0 ? svd.sigma.x : 1.0)) {
        const double scale = var_s > scale_floor ? trace_ds / var_s : 1.0;
        throw AlignmentDegenerateError("procrustes_align: degenerate source spread",
                                       finish(scale > 0.0 ? scale : 1.0));
    }
    if (var_d <= 0.0) {
        throw AlignmentDegenerateError("procrustes_align: target has no spread", finish(1.0));
    }

    double scale = trace_ds / var_s;
    if (!(scale > 0.0)) {
        throw AlignmentDegenerateError("procrustes_align: non-positive optimal scale",
                                       finish(1.0));
    }
    return finish(scale);
}

// MPJPE after optimal similarity alignment of pred onto gt.
inline double pa_mpjpe(const Pose& pred, const Pose& gt) {
    const ProcrustesResult res = procrustes_align(pred, gt);
    return mpjpe(res.aligned, gt);
}

} // namespace escape

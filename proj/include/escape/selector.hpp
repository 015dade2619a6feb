#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "escape/common.hpp"
#include "escape/pose.hpp"
#include "escape/rng.hpp"

namespace escape {

enum class OodDirection { ood_below, ood_above };

struct EnergyDecision {
    double score = 0.0; // log-sum-exp over the flattened pose
    bool is_ood = false;
    double threshold_used = 0.0;
    OodDirection direction = OodDirection::ood_below;
};

// Log-sum-exp over the 51 flattened millimetre coordinates, max-subtracted
// so it cannot overflow. The free energy of the sample is the negation of
// this score.
inline double energy_score(const Pose& pose) {
    if (!pose.finite()) throw InvalidPoseError("energy_score: non-finite pose");
    if (pose.joint_count() == 0) throw SchemaError("energy_score: empty pose");
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& j : pose.joints) mx = std::max({mx, j.x, j.y, j.z});
    double sum = 0.0;
    for (const auto& j : pose.joints) {
        sum += std::exp(j.x - mx);
        sum += std::exp(j.y - mx);
        sum += std::exp(j.z - mx);
    }
    return mx + std::log(sum);
}

// Threshold comparison; a tie keeps the sample on the fast path.
inline EnergyDecision classify(double score, double threshold, OodDirection direction) {
    EnergyDecision d;
    d.score = score;
    d.threshold_used = threshold;
    d.direction = direction;
    d.is_ood = direction == OodDirection::ood_below ? score < threshold : score > threshold;
    return d;
}

// Seeded Bernoulli stream used for the rate-matched selection baseline.
class RandomSelector {
public:
    RandomSelector(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
        if (rate < 0.0 || rate > 1.0) throw ArgumentError("random selector rate must be in [0, 1]");
    }

    bool next() { return rng_.uniform01() < rate_; }

    double rate() const { return rate_; }

private:
    double rate_;
    Rng rng_;
};

} // namespace escape

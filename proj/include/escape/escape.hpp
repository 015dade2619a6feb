#pragma once

// Umbrella header: energy-gated selective test-time correction of 3D human
// pose predictions — pose metrics, the correction networks, the free-energy
// OOD gate, the self-consistency adaptation loop, a synthetic backbone
// simulator, and the experiment harness.

#include "escape/common.hpp"
#include "escape/correction.hpp"
#include "escape/dataset.hpp"
#include "escape/experiments.hpp"
#include "escape/linalg.hpp"
#include "escape/net.hpp"
#include "escape/pose.hpp"
#include "escape/report.hpp"
#include "escape/rng.hpp"
#include "escape/selector.hpp"
#include "escape/synthgen.hpp"
#include "escape/tta.hpp"

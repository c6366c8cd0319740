#pragma once

// Umbrella header for the smoothrl library: smoothness-regularized policy
// optimization (TRPO and DDPG variants) with an adversarial state-perturbation
// regularizer, built-in continuous-control environments and an experiment
// harness.

#include "smoothrl/autodiff.hpp"
#include "smoothrl/common.hpp"
#include "smoothrl/config.hpp"
#include "smoothrl/ddpg.hpp"
#include "smoothrl/envs.hpp"
#include "smoothrl/gaussian.hpp"
#include "smoothrl/harness.hpp"
#include "smoothrl/mlp.hpp"
#include "smoothrl/policy.hpp"
#include "smoothrl/smoothreg.hpp"
#include "smoothrl/trpo.hpp"

#pragma once

// Umbrella header for the continual federated learning simulator.

#include "cflsim/config.hpp"
#include "cflsim/data.hpp"
#include "cflsim/errors.hpp"
#include "cflsim/federation.hpp"
#include "cflsim/metrics.hpp"
#include "cflsim/nn.hpp"
#include "cflsim/param_vector.hpp"
#include "cflsim/psm.hpp"
#include "cflsim/regularizers.hpp"
#include "cflsim/results.hpp"
#include "cflsim/rng.hpp"
#include "cflsim/run_config.hpp"
#include "cflsim/sweep.hpp"

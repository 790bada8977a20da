#pragma once

// Umbrella header.

#include "dfbsde/autodiff.hpp"
#include "dfbsde/biped.hpp"
#include "dfbsde/cartpole.hpp"
#include "dfbsde/checkpoint.hpp"
#include "dfbsde/config.hpp"
#include "dfbsde/costs.hpp"
#include "dfbsde/diagnostics.hpp"
#include "dfbsde/dual.hpp"
#include "dfbsde/dynamics.hpp"
#include "dfbsde/ensemble.hpp"
#include "dfbsde/errors.hpp"
#include "dfbsde/experiment.hpp"
#include "dfbsde/fbsde.hpp"
#include "dfbsde/gradcheck.hpp"
#include "dfbsde/io.hpp"
#include "dfbsde/layers.hpp"
#include "dfbsde/lq_toy.hpp"
#include "dfbsde/optimizer.hpp"
#include "dfbsde/penalties.hpp"
#include "dfbsde/rng.hpp"
#include "dfbsde/schedule.hpp"
#include "dfbsde/trainer.hpp"
#include "dfbsde/value_net.hpp"

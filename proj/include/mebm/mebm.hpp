#pragma once

#include "mebm/ablation.hpp"
#include "mebm/checkpoint.hpp"
#include "mebm/cli.hpp"
#include "mebm/config.hpp"
#include "mebm/gradcheck.hpp"
#include "mebm/gradcheck_suite.hpp"
#include "mebm/metrics.hpp"
#include "mebm/model.hpp"
#include "mebm/sampling.hpp"
#include "mebm/synth.hpp"
#include "mebm/training.hpp"

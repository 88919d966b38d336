#pragma once

#include "stosca/types.hpp"
#include "stosca/loss.hpp"
#include "stosca/nn.hpp"
#include "stosca/objective.hpp"
#include "stosca/surrogate.hpp"
#include "stosca/block_parallel.hpp"
#include "stosca/data.hpp"
#include "stosca/training.hpp"
#include "stosca/sca_engine.hpp"
#include "stosca/baselines.hpp"
#include "stosca/metrics.hpp"
#include "stosca/bench.hpp"

#pragma once

// Umbrella header: the whole library in dependency order.

#include "futh/error.hpp"
#include "futh/rng.hpp"
#include "futh/tensor.hpp"
#include "futh/parallel.hpp"
#include "futh/graph.hpp"
#include "futh/ops.hpp"
#include "futh/gradcheck.hpp"
#include "futh/nn.hpp"
#include "futh/inflation.hpp"
#include "futh/pathways.hpp"
#include "futh/fusion.hpp"
#include "futh/model.hpp"
#include "futh/data.hpp"
#include "futh/metrics.hpp"
#include "futh/config.hpp"
#include "futh/checkpoint.hpp"
#include "futh/training.hpp"

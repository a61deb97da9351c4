#pragma once

// Umbrella header.

#include "regnet/errors.hpp"
#include "regnet/convexsolve.hpp"
#include "regnet/netgraph.hpp"
#include "regnet/powerflow.hpp"
#include "regnet/probability.hpp"
#include "regnet/abstraction.hpp"
#include "regnet/market.hpp"
#include "regnet/coordination.hpp"
#include "regnet/io.hpp"
#include "regnet/harness.hpp"
